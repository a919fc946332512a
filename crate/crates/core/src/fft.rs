use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Scalar;

/// Sizes with only 2/3/5 factors keep the mixed-radix FFT fast.
pub fn next_fast_size(mut n: usize) -> usize {
    fn smooth(mut m: usize) -> bool {
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        m == 1
    }
    while !smooth(n) {
        n += 1;
    }
    n
}

/// Cached-plan complex FFT over a `size^dim` lattice stored row-major.
///
/// `inverse` synthesizes physical samples from Fourier coefficients without
/// scaling (so coefficients are true Fourier amplitudes); `forward` analyzes
/// with the matching `1/size^dim` factor.
pub struct FftNd<T: Scalar> {
    dim: usize,
    size: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    line: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
    transpose: Vec<Complex<T>>,
}

impl<T: Scalar> FftNd<T> {
    pub fn new(dim: usize, size: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            dim,
            size,
            fwd,
            inv,
            line: vec![Complex::default(); size],
            scratch: vec![Complex::default(); scratch_len],
            transpose: if dim == 2 {
                vec![Complex::default(); size * size]
            } else {
                Vec::new()
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spectral -> physical, unnormalized synthesis sum.
    pub fn inverse(&mut self, data: &mut [Complex<T>]) {
        for axis in 0..self.dim {
            self.transform_axis(data, axis, false);
        }
    }

    /// Physical -> spectral, normalized by `1/size^dim`.
    pub fn forward(&mut self, data: &mut [Complex<T>]) {
        for axis in 0..self.dim {
            self.transform_axis(data, axis, true);
        }
        let scale = T::one() / T::of_f64(self.len() as f64);
        for v in data.iter_mut() {
            *v = v.scale(scale);
        }
    }

    fn transform_axis(&mut self, data: &mut [Complex<T>], axis: usize, forward: bool) {
        let n = self.size;
        debug_assert_eq!(data.len(), self.len());
        // Stride of consecutive entries along `axis` in row-major layout.
        let stride = n.pow((self.dim - 1 - axis) as u32);
        let lines = data.len() / n;
        let fft = if forward { &self.fwd } else { &self.inv };
        if stride == 1 {
            for chunk in data.chunks_exact_mut(n) {
                fft.process_with_scratch(chunk, &mut self.scratch);
            }
        } else if self.dim == 2 {
            // tiled transpose keeps the strided axis cache-friendly
            transpose_square(data, &mut self.transpose, n);
            for chunk in self.transpose.chunks_exact_mut(n) {
                fft.process_with_scratch(chunk, &mut self.scratch);
            }
            transpose_square(&self.transpose, data, n);
        } else {
            // block = one contiguous span containing `stride` interleaved lines
            let block = stride * n;
            for b in 0..lines / stride {
                let base = b * block;
                for off in 0..stride {
                    for j in 0..n {
                        self.line[j] = data[base + off + j * stride];
                    }
                    fft.process_with_scratch(&mut self.line, &mut self.scratch);
                    for j in 0..n {
                        data[base + off + j * stride] = self.line[j];
                    }
                }
            }
        }
    }
}

fn transpose_square<T: Copy>(src: &[T], dst: &mut [T], n: usize) {
    const TILE: usize = 32;
    for bi in (0..n).step_by(TILE) {
        for bj in (0..n).step_by(TILE) {
            for i in bi..(bi + TILE).min(n) {
                for j in bj..(bj + TILE).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_sizes() {
        assert_eq!(next_fast_size(128), 128);
        assert_eq!(next_fast_size(129), 135);
        assert_eq!(next_fast_size(149), 150);
        assert_eq!(next_fast_size(161), 162);
        assert_eq!(next_fast_size(191), 192);
    }

    #[test]
    fn forward_inverse_roundtrip_2d() {
        let mut fft = FftNd::<f64>::new(2, 8);
        let mut data: Vec<Complex<f64>> = (0..64)
            .map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let orig = data.clone();
        fft.inverse(&mut data);
        fft.forward(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn synthesis_matches_direct_sum_3d() {
        let n = 4usize;
        let mut fft = FftNd::<f64>::new(3, n);
        let mut data = vec![Complex::default(); n * n * n];
        data[1 * n * n + 2 * n + 3] = Complex::new(0.7, -0.2);
        let coeff = data.clone();
        fft.inverse(&mut data);
        // check one sample against the explicit exponential sum
        let (jx, jy, jz) = (2usize, 1usize, 3usize);
        let mut expect = Complex::new(0.0, 0.0);
        for kx in 0..n {
            for ky in 0..n {
                for kz in 0..n {
                    let phase = 2.0 * std::f64::consts::PI
                        * ((kx * jx + ky * jy + kz * jz) as f64)
                        / n as f64;
                    expect += coeff[kx * n * n + ky * n + kz]
                        * Complex::new(phase.cos(), phase.sin());
                }
            }
        }
        let got = data[jx * n * n + jy * n + jz];
        assert!((got - expect).norm() < 1e-12);
    }
}
