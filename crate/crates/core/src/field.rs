//! Fourier representation of real fields on the periodic torus.
//!
//! A field is stored as its full complex spectrum with Hermitian symmetry
//! `coeff(-k) = conj(coeff(k))`, so physical samples are real. Wavenumbers
//! follow the unit-torus convention: the mode `k` contributes
//! `coeff(k) * exp(2*pi*i k.x)`, derivatives multiply by `2*pi*i k`, and the
//! Sobolev weight is `(1 + 4*pi^2 |k|^2)^s` so that `H^0 = L^2` exactly.
//! Nyquist planes are kept identically zero; operations that push modes past
//! the retained band drop them.

use std::collections::HashSet;
use std::io::Write;

use num_complex::Complex;

use crate::error::FieldError;
use crate::fft::FftNd;
use crate::grid::{Grid, Mode};
use crate::scalar::Scalar;

/// Relative tolerance for the divergence-free precondition of `advect`.
pub const DIV_TOLERANCE: f64 = 1e-8;

/// Trigonometric channel of a real noise mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Cos,
    Sin,
}

/// Real scalar (`rank == 1`) or vector (`rank == dim`) field in spectral form.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField<T: Scalar> {
    grid: Grid,
    rank: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> SpectralField<T> {
    pub fn zeros(grid: Grid, rank: usize) -> Self {
        assert!(
            rank == 1 || rank == grid.dim(),
            "rank must be 1 or the grid dimension"
        );
        Self {
            grid,
            rank,
            data: vec![Complex::default(); rank * grid.len()],
        }
    }

    pub fn scalar_zeros(grid: Grid) -> Self {
        Self::zeros(grid, 1)
    }

    pub fn vector_zeros(grid: Grid) -> Self {
        Self::zeros(grid, grid.dim())
    }

    /// Build a scalar field from `(k, amplitude)` pairs, completing the
    /// spectrum with the Hermitian reflection so the field is real.
    ///
    /// Only one of `k`/`-k` may be given; the zero mode must be real.
    pub fn from_modes(grid: Grid, modes: &[(Mode, Complex<T>)]) -> Result<Self, FieldError> {
        let mut field = Self::scalar_zeros(grid);
        let mut seen = HashSet::new();
        for &(k, amp) in modes {
            field.insert_mode(&mut seen, k, 0, amp)?;
        }
        Ok(field)
    }

    /// Vector analogue of `from_modes`; amplitude components beyond the grid
    /// dimension are ignored.
    pub fn from_vector_modes(
        grid: Grid,
        modes: &[(Mode, [Complex<T>; 3])],
    ) -> Result<Self, FieldError> {
        let mut field = Self::vector_zeros(grid);
        let mut seen = HashSet::new();
        for &(k, amps) in modes {
            for c in 0..grid.dim() {
                field.insert_mode(&mut seen, k, c, amps[c])?;
            }
        }
        Ok(field)
    }

    fn insert_mode(
        &mut self,
        seen: &mut HashSet<usize>,
        k: Mode,
        comp: usize,
        amp: Complex<T>,
    ) -> Result<(), FieldError> {
        let idx = self.grid.flat_index(&k).ok_or(FieldError::ModeOutsideGrid {
            mode: k,
            size: self.grid.size(),
        })?;
        let neg = [-k[0], -k[1], -k[2]];
        let neg_idx = self.grid.flat_index(&neg).expect("mirror stays in band");
        if comp == 0 && !seen.insert(idx.min(neg_idx)) {
            return Err(FieldError::DuplicateMode(k));
        }
        let n = self.grid.len();
        if idx == neg_idx {
            if amp.im.abs() > T::epsilon() {
                return Err(FieldError::ComplexMean(amp.im.as_f64()));
            }
            self.data[comp * n + idx] = Complex::new(amp.re, T::zero());
        } else {
            self.data[comp * n + idx] = amp;
            self.data[comp * n + neg_idx] = amp.conj();
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_scalar(&self) -> bool {
        self.rank == 1
    }

    pub fn component(&self, c: usize) -> &[Complex<T>] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex<T>] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn raw(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    /// Coefficient at wavevector `k`; zero outside the retained band.
    pub fn get(&self, k: &Mode, comp: usize) -> Complex<T> {
        match self.grid.flat_index(k) {
            Some(idx) => self.component(comp)[idx],
            None => Complex::default(),
        }
    }

    pub fn set(&mut self, k: &Mode, comp: usize, value: Complex<T>) {
        if let Some(idx) = self.grid.flat_index(k) {
            self.component_mut(comp)[idx] = value;
        }
    }

    /// `sum_k |f(k)|^2` over all components; equals the squared `L^2` norm by
    /// Plancherel on the unit torus.
    pub fn l2_norm_sq(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a + b)
    }

    /// `sum_k 4 pi^2 |k|^2 |f(k)|^2`, the squared `L^2` norm of the gradient.
    pub fn grad_norm_sq(&self) -> T {
        let four_pi_sq = T::four_pi_sq();
        let n = self.grid.len();
        let mut acc = T::zero();
        for (idx, k) in self.grid.modes() {
            let w = four_pi_sq * T::of_f64(Grid::wave_sq(&k) as f64);
            for c in 0..self.rank {
                acc += w * self.data[c * n + idx].norm_sqr();
            }
        }
        acc
    }

    pub fn sobolev_norm_sq(&self, s: T) -> T {
        let four_pi_sq = T::four_pi_sq();
        let n = self.grid.len();
        let mut acc = T::zero();
        for (idx, k) in self.grid.modes() {
            let w = (T::one() + four_pi_sq * T::of_f64(Grid::wave_sq(&k) as f64)).powf(s);
            for c in 0..self.rank {
                acc += w * self.data[c * n + idx].norm_sqr();
            }
        }
        acc
    }

    /// `( sum_k (1 + 4 pi^2 |k|^2)^s |f(k)|^2 )^(1/2)`; `s = 0` is the `L^2` norm.
    pub fn sobolev_norm(&self, s: T) -> T {
        self.sobolev_norm_sq(s).sqrt()
    }

    /// Magnitude of the largest zero-mode component.
    pub fn mean_magnitude(&self) -> T {
        let idx = self.grid.flat_index(&[0, 0, 0]).unwrap();
        (0..self.rank)
            .map(|c| self.component(c)[idx].norm())
            .fold(T::zero(), T::max)
    }

    /// Largest violation of `coeff(-k) = conj(coeff(k))` over stored modes.
    pub fn hermitian_defect(&self) -> T {
        let mut worst = T::zero();
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            if !self.grid.in_band(&k) {
                continue;
            }
            let neg = [-k[0], -k[1], -k[2]];
            let neg_idx = self.grid.flat_index(&neg).unwrap();
            for c in 0..self.rank {
                let d = (self.data[c * n + idx] - self.data[c * n + neg_idx].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Per-mode scaling by a real radial factor of `|k|^2`.
    pub fn scale_radial(&mut self, factor: impl Fn(i64) -> T) {
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            let f = factor(Grid::wave_sq(&k));
            for c in 0..self.rank {
                self.data[c * n + idx] = self.data[c * n + idx].scale(f);
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v = v.scale(s);
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        assert_eq!(self.grid, other.grid);
        assert_eq!(self.rank, other.rank);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b.scale(s);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.add_scaled(other, T::one());
    }

    pub fn sub_assign(&mut self, other: &Self) {
        self.add_scaled(other, -T::one());
    }

    pub fn l2_distance(&self, other: &Self) -> T {
        assert_eq!(self.grid, other.grid);
        assert_eq!(self.rank, other.rank);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn sobolev_distance(&self, other: &Self, s: T) -> T {
        let mut diff = self.clone();
        diff.sub_assign(other);
        diff.sobolev_norm(s)
    }

    /// Gradient of a scalar field: component `c` is `2 pi i k_c f(k)`.
    pub fn gradient(&self) -> Self {
        assert!(self.is_scalar(), "gradient expects a scalar field");
        let d = self.grid.dim();
        let mut out = Self::vector_zeros(self.grid);
        let two_pi = T::two_pi();
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            let f = self.data[idx];
            for c in 0..d {
                out.data[c * n + idx] =
                    f * Complex::new(T::zero(), two_pi * T::of_f64(k[c] as f64));
            }
        }
        out
    }

    /// Divergence of a vector field: `sum_c 2 pi i k_c u_c(k)`.
    pub fn divergence(&self) -> Self {
        assert_eq!(self.rank, self.grid.dim(), "divergence expects a vector field");
        let mut out = Self::scalar_zeros(self.grid);
        let two_pi = T::two_pi();
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            let mut acc = Complex::default();
            for c in 0..self.rank {
                acc += self.data[c * n + idx]
                    * Complex::new(T::zero(), two_pi * T::of_f64(k[c] as f64));
            }
            out.data[idx] = acc;
        }
        out
    }

    pub fn laplacian(&self) -> Self {
        let mut out = self.clone();
        let four_pi_sq = T::four_pi_sq();
        out.scale_radial(|ksq| -four_pi_sq * T::of_f64(ksq as f64));
        out
    }

    /// 2D curl `d_x u_y - d_y u_x` of a vector field.
    pub fn curl2d(&self) -> Result<Self, FieldError> {
        if self.grid.dim() != 2 || self.rank != 2 {
            return Err(FieldError::Mismatch(
                "curl2d expects a 2D vector field".into(),
            ));
        }
        let mut out = Self::scalar_zeros(self.grid);
        let two_pi = T::two_pi();
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            let ikx = Complex::new(T::zero(), two_pi * T::of_f64(k[0] as f64));
            let iky = Complex::new(T::zero(), two_pi * T::of_f64(k[1] as f64));
            out.data[idx] = ikx * self.data[n + idx] - iky * self.data[idx];
        }
        Ok(out)
    }

    /// Velocity with `div u = 0` and `curl u = zeta`, reconstructed through the
    /// stream function `laplacian^{-1} zeta`; the zero mode of `u` is zero.
    pub fn biot_savart(&self) -> Result<Self, FieldError> {
        if self.grid.dim() != 2 || !self.is_scalar() {
            return Err(FieldError::Mismatch(
                "biot_savart expects a 2D scalar field".into(),
            ));
        }
        let mean = self.mean_magnitude();
        let scale = self.l2_norm_sq().sqrt().max(T::one());
        if mean > T::of_f64(1e-12) * scale {
            return Err(FieldError::NonzeroMean(mean.as_f64()));
        }
        let mut out = Self::vector_zeros(self.grid);
        let two_pi = T::two_pi();
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            let ksq = Grid::wave_sq(&k);
            if ksq == 0 {
                continue;
            }
            let z = self.data[idx];
            let denom = two_pi * T::of_f64(ksq as f64);
            // u_x = i k_y zeta / (2 pi |k|^2), u_y = -i k_x zeta / (2 pi |k|^2)
            out.data[idx] = z * Complex::new(T::zero(), T::of_f64(k[1] as f64) / denom);
            out.data[n + idx] = z * Complex::new(T::zero(), -T::of_f64(k[0] as f64) / denom);
        }
        Ok(out)
    }

    /// Divergence-free part: `v(k) - k (k.v(k)) / |k|^2`, identity at `k = 0`.
    pub fn leray_project(&self) -> Self {
        assert_eq!(self.rank, self.grid.dim(), "projection expects a vector field");
        let mut out = self.clone();
        out.leray_project_in_place();
        out
    }

    pub fn leray_project_in_place(&mut self) {
        let d = self.grid.dim();
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            let ksq = Grid::wave_sq(&k);
            if ksq == 0 {
                continue;
            }
            let mut kv = Complex::default();
            for c in 0..d {
                kv += self.data[c * n + idx].scale(T::of_f64(k[c] as f64));
            }
            let kv = kv.scale(T::one() / T::of_f64(ksq as f64));
            for c in 0..d {
                self.data[c * n + idx] -= kv.scale(T::of_f64(k[c] as f64));
            }
        }
    }

    /// Gradient part `v - P v`.
    pub fn leray_complement(&self) -> Self {
        let mut out = self.clone();
        out.sub_assign(&self.leray_project());
        out
    }

    /// Relative size of `div u` against `grad u`; zero for the zero field.
    pub fn divergence_residual(&self) -> T {
        let div_sq = self.divergence().l2_norm_sq();
        let grad_sq = self.grad_norm_sq();
        if grad_sq == T::zero() {
            T::zero()
        } else {
            (div_sq / grad_sq).sqrt()
        }
    }

    /// Zero every mode with a component above `size/3` (2/3-rule band).
    pub fn dealias_two_thirds(&mut self) {
        let cut = (self.grid.size() / 3) as i64;
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            if k[..self.grid.dim()].iter().any(|&ki| ki.abs() > cut) {
                for c in 0..self.rank {
                    self.data[c * n + idx] = Complex::default();
                }
            }
        }
    }

    /// Physical samples on the collocation grid, one slice per component.
    pub fn to_physical(&self, fft: &mut FftNd<T>) -> Vec<Vec<T>> {
        assert_eq!(fft.size(), self.grid.size());
        assert_eq!(fft.dim(), self.grid.dim());
        let mut out = Vec::with_capacity(self.rank);
        for c in 0..self.rank {
            let mut buf = self.component(c).to_vec();
            fft.inverse(&mut buf);
            out.push(buf.into_iter().map(|z| z.re).collect());
        }
        out
    }

    /// Dump the nonzero spectrum as CSV rows `k1,k2,k3,component,re,im`.
    pub fn spectrum_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "k1,k2,k3,component,re,im")?;
        let n = self.grid.len();
        for (idx, k) in self.grid.modes() {
            for c in 0..self.rank {
                let v = self.data[c * n + idx];
                if v.norm_sqr() > T::zero() {
                    writeln!(
                        w,
                        "{},{},{},{},{:e},{:e}",
                        k[0], k[1], k[2], c, v.re, v.im
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Exact spectral product `trig(2 pi k0 . x) (a . grad f)` where `trig` is the
/// requested channel. Each input mode `k` lands on `k - k0` and `k + k0`;
/// output modes outside the retained band are dropped, so no aliasing occurs.
pub fn shift_multiply<T: Scalar>(
    k0: &Mode,
    a: &[T; 3],
    channel: Channel,
    f: &SpectralField<T>,
) -> SpectralField<T> {
    let grid = f.grid();
    let mut out = SpectralField::zeros(grid, f.rank());
    accumulate_shift_multiply(k0, a, channel, f, T::one(), &mut out);
    out
}

/// `out += weight * trig(2 pi k0 . x)(a . grad f)` without allocating.
pub fn accumulate_shift_multiply<T: Scalar>(
    k0: &Mode,
    a: &[T; 3],
    channel: Channel,
    f: &SpectralField<T>,
    weight: T,
    out: &mut SpectralField<T>,
) {
    let grid = f.grid();
    assert_eq!(out.grid(), grid);
    assert_eq!(out.rank(), f.rank());
    let n = grid.len();
    let two_pi = T::two_pi();
    // g(k) = 2 pi i (a . k) f(k); cos: out(m) = w/2 [g(m-k0) + g(m+k0)],
    // sin: out(m) = w/(2i) [g(m-k0) - g(m+k0)].
    let half = weight * T::of_f64(0.5);
    for (idx, k) in grid.modes() {
        let ak = a[0] * T::of_f64(k[0] as f64)
            + a[1] * T::of_f64(k[1] as f64)
            + a[2] * T::of_f64(k[2] as f64);
        if ak == T::zero() {
            continue;
        }
        let mul = Complex::new(T::zero(), two_pi * ak);
        let plus = [k[0] + k0[0], k[1] + k0[1], k[2] + k0[2]];
        let minus = [k[0] - k0[0], k[1] - k0[1], k[2] - k0[2]];
        for c in 0..f.rank() {
            let g = f.component(c)[idx] * mul;
            if g.norm_sqr() == T::zero() {
                continue;
            }
            match channel {
                Channel::Cos => {
                    let v = g.scale(half);
                    if let Some(j) = grid.flat_index(&plus) {
                        out.component_mut(c)[j] += v;
                    }
                    if let Some(j) = grid.flat_index(&minus) {
                        out.component_mut(c)[j] += v;
                    }
                }
                Channel::Sin => {
                    // 1/(2i) = -i/2
                    let v = g * Complex::new(T::zero(), -half);
                    if let Some(j) = grid.flat_index(&plus) {
                        out.component_mut(c)[j] += v;
                    }
                    if let Some(j) = grid.flat_index(&minus) {
                        out.component_mut(c)[j] -= v;
                    }
                }
            }
        }
    }
}

/// Pseudo-spectral transport term: `div(u f)` when `conservative`, otherwise
/// `(u . grad) f`, with 2/3-rule dealiasing when `dealias` is set. The two
/// forms agree for exactly divergence-free `u` up to the dealiasing band.
pub fn advect<T: Scalar>(
    fft: &mut FftNd<T>,
    u: &SpectralField<T>,
    f: &SpectralField<T>,
    conservative: bool,
    dealias: bool,
) -> Result<SpectralField<T>, FieldError> {
    let residual = u.divergence_residual();
    if residual > T::of_f64(DIV_TOLERANCE) {
        return Err(FieldError::NotDivergenceFree(residual.as_f64()));
    }
    advect_unchecked(fft, u, f, conservative, dealias)
}

/// `advect` without the divergence precondition check, for callers whose
/// velocity is divergence-free by construction.
pub fn advect_unchecked<T: Scalar>(
    fft: &mut FftNd<T>,
    u: &SpectralField<T>,
    f: &SpectralField<T>,
    conservative: bool,
    dealias: bool,
) -> Result<SpectralField<T>, FieldError> {
    let grid = f.grid();
    if u.grid() != grid || u.rank() != grid.dim() {
        return Err(FieldError::Mismatch(
            "advecting velocity must be a vector field on the same grid".into(),
        ));
    }
    let d = grid.dim();
    let mut u_work = u.clone();
    let mut f_work = f.clone();
    if dealias {
        u_work.dealias_two_thirds();
        f_work.dealias_two_thirds();
    }

    // physical velocity samples
    let mut u_phys: Vec<Vec<Complex<T>>> = (0..d).map(|c| u_work.component(c).to_vec()).collect();
    for buf in &mut u_phys {
        fft.inverse(buf);
    }

    let mut out = SpectralField::zeros(grid, f.rank());
    let two_pi = T::two_pi();
    let n = grid.len();
    let mut prod = vec![Complex::<T>::default(); n];
    for c in 0..f.rank() {
        if conservative {
            // sum_j 2 pi i k_j FFT(u_j f_c)
            let mut fc = f_work.component(c).to_vec();
            fft.inverse(&mut fc);
            for axis in 0..d {
                for i in 0..n {
                    prod[i] = u_phys[axis][i] * fc[i];
                }
                fft.forward(&mut prod);
                for (idx, k) in grid.modes() {
                    out.component_mut(c)[idx] += prod[idx]
                        * Complex::new(T::zero(), two_pi * T::of_f64(k[axis] as f64));
                }
            }
        } else {
            // FFT( sum_j u_j (d_j f_c) )
            let mut acc = vec![Complex::<T>::default(); n];
            for axis in 0..d {
                for (idx, k) in grid.modes() {
                    prod[idx] = f_work.component(c)[idx]
                        * Complex::new(T::zero(), two_pi * T::of_f64(k[axis] as f64));
                }
                fft.inverse(&mut prod);
                for i in 0..n {
                    acc[i] += u_phys[axis][i] * prod[i];
                }
            }
            fft.forward(&mut acc);
            out.component_mut(c).copy_from_slice(&acc);
        }
    }
    if dealias {
        out.dealias_two_thirds();
    } else {
        // clear Nyquist planes picked up by the circular product
        let nyq = grid.size() as i64 / 2;
        for (idx, k) in grid.modes() {
            if k[..d].iter().any(|&ki| ki == nyq || ki == -nyq) {
                for c in 0..out.rank() {
                    out.component_mut(c)[idx] = Complex::default();
                }
            }
        }
    }
    Ok(out)
}

/// Deterministic pseudo-random Hermitian fields for tests and self-checks.
pub mod testing {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Random mean-zero real field with spectrum inside `|k_i| <= band`.
    pub fn random_field<T: Scalar>(
        seed: u64,
        grid: Grid,
        rank: usize,
        band: i64,
    ) -> SpectralField<T> {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut out = SpectralField::zeros(grid, rank);
        for (idx, k) in grid.modes() {
            if !grid.in_band(&k) || Grid::wave_sq(&k) == 0 {
                continue;
            }
            if k[..grid.dim()].iter().any(|&ki| ki.abs() > band) {
                continue;
            }
            let n = grid.len();
            for c in 0..rank {
                let re: f64 = rng.gen_range(-1.0..1.0);
                let im: f64 = rng.gen_range(-1.0..1.0);
                out.raw_mut()[c * n + idx] = Complex::new(T::of_f64(re), T::of_f64(im));
            }
        }
        hermitize(&mut out);
        out
    }

    /// Random divergence-free 2D velocity inside the band.
    pub fn random_divfree_field<T: Scalar>(seed: u64, grid: Grid, band: i64) -> SpectralField<T> {
        random_field::<T>(seed, grid, 1, band)
            .biot_savart()
            .expect("random scalar field is mean-zero")
    }

    /// Force `coeff(-k) = conj(coeff(k))` by averaging the stored pair.
    pub fn hermitize<T: Scalar>(f: &mut SpectralField<T>) {
        let grid = f.grid();
        let n = grid.len();
        let half = T::of_f64(0.5);
        for (idx, k) in grid.modes() {
            if !grid.in_band(&k) {
                continue;
            }
            let neg = [-k[0], -k[1], -k[2]];
            let neg_idx = grid.flat_index(&neg).unwrap();
            if neg_idx < idx {
                continue;
            }
            for c in 0..f.rank() {
                let a = f.raw()[c * n + idx];
                let b = f.raw()[c * n + neg_idx];
                let avg = (a + b.conj()).scale(half);
                f.raw_mut()[c * n + idx] = avg;
                f.raw_mut()[c * n + neg_idx] = avg.conj();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::grid::mode2;

    type F64Field = SpectralField<f64>;

    /// Direct synthesis sum at a collocation point, independent of the FFT.
    fn eval_direct(f: &F64Field, comp: usize, x: &[f64]) -> f64 {
        let mut acc = Complex::new(0.0, 0.0);
        for (idx, k) in f.grid().modes() {
            let phase: f64 = (0..f.grid().dim())
                .map(|a| k[a] as f64 * x[a])
                .sum::<f64>()
                * 2.0
                * std::f64::consts::PI;
            acc += f.component(comp)[idx] * Complex::new(phase.cos(), phase.sin());
        }
        assert!(acc.im.abs() < 1e-10, "field should be real");
        acc.re
    }

    #[test]
    fn single_cosine_mode_matches_collocation_values() {
        let grid = Grid::new(2, 8).unwrap();
        let f = F64Field::from_modes(grid, &[(mode2(1, 0), Complex::new(0.5, 0.0))]).unwrap();
        for jx in 0..8 {
            for jy in 0..8 {
                let x = [jx as f64 / 8.0, jy as f64 / 8.0];
                let want = (2.0 * std::f64::consts::PI * x[0]).cos();
                assert!((eval_direct(&f, 0, &x) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_mode_list_is_zero_field() {
        let grid = Grid::new(2, 8).unwrap();
        let f = F64Field::from_modes(grid, &[]).unwrap();
        assert_eq!(f.l2_norm_sq(), 0.0);
    }

    #[test]
    fn imaginary_diagonal_mode_is_minus_sine() {
        let grid = Grid::new(2, 16).unwrap();
        let f = F64Field::from_modes(grid, &[(mode2(1, 1), Complex::new(0.0, 0.5))]).unwrap();
        for jx in 0..16 {
            for jy in 0..16 {
                let x = [jx as f64 / 16.0, jy as f64 / 16.0];
                let want = -(2.0 * std::f64::consts::PI * (x[0] + x[1])).sin();
                assert!((eval_direct(&f, 0, &x) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn from_modes_rejects_bad_input() {
        let grid = Grid::new(2, 8).unwrap();
        assert!(matches!(
            F64Field::from_modes(grid, &[(mode2(4, 0), Complex::new(1.0, 0.0))]),
            Err(FieldError::ModeOutsideGrid { .. })
        ));
        let dup = F64Field::from_modes(
            grid,
            &[
                (mode2(1, 0), Complex::new(1.0, 0.0)),
                (mode2(-1, 0), Complex::new(0.5, 0.0)),
            ],
        );
        assert!(matches!(dup, Err(FieldError::DuplicateMode(_))));
        let cmean = F64Field::from_modes(grid, &[([0, 0, 0], Complex::new(0.0, 1.0))]);
        assert!(matches!(cmean, Err(FieldError::ComplexMean(_))));
    }

    #[test]
    fn sobolev_norm_of_cosine() {
        let grid = Grid::new(2, 8).unwrap();
        let f = F64Field::from_modes(grid, &[(mode2(1, 0), Complex::new(0.5, 0.0))]).unwrap();
        assert!((f.sobolev_norm(0.0) - (0.5f64).sqrt()).abs() < 1e-14);
        let want = ((1.0 + 4.0 * std::f64::consts::PI.powi(2)) / 2.0).sqrt();
        assert!((f.sobolev_norm(1.0) - want).abs() < 1e-12);
        assert!((want - 4.49880).abs() < 1e-5);
        let zero = F64Field::scalar_zeros(grid);
        assert_eq!(zero.sobolev_norm(-0.7), 0.0);
    }

    #[test]
    fn laplacian_and_gradient_on_single_modes() {
        let grid = Grid::new(2, 8).unwrap();
        let f = F64Field::from_modes(grid, &[(mode2(1, 0), Complex::new(0.5, 0.0))]).unwrap();
        let lap = f.laplacian();
        let mut want = f.clone();
        want.scale(-4.0 * std::f64::consts::PI.powi(2));
        assert!(lap.l2_distance(&want) < 1e-12);
        assert_eq!(F64Field::scalar_zeros(grid).laplacian().l2_norm_sq(), 0.0);

        // gradient(cos(2 pi y)) = (0, -2 pi sin(2 pi y))
        let g = F64Field::from_modes(grid, &[(mode2(0, 1), Complex::new(0.5, 0.0))])
            .unwrap()
            .gradient();
        assert_eq!(g.rank(), 2);
        let mut fft = FftNd::new(2, 8);
        let phys = g.to_physical(&mut fft);
        for jy in 0..8 {
            let y = jy as f64 / 8.0;
            let want_y = -2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * y).sin();
            assert!(phys[0][jy].abs() < 1e-12);
            assert!((phys[1][jy] - want_y).abs() < 1e-12);
        }
    }

    #[test]
    fn biot_savart_single_mode_closed_form() {
        let grid = Grid::new(2, 16).unwrap();
        let zeta = F64Field::from_modes(grid, &[(mode2(0, 1), Complex::new(0.5, 0.0))]).unwrap();
        let u = zeta.biot_savart().unwrap();
        // u = (-sin(2 pi y)/(2 pi), 0)
        let want = F64Field::from_vector_modes(
            grid,
            &[(
                mode2(0, 1),
                [
                    Complex::new(0.0, 0.5 / (2.0 * std::f64::consts::PI)),
                    Complex::new(0.0, 0.0),
                    Complex::new(0.0, 0.0),
                ],
            )],
        )
        .unwrap();
        assert!(u.l2_distance(&want) < 1e-14);
        assert_eq!(
            F64Field::scalar_zeros(grid).biot_savart().unwrap().l2_norm_sq(),
            0.0
        );
    }

    #[test]
    fn biot_savart_rejects_nonzero_mean() {
        let grid = Grid::new(2, 8).unwrap();
        let f = F64Field::from_modes(grid, &[([0, 0, 0], Complex::new(1.0, 0.0))]).unwrap();
        assert!(matches!(f.biot_savart(), Err(FieldError::NonzeroMean(_))));
    }

    #[test]
    fn biot_savart_roundtrip_on_random_fields() {
        let grid = Grid::new(2, 32).unwrap();
        for seed in 0..5 {
            let zeta = random_field::<f64>(seed, grid, 1, 10);
            let u = zeta.biot_savart().unwrap();
            let div = u.divergence();
            assert!(div.l2_norm_sq().sqrt() < 1e-12);
            let back = u.curl2d().unwrap();
            assert!(back.l2_distance(&zeta) < 1e-12 * zeta.l2_norm_sq().sqrt().max(1.0));
        }
    }

    #[test]
    fn leray_projection_identities() {
        let grid = Grid::new(2, 16).unwrap();
        // divergence-free input is a fixed point
        let u = random_divfree_field::<f64>(3, grid, 5);
        assert!(u.leray_project().l2_distance(&u) < 1e-13);

        // pure gradient maps to zero
        let g = F64Field::from_modes(grid, &[(mode2(1, 0), Complex::new(0.5, 0.0))])
            .unwrap()
            .gradient();
        assert!(g.leray_project().l2_norm_sq().sqrt() < 1e-14);
        assert!(g.leray_complement().l2_distance(&g) < 1e-14);

        // v = (cos 2 pi y, cos 2 pi x) is divergence-free: P v = v, Q v = 0
        let v = F64Field::from_vector_modes(
            grid,
            &[
                (
                    mode2(0, 1),
                    [Complex::new(0.5, 0.0), Complex::new(0.0, 0.0), Complex::new(0.0, 0.0)],
                ),
                (
                    mode2(1, 0),
                    [Complex::new(0.0, 0.0), Complex::new(0.5, 0.0), Complex::new(0.0, 0.0)],
                ),
            ],
        )
        .unwrap();
        assert!(v.leray_project().l2_distance(&v) < 1e-14);
        assert!(v.leray_complement().l2_norm_sq() < 1e-28);

        // idempotence and k . (P v)(k) = 0 on a random field
        let w = random_field::<f64>(11, grid, 2, 6);
        let pw = w.leray_project();
        assert!(pw.leray_project().l2_distance(&pw) < 1e-13);
        for (idx, k) in grid.modes() {
            let mut kv = Complex::new(0.0, 0.0);
            for c in 0..2 {
                kv += pw.component(c)[idx].scale(k[c] as f64);
            }
            assert!(kv.norm() < 1e-12);
        }
    }

    #[test]
    fn plancherel_matches_grid_quadrature() {
        let grid = Grid::new(2, 32).unwrap();
        let f = random_field::<f64>(7, grid, 1, 9);
        let mut fft = FftNd::new(2, 32);
        let phys = f.to_physical(&mut fft);
        let quad: f64 =
            phys[0].iter().map(|v| v * v).sum::<f64>() / (grid.len() as f64);
        let spec = f.l2_norm_sq();
        assert!((quad - spec).abs() < 1e-10 * spec.max(1.0));
    }

    #[test]
    fn advect_zero_velocity_gives_zero() {
        let grid = Grid::new(2, 16).unwrap();
        let mut fft = FftNd::new(2, 16);
        let u = F64Field::vector_zeros(grid);
        let f = random_field::<f64>(1, grid, 1, 4);
        let out = advect(&mut fft, &u, &f, true, true).unwrap();
        assert_eq!(out.l2_norm_sq(), 0.0);
    }

    #[test]
    fn advect_skew_symmetry() {
        let grid = Grid::new(2, 32).unwrap();
        let mut fft = FftNd::new(2, 32);
        for seed in 0..4 {
            let u = random_divfree_field::<f64>(100 + seed, grid, 8);
            let f = random_field::<f64>(200 + seed, grid, 1, 8);
            let adv = advect(&mut fft, &u, &f, true, true).unwrap();
            // <f, div(u f)> = 0 for divergence-free u
            let inner: f64 = f
                .component(0)
                .iter()
                .zip(adv.component(0))
                .map(|(a, b)| (a.conj() * b).re)
                .sum();
            let scale = f.l2_norm_sq() * u.l2_norm_sq().sqrt();
            assert!(inner.abs() < 1e-10 * scale.max(1.0), "skew defect {inner}");
        }
    }

    #[test]
    fn advect_single_modes_match_convolution_oracle() {
        // u = (cos 2 pi y, 0), f = cos 2 pi x:
        // div(u f) = d_x(cos 2 pi y cos 2 pi x)
        //          = -2 pi sin(2 pi x) cos(2 pi y)
        //          = -pi [ sin 2 pi (x+y) + sin 2 pi (x-y) ]
        let grid = Grid::new(2, 16).unwrap();
        let mut fft = FftNd::new(2, 16);
        let u = F64Field::from_vector_modes(
            grid,
            &[(
                mode2(0, 1),
                [Complex::new(0.5, 0.0), Complex::new(0.0, 0.0), Complex::new(0.0, 0.0)],
            )],
        )
        .unwrap();
        let f = F64Field::from_modes(grid, &[(mode2(1, 0), Complex::new(0.5, 0.0))]).unwrap();
        let out = advect(&mut fft, &u, &f, true, true).unwrap();
        let pi = std::f64::consts::PI;
        // sin(2 pi k.x) has coefficient -i/2 at k and i/2 at -k
        let want = F64Field::from_modes(
            grid,
            &[
                (mode2(1, 1), Complex::new(0.0, pi / 2.0)),
                (mode2(1, -1), Complex::new(0.0, pi / 2.0)),
            ],
        )
        .unwrap();
        assert!(out.l2_distance(&want) < 1e-12);

        // non-conservative form agrees for this exactly divergence-free u
        let out2 = advect(&mut fft, &u, &f, false, true).unwrap();
        assert!(out.l2_distance(&out2) < 1e-12);
    }

    #[test]
    fn advect_rejects_compressible_velocity() {
        let grid = Grid::new(2, 16).unwrap();
        let mut fft = FftNd::new(2, 16);
        let g = random_field::<f64>(5, grid, 1, 3).gradient();
        let f = random_field::<f64>(6, grid, 1, 3);
        assert!(matches!(
            advect(&mut fft, &g, &f, true, true),
            Err(FieldError::NotDivergenceFree(_))
        ));
    }

    #[test]
    fn shift_multiply_zero_field() {
        let grid = Grid::new(2, 8).unwrap();
        let f = F64Field::scalar_zeros(grid);
        let out = shift_multiply(&mode2(1, 0), &[0.0, 1.0, 0.0], Channel::Cos, &f);
        assert_eq!(out.l2_norm_sq(), 0.0);
    }

    #[test]
    fn shift_multiply_matches_two_mode_convolution() {
        // cos(2 pi x) (e_y . grad) cos(2 pi y) = -2 pi cos(2 pi x) sin(2 pi y)
        //   = -pi [ sin 2 pi (x+y) - sin 2 pi (x-y) ]
        let grid = Grid::new(2, 16).unwrap();
        let f = F64Field::from_modes(grid, &[(mode2(0, 1), Complex::new(0.5, 0.0))]).unwrap();
        let out = shift_multiply(&mode2(1, 0), &[0.0, 1.0, 0.0], Channel::Cos, &f);
        let pi = std::f64::consts::PI;
        let want = F64Field::from_modes(
            grid,
            &[
                (mode2(1, 1), Complex::new(0.0, pi / 2.0)),
                (mode2(1, -1), Complex::new(0.0, -pi / 2.0)),
            ],
        )
        .unwrap();
        assert!(out.l2_distance(&want) < 1e-14);
        assert!(out.hermitian_defect() < 1e-15);
    }

    #[test]
    fn shift_multiply_integration_by_parts() {
        // <f, cos(2 pi k0.x)(a.grad f)> = -(1/2) <f^2, a.grad cos(2 pi k0.x)>
        let grid = Grid::new(2, 32).unwrap();
        let mut fft = FftNd::new(2, 32);
        let f = random_field::<f64>(42, grid, 1, 6);
        let k0 = mode2(2, 1);
        let a = {
            // unit vector orthogonal to nothing in particular
            let (ax, ay) = (0.6, 0.8);
            [ax, ay, 0.0]
        };
        let sm = shift_multiply(&k0, &a, Channel::Cos, &f);
        let lhs: f64 = f
            .component(0)
            .iter()
            .zip(sm.component(0))
            .map(|(x, y)| (x.conj() * y).re)
            .sum();
        // quadrature of the right-hand side on the collocation grid
        let phys_f = f.to_physical(&mut fft)[0].clone();
        let n = grid.size();
        let mut rhs = 0.0;
        for jx in 0..n {
            for jy in 0..n {
                let x = jx as f64 / n as f64;
                let y = jy as f64 / n as f64;
                let phase = 2.0 * std::f64::consts::PI * (2.0 * x + y);
                let dcos = -2.0 * std::f64::consts::PI * (a[0] * 2.0 + a[1] * 1.0) * phase.sin();
                let v = phys_f[jx * n + jy];
                rhs += -0.5 * v * v * dcos;
            }
        }
        rhs /= (n * n) as f64;
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn operations_preserve_hermitian_symmetry() {
        let grid = Grid::new(2, 16).unwrap();
        let mut fft = FftNd::new(2, 16);
        for seed in 0..3 {
            let f = random_field::<f64>(seed, grid, 1, 5);
            assert!(f.hermitian_defect() < 1e-15);
            assert!(f.gradient().hermitian_defect() < 1e-12);
            assert!(f.laplacian().hermitian_defect() < 1e-9);
            let u = f.biot_savart().unwrap();
            assert!(u.hermitian_defect() < 1e-13);
            assert!(u.leray_project().hermitian_defect() < 1e-13);
            let adv = advect(&mut fft, &u, &f, true, true).unwrap();
            assert!(adv.hermitian_defect() < 1e-11);
            let sm = shift_multiply(&mode2(1, 2), &[1.0, 0.0, 0.0], Channel::Sin, &f);
            assert!(sm.hermitian_defect() < 1e-12);
        }
    }

    #[test]
    fn f32_fields_work_at_reduced_precision() {
        let grid = Grid::new(2, 16).unwrap();
        let f = SpectralField::<f32>::from_modes(
            grid,
            &[(mode2(1, 0), Complex::new(0.5f32, 0.0))],
        )
        .unwrap();
        assert!((f.sobolev_norm(0.0) - 0.5f32.sqrt()).abs() < 1e-6);
        let u = f.biot_savart().err();
        assert!(u.is_none() || matches!(u, Some(FieldError::NonzeroMean(_))));
    }
}
