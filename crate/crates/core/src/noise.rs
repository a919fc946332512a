//! Transport-noise ensemble: wavevector bookkeeping, orthonormal bases of the
//! planes `k^perp`, radially symmetric coefficient families, seeded Brownian
//! channels, and the Ito--Stratonovich correctors.
//!
//! The noise acting on a field `f` is the sum over wavevectors `k` in a
//! finite symmetric support and directions `alpha` of
//! `2 pref theta_k [ cos(2 pi k.x)(a_{k,alpha}.grad f) dB^cos
//!                 + sin(2 pi k.x)(a_{k,alpha}.grad f) dB^sin ]`,
//! one pair of independent real Brownian channels per `(k, alpha)` with `k`
//! ranging over a fixed positive half of the support. For any normalized
//! radially symmetric coefficient family the channels are isotropic:
//! `sum_{k,alpha} theta_k^2 a ox a = Id / c_d` with `c_d = d/(d-1)`, and the
//! Stratonovich-to-Ito conversion contributes exactly `mu Laplacian`.

use std::collections::HashMap;
use std::io::Write;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::NoiseError;
use crate::fft::{next_fast_size, FftNd};
use crate::field::{accumulate_shift_multiply, Channel, SpectralField};
use crate::grid::{Grid, Mode};
use crate::scalar::Scalar;

/// Prefactor and projection convention for the three equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefactorMode {
    /// `sqrt(c_d mu)` with `c_d = d/(d-1)`.
    Scalar,
    /// `sqrt(2 mu)`, two-dimensional vorticity.
    Vorticity,
    /// `sqrt(2 mu)` with a Leray projection of every summand.
    Velocity,
}

/// `c_d = d/(d-1)`.
pub fn c_d<T: Scalar>(dim: usize) -> T {
    T::of_f64(dim as f64 / (dim as f64 - 1.0))
}

fn prefactor<T: Scalar>(mode: PrefactorMode, dim: usize, mu: T) -> T {
    match mode {
        PrefactorMode::Scalar => (c_d::<T>(dim) * mu).sqrt(),
        PrefactorMode::Vorticity | PrefactorMode::Velocity => {
            (T::of_f64(2.0) * mu).sqrt()
        }
    }
}

/// Whether `k` belongs to the chosen positive half-lattice: first nonzero
/// coordinate positive.
pub fn is_positive_half(k: &Mode) -> bool {
    for &ki in k {
        if ki > 0 {
            return true;
        }
        if ki < 0 {
            return false;
        }
    }
    false
}

/// Orthonormal bases `a_{k,alpha}` of the hyperplanes `k^perp` over a finite
/// symmetric wavevector support, with the mirror rule `a_{-k,alpha} = a_{k,alpha}`.
#[derive(Debug, Clone)]
pub struct NoiseBasis<T: Scalar> {
    dim: usize,
    k_plus: Vec<Mode>,
    vectors: Vec<[[T; 3]; 2]>,
    index: HashMap<Mode, usize>,
}

impl<T: Scalar> NoiseBasis<T> {
    /// Build the basis over `support`, which must be nonempty, avoid zero and
    /// be closed under negation.
    pub fn build(dim: usize, support: &[Mode]) -> Result<Self, NoiseError> {
        if support.is_empty() {
            return Err(NoiseError::EmptySupport);
        }
        let set: HashMap<Mode, ()> = support.iter().map(|&k| (k, ())).collect();
        for k in set.keys() {
            if *k == [0, 0, 0] {
                return Err(NoiseError::SupportContainsZero);
            }
            if !set.contains_key(&[-k[0], -k[1], -k[2]]) {
                return Err(NoiseError::SupportNotSymmetric(*k));
            }
        }
        let mut k_plus: Vec<Mode> = set.keys().copied().filter(is_positive_half).collect();
        k_plus.sort_unstable();
        let vectors = k_plus.iter().map(|k| plane_basis::<T>(dim, k)).collect();
        let index = k_plus.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        Ok(Self {
            dim,
            k_plus,
            vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of direction vectors per wavevector, `d - 1`.
    pub fn alphas(&self) -> usize {
        self.dim - 1
    }

    pub fn k_plus(&self) -> &[Mode] {
        &self.k_plus
    }

    /// Basis vector `a_{k,alpha}`; `k` may come from either half-lattice.
    pub fn vector(&self, k: &Mode, alpha: usize) -> Option<[T; 3]> {
        let key = if is_positive_half(k) {
            *k
        } else {
            [-k[0], -k[1], -k[2]]
        };
        self.index.get(&key).map(|&i| self.vectors[i][alpha])
    }

    pub fn contains(&self, k: &Mode) -> bool {
        self.vector(k, 0).is_some()
    }
}

/// Deterministic orthonormal basis of `k^perp`.
///
/// In 2D this is `k^perp/|k|`; in 3D, `a_1 = normalize(e_ref x k)` with
/// `e_ref = e_z` (falling back to `e_x` when `k` is parallel to `e_z`) and
/// `a_2 = normalize(k x a_1)`.
fn plane_basis<T: Scalar>(dim: usize, k: &Mode) -> [[T; 3]; 2] {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    let norm = (kf[0] * kf[0] + kf[1] * kf[1] + kf[2] * kf[2]).sqrt();
    if dim == 2 {
        let a = [-kf[1] / norm, kf[0] / norm, 0.0];
        [to_t(a), [T::zero(); 3]]
    } else {
        let e_ref = if k[0] == 0 && k[1] == 0 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let a1 = normalize(cross(e_ref, kf));
        let a2 = normalize(cross(kf, a1));
        [to_t(a1), to_t(a2)]
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn to_t<T: Scalar>(v: [f64; 3]) -> [T; 3] {
    [T::of_f64(v[0]), T::of_f64(v[1]), T::of_f64(v[2])]
}

/// Nonnegative coefficients `theta_k` with finite symmetric support, equal on
/// spectral shells and normalized to unit `l^2` norm (or empty).
#[derive(Debug, Clone)]
pub struct ThetaFamily<T: Scalar> {
    dim: usize,
    /// Full support, both half-lattices, sorted.
    entries: Vec<(Mode, T)>,
    shell: Option<usize>,
    decay: T,
}

impl<T: Scalar> ThetaFamily<T> {
    /// The shell family `theta_k ~ 1/|k|^r` on `n <= |k| <= 2n`, normalized.
    pub fn canonical(dim: usize, n: usize, r: T) -> Result<Self, NoiseError> {
        if n < 1 {
            return Err(NoiseError::Invalid("shell parameter n must be >= 1".into()));
        }
        if r <= T::zero() {
            return Err(NoiseError::Invalid("decay exponent r must be > 0".into()));
        }
        let lo = (n * n) as i64;
        let hi = (4 * n * n) as i64;
        let reach = 2 * n as i64;
        let mut entries = Vec::new();
        let mut range = |k: Mode| {
            let ksq = Grid::wave_sq(&k);
            if ksq >= lo && ksq <= hi {
                let theta = T::of_f64(ksq as f64).powf(-r / T::of_f64(2.0));
                entries.push((k, theta));
            }
        };
        if dim == 2 {
            for kx in -reach..=reach {
                for ky in -reach..=reach {
                    range([kx, ky, 0]);
                }
            }
        } else {
            for kx in -reach..=reach {
                for ky in -reach..=reach {
                    for kz in -reach..=reach {
                        range([kx, ky, kz]);
                    }
                }
            }
        }
        if entries.is_empty() {
            return Err(NoiseError::EmptySupport);
        }
        entries.sort_unstable_by_key(|&(k, _)| k);
        let norm_sq = entries
            .iter()
            .map(|&(_, t)| t * t)
            .fold(T::zero(), |a, b| a + b);
        let inv = T::one() / norm_sq.sqrt();
        for e in &mut entries {
            e.1 *= inv;
        }
        Ok(Self {
            dim,
            entries,
            shell: Some(n),
            decay: r,
        })
    }

    /// Family with no support; the associated noise vanishes.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            shell: None,
            decay: T::one(),
        }
    }

    /// Explicit coefficients; callers supply one entry per wavevector of the
    /// full symmetric support.
    pub fn explicit(dim: usize, entries: Vec<(Mode, T)>) -> Result<Self, NoiseError> {
        for &(k, t) in &entries {
            if k == [0, 0, 0] {
                return Err(NoiseError::SupportContainsZero);
            }
            if t < T::zero() {
                return Err(NoiseError::Invalid("theta coefficients must be >= 0".into()));
            }
        }
        let set: HashMap<Mode, T> = entries.iter().copied().collect();
        for k in set.keys() {
            if !set.contains_key(&[-k[0], -k[1], -k[2]]) {
                return Err(NoiseError::SupportNotSymmetric(*k));
            }
        }
        let mut entries = entries;
        entries.sort_unstable_by_key(|&(k, _)| k);
        Ok(Self {
            dim,
            entries,
            shell: None,
            decay: T::one(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shell(&self) -> Option<usize> {
        self.shell
    }

    pub fn decay(&self) -> T {
        self.decay
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Full symmetric support with coefficients.
    pub fn entries(&self) -> &[(Mode, T)] {
        &self.entries
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn value(&self, k: &Mode) -> T {
        self.entries
            .iter()
            .find(|(kk, _)| kk == k)
            .map(|&(_, t)| t)
            .unwrap_or_else(T::zero)
    }

    pub fn l2_norm(&self) -> T {
        self.entries
            .iter()
            .map(|&(_, t)| t * t)
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn linf_norm(&self) -> T {
        self.entries
            .iter()
            .map(|&(_, t)| t)
            .fold(T::zero(), T::max)
    }

    /// Largest `|k_i|` over the support; bounds how far one noise application
    /// can shift a mode.
    pub fn reach(&self) -> i64 {
        self.entries
            .iter()
            .map(|(k, _)| k.iter().map(|ki| ki.abs()).max().unwrap())
            .max()
            .unwrap_or(0)
    }

    /// Whether coefficients are equal on shells and `l^2`-normalized.
    pub fn is_normalized_radial(&self, tol: T) -> bool {
        if self.is_empty() {
            return false;
        }
        let mut by_shell: HashMap<i64, T> = HashMap::new();
        for &(k, t) in &self.entries {
            let e = by_shell.entry(Grid::wave_sq(&k)).or_insert(t);
            if (*e - t).abs() > tol {
                return false;
            }
        }
        (self.l2_norm() - T::one()).abs() <= tol
    }

    /// `sum_{k,alpha} theta_k^2 (1 + 4 pi^2 |k|^2)^r`, the squared Sobolev
    /// norm of the coefficient field `(theta_k sigma_{k,alpha})_{k,alpha}`.
    pub fn coefficient_field_norm_sq(&self, r: T) -> T {
        let alphas = T::of_f64((self.dim - 1) as f64);
        let four_pi_sq = T::four_pi_sq();
        self.entries
            .iter()
            .map(|&(k, t)| {
                t * t * (T::one() + four_pi_sq * T::of_f64(Grid::wave_sq(&k) as f64)).powf(r)
            })
            .fold(T::zero(), |a, b| a + b)
            * alphas
    }

    /// Dump `k1,k2,k3,theta` rows.
    pub fn csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "k1,k2,k3,theta")?;
        for &(k, t) in &self.entries {
            writeln!(w, "{},{},{},{:e}", k[0], k[1], k[2], t)?;
        }
        Ok(())
    }
}

/// `sum_{k,alpha} theta_k^2 a_{k,alpha} (x) a_{k,alpha}` over the full support.
///
/// Equals `Id / c_d` exactly for any normalized radially symmetric family.
pub fn isotropy_matrix<T: Scalar>(
    theta: &ThetaFamily<T>,
    basis: &NoiseBasis<T>,
) -> Result<[[T; 3]; 3], NoiseError> {
    let mut m = [[T::zero(); 3]; 3];
    for &(k, t) in theta.entries() {
        if t == T::zero() {
            continue;
        }
        for alpha in 0..basis.alphas() {
            let a = basis
                .vector(&k, alpha)
                .ok_or(NoiseError::SupportMismatch(k))?;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += t * t * a[i] * a[j];
                }
            }
        }
    }
    Ok(m)
}

/// One real noise channel pair: wavevector, plane vector, coefficient.
#[derive(Debug, Clone, Copy)]
pub struct NoiseChannel<T: Scalar> {
    pub k: Mode,
    pub a: [T; 3],
    pub theta: T,
}

/// The assembled channel list, ordered by `(k lexicographic, alpha)` over the
/// positive half of the support. Each channel carries a cos and a sin
/// Brownian increment.
#[derive(Debug, Clone)]
pub struct TransportNoise<T: Scalar> {
    dim: usize,
    channels: Vec<NoiseChannel<T>>,
    reach: i64,
    theta_l2_sq: T,
}

impl<T: Scalar> TransportNoise<T> {
    pub fn new(theta: &ThetaFamily<T>, basis: &NoiseBasis<T>) -> Result<Self, NoiseError> {
        let mut channels = Vec::new();
        for &(k, t) in theta.entries() {
            if !is_positive_half(&k) || t == T::zero() {
                continue;
            }
            for alpha in 0..basis.alphas() {
                let a = basis
                    .vector(&k, alpha)
                    .ok_or(NoiseError::SupportMismatch(k))?;
                channels.push(NoiseChannel { k, a, theta: t });
            }
        }
        let l2 = theta.l2_norm();
        Ok(Self {
            dim: basis.dim(),
            channels,
            reach: theta.reach(),
            theta_l2_sq: l2 * l2,
        })
    }

    /// Basis and coefficients for a canonical family in one call.
    pub fn canonical(dim: usize, n: usize, r: T) -> Result<Self, NoiseError> {
        let theta = ThetaFamily::canonical(dim, n, r)?;
        let support: Vec<Mode> = theta.entries().iter().map(|&(k, _)| k).collect();
        let basis = NoiseBasis::build(dim, &support)?;
        Self::new(&theta, &basis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> &[NoiseChannel<T>] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn reach(&self) -> i64 {
        self.reach
    }

    /// `|theta|_{l^2}^2`; the Ito drift boost is `mu` times this (1 for
    /// normalized families, 0 for empty noise).
    pub fn theta_l2_sq(&self) -> T {
        self.theta_l2_sq
    }
}

/// Brownian increments for one time step: one cos and one sin value per
/// channel, each `N(0, dt)`.
#[derive(Debug, Clone)]
pub struct Increments<T> {
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Scalar> Increments<T> {
    pub fn zeros(n_channels: usize) -> Self {
        Self {
            cos: vec![T::zero(); n_channels],
            sin: vec![T::zero(); n_channels],
        }
    }

    /// Sum of consecutive fine-step increments, for refinement studies on a
    /// fixed Brownian path.
    pub fn coarsen(fine: &[Self]) -> Self {
        let n = fine[0].cos.len();
        let mut out = Self::zeros(n);
        for inc in fine {
            for c in 0..n {
                out.cos[c] += inc.cos[c];
                out.sin[c] += inc.sin[c];
            }
        }
        out
    }
}

/// Seeded Gaussian increment source with two independent real channels per
/// `(k, alpha)`.
///
/// The stream is ChaCha12 keyed by the master seed (`seed_from_u64`) with the
/// path index as the ChaCha stream number; increments are drawn channel by
/// channel in the `TransportNoise` ordering, cos before sin, as
/// `N(0,1) * sqrt(dt)`. Identical seeds reproduce identical trajectories.
#[derive(Debug, Clone)]
pub struct BrownianDriver<T: Scalar> {
    rng: ChaCha12Rng,
    n_channels: usize,
    steps: u64,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> BrownianDriver<T> {
    pub fn new(master_seed: u64, path_index: u64, n_channels: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(path_index);
        Self {
            rng,
            n_channels,
            steps: 0,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn fill(&mut self, dt: T, out: &mut Increments<T>) {
        let sqrt_dt = dt.sqrt();
        for c in 0..self.n_channels {
            out.cos[c] = T::standard_normal(&mut self.rng) * sqrt_dt;
            out.sin[c] = T::standard_normal(&mut self.rng) * sqrt_dt;
        }
        self.steps += 1;
    }

    pub fn next_increments(&mut self, dt: T) -> Increments<T> {
        let mut out = Increments::zeros(self.n_channels);
        self.fill(dt, &mut out);
        out
    }
}

/// Applies one Ito transport-noise increment to a field.
///
/// The increment equals the channel sum of `shift_multiply` terms weighted by
/// the Brownian increments. Small supports use that sum directly; larger ones
/// synthesize the random velocity field `V = sum_c w_c trig_c(x) a_c` on a
/// zero-padded lattice and compute `(V . grad) f` by FFT, which reproduces the
/// channel sum exactly because the padding keeps every retained product mode
/// alias-free.
pub struct NoiseEngine<T: Scalar> {
    grid: Grid,
    padded: usize,
    fft: FftNd<T>,
    v_hat: Vec<Vec<Complex<T>>>,
    deriv: Vec<Complex<T>>,
    acc: Vec<Complex<T>>,
    /// Per retained mode: `(grid index, padded index, 2 pi k per axis)`.
    band_map: Vec<(usize, usize, [T; 3])>,
    /// Channel-sum fallback threshold.
    direct_limit: usize,
}

impl<T: Scalar> NoiseEngine<T> {
    pub fn new(grid: Grid, noise: &TransportNoise<T>) -> Self {
        let n = grid.size();
        let reach = noise.reach().max(1) as usize;
        let padded = next_fast_size(n + reach + 1);
        let d = grid.dim();
        let len = padded.pow(d as u32);
        let mut engine = Self {
            grid,
            padded,
            fft: FftNd::new(d, padded),
            v_hat: (0..d).map(|_| vec![Complex::default(); len]).collect(),
            deriv: vec![Complex::default(); len],
            acc: vec![Complex::default(); len],
            band_map: Vec::new(),
            direct_limit: 48,
        };
        let two_pi = T::two_pi();
        for (idx, k) in grid.modes() {
            if !grid.in_band(&k) {
                continue;
            }
            let waves = [
                two_pi * T::of_f64(k[0] as f64),
                two_pi * T::of_f64(k[1] as f64),
                two_pi * T::of_f64(k[2] as f64),
            ];
            engine.band_map.push((idx, engine.padded_index(&k), waves));
        }
        engine
    }

    pub fn padded_size(&self) -> usize {
        self.padded
    }

    fn padded_slot(&self, k: i64) -> usize {
        let m = self.padded as i64;
        (k.rem_euclid(m)) as usize
    }

    fn padded_index(&self, k: &Mode) -> usize {
        let d = self.grid.dim();
        let mut idx = 0;
        for &ki in &k[..d] {
            idx = idx * self.padded + self.padded_slot(ki);
        }
        idx
    }

    /// One noise increment: `sum_c 2 pref theta_c [sm_cos dB_cos + sm_sin dB_sin]`,
    /// Leray-projected for the velocity prefactor mode.
    pub fn apply(
        &mut self,
        noise: &TransportNoise<T>,
        f: &SpectralField<T>,
        incr: &Increments<T>,
        mu: T,
        mode: PrefactorMode,
    ) -> SpectralField<T> {
        let mut out = if noise.n_channels() <= self.direct_limit {
            self.apply_direct(noise, f, incr, mu, mode)
        } else {
            self.apply_fft(noise, f, incr, mu, mode)
        };
        if mode == PrefactorMode::Velocity {
            out.leray_project_in_place();
        }
        out
    }

    /// Reference route: explicit channel sum of `shift_multiply` terms.
    pub fn apply_direct(
        &self,
        noise: &TransportNoise<T>,
        f: &SpectralField<T>,
        incr: &Increments<T>,
        mu: T,
        mode: PrefactorMode,
    ) -> SpectralField<T> {
        let pref = prefactor(mode, self.grid.dim(), mu);
        let two = T::of_f64(2.0);
        let mut out = SpectralField::zeros(f.grid(), f.rank());
        for (c, ch) in noise.channels().iter().enumerate() {
            let w = two * pref * ch.theta;
            if incr.cos[c] != T::zero() {
                accumulate_shift_multiply(&ch.k, &ch.a, Channel::Cos, f, w * incr.cos[c], &mut out);
            }
            if incr.sin[c] != T::zero() {
                accumulate_shift_multiply(&ch.k, &ch.a, Channel::Sin, f, w * incr.sin[c], &mut out);
            }
        }
        out
    }

    fn apply_fft(
        &mut self,
        noise: &TransportNoise<T>,
        f: &SpectralField<T>,
        incr: &Increments<T>,
        mu: T,
        mode: PrefactorMode,
    ) -> SpectralField<T> {
        let d = self.grid.dim();
        let pref = prefactor(mode, d, mu);
        let two = T::of_f64(2.0);
        let half = T::of_f64(0.5);
        for buf in &mut self.v_hat {
            buf.fill(Complex::default());
        }
        // V(k) picks up w (cos_inc/2 - i sin_inc/2) at +k and the conjugate at -k
        for (c, ch) in noise.channels().iter().enumerate() {
            let w = two * pref * ch.theta;
            let amp = Complex::new(w * incr.cos[c] * half, -w * incr.sin[c] * half);
            let plus = self.padded_index(&ch.k);
            let minus = self.padded_index(&[-ch.k[0], -ch.k[1], -ch.k[2]]);
            for axis in 0..d {
                let av = ch.a[axis];
                self.v_hat[axis][plus] += amp.scale(av);
                self.v_hat[axis][minus] += amp.conj().scale(av);
            }
        }
        for buf in &mut self.v_hat {
            self.fft.inverse(buf);
        }

        let mut out = SpectralField::zeros(f.grid(), f.rank());
        for comp in 0..f.rank() {
            self.acc.fill(Complex::default());
            for axis in 0..d {
                self.deriv.fill(Complex::default());
                // embed 2 pi i k_axis f(k) on the padded lattice
                let src = f.component(comp);
                for &(idx, pidx, waves) in &self.band_map {
                    let v = src[idx];
                    self.deriv[pidx] = Complex::new(-v.im, v.re).scale(waves[axis]);
                }
                self.fft.inverse(&mut self.deriv);
                for i in 0..self.acc.len() {
                    self.acc[i] += self.v_hat[axis][i] * self.deriv[i];
                }
            }
            self.fft.forward(&mut self.acc);
            let dst = out.component_mut(comp);
            for &(idx, pidx, _) in &self.band_map {
                dst[idx] = self.acc[pidx];
            }
        }
        out
    }
}

/// `(1/2) sum_channels (xi . grad)(xi . grad) f` by double exact convolution.
///
/// For a normalized radially symmetric family this equals `mu Laplacian f`
/// exactly on modes whose double shift stays inside the retained band.
pub fn stratonovich_corrector<T: Scalar>(
    noise: &TransportNoise<T>,
    f: &SpectralField<T>,
    mu: T,
    mode: PrefactorMode,
) -> SpectralField<T> {
    let pref = prefactor(mode, noise.dim(), mu);
    let two = T::of_f64(2.0);
    let half = T::of_f64(0.5);
    let mut out = SpectralField::zeros(f.grid(), f.rank());
    for ch in noise.channels() {
        let w = two * pref * ch.theta;
        for channel in [Channel::Cos, Channel::Sin] {
            let once = crate::field::shift_multiply(&ch.k, &ch.a, channel, f);
            accumulate_shift_multiply(&ch.k, &ch.a, channel, &once, half * w * w, &mut out);
        }
    }
    out
}

/// Quadratic variation of one noise application per unit time:
/// `sum_channels |2 pref theta trig (a.grad f)|_{L^2}^2`.
pub fn quadratic_variation<T: Scalar>(
    noise: &TransportNoise<T>,
    f: &SpectralField<T>,
    mu: T,
    mode: PrefactorMode,
) -> T {
    let pref = prefactor(mode, noise.dim(), mu);
    let two = T::of_f64(2.0);
    let mut acc = T::zero();
    for ch in noise.channels() {
        let w = two * pref * ch.theta;
        for channel in [Channel::Cos, Channel::Sin] {
            let mut term = crate::field::shift_multiply(&ch.k, &ch.a, channel, f);
            if mode == PrefactorMode::Velocity {
                term.leray_project_in_place();
            }
            acc += term.l2_norm_sq() * w * w;
        }
    }
    acc
}

/// Mode-diagonal form of the velocity-equation Ito corrector
/// `-2 mu sum_k theta_k^2 P (sigma_{-k}.grad) Q (sigma_k.grad)`, precomputed
/// as one real `2x2` matrix per retained mode. Intermediate modes pushed
/// outside the band are dropped, matching the convolution semantics.
pub struct QThetaOperator<T: Scalar> {
    grid: Grid,
    matrices: Vec<[[T; 2]; 2]>,
}

impl<T: Scalar> QThetaOperator<T> {
    pub fn new(
        theta: &ThetaFamily<T>,
        basis: &NoiseBasis<T>,
        grid: Grid,
        mu: T,
    ) -> Result<Self, NoiseError> {
        if grid.dim() != 2 {
            return Err(NoiseError::Invalid(
                "velocity-form corrector is two-dimensional".into(),
            ));
        }
        let eight_pi_sq = T::of_f64(2.0) * T::four_pi_sq();
        let mut matrices = vec![[[T::zero(); 2]; 2]; grid.len()];
        for (idx, m) in grid.modes() {
            if !grid.in_band(&m) || Grid::wave_sq(&m) == 0 {
                continue;
            }
            let msq = T::of_f64(Grid::wave_sq(&m) as f64);
            let mf = [T::of_f64(m[0] as f64), T::of_f64(m[1] as f64)];
            let mut sum = [[T::zero(); 2]; 2];
            for &(k, t) in theta.entries() {
                if t == T::zero() {
                    continue;
                }
                let a = basis
                    .vector(&k, 0)
                    .ok_or(NoiseError::SupportMismatch(k))?;
                let j = [m[0] + k[0], m[1] + k[1], 0];
                if !grid.in_band(&j) {
                    continue;
                }
                let jsq = Grid::wave_sq(&j);
                if jsq == 0 {
                    continue;
                }
                let am = a[0] * mf[0] + a[1] * mf[1];
                if am == T::zero() {
                    continue;
                }
                let jf = [T::of_f64(j[0] as f64), T::of_f64(j[1] as f64)];
                let aj = a[0] * jf[0] + a[1] * jf[1];
                let w = t * t * am * aj / T::of_f64(jsq as f64);
                // Q_j = j j^T / |j|^2
                for r in 0..2 {
                    for c in 0..2 {
                        sum[r][c] += w * jf[r] * jf[c];
                    }
                }
            }
            // project rows onto m^perp and scale: 8 pi^2 mu P_m sum
            let mut mat = [[T::zero(); 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    let mut v = sum[r][c];
                    let mdot = mf[0] * sum[0][c] + mf[1] * sum[1][c];
                    v -= mf[r] * mdot / msq;
                    mat[r][c] = eight_pi_sq * mu * v;
                }
            }
            matrices[idx] = mat;
        }
        Ok(Self { grid, matrices })
    }

    /// `Q_theta(u)`; the output satisfies `k . out(k) = 0` for every mode.
    pub fn apply(&self, u: &SpectralField<T>) -> SpectralField<T> {
        assert_eq!(u.grid(), self.grid);
        assert_eq!(u.rank(), 2);
        let n = self.grid.len();
        let mut out = SpectralField::zeros(self.grid, 2);
        for idx in 0..n {
            let m = &self.matrices[idx];
            let ux = u.component(0)[idx];
            let uy = u.component(1)[idx];
            out.component_mut(0)[idx] = ux.scale(m[0][0]) + uy.scale(m[0][1]);
            out.component_mut(1)[idx] = ux.scale(m[1][0]) + uy.scale(m[1][1]);
        }
        out
    }
}

/// Convenience wrapper building the mode-diagonal operator and applying it.
pub fn q_theta<T: Scalar>(
    theta: &ThetaFamily<T>,
    basis: &NoiseBasis<T>,
    u: &SpectralField<T>,
    mu: T,
) -> Result<SpectralField<T>, crate::error::SimError> {
    let residual = u.divergence_residual();
    if residual > T::of_f64(crate::field::DIV_TOLERANCE) {
        return Err(crate::error::FieldError::NotDivergenceFree(residual.as_f64()).into());
    }
    let op = QThetaOperator::new(theta, basis, u.grid(), mu)?;
    Ok(op.apply(u))
}
