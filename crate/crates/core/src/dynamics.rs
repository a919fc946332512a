//! Time integration of the transport-noise SPDEs in their Ito reformulations,
//! plus the deterministic limit equations.
//!
//! All steppers use splitting with the stiff part exact: the Ito drift
//! `kappa Laplacian` (with `kappa = molecular + mu |theta|_{l2}^2`, the
//! Stratonovich correction absorbed into the coefficient) is applied as the
//! exact heat semigroup per mode, the convective term by an explicit Heun
//! stage with 2/3 dealiasing, the velocity-form corrector `Q_theta` by
//! explicit Euler, and the noise as an Ito increment. Transport noise moves
//! energy without injecting any in expectation, so the discrete pathwise
//! energy balance closes up to a first-order-in-`dt` defect which the
//! refinement tests measure.
//!
//! The recorded dissipation integral is the running trapezoidal quadrature of
//! `coeff * |grad f|^2` over the recorded steps, with `coeff` the molecular
//! coefficient for SPDE runs and the full limit coefficient for deterministic
//! runs; together with the `L^2` series it closes the discrete energy balance
//! up to the defect measured by the refinement tests.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::SimError;
use crate::fft::FftNd;
use crate::field::{advect, advect_unchecked, SpectralField};
use crate::grid::Grid;
use crate::noise::{
    BrownianDriver, Increments, NoiseBasis, NoiseEngine, PrefactorMode, QThetaOperator,
    ThetaFamily, TransportNoise,
};
use crate::scalar::Scalar;

/// Diagnostic ceiling; any squared norm above this aborts the path.
pub const BLOWUP_LIMIT: f64 = 1e12;
/// Residual ceiling for the divergence constraint after re-projection.
pub const DIV_RESIDUAL_LIMIT: f64 = 1e-10;
/// Dimensionless stability-guard constant for `dt * 8 pi^2 mu reach^2`.
pub const STABILITY_GUARD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equation {
    Scalar,
    Vorticity,
    Velocity,
    DeterministicLimit,
}

/// Which limit PDE a deterministic run integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitForm {
    /// Heat flow with coefficient `molecular + mu`.
    Heat,
    /// 2D Navier-Stokes vorticity with viscosity `molecular + mu`.
    NavierStokes,
    /// 2D Navier-Stokes velocity with viscosity `molecular + mu/4`.
    VelocityNavierStokes,
}

/// Convective cut-off `phi(|state|_{H^exponent} / radius)`.
#[derive(Debug, Clone, Copy)]
pub struct CutoffSpec<T> {
    pub radius: T,
    pub exponent: T,
}

/// Which diagnostics a run records beyond the energy series.
#[derive(Debug, Clone, Default)]
pub struct RecordSpec<T> {
    /// Extra Sobolev exponents whose squared norms are tracked per step.
    pub sobolev_exponents: Vec<T>,
    /// Store field snapshots every this many steps (0 = never).
    pub snapshot_every: usize,
}

/// Validated run parameters for one equation and one initial datum.
#[derive(Debug, Clone)]
pub struct SimConfig<T: Scalar> {
    pub grid: Grid,
    pub equation: Equation,
    pub limit_form: Option<LimitForm>,
    /// Molecular coefficient: diffusivity `gamma` or viscosity `nu`.
    pub molecular: T,
    /// Noise intensity `mu > 0`.
    pub mu: T,
    pub theta: ThetaFamily<T>,
    pub basis: NoiseBasis<T>,
    pub dt: T,
    pub t_end: T,
    pub paths: usize,
    pub seed: u64,
    pub dealias: bool,
    pub cutoff: Option<CutoffSpec<T>>,
    pub record: RecordSpec<T>,
    pub initial: SpectralField<T>,
}

impl<T: Scalar> SimConfig<T> {
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round().as_f64() as usize
    }

    /// Derived constant `c_d = d/(d-1)`, never stored.
    pub fn c_d(&self) -> T {
        crate::noise::c_d(self.grid.dim())
    }

    /// Check invariants; hard violations error, soft ones return warnings.
    pub fn validate(&self) -> Result<Vec<String>, SimError> {
        let mut warnings = Vec::new();
        if self.dt <= T::zero() {
            return Err(SimError::Config("dt must be positive".into()));
        }
        let ratio = self.t_end / self.dt;
        if (ratio - ratio.round()).abs() > T::of_f64(1e-9) * ratio.max(T::one()) {
            return Err(SimError::Config(format!(
                "t_end/dt = {ratio} is not an integer step count"
            )));
        }
        if self.molecular < T::zero() {
            return Err(SimError::Config(
                "molecular coefficient must be >= 0".into(),
            ));
        }
        if self.mu <= T::zero() {
            return Err(SimError::Config("noise intensity mu must be > 0".into()));
        }
        if self.initial.grid() != self.grid {
            return Err(SimError::Config(
                "initial datum lives on another grid".into(),
            ));
        }
        let expected_rank = match self.effective_form() {
            EffectiveForm::Scalar | EffectiveForm::Vorticity => 1,
            EffectiveForm::Velocity => self.grid.dim(),
        };
        if self.initial.rank() != expected_rank {
            return Err(SimError::Config(format!(
                "initial datum rank {} does not match the equation",
                self.initial.rank()
            )));
        }
        if matches!(
            self.effective_form(),
            EffectiveForm::Vorticity | EffectiveForm::Velocity
        ) && self.grid.dim() != 2
        {
            return Err(SimError::Config(
                "vorticity and velocity forms are two-dimensional".into(),
            ));
        }
        let mean = self.initial.mean_magnitude();
        if mean > T::of_f64(1e-12) * self.initial.l2_norm_sq().sqrt().max(T::one()) {
            return Err(SimError::Config(format!(
                "initial datum must be mean-zero (zero mode {mean:e})"
            )));
        }
        if self.effective_form() == EffectiveForm::Velocity {
            let res = self.initial.divergence_residual();
            if res > T::of_f64(crate::field::DIV_TOLERANCE) {
                return Err(SimError::Config(format!(
                    "velocity initial datum must be divergence-free (residual {res:e})"
                )));
            }
        }
        if !self.theta.is_empty() && !self.theta.is_normalized_radial(T::of_f64(1e-10)) {
            return Err(SimError::Config(
                "theta must be normalized and radially symmetric (or empty)".into(),
            ));
        }
        if self.theta.dim() != self.grid.dim() {
            return Err(SimError::Config("theta dimension mismatch".into()));
        }
        // grid capacity: one noise shift must stay inside the half-band
        let reach = self.theta.reach();
        let half = self.grid.size() as i64 / 2;
        if reach >= half {
            return Err(SimError::Config(format!(
                "grid capacity exceeded: noise reach {reach} >= N/2 = {half}"
            )));
        }
        let init_reach = initial_reach(&self.initial);
        if reach > 0 && reach + init_reach >= half {
            warnings.push(format!(
                "noise reach {reach} plus initial spectral extent {init_reach} leaves no \
                 headroom below N/2 = {half}; shifted modes are truncated immediately"
            ));
        }
        // heuristic CFL for the noise transfer at its top frequency
        if reach > 0 {
            let guard = self.dt.as_f64()
                * 8.0
                * std::f64::consts::PI.powi(2)
                * self.mu.as_f64()
                * (reach * reach) as f64;
            if guard > STABILITY_GUARD {
                let bound = STABILITY_GUARD
                    / (8.0
                        * std::f64::consts::PI.powi(2)
                        * self.mu.as_f64()
                        * (reach * reach) as f64);
                warnings.push(format!(
                    "stability guard: dt * 8 pi^2 mu reach^2 = {guard:.3} exceeds \
                     {STABILITY_GUARD}; noise transfer at the top noise frequency is \
                     under-resolved (dt <= {bound:.3e} satisfies the guard)"
                ));
            }
        }
        if let Some(cut) = &self.cutoff {
            if cut.radius <= T::zero() {
                return Err(SimError::Config("cutoff radius must be > 0".into()));
            }
            if cut.exponent <= T::zero() || cut.exponent >= T::one() {
                return Err(SimError::Config("cutoff exponent must lie in (0,1)".into()));
            }
        }
        if self.equation == Equation::DeterministicLimit && self.limit_form.is_none() {
            return Err(SimError::Config(
                "deterministic-limit runs need a limit form".into(),
            ));
        }
        Ok(warnings)
    }

    fn effective_form(&self) -> EffectiveForm {
        match self.equation {
            Equation::Scalar => EffectiveForm::Scalar,
            Equation::Vorticity => EffectiveForm::Vorticity,
            Equation::Velocity => EffectiveForm::Velocity,
            Equation::DeterministicLimit => match self.limit_form {
                Some(LimitForm::Heat) | None => EffectiveForm::Scalar,
                Some(LimitForm::NavierStokes) => EffectiveForm::Vorticity,
                Some(LimitForm::VelocityNavierStokes) => EffectiveForm::Velocity,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EffectiveForm {
    Scalar,
    Vorticity,
    Velocity,
}

fn initial_reach<T: Scalar>(f: &SpectralField<T>) -> i64 {
    let mut reach = 0i64;
    let n = f.grid().len();
    for (idx, k) in f.grid().modes() {
        let occupied = (0..f.rank()).any(|c| f.raw()[c * n + idx].norm_sqr() > T::zero());
        if occupied {
            reach = reach.max(k.iter().map(|ki| ki.abs()).max().unwrap());
        }
    }
    reach
}

/// Smooth truncation factor `phi(|zeta|_{H^r}/R)`: 1 on `[0,1]`, 0 from 2 on,
/// cubic smoothstep in between.
pub fn cutoff_factor<T: Scalar>(zeta: &SpectralField<T>, radius: T, exponent: T) -> T {
    smoothstep_cutoff(zeta.sobolev_norm(exponent) / radius)
}

fn smoothstep_cutoff<T: Scalar>(s: T) -> T {
    if s <= T::one() {
        T::one()
    } else if s >= T::of_f64(2.0) {
        T::zero()
    } else {
        let t = s - T::one();
        T::one() - (T::of_f64(3.0) * t * t - T::of_f64(2.0) * t * t * t)
    }
}

/// Exact semigroup coefficient of the Ito drift.
#[derive(Debug, Clone, Copy)]
struct DriftSpec<T> {
    kappa: T,
}

impl<T: Scalar> DriftSpec<T> {
    fn for_spde(molecular: T, mu: T, theta_l2_sq: T) -> Self {
        Self {
            kappa: molecular + mu * theta_l2_sq,
        }
    }

    fn for_limit(kappa: T) -> Self {
        Self { kappa }
    }

    fn multipliers(&self, grid: Grid, dt: T) -> Vec<T> {
        let four_pi_sq = T::four_pi_sq();
        let mut out = vec![T::one(); grid.len()];
        for (idx, k) in grid.modes() {
            let rate = four_pi_sq * self.kappa * T::of_f64(Grid::wave_sq(&k) as f64);
            out[idx] = (-rate * dt).exp();
        }
        out
    }
}

fn active_noise<T: Scalar>(cfg: &SimConfig<T>) -> Result<TransportNoise<T>, SimError> {
    if cfg.equation == Equation::DeterministicLimit {
        Ok(TransportNoise::new(
            &ThetaFamily::empty(cfg.grid.dim()),
            &cfg.basis,
        )?)
    } else {
        Ok(TransportNoise::new(&cfg.theta, &cfg.basis)?)
    }
}

/// Per-step energy bookkeeping.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepEnergy<T> {
    /// `|noise increment|_{L^2}^2 / 2`, the realized quadratic variation.
    pub noise_gain: T,
}

fn apply_drift<T: Scalar>(state: &mut SpectralField<T>, mult: &[T]) {
    let n = mult.len();
    for c in 0..state.rank() {
        let comp = state.component_mut(c);
        for i in 0..n {
            comp[i] = comp[i].scale(mult[i]);
        }
    }
}

/// Diffusion-plus-noise step of the passive scalar in Ito form.
pub struct ScalarStepper<T: Scalar> {
    drift_mult: Vec<T>,
    noise: TransportNoise<T>,
    engine: NoiseEngine<T>,
    mu: T,
}

impl<T: Scalar> ScalarStepper<T> {
    pub fn new(cfg: &SimConfig<T>) -> Result<Self, SimError> {
        let noise = active_noise(cfg)?;
        let drift = match cfg.equation {
            Equation::DeterministicLimit => DriftSpec::for_limit(cfg.molecular + cfg.mu),
            _ => DriftSpec::for_spde(cfg.molecular, cfg.mu, noise.theta_l2_sq()),
        };
        Ok(Self::with_drift(cfg.grid, cfg.dt, drift, noise, cfg.mu))
    }

    fn with_drift(grid: Grid, dt: T, drift: DriftSpec<T>, noise: TransportNoise<T>, mu: T) -> Self {
        Self {
            drift_mult: drift.multipliers(grid, dt),
            engine: NoiseEngine::new(grid, &noise),
            noise,
            mu,
        }
    }

    pub fn step(
        &mut self,
        state: &mut SpectralField<T>,
        incr: &Increments<T>,
    ) -> Result<StepEnergy<T>, SimError> {
        let half = T::of_f64(0.5);
        apply_drift(state, &self.drift_mult);
        let mut energy = StepEnergy::default();
        if self.noise.n_channels() > 0 {
            let incr_field = self
                .engine
                .apply(&self.noise, state, incr, self.mu, PrefactorMode::Scalar);
            energy.noise_gain = incr_field.l2_norm_sq() * half;
            state.add_assign(&incr_field);
        }
        Ok(energy)
    }
}

/// Vorticity stepper: Heun convective stage (optionally cut off), exact
/// diffusion with `nu + mu`, Ito transport noise.
pub struct VorticityStepper<T: Scalar> {
    drift_mult: Vec<T>,
    noise: TransportNoise<T>,
    engine: NoiseEngine<T>,
    fft: FftNd<T>,
    mu: T,
    dt: T,
    dealias: bool,
    cutoff: Option<CutoffSpec<T>>,
}

impl<T: Scalar> VorticityStepper<T> {
    pub fn new(cfg: &SimConfig<T>) -> Result<Self, SimError> {
        let noise = active_noise(cfg)?;
        let drift = match cfg.equation {
            Equation::DeterministicLimit => DriftSpec::for_limit(cfg.molecular + cfg.mu),
            _ => DriftSpec::for_spde(cfg.molecular, cfg.mu, noise.theta_l2_sq()),
        };
        Ok(Self {
            drift_mult: drift.multipliers(cfg.grid, cfg.dt),
            engine: NoiseEngine::new(cfg.grid, &noise),
            fft: FftNd::new(cfg.grid.dim(), cfg.grid.size()),
            noise,
            mu: cfg.mu,
            dt: cfg.dt,
            dealias: cfg.dealias,
            cutoff: cfg.cutoff,
        })
    }

    fn convective(
        &mut self,
        zeta: &SpectralField<T>,
        factor: T,
    ) -> Result<SpectralField<T>, SimError> {
        let u = zeta.biot_savart()?;
        let mut term = advect_unchecked(&mut self.fft, &u, zeta, true, self.dealias)?;
        term.scale(-factor);
        Ok(term)
    }

    pub fn step(
        &mut self,
        state: &mut SpectralField<T>,
        incr: &Increments<T>,
    ) -> Result<StepEnergy<T>, SimError> {
        let half = T::of_f64(0.5);
        let factor = match &self.cutoff {
            Some(cut) => cutoff_factor(state, cut.radius, cut.exponent),
            None => T::one(),
        };
        if factor > T::zero() {
            let f1 = self.convective(state, factor)?;
            let mut mid = state.clone();
            mid.add_scaled(&f1, self.dt);
            let f2 = self.convective(&mid, factor)?;
            state.add_scaled(&f1, self.dt * half);
            state.add_scaled(&f2, self.dt * half);
        }
        apply_drift(state, &self.drift_mult);
        let mut energy = StepEnergy::default();
        if self.noise.n_channels() > 0 {
            let incr_field =
                self.engine
                    .apply(&self.noise, state, incr, self.mu, PrefactorMode::Vorticity);
            energy.noise_gain = incr_field.l2_norm_sq() * half;
            state.add_assign(&incr_field);
        }
        Ok(energy)
    }
}

/// Velocity stepper: Leray-projected Heun convective stage, exact diffusion,
/// explicit Euler for `Q_theta`, projected Ito noise, and a final
/// re-projection guarding the divergence constraint.
pub struct VelocityStepper<T: Scalar> {
    drift_mult: Vec<T>,
    noise: TransportNoise<T>,
    engine: NoiseEngine<T>,
    fft: FftNd<T>,
    qtheta: Option<Arc<QThetaOperator<T>>>,
    mu: T,
    dt: T,
    dealias: bool,
    cutoff: Option<CutoffSpec<T>>,
}

impl<T: Scalar> VelocityStepper<T> {
    pub fn new(cfg: &SimConfig<T>) -> Result<Self, SimError> {
        let qtheta = match cfg.equation {
            Equation::DeterministicLimit => None,
            _ if cfg.theta.is_empty() => None,
            _ => Some(Arc::new(QThetaOperator::new(
                &cfg.theta, &cfg.basis, cfg.grid, cfg.mu,
            )?)),
        };
        Self::with_qtheta(cfg, qtheta)
    }

    /// Shares a prebuilt mode-diagonal corrector across ensemble paths.
    pub fn with_qtheta(
        cfg: &SimConfig<T>,
        qtheta: Option<Arc<QThetaOperator<T>>>,
    ) -> Result<Self, SimError> {
        let noise = active_noise(cfg)?;
        let drift = match cfg.equation {
            Equation::DeterministicLimit => {
                DriftSpec::for_limit(cfg.molecular + cfg.mu / T::of_f64(4.0))
            }
            _ => DriftSpec::for_spde(cfg.molecular, cfg.mu, noise.theta_l2_sq()),
        };
        Ok(Self {
            drift_mult: drift.multipliers(cfg.grid, cfg.dt),
            engine: NoiseEngine::new(cfg.grid, &noise),
            fft: FftNd::new(cfg.grid.dim(), cfg.grid.size()),
            qtheta,
            noise,
            mu: cfg.mu,
            dt: cfg.dt,
            dealias: cfg.dealias,
            cutoff: cfg.cutoff,
        })
    }

    fn convective(
        &mut self,
        u: &SpectralField<T>,
        factor: T,
    ) -> Result<SpectralField<T>, SimError> {
        let mut term = advect_unchecked(&mut self.fft, u, u, true, self.dealias)?;
        term.leray_project_in_place();
        term.scale(-factor);
        Ok(term)
    }

    pub fn step(
        &mut self,
        state: &mut SpectralField<T>,
        incr: &Increments<T>,
    ) -> Result<StepEnergy<T>, SimError> {
        let half = T::of_f64(0.5);
        let factor = match &self.cutoff {
            Some(cut) => cutoff_factor(state, cut.radius, cut.exponent),
            None => T::one(),
        };
        if factor > T::zero() {
            let f1 = self.convective(state, factor)?;
            let mut mid = state.clone();
            mid.add_scaled(&f1, self.dt);
            mid.leray_project_in_place();
            let f2 = self.convective(&mid, factor)?;
            state.add_scaled(&f1, self.dt * half);
            state.add_scaled(&f2, self.dt * half);
        }
        apply_drift(state, &self.drift_mult);
        let mut energy = StepEnergy::default();
        if let Some(q) = &self.qtheta {
            let qu = q.apply(state);
            state.add_scaled(&qu, self.dt);
        }
        if self.noise.n_channels() > 0 {
            let incr_field =
                self.engine
                    .apply(&self.noise, state, incr, self.mu, PrefactorMode::Velocity);
            energy.noise_gain = incr_field.l2_norm_sq() * half;
            state.add_assign(&incr_field);
        }
        state.leray_project_in_place();
        let res = state.divergence_residual();
        if res > T::of_f64(DIV_RESIDUAL_LIMIT) {
            return Err(SimError::DivergenceResidual {
                step: 0,
                residual: res.as_f64(),
            });
        }
        Ok(energy)
    }
}

enum AnyStepper<T: Scalar> {
    Scalar(ScalarStepper<T>),
    Vorticity(VorticityStepper<T>),
    Velocity(VelocityStepper<T>),
}

impl<T: Scalar> AnyStepper<T> {
    fn step(
        &mut self,
        state: &mut SpectralField<T>,
        incr: &Increments<T>,
    ) -> Result<StepEnergy<T>, SimError> {
        match self {
            AnyStepper::Scalar(s) => s.step(state, incr),
            AnyStepper::Vorticity(s) => s.step(state, incr),
            AnyStepper::Velocity(s) => s.step(state, incr),
        }
    }
}

/// Time grid plus per-step diagnostics of one run.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub times: Vec<T>,
    pub l2_sq: Vec<T>,
    pub grad_sq: Vec<T>,
    /// Running trapezoidal quadrature of `int_0^t gamma |grad f|^2 ds`,
    /// nondecreasing.
    pub diss_integral: Vec<T>,
    /// `(exponent, per-step squared Sobolev norms)`.
    pub sobolev_sq: Vec<(T, Vec<T>)>,
    pub snapshots: Vec<(usize, SpectralField<T>)>,
    /// Total realized noise quadratic variation `sum |increment|^2 / 2`.
    pub noise_gain: T,
    pub final_state: SpectralField<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// `| l2(T)/2 + int gamma |grad|^2 - l2(0)/2 |`, the discrete defect of
    /// the pathwise energy balance.
    pub fn energy_defect(&self) -> T {
        let half = T::of_f64(0.5);
        (half * *self.l2_sq.last().unwrap() + *self.diss_integral.last().unwrap()
            - half * self.l2_sq[0])
            .abs()
    }

    /// `(l2(0) - l2(T)) / 2`; equals the dissipation integral exactly along
    /// solutions of the continuum equations.
    pub fn energy_drop_half(&self) -> T {
        T::of_f64(0.5) * (self.l2_sq[0] - *self.l2_sq.last().unwrap())
    }

    pub fn final_time(&self) -> T {
        *self.times.last().unwrap()
    }

    /// Largest recorded squared Sobolev norm for the given exponent.
    pub fn sup_sobolev_sq(&self, exponent: T) -> Option<T> {
        self.sobolev_sq
            .iter()
            .find(|(e, _)| (*e - exponent).abs() < T::of_f64(1e-12))
            .map(|(_, series)| series.iter().copied().fold(T::zero(), T::max))
    }
}

/// Runs paths of one configuration; shares the noise tables and the
/// velocity-form corrector across paths.
pub struct Runner<T: Scalar> {
    cfg: SimConfig<T>,
    qtheta: Option<Arc<QThetaOperator<T>>>,
    n_channels: usize,
}

impl<T: Scalar> Runner<T> {
    pub fn new(cfg: SimConfig<T>) -> Result<Self, SimError> {
        cfg.validate()?;
        let noise = active_noise(&cfg)?;
        let qtheta = match cfg.effective_form() {
            EffectiveForm::Velocity
                if cfg.equation != Equation::DeterministicLimit && !cfg.theta.is_empty() =>
            {
                Some(Arc::new(QThetaOperator::new(
                    &cfg.theta, &cfg.basis, cfg.grid, cfg.mu,
                )?))
            }
            _ => None,
        };
        Ok(Self {
            n_channels: noise.n_channels(),
            qtheta,
            cfg,
        })
    }

    pub fn cfg(&self) -> &SimConfig<T> {
        &self.cfg
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    fn make_stepper(&self) -> Result<AnyStepper<T>, SimError> {
        Ok(match self.cfg.effective_form() {
            EffectiveForm::Scalar => AnyStepper::Scalar(ScalarStepper::new(&self.cfg)?),
            EffectiveForm::Vorticity => AnyStepper::Vorticity(VorticityStepper::new(&self.cfg)?),
            EffectiveForm::Velocity => AnyStepper::Velocity(VelocityStepper::with_qtheta(
                &self.cfg,
                self.qtheta.clone(),
            )?),
        })
    }

    /// One path, deterministic given `(seed, path_index)`.
    pub fn run_path(&self, path_index: u64) -> Result<Trajectory<T>, SimError> {
        self.run_path_observed(path_index, |_, _, _| {})
    }

    /// One path with a per-step observer `(step, t, state)`, called on the
    /// initial state and after every step.
    pub fn run_path_observed(
        &self,
        path_index: u64,
        observe: impl FnMut(usize, T, &SpectralField<T>),
    ) -> Result<Trajectory<T>, SimError> {
        let mut driver = BrownianDriver::new(self.cfg.seed, path_index, self.n_channels);
        let dt = self.cfg.dt;
        self.run_observed(
            |_step, inc: &mut Increments<T>| {
                driver.fill(dt, inc);
                Ok(())
            },
            observe,
        )
    }

    /// One path driven by an explicit increment sequence (refinement studies).
    pub fn run_path_with_increments(
        &self,
        increments: &[Increments<T>],
    ) -> Result<Trajectory<T>, SimError> {
        if increments.len() != self.cfg.n_steps() {
            return Err(SimError::Config(format!(
                "expected {} increment records, got {}",
                self.cfg.n_steps(),
                increments.len()
            )));
        }
        self.run_with(|step, inc: &mut Increments<T>| {
            inc.cos.copy_from_slice(&increments[step].cos);
            inc.sin.copy_from_slice(&increments[step].sin);
            Ok(())
        })
    }

    /// The deterministic limit trajectory of this configuration's equation,
    /// integrated with the same splitting and the noise off.
    pub fn run_deterministic(&self) -> Result<Trajectory<T>, SimError> {
        let mut det = self.cfg.clone();
        det.equation = Equation::DeterministicLimit;
        det.limit_form = Some(match self.cfg.effective_form() {
            EffectiveForm::Scalar => LimitForm::Heat,
            EffectiveForm::Vorticity => LimitForm::NavierStokes,
            EffectiveForm::Velocity => LimitForm::VelocityNavierStokes,
        });
        det.theta = ThetaFamily::empty(self.cfg.grid.dim());
        det.basis = NoiseBasis::build(self.cfg.grid.dim(), &minimal_support(self.cfg.grid.dim()))?;
        Runner::new(det)?.run_path(0)
    }

    /// All paths in parallel, collected in path order.
    pub fn run_ensemble(&self) -> Result<Vec<Trajectory<T>>, SimError> {
        (0..self.cfg.paths as u64)
            .into_par_iter()
            .map(|p| self.run_path(p))
            .collect()
    }

    fn run_with(
        &self,
        draw: impl FnMut(usize, &mut Increments<T>) -> Result<(), SimError>,
    ) -> Result<Trajectory<T>, SimError> {
        self.run_observed(draw, |_, _, _| {})
    }

    /// Coefficient multiplying `|grad f|^2` in the recorded dissipation
    /// integral: molecular for SPDE runs, the full limit coefficient for
    /// deterministic runs.
    pub fn diss_coefficient(&self) -> T {
        match self.cfg.equation {
            Equation::DeterministicLimit => match self.cfg.limit_form {
                Some(LimitForm::VelocityNavierStokes) => {
                    self.cfg.molecular + self.cfg.mu / T::of_f64(4.0)
                }
                _ => self.cfg.molecular + self.cfg.mu,
            },
            _ => self.cfg.molecular,
        }
    }

    fn run_observed(
        &self,
        mut draw: impl FnMut(usize, &mut Increments<T>) -> Result<(), SimError>,
        mut observe: impl FnMut(usize, T, &SpectralField<T>),
    ) -> Result<Trajectory<T>, SimError> {
        let n_steps = self.cfg.n_steps();
        let mut stepper = self.make_stepper()?;
        let mut incr = Increments::zeros(self.n_channels);
        let mut state = self.cfg.initial.clone();
        let mut traj = Trajectory {
            times: Vec::with_capacity(n_steps + 1),
            l2_sq: Vec::with_capacity(n_steps + 1),
            grad_sq: Vec::with_capacity(n_steps + 1),
            diss_integral: Vec::with_capacity(n_steps + 1),
            sobolev_sq: self
                .cfg
                .record
                .sobolev_exponents
                .iter()
                .map(|&e| (e, Vec::with_capacity(n_steps + 1)))
                .collect(),
            snapshots: Vec::new(),
            noise_gain: T::zero(),
            final_state: state.clone(),
        };
        let coeff = self.diss_coefficient();
        let half_dt = T::of_f64(0.5) * self.cfg.dt;
        let mut diss = T::zero();
        record_row(
            &mut traj,
            T::zero(),
            &state,
            diss,
            0,
            self.cfg.record.snapshot_every,
        )?;
        observe(0, T::zero(), &state);
        for step in 0..n_steps {
            draw(step, &mut incr)?;
            let prev_grad = *traj.grad_sq.last().unwrap();
            let energy = stepper
                .step(&mut state, &incr)
                .map_err(|e| at_step(e, step, self.cfg.dt))?;
            traj.noise_gain += energy.noise_gain;
            let t = self.cfg.dt * T::of_f64((step + 1) as f64);
            let grad = state.grad_norm_sq();
            diss += coeff * half_dt * (prev_grad + grad);
            record_row(
                &mut traj,
                t,
                &state,
                diss,
                step + 1,
                self.cfg.record.snapshot_every,
            )
            .map_err(|e| at_step(e, step, self.cfg.dt))?;
            observe(step + 1, t, &state);
        }
        traj.final_state = state;
        Ok(traj)
    }
}

fn at_step<T: Scalar>(err: SimError, step: usize, dt: T) -> SimError {
    match err {
        SimError::BlowUp { what, value, .. } => SimError::BlowUp {
            step,
            time: dt.as_f64() * (step + 1) as f64,
            what,
            value,
        },
        SimError::DivergenceResidual { residual, .. } => {
            SimError::DivergenceResidual { step, residual }
        }
        other => other,
    }
}

fn minimal_support(dim: usize) -> Vec<crate::grid::Mode> {
    let mut v = vec![[1, 0, 0], [-1, 0, 0]];
    if dim == 3 {
        v.push([0, 0, 1]);
        v.push([0, 0, -1]);
    }
    v
}

fn record_row<T: Scalar>(
    traj: &mut Trajectory<T>,
    t: T,
    state: &SpectralField<T>,
    diss: T,
    step: usize,
    snapshot_every: usize,
) -> Result<(), SimError> {
    let l2 = state.l2_norm_sq();
    let grad = state.grad_norm_sq();
    for (value, what) in [(l2, "l2_sq"), (grad, "grad_l2_sq")] {
        if !value.is_finite() || value > T::of_f64(BLOWUP_LIMIT) {
            return Err(SimError::BlowUp {
                step,
                time: t.as_f64(),
                what,
                value: value.as_f64(),
            });
        }
    }
    traj.times.push(t);
    traj.l2_sq.push(l2);
    traj.grad_sq.push(grad);
    traj.diss_integral.push(diss);
    for (e, series) in traj.sobolev_sq.iter_mut() {
        series.push(state.sobolev_norm_sq(*e));
    }
    if snapshot_every > 0 && step % snapshot_every == 0 {
        traj.snapshots.push((step, state.clone()));
    }
    Ok(())
}

/// Contract-level wrappers mirroring the per-operation interfaces; the
/// experiment harness drives `Runner` directly.
pub fn step_scalar<T: Scalar>(
    state: &SpectralField<T>,
    cfg: &SimConfig<T>,
    driver: &mut BrownianDriver<T>,
) -> Result<SpectralField<T>, SimError> {
    let mut stepper = ScalarStepper::new(cfg)?;
    let incr = driver.next_increments(cfg.dt);
    let mut out = state.clone();
    stepper.step(&mut out, &incr)?;
    Ok(out)
}

pub fn step_vorticity<T: Scalar>(
    state: &SpectralField<T>,
    cfg: &SimConfig<T>,
    driver: &mut BrownianDriver<T>,
) -> Result<SpectralField<T>, SimError> {
    let mut stepper = VorticityStepper::new(cfg)?;
    let incr = driver.next_increments(cfg.dt);
    let mut out = state.clone();
    stepper.step(&mut out, &incr)?;
    Ok(out)
}

pub fn step_velocity<T: Scalar>(
    state: &SpectralField<T>,
    cfg: &SimConfig<T>,
    driver: &mut BrownianDriver<T>,
) -> Result<SpectralField<T>, SimError> {
    let mut stepper = VelocityStepper::new(cfg)?;
    let incr = driver.next_increments(cfg.dt);
    let mut out = state.clone();
    stepper.step(&mut out, &incr)?;
    Ok(out)
}

pub fn run_path<T: Scalar>(cfg: &SimConfig<T>, path_index: u64) -> Result<Trajectory<T>, SimError> {
    Runner::new(cfg.clone())?.run_path(path_index)
}

pub fn run_deterministic<T: Scalar>(cfg: &SimConfig<T>) -> Result<Trajectory<T>, SimError> {
    let runner = Runner::new(cfg.clone())?;
    if cfg.equation == Equation::DeterministicLimit {
        runner.run_path(0)
    } else {
        runner.run_deterministic()
    }
}

/// Convective-term size against its interpolation bound: returns
/// `[ |div((K zeta) zeta)|_{H^{-1}}, |zeta|^2_{H^{1/2}},
///    |zeta|_{H^r}^{1+kr} |zeta|_{H^1}^{1-kr} ]` with `kr = r/(1-r)`.
pub fn subcriticality_diagnostic<T: Scalar>(
    fft: &mut FftNd<T>,
    zeta: &SpectralField<T>,
    r: T,
) -> Result<[T; 3], SimError> {
    let u = zeta.biot_savart()?;
    let term = advect(fft, &u, zeta, true, true)?;
    let lhs = term.sobolev_norm(-T::one());
    let mid = zeta.sobolev_norm_sq(T::of_f64(0.5));
    let kr = r / (T::one() - r);
    let rhs =
        zeta.sobolev_norm(r).powf(T::one() + kr) * zeta.sobolev_norm(T::one()).powf(T::one() - kr);
    Ok([lhs, mid, rhs])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::testing::random_field;
    use crate::grid::{mode2, Mode};
    use num_complex::Complex;

    fn grid(n: usize) -> Grid {
        Grid::new(2, n).unwrap()
    }

    fn cos_x(g: Grid, amp: f64) -> SpectralField<f64> {
        SpectralField::from_modes(g, &[(mode2(1, 0), Complex::new(amp / 2.0, 0.0))]).unwrap()
    }

    fn canonical_parts(dim: usize, n: usize) -> (ThetaFamily<f64>, NoiseBasis<f64>) {
        let theta = ThetaFamily::canonical(dim, n, 1.0).unwrap();
        let support: Vec<Mode> = theta.entries().iter().map(|&(k, _)| k).collect();
        let basis = NoiseBasis::build(dim, &support).unwrap();
        (theta, basis)
    }

    fn base_cfg(g: Grid, equation: Equation, initial: SpectralField<f64>) -> SimConfig<f64> {
        let (theta, basis) = canonical_parts(2, 1);
        SimConfig {
            grid: g,
            equation,
            limit_form: None,
            molecular: 0.01,
            mu: 0.5,
            theta,
            basis,
            dt: 1e-3,
            t_end: 1.0,
            paths: 1,
            seed: 7,
            dealias: true,
            cutoff: None,
            record: RecordSpec::default(),
            initial,
        }
    }

    #[test]
    fn validation_catches_bad_configs() {
        let g = grid(16);
        let mut cfg = base_cfg(g, Equation::Scalar, cos_x(g, 1.0));
        assert!(cfg.validate().is_ok());

        cfg.dt = 3e-4; // t_end/dt not integral
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
        cfg.dt = 1e-3;

        cfg.mu = 0.0;
        assert!(cfg.validate().is_err());
        cfg.mu = 0.5;

        // capacity: reach 2n >= N/2
        let (theta, basis) = canonical_parts(2, 4);
        cfg.theta = theta;
        cfg.basis = basis;
        assert!(cfg.validate().is_err());

        // nonzero mean initial datum
        let mut cfg = base_cfg(g, Equation::Scalar, cos_x(g, 1.0));
        cfg.initial = SpectralField::from_modes(g, &[([0, 0, 0], Complex::new(1.0, 0.0))]).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stability_guard_warns_but_accepts() {
        let g = grid(128);
        let (theta, basis) = canonical_parts(2, 16);
        let mut cfg = base_cfg(g, Equation::Scalar, cos_x(g, 1.0));
        cfg.theta = theta;
        cfg.basis = basis;
        let warnings = cfg.validate().unwrap();
        assert!(warnings.iter().any(|w| w.contains("stability guard")));
        // satisfying dt clears the warning
        cfg.dt = 1e-7;
        cfg.t_end = 1e-4;
        let warnings = cfg.validate().unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
    }

    #[test]
    fn cutoff_factor_plateaus_and_midpoint() {
        let g = grid(16);
        // field with |f|_{H^r} = s for chosen amplitudes: use L^2 via r tiny
        let r = 0.5;
        for (target, want) in [(0.5, 1.0), (2.5, 0.0), (1.5, 0.5)] {
            let f0 = cos_x(g, 1.0);
            let norm = f0.sobolev_norm(r);
            let mut f = f0;
            f.scale(target / norm);
            let got = cutoff_factor(&f, 1.0, r);
            assert!(
                (got - want).abs() < 1e-12,
                "s = {target}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn noise_off_scalar_matches_exact_semigroup_1000_steps() {
        let g = grid(16);
        let mut cfg = base_cfg(g, Equation::Scalar, random_field(3, g, 1, 5));
        cfg.theta = ThetaFamily::empty(2);
        cfg.molecular = 0.02;
        cfg.dt = 1e-3;
        cfg.t_end = 1.0; // 1000 steps
        let traj = Runner::new(cfg.clone()).unwrap().run_path(0).unwrap();
        // molecular-only decay, mode by mode
        let four_pi_sq = 4.0 * std::f64::consts::PI.powi(2);
        let mut expect = cfg.initial.clone();
        expect.scale_radial(|ksq| (-four_pi_sq * 0.02 * ksq as f64).exp());
        let err = traj.final_state.l2_distance(&expect);
        assert!(err < 1e-12, "semigroup error {err}");
        // trapezoid quadrature closes the balance to its O(dt^2) bias
        assert!(traj.energy_defect() < 1e-3 * traj.l2_sq[0]);
    }

    #[test]
    fn ito_isometry_single_step_degenerate_drift() {
        // kappa = 0: one noise step must satisfy
        // E[ |rho(dt)|^2 - |rho0|^2 ] = dt * sum_channels |xi . grad rho0|^2
        let g = grid(16);
        let noise = TransportNoise::<f64>::canonical(2, 1, 1.0).unwrap();
        let mut stepper = ScalarStepper::with_drift(
            g,
            1e-3,
            DriftSpec { kappa: 0.0 },
            noise.clone(),
            0.5,
        );
        let rho0 = cos_x(g, 2.0);
        let qv_per_dt =
            crate::noise::quadratic_variation(&noise, &rho0, 0.5, PrefactorMode::Scalar);
        let mut driver = BrownianDriver::new(11, 0, noise.n_channels());
        let mut incr = Increments::zeros(noise.n_channels());
        let samples = 10_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            driver.fill(1e-3, &mut incr);
            let mut state = rho0.clone();
            stepper.step(&mut state, &incr).unwrap();
            acc += state.l2_norm_sq() - rho0.l2_norm_sq();
        }
        let mc = acc / samples as f64 / 1e-3;
        assert!(
            (mc - qv_per_dt).abs() < 0.05 * qv_per_dt,
            "MC {mc} vs channel sum {qv_per_dt}"
        );
    }

    #[test]
    fn unidirectional_vorticity_reduces_to_scalar_dynamics() {
        let g = grid(32);
        let zeta = cos_x(g, 1.0);
        // the convective term vanishes spectrally for unidirectional data
        let mut fft = FftNd::new(2, 32);
        let u = zeta.biot_savart().unwrap();
        let term = advect(&mut fft, &u, &zeta, true, true).unwrap();
        assert!(term.l2_norm_sq() < 1e-28);

        let cfg_v = base_cfg(g, Equation::Vorticity, zeta.clone());
        let cfg_s = base_cfg(g, Equation::Scalar, zeta.clone());
        // same seed => same increments; c_2 = 2 makes the prefactors equal
        let mut dv = BrownianDriver::new(7, 0, 12);
        let mut ds = BrownianDriver::new(7, 0, 12);
        let sv = step_vorticity(&zeta, &cfg_v, &mut dv).unwrap();
        let ss = step_scalar(&zeta, &cfg_s, &mut ds).unwrap();
        let err = sv.l2_distance(&ss);
        assert!(err < 1e-13, "vorticity/scalar single-step mismatch {err}");
    }

    #[test]
    fn cutoff_switches_nonlinearity_off_and_on() {
        let g = grid(32);
        let zeta = random_field(9, g, 1, 4);
        let mut cfg = base_cfg(g, Equation::Vorticity, zeta.clone());
        let r = 0.3;
        let norm = zeta.sobolev_norm(r);

        // |zeta|_{H^r} >= 2R: convective term exactly off => pure scalar step
        cfg.cutoff = Some(CutoffSpec {
            radius: norm / 2.5,
            exponent: r,
        });
        let mut dv = BrownianDriver::new(7, 0, 12);
        let mut ds = BrownianDriver::new(7, 0, 12);
        let off = step_vorticity(&zeta, &cfg, &mut dv).unwrap();
        let mut cfg_s = cfg.clone();
        cfg_s.equation = Equation::Scalar;
        cfg_s.cutoff = None;
        let plain_scalar = step_scalar(&zeta, &cfg_s, &mut ds).unwrap();
        assert!(off.l2_distance(&plain_scalar) < 1e-13);

        // |zeta|_{H^r} <= R: factor exactly 1 => same as no cutoff
        cfg.cutoff = Some(CutoffSpec {
            radius: norm * 2.0,
            exponent: r,
        });
        let t_on = Runner::new(cfg.clone()).unwrap().run_path(0).unwrap();
        cfg.cutoff = None;
        let t_plain = Runner::new(cfg).unwrap().run_path(0).unwrap();
        assert!(t_on.final_state.l2_distance(&t_plain.final_state) < 1e-12);
    }

    #[test]
    fn deterministic_heat_decay_closed_form() {
        let g = grid(16);
        let mut cfg = base_cfg(g, Equation::DeterministicLimit, cos_x(g, 1.0));
        cfg.limit_form = Some(LimitForm::Heat);
        cfg.molecular = 0.05;
        cfg.mu = 0.05; // kappa = 0.1
        let traj = run_deterministic(&cfg).unwrap();
        let ratio = traj.l2_sq.last().unwrap() / traj.l2_sq[0];
        let want = (-8.0 * std::f64::consts::PI.powi(2) * 0.1).exp();
        assert!((ratio - want).abs() < 1e-12 * want.max(1e-30) + 1e-15);
        assert!((want - 3.73e-4).abs() < 1e-6);
        assert!(traj.energy_defect() < 1e-5);
    }

    #[test]
    fn deterministic_nse_unidirectional_is_heat_flow() {
        let g = grid(32);
        let mut cfg = base_cfg(g, Equation::DeterministicLimit, cos_x(g, 1.2));
        cfg.limit_form = Some(LimitForm::NavierStokes);
        cfg.molecular = 0.01;
        cfg.mu = 0.09;
        let traj = run_deterministic(&cfg).unwrap();
        let want = cfg.initial.l2_norm_sq() * (-8.0 * std::f64::consts::PI.powi(2) * 0.1).exp();
        let got = *traj.l2_sq.last().unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn deterministic_nse_sobolev_probe_stays_bounded() {
        let g = grid(32);
        let delta = 0.5;
        let zeta = random_field(21, g, 1, 6);
        let mut cfg = base_cfg(g, Equation::DeterministicLimit, zeta.clone());
        cfg.limit_form = Some(LimitForm::NavierStokes);
        cfg.molecular = 0.05;
        cfg.mu = 0.05;
        cfg.t_end = 0.5;
        cfg.record.sobolev_exponents = vec![delta];
        let traj = run_deterministic(&cfg).unwrap();
        let sup = traj.sup_sobolev_sq(delta).unwrap().sqrt();
        let initial = zeta.sobolev_norm(delta);
        assert!(sup <= 3.0 * initial, "H^delta probe grew: {sup} vs {initial}");
    }

    #[test]
    fn empty_noise_run_is_molecular_heat_flow() {
        let g = grid(16);
        let mut cfg = base_cfg(g, Equation::Scalar, cos_x(g, 1.0));
        cfg.theta = ThetaFamily::empty(2);
        cfg.molecular = 0.05;
        let traj = Runner::new(cfg).unwrap().run_path(0).unwrap();
        let ratio = traj.l2_sq.last().unwrap() / traj.l2_sq[0];
        // molecular-only decay: the Ito drift boost scales with |theta|^2 = 0
        let want = (-8.0 * std::f64::consts::PI.powi(2) * 0.05).exp();
        assert!((ratio - want).abs() < 1e-13);
    }

    #[test]
    fn same_seed_reproduces_bit_identical_diagnostics() {
        let g = grid(32);
        let cfg = base_cfg(g, Equation::Scalar, cos_x(g, 1.0));
        let a = Runner::new(cfg.clone()).unwrap().run_path(3).unwrap();
        let b = Runner::new(cfg).unwrap().run_path(3).unwrap();
        assert_eq!(a.l2_sq, b.l2_sq);
        assert_eq!(a.grad_sq, b.grad_sq);
        assert_eq!(a.diss_integral, b.diss_integral);
        assert!(a.final_state.l2_distance(&b.final_state) == 0.0);
    }

    #[test]
    fn energy_defect_shrinks_first_order_on_refined_path() {
        // short noise cascade (gamma-dominated) so every excited shell is
        // resolved at the coarsest level and the defect is systematic
        let g = grid(64);
        let (theta, basis) = canonical_parts(2, 6);
        let mut cfg = base_cfg(g, Equation::Scalar, cos_x(g, 1.0));
        cfg.theta = theta;
        cfg.basis = basis;
        cfg.molecular = 0.1;
        cfg.mu = 0.0125;
        cfg.t_end = 0.5;

        // one Brownian path at the finest resolution, then summed coarser
        let fine_dt = 1e-4f64;
        let n_fine = (0.5 / fine_dt).round() as usize;
        let runner_probe = Runner::new({
            let mut c = cfg.clone();
            c.dt = fine_dt;
            c
        })
        .unwrap();
        let mut driver = BrownianDriver::<f64>::new(2, 0, runner_probe.n_channels());
        let fine: Vec<Increments<f64>> =
            (0..n_fine).map(|_| driver.next_increments(fine_dt)).collect();

        let mut defects = Vec::new();
        for level in [4usize, 2, 1] {
            let dt = fine_dt * level as f64;
            let incs: Vec<Increments<f64>> = fine
                .chunks(level)
                .map(Increments::coarsen)
                .collect();
            let mut c = cfg.clone();
            c.dt = dt;
            let traj = Runner::new(c).unwrap().run_path_with_increments(&incs).unwrap();
            defects.push(traj.energy_defect());
        }
        assert!(
            defects[0] / defects[1] > 1.7 && defects[1] / defects[2] > 1.7,
            "defects {defects:?}"
        );
    }

    #[test]
    fn velocity_stokes_decay_and_effective_viscosity() {
        let g = grid(64);
        let shear = SpectralField::from_vector_modes(
            g,
            &[(
                mode2(0, 1),
                [
                    Complex::new(0.0, -0.5),
                    Complex::new(0.0, 0.0),
                    Complex::new(0.0, 0.0),
                ],
            )],
        )
        .unwrap();

        // deterministic limit: exact Stokes decay with nu + mu/4
        let mut cfg = base_cfg(g, Equation::DeterministicLimit, shear.clone());
        cfg.limit_form = Some(LimitForm::VelocityNavierStokes);
        cfg.molecular = 0.01;
        cfg.mu = 0.2;
        cfg.t_end = 0.1;
        let traj = run_deterministic(&cfg).unwrap();
        let want = (-8.0 * std::f64::consts::PI.powi(2) * (0.01 + 0.05) * 0.1).exp();
        let ratio = traj.l2_sq.last().unwrap() / traj.l2_sq[0];
        assert!((ratio - want).abs() < 1e-12);

        // SPDE drift with Q_theta on and increments zeroed: the low-mode decay
        // rate approaches 4 pi^2 (nu + mu/4)
        let (theta, basis) = canonical_parts(2, 8);
        let mut cfg = base_cfg(g, Equation::Velocity, shear);
        cfg.theta = theta;
        cfg.basis = basis;
        cfg.molecular = 0.01;
        cfg.mu = 0.2;
        cfg.dt = 1e-3;
        cfg.t_end = 0.1;
        let runner = Runner::new(cfg.clone()).unwrap();
        let zeros: Vec<Increments<f64>> = (0..cfg.n_steps())
            .map(|_| Increments::zeros(runner.n_channels()))
            .collect();
        let traj = runner.run_path_with_increments(&zeros).unwrap();
        let rate = -(traj.l2_sq.last().unwrap() / traj.l2_sq[0]).ln() / (2.0 * 0.1);
        let nu_eff = rate / (4.0 * std::f64::consts::PI.powi(2));
        let want = 0.01 + 0.2 / 4.0;
        assert!(
            (nu_eff - want).abs() < 0.05 * want,
            "nu_eff {nu_eff} vs nu + mu/4 = {want}"
        );
        assert!(traj.final_state.divergence_residual() < 1e-12);
    }

    #[test]
    fn blow_up_is_detected_with_step_index() {
        let g = grid(32);
        let mut huge = random_field(2, g, 1, 4);
        huge.scale(3e5); // l2_sq ~ 1e11, one nonlinear step overflows
        let mut cfg = base_cfg(g, Equation::Vorticity, huge);
        cfg.dt = 0.05;
        cfg.t_end = 1.0;
        match Runner::new(cfg).unwrap().run_path(0) {
            Err(SimError::BlowUp { step, .. }) => assert!(step < 20),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn mean_zero_is_preserved_exactly() {
        let g = grid(32);
        let cfg = base_cfg(g, Equation::Scalar, random_field(4, g, 1, 4));
        let traj = Runner::new(cfg).unwrap().run_path(0).unwrap();
        assert_eq!(traj.final_state.mean_magnitude(), 0.0);
    }

    #[test]
    fn subcriticality_chain_holds_numerically() {
        let g = grid(64);
        let mut fft = FftNd::new(2, 64);
        for seed in 0..4 {
            let zeta = random_field(40 + seed, g, 1, 10);
            let [lhs, mid, rhs]: [f64; 3] =
                subcriticality_diagnostic(&mut fft, &zeta, 0.25).unwrap();
            assert!(lhs.is_finite() && mid.is_finite() && rhs.is_finite());
            // the H^{-1} size of the convective term is controlled by |zeta|^2_{H^{1/2}},
            // which interpolates below |zeta|_{H^r}^{1+k} |zeta|_{H^1}^{1-k}
            assert!(lhs <= 5.0 * mid, "lhs {lhs} vs mid {mid}");
            assert!(mid <= 5.0 * rhs, "mid {mid} vs rhs {rhs}");
        }
    }

    #[test]
    fn golden_scalar_step_regression() {
        let g = grid(64);
        let (theta, basis) = canonical_parts(2, 1);
        let mut cfg = base_cfg(g, Equation::Scalar, cos_x(g, 1.0));
        cfg.theta = theta;
        cfg.basis = basis;
        cfg.molecular = 0.01;
        cfg.mu = 1.0;
        cfg.dt = 1e-3;
        let n_channels = TransportNoise::new(&cfg.theta, &cfg.basis)
            .unwrap()
            .n_channels();
        let mut driver = BrownianDriver::new(2024, 0, n_channels);
        let stepped = step_scalar(&cfg.initial, &cfg, &mut driver).unwrap();
        let l2 = stepped.l2_norm_sq();
        // frozen after the oracle checks passed
        let golden = 4.81335494629284e-1;
        assert!(
            (l2 - golden).abs() < 1e-13,
            "golden regression drift: {l2:e} vs {golden:e}"
        );
    }
}
