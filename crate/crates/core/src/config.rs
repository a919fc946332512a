//! Run configuration: a sectioned TOML file with an exhaustive schema.
//! Unknown keys are hard errors so typos in physics parameters cannot pass
//! silently; invariant violations carry the offending field, and soft issues
//! (stability guard, spectral headroom) surface as warnings.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CutoffSpec, Equation, LimitForm, RecordSpec, SimConfig, STABILITY_GUARD};
use crate::error::ConfigError;
use crate::experiments::{canonical_noise, shell_schedule, AnomalousSpec, ScalingSpec};
use crate::field::SpectralField;
use crate::grid::Grid;
use crate::noise::{NoiseBasis, ThetaFamily};

fn default_dimension() -> usize {
    2
}
fn default_t_end() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_decay() -> f64 {
    1.0
}
fn default_qtheta_decay() -> f64 {
    0.5
}
fn default_cutoff_exponent() -> f64 {
    0.25
}
fn default_initial_kind() -> String {
    "mode".into()
}
fn default_initial_mode() -> [i64; 3] {
    [1, 0, 0]
}
fn default_initial_l2() -> f64 {
    1.0
}
fn default_paths() -> usize {
    64
}
fn default_prediction_tolerance() -> f64 {
    0.15
}
fn default_sample_every() -> usize {
    1
}
fn default_r0() -> f64 {
    0.1
}
fn default_coefficient_exponent() -> f64 {
    0.5
}
fn default_qtheta_n_list() -> Vec<usize> {
    vec![2, 4, 8, 16]
}
fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    /// scalar | vorticity | velocity | deterministic-limit
    pub equation: String,
    /// Molecular diffusivity/viscosity; `gamma` and `nu` are accepted names.
    #[serde(alias = "gamma", alias = "nu")]
    pub molecular: f64,
    pub mu: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Step size; when omitted it is derived from the stability guard.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_true")]
    pub dealias: bool,
    /// heat | nse | velocity-nse, required for deterministic-limit runs.
    #[serde(default)]
    pub limit_form: Option<String>,
    #[serde(default)]
    pub cutoff_enabled: bool,
    #[serde(default)]
    pub cutoff_radius: Option<f64>,
    #[serde(default = "default_cutoff_exponent")]
    pub cutoff_exponent: f64,
    /// mode | modes; `mode` builds a single-pair datum scaled to `initial_l2`
    /// (for the velocity equation the mode is a vorticity profile fed through
    /// the Biot-Savart reconstruction).
    #[serde(default = "default_initial_kind")]
    pub initial_kind: String,
    #[serde(default = "default_initial_mode")]
    pub initial_mode: [i64; 3],
    #[serde(default = "default_initial_l2")]
    pub initial_l2: f64,
    /// Explicit rows `[k1, k2, k3, re, im]` for `initial_kind = "modes"`.
    #[serde(default)]
    pub initial_modes: Vec<[f64; 5]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Shell parameter of the canonical coefficient family.
    #[serde(default)]
    pub shell: Option<usize>,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            shell: None,
            decay: default_decay(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 picks the available parallelism.
    #[serde(default)]
    pub workers: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSection {
    AnomalousScalar {
        coefficients: Vec<f64>,
        #[serde(default = "default_prediction_tolerance")]
        prediction_tolerance: f64,
        #[serde(default)]
        ci_cap: Option<f64>,
        #[serde(default)]
        eta: Option<f64>,
    },
    AnomalousVorticity {
        coefficients: Vec<f64>,
        #[serde(default = "default_prediction_tolerance")]
        prediction_tolerance: f64,
        #[serde(default)]
        ci_cap: Option<f64>,
        #[serde(default)]
        eta: Option<f64>,
    },
    AnomalousVelocity {
        coefficients: Vec<f64>,
        #[serde(default = "default_prediction_tolerance")]
        prediction_tolerance: f64,
        #[serde(default)]
        ci_cap: Option<f64>,
        #[serde(default)]
        eta: Option<f64>,
    },
    ScalingLimit {
        n_list: Vec<usize>,
        #[serde(default)]
        distance_exponent: Option<f64>,
        #[serde(default = "default_sample_every")]
        sample_every: usize,
        #[serde(default)]
        include_empty_baseline: bool,
    },
    GradientGap {
        n_list: Vec<usize>,
    },
    QthetaLimit {
        #[serde(default = "default_qtheta_n_list")]
        n_list: Vec<usize>,
        #[serde(default = "default_qtheta_decay")]
        decay: f64,
        #[serde(default = "default_initial_mode")]
        test_mode: [i64; 3],
    },
    UniformSobolev {
        n_list: Vec<usize>,
        #[serde(default = "default_r0")]
        r0: f64,
        #[serde(default = "default_coefficient_exponent")]
        coefficient_exponent: f64,
    },
    Selftest {},
}

impl ExperimentSection {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSection::AnomalousScalar { .. } => "anomalous-scalar",
            ExperimentSection::AnomalousVorticity { .. } => "anomalous-vorticity",
            ExperimentSection::AnomalousVelocity { .. } => "anomalous-velocity",
            ExperimentSection::ScalingLimit { .. } => "scaling-limit",
            ExperimentSection::GradientGap { .. } => "gradient-gap",
            ExperimentSection::QthetaLimit { .. } => "qtheta-limit",
            ExperimentSection::UniformSobolev { .. } => "uniform-sobolev",
            ExperimentSection::Selftest {} => "selftest",
        }
    }

    pub fn anomalous_spec(&self, decay: f64) -> Option<AnomalousSpec> {
        match self {
            ExperimentSection::AnomalousScalar {
                coefficients,
                prediction_tolerance,
                ci_cap,
                eta,
            }
            | ExperimentSection::AnomalousVorticity {
                coefficients,
                prediction_tolerance,
                ci_cap,
                eta,
            }
            | ExperimentSection::AnomalousVelocity {
                coefficients,
                prediction_tolerance,
                ci_cap,
                eta,
            } => Some(AnomalousSpec {
                coefficients: coefficients.clone(),
                prediction_tolerance: *prediction_tolerance,
                ci_cap: *ci_cap,
                decay,
                eta: *eta,
            }),
            _ => None,
        }
    }

    pub fn scaling_spec(&self, decay: f64) -> Option<ScalingSpec> {
        match self {
            ExperimentSection::ScalingLimit {
                n_list,
                distance_exponent,
                sample_every,
                include_empty_baseline,
            } => Some(ScalingSpec {
                n_list: n_list.clone(),
                decay,
                distance_exponent: *distance_exponent,
                sample_every: *sample_every,
                include_empty_baseline: *include_empty_baseline,
            }),
            ExperimentSection::GradientGap { n_list } => Some(ScalingSpec {
                n_list: n_list.clone(),
                decay,
                distance_exponent: None,
                sample_every: 1,
                include_empty_baseline: false,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn invariant(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invariant {
        field: field.to_string(),
        message: message.into(),
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The largest shell the configured experiment will exercise; drives the
    /// grid-capacity check and the derived default `dt`.
    pub fn max_shell(&self, grid: Grid) -> usize {
        let from_noise = self.noise.shell.unwrap_or(1);
        let from_exp = match &self.experiment {
            ExperimentSection::AnomalousScalar { coefficients, .. }
            | ExperimentSection::AnomalousVorticity { coefficients, .. }
            | ExperimentSection::AnomalousVelocity { coefficients, .. } => coefficients
                .iter()
                .map(|&c| shell_schedule(c, grid).0)
                .max()
                .unwrap_or(1),
            ExperimentSection::ScalingLimit { n_list, .. }
            | ExperimentSection::GradientGap { n_list }
            | ExperimentSection::QthetaLimit { n_list, .. }
            | ExperimentSection::UniformSobolev { n_list, .. } => {
                n_list.iter().copied().max().unwrap_or(1)
            }
            ExperimentSection::Selftest {} => 1,
        };
        from_noise.max(from_exp)
    }

    /// Validate everything and assemble the runtime configuration; returns
    /// the fully defaulted echo (embedded into reports) plus warnings.
    pub fn to_sim_config(&self) -> Result<(SimConfig<f64>, Self, Vec<String>), ConfigError> {
        let grid = Grid::new(self.grid.dimension, self.grid.size)
            .map_err(|e| invariant("grid", e.to_string()))?;
        let equation = match self.physics.equation.as_str() {
            "scalar" => Equation::Scalar,
            "vorticity" => Equation::Vorticity,
            "velocity" => Equation::Velocity,
            "deterministic-limit" => Equation::DeterministicLimit,
            other => {
                return Err(invariant(
                    "physics.equation",
                    format!("unknown equation `{other}`"),
                ))
            }
        };
        let limit_form = match self.physics.limit_form.as_deref() {
            None => None,
            Some("heat") => Some(LimitForm::Heat),
            Some("nse") => Some(LimitForm::NavierStokes),
            Some("velocity-nse") => Some(LimitForm::VelocityNavierStokes),
            Some(other) => {
                return Err(invariant(
                    "physics.limit_form",
                    format!("unknown limit form `{other}`"),
                ))
            }
        };
        if self.physics.mu <= 0.0 {
            return Err(invariant("physics.mu", "mu must be > 0"));
        }
        if self.physics.molecular < 0.0 {
            return Err(invariant("physics.molecular", "must be >= 0"));
        }

        // capacity rule `2 n < N/2` for the largest shell in play
        let n_max = self.max_shell(grid);
        let half = grid.size() as i64 / 2;
        if 2 * n_max as i64 >= half {
            return Err(invariant(
                "noise.shell",
                format!(
                    "grid capacity: 2 n = {} >= N/2 = {half}; enlarge the grid or shrink the shell",
                    2 * n_max
                ),
            ));
        }

        let mut warnings = Vec::new();
        let dt = match self.physics.dt {
            Some(dt) => {
                if dt <= 0.0 {
                    return Err(invariant("physics.dt", "dt must be > 0"));
                }
                let steps = self.physics.t_end / dt;
                if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                    return Err(invariant(
                        "physics.dt",
                        format!("t_end/dt = {steps} is not an integer"),
                    ));
                }
                dt
            }
            None => {
                // derived default: satisfy the stability guard, capped at 1e-3
                let reach = (2 * n_max) as f64;
                let guard_dt = STABILITY_GUARD
                    / (8.0 * std::f64::consts::PI.powi(2) * self.physics.mu * reach * reach);
                let dt = guard_dt.min(1e-3);
                let steps = (self.physics.t_end / dt).ceil().max(1.0);
                self.physics.t_end / steps
            }
        };

        let cutoff = if self.physics.cutoff_enabled {
            let radius = self.physics.cutoff_radius.ok_or_else(|| {
                invariant(
                    "physics.cutoff_radius",
                    "required when the cutoff is enabled",
                )
            })?;
            Some(CutoffSpec {
                radius,
                exponent: self.physics.cutoff_exponent,
            })
        } else {
            None
        };

        let base_shell = self.noise.shell.unwrap_or(1);
        let (theta, basis) = if base_shell == 0 {
            let theta = ThetaFamily::empty(grid.dim());
            let basis = NoiseBasis::build(grid.dim(), &[[1, 0, 0], [-1, 0, 0]])
                .map_err(|e| invariant("noise", e.to_string()))?;
            (theta, basis)
        } else {
            canonical_noise(grid.dim(), base_shell, self.noise.decay)
                .map_err(|e| invariant("noise", e.to_string()))?
        };

        let initial = build_initial(grid, equation, limit_form, &self.physics)?;

        let cfg = SimConfig {
            grid,
            equation,
            limit_form,
            molecular: self.physics.molecular,
            mu: self.physics.mu,
            theta,
            basis,
            dt,
            t_end: self.physics.t_end,
            paths: self.ensemble.paths,
            seed: self.ensemble.seed,
            dealias: self.physics.dealias,
            cutoff,
            record: RecordSpec::default(),
            initial,
        };
        warnings.extend(
            cfg.validate()
                .map_err(|e| invariant("config", e.to_string()))?,
        );

        // echo with every default filled in
        let mut echo = self.clone();
        echo.physics.dt = Some(dt);
        echo.noise.shell = Some(base_shell);
        Ok((cfg, echo, warnings))
    }
}

fn build_initial(
    grid: Grid,
    equation: Equation,
    limit_form: Option<LimitForm>,
    physics: &PhysicsSection,
) -> Result<SpectralField<f64>, ConfigError> {
    let vectorial = matches!(equation, Equation::Velocity)
        || (equation == Equation::DeterministicLimit
            && limit_form == Some(LimitForm::VelocityNavierStokes));
    let scalar = match physics.initial_kind.as_str() {
        "mode" => {
            let k = physics.initial_mode;
            if k == [0, 0, 0] {
                return Err(invariant("physics.initial_mode", "must be nonzero"));
            }
            let amp = physics.initial_l2 / 2f64.sqrt();
            SpectralField::from_modes(grid, &[(k, Complex::new(amp, 0.0))])
                .map_err(|e| invariant("physics.initial_mode", e.to_string()))?
        }
        "modes" => {
            let modes: Vec<([i64; 3], Complex<f64>)> = physics
                .initial_modes
                .iter()
                .map(|row| {
                    (
                        [row[0] as i64, row[1] as i64, row[2] as i64],
                        Complex::new(row[3], row[4]),
                    )
                })
                .collect();
            SpectralField::from_modes(grid, &modes)
                .map_err(|e| invariant("physics.initial_modes", e.to_string()))?
        }
        other => {
            return Err(invariant(
                "physics.initial_kind",
                format!("unknown kind `{other}`"),
            ))
        }
    };
    if !vectorial {
        return Ok(scalar);
    }
    // vector data: treat the scalar as a vorticity profile and reconstruct
    let mut u = scalar
        .biot_savart()
        .map_err(|e| invariant("physics.initial", e.to_string()))?;
    let norm = u.l2_norm_sq().sqrt();
    if norm > 0.0 {
        u.scale(physics.initial_l2 / norm);
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [grid]
        size = 128

        [physics]
        equation = "scalar"
        gamma = 1e-3
        mu = 0.5

        [noise]
        shell = 16

        [ensemble]
        paths = 64

        [experiment]
        kind = "selftest"
    "#;

    #[test]
    fn minimal_config_is_valid_with_no_warnings() {
        let file = FileConfig::parse(MINIMAL).unwrap();
        let (cfg, echo, warnings) = file.to_sim_config().unwrap();
        assert_eq!(cfg.grid.size(), 128);
        assert_eq!(cfg.paths, 64);
        assert_eq!(cfg.t_end, 1.0);
        assert!(warnings.is_empty(), "{warnings:?}");
        // derived dt satisfies the guard and divides t_end
        let dt = echo.physics.dt.unwrap();
        let guard = dt * 8.0 * std::f64::consts::PI.powi(2) * 0.5 * (32.0f64 * 32.0);
        assert!(guard <= STABILITY_GUARD + 1e-12, "guard {guard}");
        let steps = 1.0 / dt;
        assert!((steps - steps.round()).abs() < 1e-9);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let bad = MINIMAL.replace("mu = 0.5", "mu = 0.5\n        viscosity = 2.0");
        match FileConfig::parse(&bad) {
            Err(ConfigError::Parse(e)) => {
                assert!(e.to_string().contains("viscosity"), "{e}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn explicit_large_dt_warns_with_computed_bound() {
        let with_dt = MINIMAL.replace("mu = 0.5", "mu = 0.5\n        dt = 1e-3");
        let file = FileConfig::parse(&with_dt).unwrap();
        let (_, _, warnings) = file.to_sim_config().unwrap();
        assert!(
            warnings
                .iter()
                .any(|w| w.contains("stability guard") && w.contains("dt <=")),
            "{warnings:?}"
        );
    }

    #[test]
    fn grid_capacity_is_a_hard_error() {
        let small = MINIMAL
            .replace("size = 128", "size = 64")
            .replace("shell = 16", "shell = 32");
        let file = FileConfig::parse(&small).unwrap();
        match file.to_sim_config() {
            Err(ConfigError::Invariant { field, message }) => {
                assert_eq!(field, "noise.shell");
                assert!(message.contains("capacity"));
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn velocity_initial_is_divergence_free_with_requested_norm() {
        let text = MINIMAL
            .replace("equation = \"scalar\"", "equation = \"velocity\"")
            .replace("shell = 16", "shell = 4");
        let file = FileConfig::parse(&text).unwrap();
        let (cfg, _, _) = file.to_sim_config().unwrap();
        assert_eq!(cfg.initial.rank(), 2);
        assert!((cfg.initial.l2_norm_sq().sqrt() - 1.0).abs() < 1e-12);
        assert!(cfg.initial.divergence_residual() < 1e-12);
    }

    #[test]
    fn experiment_sections_parse_with_defaults() {
        let text = MINIMAL.replace(
            "kind = \"selftest\"",
            "kind = \"anomalous-scalar\"\n        coefficients = [1e-2, 1e-3]",
        );
        let file = FileConfig::parse(&text).unwrap();
        let spec = file.experiment.anomalous_spec(file.noise.decay).unwrap();
        assert_eq!(spec.coefficients, vec![1e-2, 1e-3]);
        assert_eq!(spec.prediction_tolerance, 0.15);

        let text = MINIMAL.replace(
            "kind = \"selftest\"",
            "kind = \"scaling-limit\"\n        n_list = [1, 4, 16]",
        );
        let file = FileConfig::parse(&text).unwrap();
        let spec = file.experiment.scaling_spec(1.0).unwrap();
        assert_eq!(spec.n_list, vec![1, 4, 16]);
        assert_eq!(spec.sample_every, 1);
    }
}
