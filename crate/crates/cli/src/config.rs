//! Run configuration: a TOML file with one `[model]` section and optional
//! `[solver]`, `[probe]`, `[scan]` and `[ion]` sections. Unknown keys are
//! rejected; see `configs/README.md` for the full schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use weakprobe_core::models::Boundary;
use weakprobe_core::probe::{EvolutionMode, FirstMomentEstimator, GridPolicy, LoopScheme, VarianceAux, DEFAULT_DELTA_P, DEFAULT_DELTA_PTILDE};
use weakprobe_core::trapped_ion::SpinCurrentOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    pub scan: Option<ScanConfig>,
    pub ion: Option<IonConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistics {
    Boson,
    HardCore,
    Fermion,
}

/// One directed hopping (or spin coupling) `magnitude * exp(i phase)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopConfig {
    pub from: usize,
    pub to: usize,
    pub magnitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZzConfig {
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Two-leg flux ladder.
    Ladder {
        rungs: usize,
        particles: usize,
        #[serde(default = "one")]
        j: f64,
        k: f64,
        flux: f64,
        /// On-site interaction; leave out together with `hard_core = true`.
        u: Option<f64>,
        #[serde(default)]
        hard_core: bool,
        #[serde(default = "open")]
        boundary: Boundary,
        max_occupancy: Option<u32>,
    },
    /// Three-site plaquette with hoppings `magnitudes[i] exp(i flux / 3)`.
    Triangle {
        particles: usize,
        statistics: Statistics,
        flux: f64,
        #[serde(default = "unit_magnitudes")]
        magnitudes: [f64; 3],
        #[serde(default)]
        u: f64,
    },
    /// Arbitrary lattice given as a hopping list.
    Lattice {
        sites: usize,
        particles: usize,
        statistics: Statistics,
        hoppings: Vec<HopConfig>,
        #[serde(default)]
        u: f64,
    },
    /// Spin-1/2 XY model; `down` fixes the magnetization sector.
    Spins {
        sites: usize,
        down: usize,
        couplings: Vec<HopConfig>,
        #[serde(default)]
        zz: Vec<ZzConfig>,
    },
}

fn one() -> f64 {
    1.0
}

fn open() -> Boundary {
    Boundary::Open
}

fn unit_magnitudes() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            krylov_dim: 60,
            max_restarts: 400,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub s_min: f64,
    pub s_initial_max: f64,
    pub points_per_decade: usize,
    pub target_p0: f64,
    pub s_cap: f64,
}

impl From<GridPolicy> for GridConfig {
    fn from(g: GridPolicy) -> Self {
        Self {
            s_min: g.s_min,
            s_initial_max: g.s_initial_max,
            points_per_decade: g.points_per_decade,
            target_p0: g.target_p0,
            s_cap: g.s_cap,
        }
    }
}

impl From<GridConfig> for GridPolicy {
    fn from(g: GridConfig) -> Self {
        Self {
            s_min: g.s_min,
            s_initial_max: g.s_initial_max,
            points_per_decade: g.points_per_decade,
            target_p0: g.target_p0,
            s_cap: g.s_cap,
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridPolicy::default().into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Every requested link separately, both directions.
    Links,
    /// One ancilla per leg link of a periodic ladder.
    Global,
    /// Loop current of a triangle.
    Loop,
    /// Current-current correlation of two links.
    Correlation,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Undo the readout errors before fitting.
    #[serde(default = "yes")]
    pub correct: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub scheme: Scheme,
    /// Links to probe; all links when absent.
    pub links: Option<Vec<[usize; 2]>>,
    pub direction: weakprobe_core::probe::Direction,
    pub estimators: Vec<FirstMomentEstimator>,
    pub delta_p: f64,
    pub delta_ptilde: f64,
    pub variance_order: usize,
    pub variance_delta_p: f64,
    pub variance_aux: VarianceAux,
    pub mode: EvolutionMode,
    pub truncation: Option<u32>,
    pub grid: GridConfig,
    pub detection: Option<DetectionConfig>,
    /// Finite number of shots per distribution; exact probabilities when absent.
    pub shots: Option<u64>,
    pub global_fit_order: usize,
    pub global_delta_p: f64,
    pub loop_scheme: LoopScheme,
    pub loop_fit_order: usize,
    /// The two links of the correlation scheme.
    pub pair: Option<[[usize; 2]; 2]>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Links,
            links: None,
            direction: weakprobe_core::probe::Direction::Forward,
            estimators: vec![FirstMomentEstimator::P0, FirstMomentEstimator::Ptilde, FirstMomentEstimator::Antisym],
            delta_p: DEFAULT_DELTA_P,
            delta_ptilde: DEFAULT_DELTA_PTILDE,
            variance_order: 4,
            variance_delta_p: 0.2,
            variance_aux: VarianceAux::Symmetrized,
            mode: EvolutionMode::Full,
            truncation: None,
            grid: GridConfig::default(),
            detection: None,
            shots: None,
            global_fit_order: 4,
            global_delta_p: 0.2,
            loop_scheme: LoopScheme::FluxHalfPi,
            loop_fit_order: 2,
            pair: None,
        }
    }
}

impl ProbeConfig {
    pub fn window(&self, e: FirstMomentEstimator) -> f64 {
        match e {
            FirstMomentEstimator::Ptilde => self.delta_ptilde,
            _ => self.delta_p,
        }
    }
}

/// Rectangular grid over rung coupling and interaction for ladder models.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub k: Vec<f64>,
    /// Interaction values; the model's own setting when absent.
    pub u: Option<Vec<f64>>,
    /// Also run the probe on every cell.
    #[serde(default = "yes")]
    pub extract: bool,
    #[serde(default = "ptilde")]
    pub estimator: FirstMomentEstimator,
}

fn ptilde() -> FirstMomentEstimator {
    FirstMomentEstimator::Ptilde
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonConfig {
    /// Trap frequency.
    pub omega: f64,
    pub temperature: f64,
    pub n_max: Option<usize>,
    pub link: [usize; 2],
    /// `(Rabi frequency, Lamb-Dicke parameter)` of the two ions.
    #[serde(default = "default_drives")]
    pub drives: [[f64; 2]; 2],
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default = "yes")]
    pub antisymmetric: bool,
    pub delta_p: Option<f64>,
    pub fit_order: Option<usize>,
    pub mode: Option<EvolutionMode>,
    pub grid: Option<GridConfig>,
}

fn default_drives() -> [[f64; 2]; 2] {
    let d = SpinCurrentOptions::default().drives;
    [[d[0].0, d[0].1], [d[1].0, d[1].1]]
}

fn default_channels() -> Vec<usize> {
    vec![0, 1, 2]
}

impl IonConfig {
    pub fn options(&self, channel: usize) -> SpinCurrentOptions {
        let d = SpinCurrentOptions::default();
        SpinCurrentOptions {
            channel,
            antisymmetric: self.antisymmetric,
            delta_p: self.delta_p.unwrap_or(d.delta_p),
            fit_order: self.fit_order.unwrap_or(d.fit_order),
            grid: self.grid.map(Into::into).unwrap_or(d.grid),
            mode: self.mode.unwrap_or(d.mode),
            drives: [(self.drives[0][0], self.drives[0][1]), (self.drives[1][0], self.drives[1][1])],
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Schema version and finiteness of every physical parameter.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut floats: Vec<(String, f64)> = Vec::new();
        let mut push = |k: &str, v: f64| floats.push((k.to_string(), v));
        match &self.model {
            ModelConfig::Ladder { j, k, flux, u, hard_core, .. } => {
                push("model.j", *j);
                push("model.k", *k);
                push("model.flux", *flux);
                match (u, hard_core) {
                    (Some(u), false) => push("model.u", *u),
                    (None, true) => {}
                    (Some(_), true) => return Err(ConfigError("model.u and model.hard_core = true are mutually exclusive".into())),
                    (None, false) => return Err(ConfigError("model.u is required unless model.hard_core = true".into())),
                }
            }
            ModelConfig::Triangle { flux, magnitudes, u, .. } => {
                push("model.flux", *flux);
                push("model.u", *u);
                for (i, m) in magnitudes.iter().enumerate() {
                    push(&format!("model.magnitudes[{i}]"), *m);
                }
            }
            ModelConfig::Lattice { hoppings, u, .. } => {
                push("model.u", *u);
                for (i, h) in hoppings.iter().enumerate() {
                    push(&format!("model.hoppings[{i}].magnitude"), h.magnitude);
                    push(&format!("model.hoppings[{i}].phase"), h.phase);
                }
            }
            ModelConfig::Spins { couplings, zz, .. } => {
                for (i, h) in couplings.iter().enumerate() {
                    push(&format!("model.couplings[{i}].magnitude"), h.magnitude);
                    push(&format!("model.couplings[{i}].phase"), h.phase);
                }
                for (i, z) in zz.iter().enumerate() {
                    push(&format!("model.zz[{i}].value"), z.value);
                }
            }
        }
        push("solver.tol", self.solver.tol);
        let p = &self.probe;
        push("probe.delta_p", p.delta_p);
        push("probe.delta_ptilde", p.delta_ptilde);
        push("probe.variance_delta_p", p.variance_delta_p);
        push("probe.global_delta_p", p.global_delta_p);
        push("probe.grid.s_min", p.grid.s_min);
        push("probe.grid.s_initial_max", p.grid.s_initial_max);
        push("probe.grid.target_p0", p.grid.target_p0);
        push("probe.grid.s_cap", p.grid.s_cap);
        if let Some(d) = p.detection {
            push("probe.detection.alpha", d.alpha);
            push("probe.detection.beta", d.beta);
        }
        if let Some(scan) = &self.scan {
            for (i, k) in scan.k.iter().enumerate() {
                push(&format!("scan.k[{i}]"), *k);
            }
            for (i, u) in scan.u.iter().flatten().enumerate() {
                push(&format!("scan.u[{i}]"), *u);
            }
        }
        if let Some(ion) = &self.ion {
            push("ion.omega", ion.omega);
            push("ion.temperature", ion.temperature);
            for (i, d) in ion.drives.iter().enumerate() {
                push(&format!("ion.drives[{i}][0]"), d[0]);
                push(&format!("ion.drives[{i}][1]"), d[1]);
            }
            if let Some(dp) = ion.delta_p {
                push("ion.delta_p", dp);
            }
        }
        if let Some((key, v)) = floats.iter().find(|(_, v)| !v.is_finite()) {
            return Err(ConfigError(format!("{key} must be finite, got {v}")));
        }
        GridPolicy::from(p.grid)
            .validate()
            .map_err(|e| ConfigError(format!("probe.grid: {e}")))?;
        if let Some(g) = self.ion.as_ref().and_then(|i| i.grid) {
            GridPolicy::from(g)
                .validate()
                .map_err(|e| ConfigError(format!("ion.grid: {e}")))?;
        }
        if p.estimators.is_empty() {
            return Err(ConfigError("probe.estimators must not be empty".into()));
        }
        if p.scheme == Scheme::Correlation && p.pair.is_none() {
            return Err(ConfigError("probe.pair is required for the correlation scheme".into()));
        }
        if let Some(scan) = &self.scan {
            if scan.k.is_empty() || scan.u.as_ref().is_some_and(|u| u.is_empty()) {
                return Err(ConfigError("scan grids must not be empty".into()));
            }
        }
        Ok(())
    }
}
