//! Run configuration and initial data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::grid::{Grid, GridKind};
use crate::integrator::TimeConfig;
use crate::operator::{KernelConfig, SpectrumState};
use crate::sum::compensated_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub kernel: KernelSection,
    pub init: InitConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub p_min: f64,
    pub p_max: f64,
    pub n: usize,
    #[serde(default = "default_kind")]
    pub kind: GridKind,
}

fn default_kind() -> GridKind {
    GridKind::Geometric
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid, ConfigError> {
        Grid::build(self.kind, self.p_min, self.p_max, self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    #[default]
    Exact,
    Regularized,
}

/// Kernel section as written in the file; see [`KernelSection::resolve`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default)]
    pub variant: KernelVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cut: Option<f64>,
}

impl KernelSection {
    pub fn resolve(&self) -> Result<KernelConfig, ConfigError> {
        match self.variant {
            KernelVariant::Exact => {
                if self.epsilon.is_some() {
                    return Err(ConfigError::invalid(
                        "kernel.epsilon",
                        "only allowed with variant = regularized",
                    ));
                }
                if self.n_cut.is_some() {
                    return Err(ConfigError::invalid(
                        "kernel.n_cut",
                        "only allowed with variant = regularized",
                    ));
                }
                Ok(KernelConfig::Exact)
            }
            KernelVariant::Regularized => {
                let epsilon = self
                    .epsilon
                    .ok_or_else(|| ConfigError::invalid("kernel.epsilon", "required"))?;
                let n_cut = self
                    .n_cut
                    .ok_or_else(|| ConfigError::invalid("kernel.n_cut", "required"))?;
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return Err(ConfigError::invalid("kernel.epsilon", "must lie in (0, 1)"));
                }
                if !(n_cut > 0.0 && n_cut.is_finite()) {
                    return Err(ConfigError::invalid(
                        "kernel.n_cut",
                        "must be finite and > 0",
                    ));
                }
                Ok(KernelConfig::Regularized { epsilon, n_cut })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// `e_i ∝ exp(−(p_i − center)²/(2 width²)) w_i`.
    GaussianBump {
        center: f64,
        width: f64,
        total_energy: f64,
    },
    /// `e_i ∝ p_i^exponent w_i` for `lo ≤ p_i ≤ hi`.
    PowerLaw {
        exponent: f64,
        cutoffs: [f64; 2],
        total_energy: f64,
    },
    /// All energy in the node at `p`.
    SingleBin { p: f64, energy: f64 },
    /// Two-column CSV `p,e` with one row per node.
    FromCsv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    #[serde(default)]
    pub summary_path: Option<PathBuf>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Write every recorded state to `states_path`.
    #[serde(default)]
    pub store_states: bool,
    #[serde(default)]
    pub states_path: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    /// Steps between checkpoints; must be a multiple of `record_every`.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

fn default_record_every() -> u64 {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            csv_path: None,
            summary_path: None,
            record_every: 1,
            store_states: false,
            states_path: None,
            checkpoint_path: None,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Conservation,
    Entropy,
    Tightness,
    Accumulation,
    OriginDepletion,
    IntegratedTail,
    CascadeFit,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Conservation,
        CheckKind::Entropy,
        CheckKind::Tightness,
        CheckKind::Accumulation,
        CheckKind::OriginDepletion,
        CheckKind::IntegratedTail,
        CheckKind::CascadeFit,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Tail radii; also the `R` of the tightness check.
    #[serde(default)]
    pub radii: Vec<f64>,
    /// `r` values for `W_{φ_r}`; also the accumulation radii.
    #[serde(default)]
    pub phir_values: Vec<f64>,
    #[serde(default = "all_checks")]
    pub checks: Vec<CheckKind>,
    #[serde(default = "default_epsilon_origin")]
    pub epsilon_origin: f64,
    #[serde(default = "default_rho")]
    pub tightness_rho: Vec<f64>,
    /// Window of the cascade-rate fit; defaults to the second half of the run.
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
    /// Window of the integrated-tail table; defaults to the whole run.
    #[serde(default)]
    pub tail_window: Option<(f64, f64)>,
}

fn all_checks() -> Vec<CheckKind> {
    CheckKind::ALL.to_vec()
}

fn default_epsilon_origin() -> f64 {
    0.1
}

fn default_rho() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            radii: Vec::new(),
            phir_values: Vec::new(),
            checks: all_checks(),
            epsilon_origin: default_epsilon_origin(),
            tightness_rho: default_rho(),
            fit_window: None,
            tail_window: None,
        }
    }
}

impl RunConfig {
    /// Semantic checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid.build()?;
        self.kernel.resolve()?;
        self.time.validate()?;
        self.validate_init()?;
        let out = &self.output;
        if out.record_every == 0 {
            return Err(ConfigError::invalid(
                "output.record_every",
                "must be positive",
            ));
        }
        if let Some(k) = out.checkpoint_every {
            if k == 0 || k % out.record_every != 0 {
                return Err(ConfigError::invalid(
                    "output.checkpoint_every",
                    "must be a positive multiple of output.record_every",
                ));
            }
            if out.checkpoint_path.is_none() {
                return Err(ConfigError::invalid(
                    "output.checkpoint_path",
                    "required when output.checkpoint_every is set",
                ));
            }
        }
        if out.store_states && out.states_path.is_none() {
            return Err(ConfigError::invalid(
                "output.states_path",
                "required when output.store_states is true",
            ));
        }
        let d = &self.diagnostics;
        if d.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(ConfigError::invalid(
                "diagnostics.radii",
                "must be positive and finite",
            ));
        }
        if d.phir_values.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(ConfigError::invalid(
                "diagnostics.phir_values",
                "must be positive and finite",
            ));
        }
        if !(d.epsilon_origin > 0.0 && d.epsilon_origin < 1.0) {
            return Err(ConfigError::invalid(
                "diagnostics.epsilon_origin",
                "must lie in (0, 1)",
            ));
        }
        if d.tightness_rho.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(ConfigError::invalid(
                "diagnostics.tightness_rho",
                "must lie in (0, 1)",
            ));
        }
        for (key, w) in [
            ("diagnostics.fit_window", d.fit_window),
            ("diagnostics.tail_window", d.tail_window),
        ] {
            if let Some((a, b)) = w {
                if !(a >= 0.0 && b > a) {
                    return Err(ConfigError::invalid(key, "need 0 <= lo < hi"));
                }
            }
        }
        Ok(())
    }

    fn validate_init(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, "must be finite and > 0"))
            }
        };
        match &self.init {
            InitConfig::GaussianBump {
                center,
                width,
                total_energy,
            } => {
                positive("init.center", *center)?;
                positive("init.width", *width)?;
                positive("init.total_energy", *total_energy)
            }
            InitConfig::PowerLaw {
                exponent,
                cutoffs,
                total_energy,
            } => {
                if !exponent.is_finite() {
                    return Err(ConfigError::invalid("init.exponent", "must be finite"));
                }
                positive("init.cutoffs", cutoffs[0])?;
                if !(cutoffs[1] > cutoffs[0] && cutoffs[1].is_finite()) {
                    return Err(ConfigError::invalid("init.cutoffs", "need 0 < lo < hi"));
                }
                positive("init.total_energy", *total_energy)
            }
            InitConfig::SingleBin { p, energy } => {
                positive("init.p", *p)?;
                if !(*energy >= 0.0 && energy.is_finite()) {
                    return Err(ConfigError::invalid(
                        "init.energy",
                        "must be finite and >= 0",
                    ));
                }
                Ok(())
            }
            InitConfig::FromCsv { .. } => Ok(()),
        }
    }

    pub fn kernel_config(&self) -> Result<KernelConfig, ConfigError> {
        self.kernel.resolve()
    }

    /// SHA-256 over every section except `output`, which does not affect
    /// the trajectory.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            grid: &'a GridConfig,
            kernel: &'a KernelSection,
            init: &'a InitConfig,
            time: &'a TimeConfig,
            diagnostics: &'a DiagnosticsConfig,
        }
        let bytes = serde_json::to_vec(&Hashed {
            grid: &self.grid,
            kernel: &self.kernel,
            init: &self.init,
            time: &self.time,
            diagnostics: &self.diagnostics,
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Parse and validate a JSON configuration. Errors name the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." {
            "config".to_string()
        } else {
            path
        };
        ConfigError::invalid(key, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::invalid("config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[derive(Debug, thiserror::Error)]
pub enum InitError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("reading {path}: {message}")]
    Data { path: PathBuf, message: String },
}

/// Initial spectrum for `init` on `grid`, normalized to the requested
/// total energy.
pub fn build_initial_state(init: &InitConfig, grid: &Grid) -> Result<SpectrumState, InitError> {
    let p = grid.nodes();
    let w = grid.widths();
    let weights: Vec<f64>;
    let total;
    match init {
        InitConfig::GaussianBump {
            center,
            width,
            total_energy,
        } => {
            weights = p
                .iter()
                .zip(w)
                .map(|(&p, &w)| (-(p - center) * (p - center) / (2.0 * width * width)).exp() * w)
                .collect();
            total = *total_energy;
            normalize(
                weights,
                total,
                "init.center",
                "bump does not overlap the grid",
            )
        }
        InitConfig::PowerLaw {
            exponent,
            cutoffs,
            total_energy,
        } => {
            weights = p
                .iter()
                .zip(w)
                .map(|(&p, &w)| {
                    if p >= cutoffs[0] && p <= cutoffs[1] {
                        p.powf(*exponent) * w
                    } else {
                        0.0
                    }
                })
                .collect();
            total = *total_energy;
            normalize(
                weights,
                total,
                "init.cutoffs",
                "no grid node inside the cutoffs",
            )
        }
        InitConfig::SingleBin { p: at, energy } => {
            let k = grid
                .node_index(*at, 1e-9)
                .ok_or_else(|| ConfigError::invalid("init.p", "must coincide with a grid node"))?;
            let mut s = SpectrumState::zeros(grid.len());
            s.e[k] = *energy;
            Ok(s)
        }
        InitConfig::FromCsv { path } => read_spectrum_csv(path, grid),
    }
}

fn normalize(
    weights: Vec<f64>,
    total: f64,
    key: &str,
    empty: &str,
) -> Result<SpectrumState, InitError> {
    let sum = compensated_sum(weights.iter().copied());
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(ConfigError::invalid(key, empty).into());
    }
    let scale = total / sum;
    Ok(SpectrumState {
        t: 0.0,
        e: weights.into_iter().map(|x| x * scale).collect(),
        e_inf: 0.0,
    })
}

fn read_spectrum_csv(path: &Path, grid: &Grid) -> Result<SpectrumState, InitError> {
    let data = |message: String| InitError::Data {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| data(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "p" || &headers[1] != "e" {
        return Err(data("expected header `p,e`".into()));
    }
    let mut e = Vec::with_capacity(grid.len());
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| data(e.to_string()))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| data(format!("row {}: `{s}` is not a number", k + 1)))
        };
        let (p, v) = (parse(&row[0])?, parse(&row[1])?);
        let node = grid
            .nodes()
            .get(k)
            .ok_or_else(|| data(format!("more rows than the {} grid nodes", grid.len())))?;
        if (p - node).abs() > 1e-9 * node {
            return Err(data(format!(
                "row {}: p = {p} does not match node {node}",
                k + 1
            )));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(data(format!(
                "row {}: energy {v} must be finite and >= 0",
                k + 1
            )));
        }
        e.push(v);
    }
    if e.len() != grid.len() {
        return Err(data(format!(
            "{} rows for {} grid nodes",
            e.len(),
            grid.len()
        )));
    }
    Ok(SpectrumState {
        t: 0.0,
        e,
        e_inf: 0.0,
    })
}
