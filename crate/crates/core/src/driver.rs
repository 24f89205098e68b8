//! Config-driven runs: wires the integrator to its output sinks and runs
//! the configured checks on the resulting history.

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{build_initial_state, CheckKind, InitError, RunConfig};
use crate::diagnostics::{
    self, crossing_time, CascadeFit, CheckReport, DiagnosticsError, DiagnosticsRecord, History,
    IntegratedTail, RecordLayout, RecordSink,
};
use crate::error::ConfigError;
use crate::integrator::{run, RunError};
use crate::io::{Checkpoint, CheckpointSink, CsvRecordWriter, IoError, StatesWriter};
use crate::operator::{CollisionOperator, SpectrumState};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Omit the timestamp comment from the CSV.
    pub reproducible: bool,
    /// Continue from this checkpoint instead of the configured initial data.
    pub resume: Option<PathBuf>,
    /// Keep every recorded state in memory (needed by most checks).
    pub keep_states: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Run(#[from] RunError),
}

impl DriverError {
    /// Whether the failure is a problem with the inputs rather than the
    /// dynamics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, DriverError::Run(RunError::Step(_)))
    }
}

pub struct RunOutput {
    pub history: History,
    pub final_state: SpectrumState,
    pub steps: u64,
    pub halvings: u64,
    pub config_hash: String,
}

pub fn layout_of(cfg: &RunConfig) -> RecordLayout {
    RecordLayout {
        radii: cfg.diagnostics.radii.clone(),
        phir_values: cfg.diagnostics.phir_values.clone(),
    }
}

/// Records go to the history; states only when asked to.
struct Keep<'a> {
    history: &'a mut History,
    states: bool,
}

impl RecordSink for Keep<'_> {
    fn record(&mut self, record: &DiagnosticsRecord, state: &SpectrumState) -> io::Result<()> {
        self.history.records.push(record.clone());
        if self.states {
            self.history.states.push(state.clone());
        }
        Ok(())
    }
}

struct Fanout<'a>(Vec<&'a mut dyn RecordSink>);

impl RecordSink for Fanout<'_> {
    fn record(&mut self, record: &DiagnosticsRecord, state: &SpectrumState) -> io::Result<()> {
        for s in self.0.iter_mut() {
            s.record(record, state)?;
        }
        Ok(())
    }
}

pub fn execute(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutput, DriverError> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let op = CollisionOperator::new(grid.clone(), cfg.kernel_config()?)
        .map_err(|e| ConfigError::invalid("kernel", e.to_string()))?;
    let hash = cfg.hash();
    let layout = layout_of(cfg);

    let (start, start_step) = match &opts.resume {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            c.verify(&grid, &hash)?;
            (c.state(), c.step_count)
        }
        None => (build_initial_state(&cfg.init, &grid)?, 0),
    };
    let resuming = opts.resume.is_some();

    let mut history = History::new(grid.clone(), layout.clone());
    let out = &cfg.output;
    let mut csv = match &out.csv_path {
        Some(p) => Some(CsvRecordWriter::create(
            p,
            &layout,
            opts.reproducible,
            resuming,
        )?),
        None => None,
    };
    let mut states = match (&out.states_path, out.store_states) {
        (Some(p), true) => {
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(resuming)
                .write(true)
                .truncate(!resuming)
                .open(p)
                .map_err(|e| IoError::Io {
                    path: p.clone(),
                    source: e,
                })?;
            let w = io::BufWriter::new(f);
            Some(if resuming {
                StatesWriter::continuing(w)
            } else {
                StatesWriter::new(w, &grid).map_err(|e| IoError::Io {
                    path: p.clone(),
                    source: e,
                })?
            })
        }
        _ => None,
    };
    let mut ckpt = match (&out.checkpoint_path, out.checkpoint_every) {
        (Some(p), Some(every)) => Some(CheckpointSink {
            path: p.clone(),
            every,
            grid: &grid,
            config_hash: hash.clone(),
        }),
        _ => None,
    };

    let summary = {
        let mut keep = Keep {
            history: &mut history,
            states: opts.keep_states,
        };
        let mut sinks: Vec<&mut dyn RecordSink> = vec![&mut keep];
        if let Some(c) = csv.as_mut() {
            sinks.push(c);
        }
        if let Some(s) = states.as_mut() {
            sinks.push(s);
        }
        if let Some(k) = ckpt.as_mut() {
            sinks.push(k);
        }
        let mut fan = Fanout(sinks);
        run(
            &op,
            &start,
            start_step,
            &cfg.time,
            &layout,
            out.record_every,
            &mut fan,
        )
    };
    // flush whatever was written even when the run failed
    let flushed = csv
        .as_mut()
        .map(|c| c.flush())
        .transpose()
        .and(states.as_mut().map(|s| s.flush()).transpose());
    let summary = summary?;
    flushed.map_err(RunError::Sink)?;

    if let Some(p) = &out.checkpoint_path {
        Checkpoint::new(&summary.state, &grid, &hash, summary.steps).save(p)?;
    }
    Ok(RunOutput {
        history,
        final_state: summary.state,
        steps: summary.steps,
        halvings: summary.halvings,
        config_hash: hash,
    })
}

/// Upper bound on the spread of normalized integrated tails across radii.
pub const TAIL_SPREAD_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Crossings {
    /// First record with `E_inf > 0`.
    pub positive: Option<f64>,
    pub half: Option<f64>,
    pub p99: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub checks: Vec<CheckReport>,
    pub fit: Option<CascadeFit>,
    pub integrated_tail: Vec<IntegratedTail>,
    pub crossings: Crossings,
}

impl CheckOutcome {
    /// All hard checks passed.
    pub fn pass(&self) -> bool {
        self.checks.iter().filter(|c| !c.soft).all(|c| c.pass)
    }
}

fn failed(check: &str, params: serde_json::Value, err: DiagnosticsError) -> CheckReport {
    let mut params = params;
    params["error"] = err.to_string().into();
    CheckReport {
        check: check.to_string(),
        params,
        pass: false,
        worst_slack: f64::NAN,
        worst_time: f64::NAN,
        soft: false,
    }
}

/// Every configured check on `history`.
pub fn run_checks(cfg: &RunConfig, history: &History) -> CheckOutcome {
    let d = &cfg.diagnostics;
    let mut checks = Vec::new();
    let mut fit = None;
    let mut integrated = Vec::new();
    let (t0, t1) = match (history.records.first(), history.records.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => (0.0, 0.0),
    };
    for kind in &d.checks {
        match kind {
            CheckKind::Conservation => match diagnostics::check_conservation(history) {
                Ok(v) => checks.extend(v),
                Err(e) => checks.push(failed("conservation", serde_json::json!({}), e)),
            },
            CheckKind::Entropy => match diagnostics::check_entropy(history) {
                Ok(r) => checks.push(r),
                Err(e) => checks.push(failed("entropy_nonincreasing", serde_json::json!({}), e)),
            },
            CheckKind::Tightness => {
                for &r in &d.radii {
                    for &rho in &d.tightness_rho {
                        let params = serde_json::json!({ "R": r, "rho": rho });
                        checks.push(
                            diagnostics::check_tightness(history, r, rho)
                                .unwrap_or_else(|e| failed("tightness", params, e)),
                        );
                    }
                }
            }
            CheckKind::Accumulation => {
                for &r in &d.phir_values {
                    checks.push(
                        diagnostics::check_accumulation(history, r).unwrap_or_else(|e| {
                            failed("accumulation", serde_json::json!({ "r": r }), e)
                        }),
                    );
                }
            }
            CheckKind::OriginDepletion => {
                let eps = d.epsilon_origin;
                checks.push(
                    diagnostics::check_origin_depletion(history, eps).unwrap_or_else(|e| {
                        failed("origin_depletion", serde_json::json!({ "epsilon": eps }), e)
                    }),
                );
            }
            CheckKind::IntegratedTail => {
                if d.radii.is_empty() || t1 <= t0 {
                    continue;
                }
                let (a, b) = d.tail_window.unwrap_or((t0, t1));
                match diagnostics::check_integrated_tail(history, &d.radii, a, b, TAIL_SPREAD_LIMIT)
                {
                    Ok((rep, table)) => {
                        checks.push(rep);
                        integrated = table;
                    }
                    Err(e) => checks.push(failed(
                        "integrated_tail",
                        serde_json::json!({ "t1": a, "t2": b }),
                        e,
                    )),
                }
            }
            CheckKind::CascadeFit => {
                let window = d.fit_window.unwrap_or((0.5 * t1, t1));
                match diagnostics::fit_cascade_rate(&history.reservoir_series(), window) {
                    Ok(f) => fit = Some(f),
                    Err(e) => {
                        let mut rep = failed(
                            "cascade_fit",
                            serde_json::json!({ "window": [window.0, window.1] }),
                            e,
                        );
                        rep.soft = true;
                        checks.push(rep);
                    }
                }
            }
        }
    }
    let crossings = Crossings {
        positive: crossing_time(&history.records, 0.0),
        half: crossing_time(&history.records, 0.5),
        p99: crossing_time(&history.records, 0.99),
    };
    CheckOutcome {
        checks,
        fit,
        integrated_tail: integrated,
        crossings,
    }
}

/// Contents of `summary_path`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub steps: u64,
    pub halvings: u64,
    pub records: usize,
    #[serde(rename = "final")]
    pub last: Option<DiagnosticsRecord>,
    #[serde(flatten)]
    pub outcome: Option<CheckOutcome>,
}

impl Summary {
    pub fn new(out: &RunOutput, outcome: Option<CheckOutcome>) -> Self {
        Self {
            config_hash: out.config_hash.clone(),
            steps: out.steps,
            halvings: out.halvings,
            records: out.history.records.len(),
            last: out.history.records.last().cloned(),
            outcome,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), IoError> {
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, text).map_err(|e| IoError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}
