//! Explicit time stepping with positivity control.
//!
//! Every stage uses the conservative right-hand side, so total energy is
//! preserved up to roundoff whatever the step. Positivity is obtained by
//! choosing the step from the per-bin depletion time `e_i / |de_i|` and, if
//! the combined update still leaves a negative bin (or would shrink the
//! reservoir), by halving the step until it does not.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsRecord, RecordLayout, RecordSink};
use crate::error::ConfigError;
use crate::operator::{CollisionOperator, CollisionRhs, SpectrumState, StateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt_init: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

fn default_safety() -> f64 {
    0.5
}

fn default_method() -> Method {
    Method::Rk4
}

fn default_max_steps() -> u64 {
    10_000_000
}

impl TimeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(ConfigError::invalid(
                "time.t_end",
                "must be finite and >= 0",
            ));
        }
        if !(self.dt_init.is_finite() && self.dt_init > 0.0) {
            return Err(ConfigError::invalid(
                "time.dt_init",
                "must be finite and > 0",
            ));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(ConfigError::invalid("time.safety", "must lie in (0, 1]"));
        }
        if self.max_steps == 0 {
            return Err(ConfigError::invalid("time.max_steps", "must be positive"));
        }
        Ok(())
    }
}

/// Halving stops once the trial step falls below this fraction of the
/// requested one.
pub const DT_MIN_FRACTION: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error(
        "positivity lost even at dt={dt_tried:e} (t={t}); most negative bin {worst_bin} \
         would reach {worst_value:e} from {before:e}"
    )]
    Stiff {
        t: f64,
        dt_tried: f64,
        worst_bin: usize,
        worst_value: f64,
        before: f64,
    },
    #[error("step budget of {0} exhausted before t_end")]
    MaxSteps(u64),
}

/// Result of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: SpectrumState,
    /// The step actually taken after any halving.
    pub dt: f64,
    pub halvings: u32,
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    op: &'a CollisionOperator,
    method: Method,
    k: [CollisionRhs; 4],
    stage: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(op: &'a CollisionOperator, method: Method) -> Self {
        let n = op.grid().len();
        Self {
            op,
            method,
            k: std::array::from_fn(|_| CollisionRhs::zeros(n)),
            stage: vec![0.0; n],
        }
    }

    pub fn operator(&self) -> &CollisionOperator {
        self.op
    }

    /// Largest step allowed by the depletion rule for the current rate `k0`.
    pub fn depletion_limit(e: &[f64], k0: &CollisionRhs) -> f64 {
        e.iter()
            .zip(&k0.de)
            .filter(|(_, &d)| d < 0.0)
            .map(|(&x, &d)| x / -d)
            .fold(f64::INFINITY, f64::min)
    }

    /// Adaptive step: `safety · min e_i/|de_i|` over depleting bins, capped
    /// by `dt_cap`.
    pub fn suggest_dt(&mut self, state: &SpectrumState, safety: f64, dt_cap: f64) -> f64 {
        let [k0, ..] = &mut self.k;
        self.op.rhs_into(&state.e, k0);
        (safety * Self::depletion_limit(&state.e, k0)).min(dt_cap)
    }

    /// Advance by `dt`, halving on loss of positivity.
    pub fn step(&mut self, state: &SpectrumState, dt: f64) -> Result<StepOutcome, StepError> {
        state.validate(self.op.grid().len())?;
        let [k0, ..] = &mut self.k;
        self.op.rhs_into(&state.e, k0);
        self.step_with_rate(state, dt)
    }

    /// As [`Stepper::step`], reusing the rate left by the preceding
    /// [`Stepper::suggest_dt`] call on the same state.
    pub fn step_after_suggest(
        &mut self,
        state: &SpectrumState,
        dt: f64,
    ) -> Result<StepOutcome, StepError> {
        self.step_with_rate(state, dt)
    }

    fn step_with_rate(&mut self, state: &SpectrumState, dt: f64) -> Result<StepOutcome, StepError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(StepError::BadStep(dt));
        }
        let dt_min = dt * DT_MIN_FRACTION;
        let mut trial = dt;
        let mut halvings = 0;
        loop {
            let next = self.combine(state, trial);
            match first_violation(state, &next) {
                None => {
                    return Ok(StepOutcome {
                        state: next,
                        dt: trial,
                        halvings,
                    })
                }
                Some((bin, value)) => {
                    let half = 0.5 * trial;
                    if half < dt_min {
                        return Err(StepError::Stiff {
                            t: state.t,
                            dt_tried: trial,
                            worst_bin: bin,
                            worst_value: value,
                            before: state.e.get(bin).copied().unwrap_or(state.e_inf),
                        });
                    }
                    trial = half;
                    halvings += 1;
                }
            }
        }
    }

    /// Explicit update with `k[0]` already holding the rate at `state`.
    fn combine(&mut self, state: &SpectrumState, dt: f64) -> SpectrumState {
        let e0 = &state.e;
        match self.method {
            Method::Euler => {
                let k1 = &self.k[0];
                SpectrumState {
                    t: state.t + dt,
                    e: e0.iter().zip(&k1.de).map(|(x, d)| x + dt * d).collect(),
                    e_inf: state.e_inf + dt * k1.de_inf,
                }
            }
            Method::Rk4 => {
                let [k1, k2, k3, k4] = &mut self.k;
                let stage = &mut self.stage;
                let half = 0.5 * dt;
                fill_stage(stage, e0, &k1.de, half);
                self.op.rhs_into(stage, k2);
                fill_stage(stage, e0, &k2.de, half);
                self.op.rhs_into(stage, k3);
                fill_stage(stage, e0, &k3.de, dt);
                self.op.rhs_into(stage, k4);
                let w = dt / 6.0;
                let e = (0..e0.len())
                    .map(|i| e0[i] + w * (k1.de[i] + 2.0 * k2.de[i] + 2.0 * k3.de[i] + k4.de[i]))
                    .collect();
                let e_inf =
                    state.e_inf + w * (k1.de_inf + 2.0 * k2.de_inf + 2.0 * k3.de_inf + k4.de_inf);
                SpectrumState {
                    t: state.t + dt,
                    e,
                    e_inf,
                }
            }
        }
    }
}

fn fill_stage(stage: &mut [f64], e0: &[f64], k: &[f64], h: f64) {
    for ((s, x), d) in stage.iter_mut().zip(e0).zip(k) {
        *s = x + h * d;
    }
}

/// First bin that went negative, or the reservoir (index `n`) if it shrank.
fn first_violation(before: &SpectrumState, after: &SpectrumState) -> Option<(usize, f64)> {
    if let Some((i, &v)) = after
        .e
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Some((i, v));
    }
    if !(after.e_inf >= before.e_inf) {
        return Some((after.e.len(), after.e_inf));
    }
    None
}

/// Single step with a fresh stepper.
pub fn step(
    state: &SpectrumState,
    op: &CollisionOperator,
    method: Method,
    dt: f64,
) -> Result<StepOutcome, StepError> {
    Stepper::new(op, method).step(state, dt)
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("record output failed: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub state: SpectrumState,
    pub steps: u64,
    pub halvings: u64,
    pub last_dt: f64,
}

/// Integrate from `start` to `time.t_end` with adaptive steps.
///
/// A record is emitted at step 0 (only when `start_step == 0`), after every
/// `record_every`-th step and at the final time. The step count continues
/// from `start_step`, which lets a run resumed from a checkpoint reproduce
/// the records of an uninterrupted one.
pub fn run(
    op: &CollisionOperator,
    start: &SpectrumState,
    start_step: u64,
    time: &TimeConfig,
    layout: &RecordLayout,
    record_every: u64,
    sink: &mut dyn RecordSink,
) -> Result<RunSummary, RunError> {
    time.validate()?;
    let grid = op.grid();
    start.validate(grid.len()).map_err(StepError::from)?;
    let every = record_every.max(1);
    let mut stepper = Stepper::new(op, time.method);
    let mut state = start.clone();
    let mut steps = start_step;
    let mut halvings = 0u64;
    let mut last_dt = 0.0;
    if steps == 0 {
        let rec = DiagnosticsRecord::compute(&state, grid, layout, 0.0, 0);
        sink.record(&rec, &state)?;
    }
    while state.t < time.t_end {
        if steps >= time.max_steps {
            return Err(StepError::MaxSteps(time.max_steps).into());
        }
        let remaining = time.t_end - state.t;
        let dt = stepper.suggest_dt(&state, time.safety, time.dt_init.min(remaining));
        let out = stepper.step_after_suggest(&state, dt)?;
        steps += 1;
        halvings += u64::from(out.halvings);
        last_dt = out.dt;
        state = out.state;
        if out.dt == remaining {
            state.t = time.t_end;
        }
        if steps.is_multiple_of(every) || state.t >= time.t_end {
            let rec = DiagnosticsRecord::compute(&state, grid, layout, last_dt, steps);
            sink.record(&rec, &state)?;
        }
    }
    Ok(RunSummary {
        state,
        steps,
        halvings,
        last_dt,
    })
}
