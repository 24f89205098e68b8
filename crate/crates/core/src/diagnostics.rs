//! Observables of a running simulation and run-time checks of the
//! inequalities the continuum dynamics satisfies.
//!
//! All checks read a [`History`] (records plus the states they were taken
//! from) and produce a [`CheckReport`]. Time integrals use the trapezoid
//! rule over emitted records, so record cadence matters for
//! [`check_accumulation`] and [`integrated_tail`].

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::kernels::TestFunction;
use crate::operator::{EvalError, SpectrumState};
use crate::sum::{compensated_sum, CompensatedSum};

/// Additive slack for pointwise inequality checks, relative to total energy.
pub const POINTWISE_SLACK: f64 = 1e-8;
/// Additive slack for time-integrated checks, relative to total energy.
pub const INTEGRATED_SLACK: f64 = 1e-6;
/// Relative drift of total energy tolerated across records.
pub const ENERGY_DRIFT_TOL: f64 = 1e-9;
/// Per-record mass increase tolerated, relative to initial mass.
pub const MASS_STEP_TOL: f64 = 1e-12;
/// Largest accepted trapezoid error estimate, relative to the integral.
pub const QUADRATURE_TOL: f64 = 1e-3;

/// Which observables a record carries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordLayout {
    /// Radii `R` for tail energies `Σ_{p_i ≥ R} e_i + E_∞`.
    pub radii: Vec<f64>,
    /// Parameters `r` of the weak functionals `W_{φ_r}`.
    pub phir_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub e_total: f64,
    pub e_inf: f64,
    pub mass: f64,
    pub entropy: f64,
    pub tails: Vec<f64>,
    pub wphi: Vec<f64>,
    pub effective_dt: f64,
    pub step_count: u64,
}

impl DiagnosticsRecord {
    pub fn compute(
        state: &SpectrumState,
        grid: &Grid,
        layout: &RecordLayout,
        effective_dt: f64,
        step_count: u64,
    ) -> Self {
        Self {
            t: state.t,
            e_total: state.total_energy(),
            e_inf: state.e_inf,
            mass: state.mass(grid),
            entropy: entropy(state, grid),
            tails: layout
                .radii
                .iter()
                .map(|&r| tail_energy(state, grid, r))
                .collect(),
            wphi: layout
                .phir_values
                .iter()
                .map(|&r| {
                    weak_functional(state, grid, &TestFunction::phi_r(r))
                        .expect("phi_r is finite and defined at infinity")
                })
                .collect(),
            effective_dt,
            step_count,
        }
    }
}

/// `Σ_{p_i ≥ R} e_i + E_∞`.
pub fn tail_energy(state: &SpectrumState, grid: &Grid, radius: f64) -> f64 {
    let start = grid.nodes().partition_point(|&p| p < radius);
    compensated_sum(
        state.e[start..]
            .iter()
            .copied()
            .chain(std::iter::once(state.e_inf)),
    )
}

/// Energy strictly below `radius` (reservoir excluded).
pub fn head_energy(state: &SpectrumState, grid: &Grid, radius: f64) -> f64 {
    let end = grid.nodes().partition_point(|&p| p < radius);
    compensated_sum(state.e[..end].iter().copied())
}

/// `Σ φ(p_i) e_i + φ(∞) E_∞`.
pub fn weak_functional(
    state: &SpectrumState,
    grid: &Grid,
    phi: &TestFunction,
) -> Result<f64, EvalError> {
    let mut acc = CompensatedSum::new();
    for (&e, &p) in state.e.iter().zip(grid.nodes()) {
        if e != 0.0 {
            let v = phi.eval(p);
            if !v.is_finite() {
                return Err(EvalError::NonFinite {
                    phi: format!("{phi:?}"),
                    at: p,
                });
            }
            acc.add(v * e);
        }
    }
    if state.e_inf != 0.0 {
        let v = phi
            .value_at_infinity()
            .ok_or_else(|| EvalError::NoValueAtInfinity(format!("{phi:?}")))?;
        acc.add(v * state.e_inf);
    }
    Ok(acc.value())
}

/// Histogram entropy `Σ w_i p_i² log f_i` with `f_i = e_i / (p_i³ w_i)`;
/// empty bins contribute nothing.
pub fn entropy(state: &SpectrumState, grid: &Grid) -> f64 {
    compensated_sum(
        state
            .e
            .iter()
            .zip(grid.nodes().iter().zip(grid.widths()))
            .filter(|(&e, _)| e > 0.0)
            .map(|(&e, (&p, &w))| w * p * p * (e / (p * p * p * w)).ln()),
    )
}

/// Records together with the states they describe.
#[derive(Debug, Clone)]
pub struct History {
    pub grid: Grid,
    pub layout: RecordLayout,
    pub records: Vec<DiagnosticsRecord>,
    pub states: Vec<SpectrumState>,
}

impl History {
    pub fn new(grid: Grid, layout: RecordLayout) -> Self {
        Self {
            grid,
            layout,
            records: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn push(&mut self, record: DiagnosticsRecord, state: SpectrumState) {
        self.records.push(record);
        self.states.push(state);
    }

    pub fn initial_energy(&self) -> f64 {
        self.records.first().map(|r| r.e_total).unwrap_or(0.0)
    }

    fn require_states(&self) -> Result<(), DiagnosticsError> {
        if self.records.is_empty() {
            return Err(DiagnosticsError::Empty);
        }
        if self.states.len() != self.records.len() {
            return Err(DiagnosticsError::MissingStates);
        }
        Ok(())
    }

    /// `(t, E_∞)` pairs, the input of [`fit_cascade_rate`].
    pub fn reservoir_series(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, r.e_inf)).collect()
    }
}

/// Receiver of records emitted during a run.
pub trait RecordSink {
    fn record(&mut self, record: &DiagnosticsRecord, state: &SpectrumState) -> std::io::Result<()>;
}

impl RecordSink for History {
    fn record(&mut self, record: &DiagnosticsRecord, state: &SpectrumState) -> std::io::Result<()> {
        self.push(record.clone(), state.clone());
        Ok(())
    }
}

/// Keeps only the records.
impl RecordSink for Vec<DiagnosticsRecord> {
    fn record(&mut self, record: &DiagnosticsRecord, _: &SpectrumState) -> std::io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

impl<A: RecordSink, B: RecordSink> RecordSink for (A, B) {
    fn record(&mut self, record: &DiagnosticsRecord, state: &SpectrumState) -> std::io::Result<()> {
        self.0.record(record, state)?;
        self.1.record(record, state)
    }
}

impl<T: RecordSink + ?Sized> RecordSink for &mut T {
    fn record(&mut self, record: &DiagnosticsRecord, state: &SpectrumState) -> std::io::Result<()> {
        (**self).record(record, state)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("history is empty")]
    Empty,
    #[error("history does not carry the full states this check needs")]
    MissingStates,
    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: &'static str, message: String },
    #[error(
        "records too coarse: trapezoid error estimate {estimate:e} exceeds {limit:e} of the integral"
    )]
    CoarseRecords { estimate: f64, limit: f64 },
    #[error("fit window holds {0} usable records, need at least 10")]
    TooFewRecords(usize),
    #[error("fit is undefined: {0}")]
    FitUndefined(&'static str),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn param(name: &'static str, message: impl Into<String>) -> DiagnosticsError {
    DiagnosticsError::Parameter {
        name,
        message: message.into(),
    }
}

/// Outcome of one run-time check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub params: serde_json::Value,
    pub pass: bool,
    /// Smallest `lhs − rhs` seen (before the allowance is applied).
    pub worst_slack: f64,
    pub worst_time: f64,
    /// Soft checks are reported but never fail a run.
    #[serde(skip)]
    pub soft: bool,
}

/// Running minimum of a slack sequence.
struct Worst {
    slack: f64,
    time: f64,
}

impl Worst {
    fn new() -> Self {
        Self {
            slack: f64::INFINITY,
            time: f64::NAN,
        }
    }

    fn see(&mut self, slack: f64, t: f64) {
        if slack < self.slack || slack.is_nan() {
            self.slack = slack;
            self.time = t;
        }
    }

    fn report(self, check: &str, params: serde_json::Value, allowance: f64) -> CheckReport {
        let slack = if self.slack.is_infinite() {
            0.0
        } else {
            self.slack
        };
        CheckReport {
            check: check.to_string(),
            params,
            pass: slack >= -allowance,
            worst_slack: slack,
            worst_time: if self.time.is_nan() { 0.0 } else { self.time },
            soft: false,
        }
    }
}

/// Total energy constant, reservoir nondecreasing, mass nonincreasing and
/// every configured `W_{φ_r}` nondecreasing across consecutive records.
pub fn check_conservation(history: &History) -> Result<Vec<CheckReport>, DiagnosticsError> {
    let recs = &history.records;
    let first = recs.first().ok_or(DiagnosticsError::Empty)?;
    let e0 = first.e_total;
    let mass0 = first.mass;

    let mut drift = Worst::new();
    for r in recs {
        drift.see(ENERGY_DRIFT_TOL * e0 - (r.e_total - e0).abs(), r.t);
    }
    let mut reservoir = Worst::new();
    let mut mass = Worst::new();
    let mut wphi: Vec<Worst> = history
        .layout
        .phir_values
        .iter()
        .map(|_| Worst::new())
        .collect();
    for pair in recs.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        reservoir.see(b.e_inf - a.e_inf, b.t);
        mass.see(a.mass - b.mass, b.t);
        for (k, w) in wphi.iter_mut().enumerate() {
            w.see(b.wphi[k] - a.wphi[k], b.t);
        }
    }
    let mut out = vec![
        drift.report(
            "energy_conservation",
            serde_json::json!({ "rel_tol": ENERGY_DRIFT_TOL, "E0": e0 }),
            0.0,
        ),
        reservoir.report("reservoir_monotone", serde_json::json!({}), 0.0),
        mass.report(
            "mass_monotone",
            serde_json::json!({ "per_record_tol": MASS_STEP_TOL * mass0 }),
            MASS_STEP_TOL * mass0,
        ),
    ];
    for (w, &r) in wphi.into_iter().zip(&history.layout.phir_values) {
        out.push(w.report(
            "wphi_monotone",
            serde_json::json!({ "r": r }),
            POINTWISE_SLACK * e0,
        ));
    }
    Ok(out)
}

/// Soft check: histogram entropy should not increase between records.
pub fn check_entropy(history: &History) -> Result<CheckReport, DiagnosticsError> {
    let recs = &history.records;
    if recs.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let mut w = Worst::new();
    for pair in recs.windows(2) {
        w.see(pair[0].entropy - pair[1].entropy, pair[1].t);
    }
    let mut rep = w.report("entropy_nonincreasing", serde_json::json!({}), 0.0);
    rep.soft = true;
    Ok(rep)
}

/// `tail(t, R ρ) ≥ (1 − ρ) tail(0, R)` at every record.
pub fn check_tightness(
    history: &History,
    radius: f64,
    rho: f64,
) -> Result<CheckReport, DiagnosticsError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(param("rho", "must lie in (0, 1)"));
    }
    if !(radius > 0.0) {
        return Err(param("R", "must be positive"));
    }
    history.require_states()?;
    let g = &history.grid;
    let e = history.initial_energy();
    let bound = (1.0 - rho) * tail_energy(&history.states[0], g, radius);
    let mut w = Worst::new();
    for s in &history.states {
        w.see(tail_energy(s, g, radius * rho) - bound, s.t);
    }
    Ok(w.report(
        "tightness",
        serde_json::json!({ "R": radius, "rho": rho }),
        POINTWISE_SLACK * e,
    ))
}

/// `Σ_{p_i,p_j ≤ r} e_i e_j √(p_i p_j) (1 − r/(p_i+p_j))₊`.
pub fn accumulation_integrand(state: &SpectrumState, grid: &Grid, r: f64) -> f64 {
    let p = grid.nodes();
    let end = p.partition_point(|&x| x <= r);
    let mut acc = CompensatedSum::new();
    for i in 0..end {
        if state.e[i] == 0.0 {
            continue;
        }
        for j in 0..end {
            let s = p[i] + p[j];
            if state.e[j] == 0.0 || s <= r {
                continue;
            }
            acc.add(state.e[i] * state.e[j] * (p[i] * p[j]).sqrt() * (1.0 - r / s));
        }
    }
    acc.value()
}

/// Cumulative trapezoid integral of `values` over `times`.
fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = CompensatedSum::new();
    out.push(0.0);
    for k in 1..times.len() {
        acc.add(0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]));
        out.push(acc.value());
    }
    out
}

/// `|T_h − T_2h| / 3`, the usual Richardson estimate for the trapezoid
/// error on the full interval.
fn trapezoid_error_estimate(times: &[f64], values: &[f64]) -> f64 {
    if times.len() < 3 {
        return 0.0;
    }
    let fine = *cumulative_trapezoid(times, values).last().unwrap();
    let mut idx: Vec<usize> = (0..times.len()).step_by(2).collect();
    if *idx.last().unwrap() != times.len() - 1 {
        idx.push(times.len() - 1);
    }
    let ct: Vec<f64> = idx.iter().map(|&k| times[k]).collect();
    let cv: Vec<f64> = idx.iter().map(|&k| values[k]).collect();
    let coarse = *cumulative_trapezoid(&ct, &cv).last().unwrap();
    (fine - coarse).abs() / 3.0
}

/// `tail(t, r) ≥ 2 ∫₀ᵗ Σ_{p_i,p_j ≤ r} e_i e_j √(p_i p_j)(1 − r/(p_i+p_j))₊ ds`.
pub fn check_accumulation(history: &History, r: f64) -> Result<CheckReport, DiagnosticsError> {
    if !(r > 0.0) {
        return Err(param("r", "must be positive"));
    }
    history.require_states()?;
    let g = &history.grid;
    let times: Vec<f64> = history.states.iter().map(|s| s.t).collect();
    let integrand: Vec<f64> = history
        .states
        .iter()
        .map(|s| accumulation_integrand(s, g, r))
        .collect();
    let cumulative = cumulative_trapezoid(&times, &integrand);
    let total = *cumulative.last().unwrap();
    let estimate = trapezoid_error_estimate(&times, &integrand);
    if estimate > QUADRATURE_TOL * total.abs() && estimate > f64::MIN_POSITIVE {
        return Err(DiagnosticsError::CoarseRecords {
            estimate: estimate / total.abs(),
            limit: QUADRATURE_TOL,
        });
    }
    let e = history.initial_energy();
    let mut w = Worst::new();
    for (s, c) in history.states.iter().zip(&cumulative) {
        w.see(tail_energy(s, g, r) - 2.0 * c, s.t);
    }
    Ok(w.report(
        "accumulation",
        serde_json::json!({ "r": r, "quadrature_error_estimate": estimate }),
        INTEGRATED_SLACK * e,
    ))
}

/// Depletion near the origin: with `R₁` the largest node carrying
/// `tail(0, R₁) ≥ (1 − ε/2) E` and `R_ε = R₁ ε / 2`, the energy below
/// `R_ε` must stay under `ε E`.
pub fn check_origin_depletion(
    history: &History,
    epsilon: f64,
) -> Result<CheckReport, DiagnosticsError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(param("epsilon", "must lie in (0, 1)"));
    }
    history.require_states()?;
    let g = &history.grid;
    let e = history.initial_energy();
    let s0 = &history.states[0];
    let r1 = g
        .nodes()
        .iter()
        .rev()
        .copied()
        .find(|&r| tail_energy(s0, g, r) >= (1.0 - 0.5 * epsilon) * e)
        .unwrap_or(g.p_min());
    let r_eps = r1 * 0.5 * epsilon;
    let mut w = Worst::new();
    for s in &history.states {
        w.see(epsilon * e - head_energy(s, g, r_eps), s.t);
    }
    Ok(w.report(
        "origin_depletion",
        serde_json::json!({ "epsilon": epsilon, "R1": r1, "R_eps": r_eps }),
        POINTWISE_SLACK * e,
    ))
}

/// `∫_{t1}^{t2} tail(s, R) ds` with the normalized ratio
/// `I √R / √((t2 − t1) E)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratedTail {
    pub radius: f64,
    pub integral: f64,
    pub ratio: f64,
}

pub fn integrated_tail(
    history: &History,
    radius: f64,
    t1: f64,
    t2: f64,
) -> Result<IntegratedTail, DiagnosticsError> {
    history.require_states()?;
    let t_first = history.states[0].t;
    let t_last = history.states.last().unwrap().t;
    if !(t1 >= t_first && t2 > t1 && t2 <= t_last) {
        return Err(param(
            "t1/t2",
            format!("need {t_first} <= t1 < t2 <= {t_last}"),
        ));
    }
    let g = &history.grid;
    let samples: Vec<(f64, f64)> = history
        .states
        .iter()
        .map(|s| (s.t, tail_energy(s, g, radius)))
        .collect();
    let interp = |t: f64| -> f64 {
        let k = samples.partition_point(|&(s, _)| s < t);
        if k == 0 {
            return samples[0].1;
        }
        let (ta, va) = samples[k - 1];
        let (tb, vb) = samples[k.min(samples.len() - 1)];
        if tb == ta {
            vb
        } else {
            va + (vb - va) * (t - ta) / (tb - ta)
        }
    };
    let mut times = vec![t1];
    let mut values = vec![interp(t1)];
    for &(t, v) in samples.iter().filter(|&&(t, _)| t > t1 && t < t2) {
        times.push(t);
        values.push(v);
    }
    times.push(t2);
    values.push(interp(t2));
    let integral = *cumulative_trapezoid(&times, &values).last().unwrap();
    let e = history.initial_energy();
    let ratio = if e > 0.0 {
        integral * radius.sqrt() / ((t2 - t1) * e).sqrt()
    } else {
        0.0
    };
    Ok(IntegratedTail {
        radius,
        integral,
        ratio,
    })
}

/// Trend check over increasing radii: the time-integrated tail must not
/// grow with `R`, and the normalized ratios must stay within a factor
/// `max_spread` of each other.
pub fn check_integrated_tail(
    history: &History,
    radii: &[f64],
    t1: f64,
    t2: f64,
    max_spread: f64,
) -> Result<(CheckReport, Vec<IntegratedTail>), DiagnosticsError> {
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    let table = sorted
        .iter()
        .map(|&r| integrated_tail(history, r, t1, t2))
        .collect::<Result<Vec<_>, _>>()?;
    let e = history.initial_energy();
    let mut w = Worst::new();
    for pair in table.windows(2) {
        w.see(pair[0].integral - pair[1].integral, pair[1].radius);
    }
    let positive: Vec<f64> = table.iter().map(|x| x.ratio).filter(|&x| x > 0.0).collect();
    let spread = match (
        positive.iter().copied().reduce(f64::max),
        positive.iter().copied().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) => hi / lo,
        _ => 1.0,
    };
    let mut rep = w.report(
        "integrated_tail",
        serde_json::json!({
            "t1": t1, "t2": t2, "spread": spread, "max_spread": max_spread,
            "table": table,
        }),
        INTEGRATED_SLACK * e * (t2 - t1),
    );
    // worst_time carries the radius here.
    rep.pass &= spread < max_spread;
    Ok((rep, table))
}

/// Least-squares fit `E_∞(t) ≈ C1 − C2/√t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeFit {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub fit_window: (f64, f64),
    pub residual_rms: f64,
}

pub fn fit_cascade_rate(
    series: &[(f64, f64)],
    window: (f64, f64),
) -> Result<CascadeFit, DiagnosticsError> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|&&(t, _)| t > 0.0 && t >= window.0 && t <= window.1)
        .map(|&(t, y)| (1.0 / t.sqrt(), y))
        .collect();
    if pts.len() < 10 {
        return Err(DiagnosticsError::TooFewRecords(pts.len()));
    }
    if pts.iter().all(|&(_, y)| y == 0.0) {
        return Err(DiagnosticsError::FitUndefined(
            "reservoir energy is identically zero",
        ));
    }
    let n = pts.len() as f64;
    let xm = compensated_sum(pts.iter().map(|p| p.0)) / n;
    let ym = compensated_sum(pts.iter().map(|p| p.1)) / n;
    let sxx = compensated_sum(pts.iter().map(|p| (p.0 - xm) * (p.0 - xm)));
    let sxy = compensated_sum(pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)));
    if sxx == 0.0 {
        return Err(DiagnosticsError::FitUndefined("window holds a single time"));
    }
    let slope = sxy / sxx;
    let c1 = ym - slope * xm;
    let c2 = -slope;
    let ss = compensated_sum(pts.iter().map(|&(x, y)| {
        let r = y - (c1 - c2 * x);
        r * r
    }));
    Ok(CascadeFit {
        c1,
        c2,
        fit_window: window,
        residual_rms: (ss / n).sqrt(),
    })
}

/// First time the reservoir holds more than `fraction · E` (linearly
/// interpolated between records). `fraction = 0` asks for the first time
/// it is strictly positive.
pub fn crossing_time(records: &[DiagnosticsRecord], fraction: f64) -> Option<f64> {
    let e = records.first()?.e_total;
    let level = fraction * e;
    let above = |r: &DiagnosticsRecord| {
        if fraction == 0.0 {
            r.e_inf > 0.0
        } else {
            r.e_inf >= level
        }
    };
    let k = records.iter().position(above)?;
    if k == 0 || fraction == 0.0 {
        return Some(records[k].t);
    }
    let (a, b) = (&records[k - 1], &records[k]);
    Some(a.t + (b.t - a.t) * (level - a.e_inf) / (b.e_inf - a.e_inf))
}

/// Least-squares slope of `tail(t, R)` over records with `t ≤ t_hi`.
pub fn early_tail_slope(
    history: &History,
    radius: f64,
    t_hi: f64,
) -> Result<f64, DiagnosticsError> {
    history.require_states()?;
    let pts: Vec<(f64, f64)> = history
        .states
        .iter()
        .filter(|s| s.t <= t_hi)
        .map(|s| (s.t, tail_energy(s, &history.grid, radius)))
        .collect();
    if pts.len() < 2 {
        return Err(DiagnosticsError::TooFewRecords(pts.len()));
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bin_grid() -> Grid {
        Grid::linear(1.0, 5.0, 5).unwrap()
    }

    fn two_bin_state() -> SpectrumState {
        // bins (p=2, e=1), (p=5, e=3), reservoir 0.5
        SpectrumState {
            t: 0.0,
            e: vec![0.0, 1.0, 0.0, 0.0, 3.0],
            e_inf: 0.5,
        }
    }

    #[test]
    fn tail_examples() {
        let g = two_bin_grid();
        let s = two_bin_state();
        assert_eq!(tail_energy(&s, &g, 0.0), 4.5);
        assert_eq!(tail_energy(&s, &g, 6.0), 0.5);
        assert_eq!(tail_energy(&s, &g, 3.0), 3.5);
        assert_eq!(tail_energy(&s, &g, 2.0), 4.5);
    }

    #[test]
    fn weak_functional_examples() {
        let g = two_bin_grid();
        let s = two_bin_state();
        assert_eq!(
            weak_functional(&s, &g, &TestFunction::constant(1.0)).unwrap(),
            s.total_energy()
        );
        let mut s0 = s.clone();
        s0.e_inf = 0.0;
        assert_eq!(
            weak_functional(&s0, &g, &TestFunction::phi_r(10.0)).unwrap(),
            0.0
        );
        // bins (2,1), (4,2) with reservoir 0.5 under phi_1
        let s = SpectrumState {
            t: 0.0,
            e: vec![0.0, 1.0, 0.0, 2.0, 0.0],
            e_inf: 0.5,
        };
        let v = weak_functional(&s, &g, &TestFunction::phi_r(1.0)).unwrap();
        assert!((v - 2.5).abs() < 1e-15);
        assert!(matches!(
            weak_functional(&s, &g, &TestFunction::affine(0.0, 1.0)),
            Err(EvalError::NoValueAtInfinity(_))
        ));
    }

    #[test]
    fn entropy_examples() {
        let g = Grid::linear(1.0, 4.0, 4).unwrap();
        assert_eq!(entropy(&SpectrumState::zeros(4), &g), 0.0);
        let mut s = SpectrumState::zeros(4);
        s.e[0] = 1.0;
        assert_eq!(entropy(&s, &g), 0.0);
        let mut s = SpectrumState::zeros(4);
        s.e[1] = 8.0; // p = 2, w = 1, f = 1
        assert_eq!(entropy(&s, &g), 0.0);
        s.e[1] = 8.0 * std::f64::consts::E;
        assert!((entropy(&s, &g) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn fit_recovers_exact_model() {
        let series: Vec<(f64, f64)> = (1..=100)
            .map(|k| {
                let t = k as f64;
                (t, 0.8 - 0.3 / t.sqrt())
            })
            .collect();
        let fit = fit_cascade_rate(&series, (1.0, 100.0)).unwrap();
        assert!((fit.c1 - 0.8).abs() < 1e-9);
        assert!((fit.c2 - 0.3).abs() < 1e-9);
        assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn fit_constant_series() {
        let series: Vec<(f64, f64)> = (1..=20).map(|k| (k as f64, 0.37)).collect();
        let fit = fit_cascade_rate(&series, (0.0, 50.0)).unwrap();
        assert!((fit.c1 - 0.37).abs() < 1e-14);
        assert!(fit.c2.abs() < 1e-14);
    }

    #[test]
    fn fit_errors() {
        let zeros: Vec<(f64, f64)> = (1..=20).map(|k| (k as f64, 0.0)).collect();
        assert!(matches!(
            fit_cascade_rate(&zeros, (0.0, 50.0)),
            Err(DiagnosticsError::FitUndefined(_))
        ));
        let few: Vec<(f64, f64)> = (1..=5).map(|k| (k as f64, 1.0)).collect();
        assert!(matches!(
            fit_cascade_rate(&few, (0.0, 50.0)),
            Err(DiagnosticsError::TooFewRecords(5))
        ));
    }

    fn static_history(states: Vec<SpectrumState>) -> History {
        let grid = two_bin_grid();
        let layout = RecordLayout::default();
        let mut h = History::new(grid.clone(), layout.clone());
        for s in states {
            let rec = DiagnosticsRecord::compute(&s, &grid, &layout, 0.0, 0);
            h.push(rec, s);
        }
        h
    }

    #[test]
    fn tightness_trivial_cases() {
        let s0 = two_bin_state();
        let mut s1 = s0.clone();
        s1.t = 1.0;
        let h = static_history(vec![s0, s1]);
        // rho close to 1: bound ~ 0
        assert!(check_tightness(&h, 3.0, 0.999).unwrap().pass);
        // R above the grid with empty reservoir
        let mut z = two_bin_state();
        z.e_inf = 0.0;
        let h = static_history(vec![z.clone(), z]);
        let rep = check_tightness(&h, 10.0, 0.5).unwrap();
        assert!(rep.pass);
        assert!(check_tightness(&h, 10.0, 1.0).is_err());
    }

    #[test]
    fn accumulation_trivial_cases() {
        // nothing below r/2 can interact above r
        let mut s = SpectrumState::zeros(5);
        s.e[0] = 1.0; // p = 1
        let mut s1 = s.clone();
        s1.t = 1.0;
        let h = static_history(vec![s, s1]);
        assert_eq!(accumulation_integrand(&h.states[0], &h.grid, 2.0), 0.0);
        assert!(check_accumulation(&h, 2.0).unwrap().pass);
        assert!(check_accumulation(&h, 0.5).unwrap().pass);
    }

    #[test]
    fn integrated_tail_trivial_cases() {
        let mut s0 = two_bin_state();
        s0.e_inf = 0.0;
        let mut s1 = s0.clone();
        s1.t = 2.0;
        let h = static_history(vec![s0, s1]);
        let full = integrated_tail(&h, 0.0, 0.0, 2.0).unwrap();
        assert!((full.integral - 2.0 * 4.0).abs() < 1e-14);
        let none = integrated_tail(&h, 100.0, 0.5, 1.5).unwrap();
        assert_eq!(none.integral, 0.0);
        assert!(integrated_tail(&h, 1.0, 1.5, 0.5).is_err());
    }

    #[test]
    fn origin_depletion_loose_epsilon() {
        let s0 = two_bin_state();
        let mut s1 = s0.clone();
        s1.t = 1.0;
        let h = static_history(vec![s0, s1]);
        assert!(check_origin_depletion(&h, 0.99).unwrap().pass);
        assert!(check_origin_depletion(&h, 0.0).is_err());
    }

    #[test]
    fn crossing_interpolates() {
        let grid = two_bin_grid();
        let layout = RecordLayout::default();
        let mk = |t: f64, e_inf: f64| {
            let s = SpectrumState {
                t,
                e: vec![1.0 - e_inf, 0.0, 0.0, 0.0, 0.0],
                e_inf,
            };
            DiagnosticsRecord::compute(&s, &grid, &layout, 0.0, 0)
        };
        let recs = vec![mk(0.0, 0.0), mk(1.0, 0.2), mk(2.0, 0.6)];
        assert_eq!(crossing_time(&recs, 0.0), Some(1.0));
        let t = crossing_time(&recs, 0.5).unwrap();
        assert!((t - 1.75).abs() < 1e-12);
        assert_eq!(crossing_time(&recs, 0.9), None);
    }
}
