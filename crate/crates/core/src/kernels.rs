//! Collision functionals of the radial weak formulation.
//!
//! For `x >= y > 0` the pair functional is
//!
//! ```text
//! H1[φ](x, y) = (x+y)³ φ(x+y) − 2(x²+y²) x φ(x) − 4 x y² φ(y) + (x−y)³ φ(x−y)
//! ```
//!
//! and on the diagonal `H2[φ](p) = 8p³ (φ(2p) − φ(p))`. The weights of
//! both functionals sum to zero, so they are evaluated in pivot form
//!
//! ```text
//! H1 = (x+y)³ [φ(x+y) − φ(x)] + (x−y)³ [φ(x−y) − φ(x)] − 4xy² [φ(y) − φ(x)]
//! ```
//!
//! with each increment `φ(b) − φ(a)` supplied by the test-function family
//! in a cancellation-free form where one exists. Constants therefore give
//! exactly zero and `H1(p, p) == H2(p)` holds bit for bit.
//!
//! The dispersion relation `ω(p) = p` (kernel degree 2) is built into the
//! weights; there is no other kernel.

use std::fmt;
use std::sync::Arc;

use crate::sum::CompensatedSum;

/// Value-at-infinity aware test function on `(0, ∞]`.
#[derive(Clone)]
pub enum TestFunction {
    /// `(1 − r/p)₊`.
    PhiR {
        r: f64,
    },
    /// `A/p`.
    Reciprocal {
        a: f64,
    },
    /// `a + b p`.
    Affine {
        a: f64,
        b: f64,
    },
    Constant {
        c: f64,
    },
    Custom(CustomFn),
}

/// User supplied test function.
#[derive(Clone)]
pub struct CustomFn {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    at_infinity: Option<f64>,
    v_norm: Option<f64>,
    increment: Option<Increment>,
}

/// `(from, to, to − from) ↦ f(to) − f(from)`.
type Increment = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

impl CustomFn {
    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::PhiR { r } => write!(f, "phi_r(r={r})"),
            TestFunction::Reciprocal { a } => write!(f, "reciprocal(A={a})"),
            TestFunction::Affine { a, b } => write!(f, "affine({a} + {b} p)"),
            TestFunction::Constant { c } => write!(f, "constant({c})"),
            TestFunction::Custom(c) => write!(f, "custom({})", c.name),
        }
    }
}

impl TestFunction {
    pub fn phi_r(r: f64) -> Self {
        TestFunction::PhiR { r }
    }

    pub fn reciprocal(a: f64) -> Self {
        TestFunction::Reciprocal { a }
    }

    pub fn affine(a: f64, b: f64) -> Self {
        TestFunction::Affine { a, b }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::Constant { c }
    }

    pub fn custom<F>(name: impl Into<String>, f: F, at_infinity: Option<f64>) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TestFunction::Custom(CustomFn {
            name: name.into(),
            f: Arc::new(f),
            at_infinity,
            v_norm: None,
            increment: None,
        })
    }

    /// Custom function with a cancellation-free difference
    /// `incr(from, to, to − from) = f(to) − f(from)`.
    pub fn custom_with_increment<F, G>(
        name: impl Into<String>,
        f: F,
        incr: G,
        at_infinity: Option<f64>,
    ) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        match Self::custom(name, f, at_infinity) {
            TestFunction::Custom(mut c) => {
                c.increment = Some(Arc::new(incr));
                TestFunction::Custom(c)
            }
            _ => unreachable!(),
        }
    }

    /// Attach a known V-norm to a custom function. No effect on the
    /// closed-form families, whose norms are always analytic.
    pub fn with_v_norm(self, norm: f64) -> Self {
        match self {
            TestFunction::Custom(mut c) => {
                c.v_norm = Some(norm);
                TestFunction::Custom(c)
            }
            other => other,
        }
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            TestFunction::PhiR { r } => {
                if p >= *r {
                    1.0 - r / p
                } else {
                    0.0
                }
            }
            TestFunction::Reciprocal { a } => a / p,
            TestFunction::Affine { a, b } => a + b * p,
            TestFunction::Constant { c } => *c,
            TestFunction::Custom(c) => (c.f)(p),
        }
    }

    /// `lim φ(p)` as `p → ∞`, when it exists.
    pub fn value_at_infinity(&self) -> Option<f64> {
        match self {
            TestFunction::PhiR { .. } => Some(1.0),
            TestFunction::Reciprocal { .. } => Some(0.0),
            TestFunction::Affine { a, b } => (*b == 0.0).then_some(*a),
            TestFunction::Constant { c } => Some(*c),
            TestFunction::Custom(c) => c.at_infinity,
        }
    }

    /// `φ(to) − φ(from)`, where `delta` is `to − from` computed by the
    /// caller without rounding through `to`.
    pub fn increment(&self, from: f64, to: f64, delta: f64) -> f64 {
        if delta == 0.0 {
            return 0.0;
        }
        match self {
            TestFunction::PhiR { r } => {
                let r = *r;
                match (from >= r, to >= r) {
                    (true, true) => r * delta / (from * to),
                    (false, false) => 0.0,
                    _ => self.eval(to) - self.eval(from),
                }
            }
            TestFunction::Reciprocal { a } => -a * delta / (from * to),
            TestFunction::Affine { b, .. } => b * delta,
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Custom(c) => match &c.increment {
                Some(incr) => incr(from, to, delta),
                None => (c.f)(to) - (c.f)(from),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("arguments outside the domain p1 >= p2 > 0: p1={p1}, p2={p2}")]
    Domain { p1: f64, p2: f64 },
    #[error("regularization parameters must be positive: epsilon={epsilon}, n_cut={n_cut}")]
    Regularization { epsilon: f64, n_cut: f64 },
    #[error("V-norm is infinite for {0}")]
    NormUndefined(String),
}

/// Sum of weighted increments around the pivot `p1`.
///
/// `w_sum` multiplies `φ(p1+p2) − φ(p1)`, `w_diff` multiplies
/// `φ(p1−p2) − φ(p1)` and `w_low` multiplies `φ(p2) − φ(p1)`. A zero weight
/// skips the evaluation so `φ(0)` is never requested.
fn pivot_sum(phi: &TestFunction, p1: f64, p2: f64, w_sum: f64, w_diff: f64, w_low: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.add(w_sum * phi.increment(p1, p1 + p2, p2));
    if w_diff != 0.0 {
        acc.add(w_diff * phi.increment(p1, p1 - p2, -p2));
    }
    if w_low != 0.0 {
        acc.add(w_low * phi.increment(p1, p2, p2 - p1));
    }
    acc.value()
}

fn cube(x: f64) -> f64 {
    x * x * x
}

fn check_pair(p1: f64, p2: f64, allow_zero: bool) -> Result<(), KernelError> {
    let low_ok = if allow_zero { p2 >= 0.0 } else { p2 > 0.0 };
    if low_ok && p1 >= p2 && p1.is_finite() {
        Ok(())
    } else {
        Err(KernelError::Domain { p1, p2 })
    }
}

/// Pair functional `H1[φ](p1, p2)` for `p1 >= p2 > 0`.
pub fn h1(phi: &TestFunction, p1: f64, p2: f64) -> Result<f64, KernelError> {
    check_pair(p1, p2, false)?;
    Ok(pivot_sum(
        phi,
        p1,
        p2,
        cube(p1 + p2),
        cube(p1 - p2),
        -4.0 * p1 * p2 * p2,
    ))
}

/// Diagonal functional `8p³(φ(2p) − φ(p))`.
pub fn h2(phi: &TestFunction, p: f64) -> Result<f64, KernelError> {
    check_pair(p, p, false)?;
    let s = p + p;
    Ok(cube(s) * phi.increment(p, s, p))
}

/// `H1(p, p) == H2(p)` within `1e-12 (1 + |H2|)`.
pub fn h1_diag_equals_h2(phi: &TestFunction, p: f64) -> Result<bool, KernelError> {
    let a = h1(phi, p, p)?;
    let b = h2(phi, p)?;
    Ok((a - b).abs() <= 1e-12 * (1.0 + b.abs()))
}

fn check_regularization(epsilon: f64, n_cut: f64) -> Result<(), KernelError> {
    if epsilon > 0.0 && n_cut > 0.0 {
        Ok(())
    } else {
        Err(KernelError::Regularization { epsilon, n_cut })
    }
}

/// Regularized pair functional: cubic weights use `p ∧ n_cut`, the whole
/// bracket is divided by `(p1+ε)(p2+ε)`, and `φ` is still evaluated at the
/// untruncated points.
pub fn h1_regularized(
    phi: &TestFunction,
    p1: f64,
    p2: f64,
    epsilon: f64,
    n_cut: f64,
) -> Result<f64, KernelError> {
    check_pair(p1, p2, true)?;
    check_regularization(epsilon, n_cut)?;
    let (a, b) = (p1.min(n_cut), p2.min(n_cut));
    let bracket = pivot_sum(phi, p1, p2, cube(a + b), cube(a - b), -4.0 * a * b * b);
    Ok(bracket / ((p1 + epsilon) * (p2 + epsilon)))
}

/// Regularized diagonal-type functional
/// `|a+b|² [ (a+b) φ(p1+p2) − a φ(p1) − b φ(p2) ] / ((p1+ε)(p2+ε))`.
pub fn h2_regularized(
    phi: &TestFunction,
    p1: f64,
    p2: f64,
    epsilon: f64,
    n_cut: f64,
) -> Result<f64, KernelError> {
    check_pair(p1, p2, true)?;
    check_regularization(epsilon, n_cut)?;
    let (a, b) = (p1.min(n_cut), p2.min(n_cut));
    let s = a + b;
    let bracket = pivot_sum(phi, p1, p2, cube(s), 0.0, -s * s * b);
    Ok(bracket / ((p1 + epsilon) * (p2 + epsilon)))
}

/// `‖φ‖_V = ‖φ‖_∞ + ‖p²φ'‖_∞ + sup_{p1≥p2≥0} p2 |φ(p1+p2) − φ(p1)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VNorm {
    pub value: f64,
    /// Set when the value is a sampled estimate rather than a closed form.
    pub approximate: bool,
}

/// Lattice density (points per decade) for the sampled sup-norm terms.
pub const VNORM_POINTS_PER_DECADE: usize = 10_000;
/// Coarser lattice for the two-argument difference term.
pub const VNORM_PAIR_POINTS_PER_DECADE: usize = 100;
const VNORM_DECADES: (i32, i32) = (-6, 6);

pub fn v_norm(phi: &TestFunction) -> Result<VNorm, KernelError> {
    let exact = |value| {
        Ok(VNorm {
            value,
            approximate: false,
        })
    };
    match phi {
        TestFunction::Constant { c } => exact(c.abs()),
        // sup|φ| = 1, p²φ' = r beyond r, and the difference term peaks at r/2.
        TestFunction::PhiR { r } => exact(1.0 + 1.5 * r),
        TestFunction::Affine { a, b } if *b == 0.0 => exact(a.abs()),
        TestFunction::Reciprocal { a } if *a == 0.0 => exact(0.0),
        TestFunction::Affine { .. } | TestFunction::Reciprocal { .. } => {
            Err(KernelError::NormUndefined(format!("{phi:?}")))
        }
        TestFunction::Custom(c) => match c.v_norm {
            Some(v) => exact(v),
            None => Ok(VNorm {
                value: sampled_v_norm(phi, VNORM_DECADES.0, VNORM_DECADES.1),
                approximate: true,
            }),
        },
    }
}

fn log_lattice(lo_decade: i32, hi_decade: i32, per_decade: usize) -> Vec<f64> {
    let count = (hi_decade - lo_decade) as usize * per_decade;
    (0..=count)
        .map(|k| 10f64.powf(lo_decade as f64 + k as f64 / per_decade as f64))
        .collect()
}

/// Lattice estimate of the V-norm over `[10^lo, 10^hi]`.
pub fn sampled_v_norm(phi: &TestFunction, lo_decade: i32, hi_decade: i32) -> f64 {
    let fine = log_lattice(lo_decade, hi_decade, VNORM_POINTS_PER_DECADE);
    let values: Vec<f64> = fine.iter().map(|&p| phi.eval(p)).collect();
    let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slope = fine
        .windows(2)
        .zip(values.windows(2))
        .map(|(p, v)| {
            let mid = 0.5 * (p[0] + p[1]);
            mid * mid * ((v[1] - v[0]) / (p[1] - p[0])).abs()
        })
        .fold(0.0f64, f64::max);
    let coarse = log_lattice(lo_decade, hi_decade, VNORM_PAIR_POINTS_PER_DECADE);
    let mut diff = 0.0f64;
    for (j, &p2) in coarse.iter().enumerate() {
        for &p1 in &coarse[j..] {
            diff = diff.max(p2 * (phi.eval(p1 + p2) - phi.eval(p1)).abs());
        }
    }
    sup + slope + diff
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literal four-term evaluation, kept apart from the pivot form.
    fn h1_literal(phi: &TestFunction, x: f64, y: f64) -> f64 {
        let mut v = (x + y).powi(3) * phi.eval(x + y)
            - 2.0 * (x * x + y * y) * x * phi.eval(x)
            - 4.0 * x * y * y * phi.eval(y);
        if x > y {
            v += (x - y).powi(3) * phi.eval(x - y);
        }
        v
    }

    #[test]
    fn constant_is_null() {
        assert_eq!(h1(&TestFunction::constant(1.0), 3.0, 1.0).unwrap(), 0.0);
        assert_eq!(h2(&TestFunction::constant(1.0), 5.0).unwrap(), 0.0);
        assert_eq!(h1_literal(&TestFunction::constant(1.0), 3.0, 1.0), 0.0);
    }

    #[test]
    fn reciprocal_examples() {
        let phi = TestFunction::reciprocal(1.0);
        assert!((h1(&phi, 2.0, 1.0).unwrap() + 8.0).abs() < 1e-13);
        assert!((h2(&phi, 2.0).unwrap() + 16.0).abs() < 1e-13);
    }

    #[test]
    fn phi_r_examples() {
        let phi = TestFunction::phi_r(1.0);
        // 729·(8/9) − 410·(4/5) − 320·(3/4) + 0
        let hand: f64 = 729.0 * (8.0 / 9.0) - 410.0 * 0.8 - 320.0 * 0.75;
        assert!((hand - 80.0).abs() < 1e-12);
        assert!((h1(&phi, 5.0, 4.0).unwrap() - 80.0).abs() < 1e-12);
        assert!((h1_literal(&phi, 5.0, 4.0) - 80.0).abs() < 1e-12);
        // all arguments above r: reduces to 4 r p1 p2
        assert!((h1(&phi, 5.0, 4.0).unwrap() - 4.0 * 5.0 * 4.0).abs() < 1e-12);
        assert!((h2(&phi, 1.0).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_identity_examples() {
        assert!(h1_diag_equals_h2(&TestFunction::phi_r(1.0), 1.0).unwrap());
        assert!(h1_diag_equals_h2(&TestFunction::constant(1.0), 3.0).unwrap());
        assert!(h1_diag_equals_h2(&TestFunction::reciprocal(1.0), 2.0).unwrap());
        assert!((h1(&TestFunction::reciprocal(1.0), 2.0, 2.0).unwrap() + 16.0).abs() < 1e-13);
    }

    #[test]
    fn domain_errors() {
        let phi = TestFunction::phi_r(1.0);
        assert!(matches!(
            h1(&phi, 1.0, 2.0),
            Err(KernelError::Domain { .. })
        ));
        assert!(h1(&phi, 1.0, 0.0).is_err());
        assert!(h2(&phi, 0.0).is_err());
        assert!(h2(&phi, -1.0).is_err());
        assert!(h1_regularized(&phi, 1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn regularized_examples() {
        assert_eq!(
            h1_regularized(&TestFunction::constant(1.0), 3.0, 1.0, 0.3, 10.0).unwrap(),
            0.0
        );
        let v = h1_regularized(&TestFunction::reciprocal(1.0), 2.0, 1.0, 1e-14, 10.0).unwrap();
        assert!((v + 4.0).abs() < 1e-12, "{v}");

        assert_eq!(
            h2_regularized(&TestFunction::constant(1.0), 1.5, 1.5, 0.2, 3.0).unwrap(),
            0.0
        );
        let phi = TestFunction::phi_r(1.0);
        let v = h2_regularized(&phi, 1.0, 1.0, 1e-300, 2.0).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        let v = h2_regularized(&phi, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn regularized_brute_force() {
        // phi_r(1), p1=5, p2=4, eps=0.5, n=3: a = b = 3.
        let phi = TestFunction::phi_r(1.0);
        let (a, b) = (3.0f64, 3.0f64);
        let brute = ((a + b).powi(3) * phi.eval(9.0) + (a - b).powi(3) * phi.eval(1.0)
            - 2.0 * (a.powi(3) + a * b * b) * phi.eval(5.0)
            - 4.0 * a * b * b * phi.eval(4.0))
            / (5.5 * 4.5);
        let v = h1_regularized(&phi, 5.0, 4.0, 0.5, 3.0).unwrap();
        assert!((v - brute).abs() <= 1e-13 * brute.abs(), "{v} vs {brute}");
    }

    #[test]
    fn regularized_limit_recovers_exact() {
        let phi = TestFunction::phi_r(0.7);
        for &(p1, p2) in &[(3.0, 1.0), (2.0, 2.0), (10.0, 0.25)] {
            let reg = h1_regularized(&phi, p1, p2, 1e-300, 1e9).unwrap() * p1 * p2;
            let exact = h1(&phi, p1, p2).unwrap();
            assert!((reg - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn v_norms() {
        assert_eq!(v_norm(&TestFunction::constant(1.0)).unwrap().value, 1.0);
        assert_eq!(v_norm(&TestFunction::constant(-2.0)).unwrap().value, 2.0);
        assert!(matches!(
            v_norm(&TestFunction::reciprocal(1.0)),
            Err(KernelError::NormUndefined(_))
        ));
        assert!(v_norm(&TestFunction::affine(1.0, 2.0)).is_err());
        assert_eq!(v_norm(&TestFunction::affine(-3.0, 0.0)).unwrap().value, 3.0);
    }

    #[test]
    fn phi_r_norm_matches_dense_sampling() {
        for &r in &[0.1, 1.0, 10.0] {
            let analytic = v_norm(&TestFunction::phi_r(r)).unwrap().value;
            assert!(analytic <= 1.0 + 2.0 * r);
            let lo = (r / 10.0).log10().floor() as i32;
            let hi = (1e3 * r).log10().ceil() as i32;
            let sampled = sampled_v_norm(&TestFunction::phi_r(r), lo, hi);
            assert!(
                sampled <= analytic * (1.0 + 1e-9),
                "r={r}: {sampled} > {analytic}"
            );
            assert!(
                sampled >= analytic * (1.0 - 2e-3),
                "r={r}: {sampled} << {analytic}"
            );
        }
    }

    #[test]
    fn custom_norm_is_flagged() {
        let phi = TestFunction::custom("half", |_| 0.5, Some(0.5));
        let n = v_norm(&phi).unwrap();
        assert!(n.approximate);
        assert!((n.value - 0.5).abs() < 1e-12);
        let phi = phi.with_v_norm(0.5);
        assert!(!v_norm(&phi).unwrap().approximate);
    }

    #[test]
    fn pivot_form_matches_literal() {
        let fams = [
            TestFunction::phi_r(0.3),
            TestFunction::affine(0.5, -0.25),
            TestFunction::custom("exp", |p: f64| (-p).exp(), Some(0.0)),
        ];
        for phi in &fams {
            for &(x, y) in &[(1.0, 0.5), (4.0, 4.0), (7.5, 0.1), (0.4, 0.39)] {
                let a = h1(phi, x, y).unwrap();
                let b = h1_literal(phi, x, y);
                assert!(
                    (a - b).abs() <= 1e-12 * (1.0 + (x + y).powi(3)),
                    "{phi:?} {x} {y}"
                );
            }
        }
    }
}
