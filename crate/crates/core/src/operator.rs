//! Discrete collision operator.
//!
//! The spectrum is a set of energy atoms `e_i` at the grid nodes plus a
//! reservoir atom at `p = ∞`. Each unordered pair `(i, j)`, `i >= j`,
//! interacts at rate `λ = (e_i/p_i)(e_j/p_j)` (doubled off the diagonal)
//! and moves energy
//!
//! * `λ (p_i+p_j)³` to `p_i + p_j` and `λ (p_i−p_j)³` to `p_i − p_j`,
//! * out of bin `i`: `λ · 2(p_i³ + p_i p_j²)`, out of bin `j`: `λ · 4 p_i p_j²`.
//!
//! Gains and losses cancel identically, so `Σ de_i + dE_∞ = 0`. Deposits
//! are routed through [`Grid::locate`]; because the split matches the first
//! moment, `Σ φ(p_k) de_k` reproduces the weak form exactly for affine `φ`.
//! All deposit locations depend only on the grid, so they are tabulated
//! once when the operator is built.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, Placement};
use crate::kernels::{self, KernelError, TestFunction};
use crate::sum::{compensated_sum, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelConfig {
    #[default]
    Exact,
    /// Rates carry `p_i p_j / ((p_i+ε)(p_j+ε))` and cubic weights use
    /// `p ∧ n_cut`.
    Regularized { epsilon: f64, n_cut: f64 },
}

/// Bin energies, reservoir energy and time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumState {
    pub t: f64,
    pub e: Vec<f64>,
    #[serde(rename = "E_inf")]
    pub e_inf: f64,
}

impl SpectrumState {
    pub fn zeros(n: usize) -> Self {
        Self {
            t: 0.0,
            e: vec![0.0; n],
            e_inf: 0.0,
        }
    }

    /// Energy held at finite wavenumbers.
    pub fn finite_energy(&self) -> f64 {
        compensated_sum(self.e.iter().copied())
    }

    pub fn total_energy(&self) -> f64 {
        compensated_sum(self.e.iter().copied().chain(std::iter::once(self.e_inf)))
    }

    /// Wave action `Σ e_i / p_i`; the reservoir carries none.
    pub fn mass(&self, grid: &Grid) -> f64 {
        compensated_sum(self.e.iter().zip(grid.nodes()).map(|(e, p)| e / p))
    }

    pub fn validate(&self, n: usize) -> Result<(), StateError> {
        if self.e.len() != n {
            return Err(StateError::Dimension {
                expected: n,
                got: self.e.len(),
            });
        }
        if let Some((index, &value)) = self
            .e
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(StateError::InvalidEnergy { index, value });
        }
        if !(self.e_inf.is_finite() && self.e_inf >= 0.0) {
            return Err(StateError::InvalidReservoir(self.e_inf));
        }
        if !self.t.is_finite() {
            return Err(StateError::InvalidTime(self.t));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("state has {got} bins but the grid has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("bin {index} holds invalid energy {value}")]
    InvalidEnergy { index: usize, value: f64 },
    #[error("reservoir holds invalid energy {0}")]
    InvalidReservoir(f64),
    #[error("invalid time {0}")]
    InvalidTime(f64),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("test function {phi} is not finite at p={at}")]
    NonFinite { phi: String, at: f64 },
    #[error("test function {0} has no value at infinity but the reservoir is involved")]
    NoValueAtInfinity(String),
}

/// Per-bin energy rates and reservoir inflow.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionRhs {
    pub de: Vec<f64>,
    pub de_inf: f64,
}

impl CollisionRhs {
    pub fn zeros(n: usize) -> Self {
        Self {
            de: vec![0.0; n],
            de_inf: 0.0,
        }
    }

    /// `Σ de_i + dE_∞`, compensated.
    pub fn net(&self) -> f64 {
        compensated_sum(self.de.iter().copied().chain(std::iter::once(self.de_inf)))
    }

    pub fn abs_sum(&self) -> f64 {
        compensated_sum(
            self.de
                .iter()
                .map(|x| x.abs())
                .chain(std::iter::once(self.de_inf)),
        )
    }

    /// `Σ φ(p_k) de_k + φ(∞) dE_∞`: the rate of change of the weak
    /// functional implied by the redistribution form.
    pub fn paired_with(&self, grid: &Grid, phi: &TestFunction) -> Result<f64, EvalError> {
        let mut acc = CompensatedSum::new();
        for (&d, &p) in self.de.iter().zip(grid.nodes()) {
            if d != 0.0 {
                let v = phi.eval(p);
                if !v.is_finite() {
                    return Err(EvalError::NonFinite {
                        phi: format!("{phi:?}"),
                        at: p,
                    });
                }
                acc.add(v * d);
            }
        }
        if self.de_inf != 0.0 {
            let v = phi
                .value_at_infinity()
                .ok_or_else(|| EvalError::NoValueAtInfinity(format!("{phi:?}")))?;
            acc.add(v * self.de_inf);
        }
        Ok(acc.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    None,
    Node(u32),
    Split { left: u32, theta: f64 },
    Reservoir,
}

impl Target {
    fn from_placement(p: Placement) -> Self {
        match p {
            Placement::Floor => Target::Node(0),
            Placement::Reservoir => Target::Reservoir,
            Placement::Interior { left, theta: 1.0 } => Target::Node(left as u32),
            Placement::Interior { left, theta } => Target::Split {
                left: left as u32,
                theta,
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PairTerm {
    i: u32,
    j: u32,
    /// Multiplies `e_i e_j` to give the interaction rate.
    coef: f64,
    loss_i: f64,
    loss_j: f64,
    sum_w: f64,
    sum_at: Target,
    diff_w: f64,
    diff_at: Target,
}

/// Tabulated redistribution rule for one grid and kernel.
#[derive(Debug, Clone)]
pub struct CollisionOperator {
    grid: Grid,
    kernel: KernelConfig,
    pairs: Vec<PairTerm>,
}

impl CollisionOperator {
    pub fn new(grid: Grid, kernel: KernelConfig) -> Result<Self, KernelError> {
        if let KernelConfig::Regularized { epsilon, n_cut } = kernel {
            if !(epsilon > 0.0 && n_cut > 0.0 && epsilon.is_finite()) {
                return Err(KernelError::Regularization { epsilon, n_cut });
            }
        }
        let p = grid.nodes();
        let n = p.len();
        let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                let (pi, pj) = (p[i], p[j]);
                let pair_factor = if i == j { 1.0 } else { 2.0 };
                let (coef, a, b) = match kernel {
                    KernelConfig::Exact => (pair_factor / (pi * pj), pi, pj),
                    KernelConfig::Regularized { epsilon, n_cut } => (
                        pair_factor / ((pi + epsilon) * (pj + epsilon)),
                        pi.min(n_cut),
                        pj.min(n_cut),
                    ),
                };
                let sum_w = (a + b) * (a + b) * (a + b);
                let diff_w = (a - b) * (a - b) * (a - b);
                // pi + pj > 0 and pi - pj > 0 off the diagonal, so locate cannot fail.
                let sum_at = Target::from_placement(grid.locate(pi + pj).expect("positive"));
                let diff_at = if i == j || diff_w == 0.0 {
                    Target::None
                } else {
                    Target::from_placement(grid.locate(pi - pj).expect("positive"))
                };
                pairs.push(PairTerm {
                    i: i as u32,
                    j: j as u32,
                    coef,
                    loss_i: 2.0 * (a * a * a + a * b * b),
                    loss_j: 4.0 * a * b * b,
                    sum_w,
                    sum_at,
                    diff_w,
                    diff_at,
                });
            }
        }
        Ok(Self {
            grid,
            kernel,
            pairs,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kernel(&self) -> KernelConfig {
        self.kernel
    }

    /// Validated right-hand side.
    pub fn rhs(&self, state: &SpectrumState) -> Result<CollisionRhs, StateError> {
        state.validate(self.grid.len())?;
        let mut out = CollisionRhs::zeros(self.grid.len());
        self.rhs_into(&state.e, &mut out);
        Ok(out)
    }

    /// Right-hand side without input validation; used for intermediate
    /// Runge–Kutta stages.
    pub fn rhs_into(&self, e: &[f64], out: &mut CollisionRhs) {
        let n = self.grid.len();
        debug_assert_eq!(e.len(), n);
        let mut acc = vec![CompensatedSum::new(); n];
        let mut res = CompensatedSum::new();
        let mut deposit = |target: Target, amount: f64, acc: &mut [CompensatedSum]| match target {
            Target::None => {}
            Target::Node(k) => acc[k as usize].add(amount),
            Target::Split { left, theta } => {
                let first = theta * amount;
                acc[left as usize].add(first);
                acc[left as usize + 1].add(amount - first);
            }
            Target::Reservoir => res.add(amount),
        };
        for t in &self.pairs {
            let (ei, ej) = (e[t.i as usize], e[t.j as usize]);
            if ei == 0.0 || ej == 0.0 {
                continue;
            }
            let rate = t.coef * ei * ej;
            acc[t.i as usize].add(-rate * t.loss_i);
            acc[t.j as usize].add(-rate * t.loss_j);
            deposit(t.sum_at, rate * t.sum_w, &mut acc);
            deposit(t.diff_at, rate * t.diff_w, &mut acc);
        }
        out.de.clear();
        out.de.extend(acc.iter().map(CompensatedSum::value));
        out.de_inf = res.value();
    }

    /// Direct evaluation of the weak-form rate
    /// `2 Σ_{i>j} (e_i/p_i)(e_j/p_j) H1(p_i,p_j) + Σ_i (e_i/p_i)² H2(p_i)`
    /// (regularized functionals under the regularized kernel).
    pub fn weak_rhs(&self, state: &SpectrumState, phi: &TestFunction) -> Result<f64, EvalError> {
        state.validate(self.grid.len())?;
        let p = self.grid.nodes();
        let e = &state.e;
        let mut acc = CompensatedSum::new();
        for i in 0..p.len() {
            if e[i] == 0.0 {
                continue;
            }
            for j in 0..=i {
                if e[j] == 0.0 {
                    continue;
                }
                let term = match self.kernel {
                    KernelConfig::Exact => {
                        let w = (e[i] / p[i]) * (e[j] / p[j]);
                        if i == j {
                            w * kernels::h2(phi, p[i])?
                        } else {
                            2.0 * w * kernels::h1(phi, p[i], p[j])?
                        }
                    }
                    KernelConfig::Regularized { epsilon, n_cut } => {
                        let w = e[i] * e[j];
                        if i == j {
                            w * kernels::h2_regularized(phi, p[i], p[i], epsilon, n_cut)?
                        } else {
                            2.0 * w * kernels::h1_regularized(phi, p[i], p[j], epsilon, n_cut)?
                        }
                    }
                };
                if !term.is_finite() {
                    return Err(EvalError::NonFinite {
                        phi: format!("{phi:?}"),
                        at: p[i] + p[j],
                    });
                }
                acc.add(term);
            }
        }
        Ok(acc.value())
    }
}

/// One-shot convenience wrapper around [`CollisionOperator::rhs`].
pub fn collision_rhs(
    state: &SpectrumState,
    grid: &Grid,
    kernel: KernelConfig,
) -> Result<CollisionRhs, EvalError> {
    let op = CollisionOperator::new(grid.clone(), kernel)?;
    Ok(op.rhs(state)?)
}

/// One-shot convenience wrapper around [`CollisionOperator::weak_rhs`].
pub fn weak_rhs(
    state: &SpectrumState,
    grid: &Grid,
    kernel: KernelConfig,
    phi: &TestFunction,
) -> Result<f64, EvalError> {
    CollisionOperator::new(grid.clone(), kernel)?.weak_rhs(state, phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(e: Vec<f64>) -> SpectrumState {
        SpectrumState {
            t: 0.0,
            e,
            e_inf: 0.0,
        }
    }

    #[test]
    fn zero_state_gives_zero_rhs() {
        let g = Grid::geometric(0.1, 10.0, 16).unwrap();
        let rhs = collision_rhs(&SpectrumState::zeros(16), &g, KernelConfig::Exact).unwrap();
        assert!(rhs.de.iter().all(|&d| d == 0.0));
        assert_eq!(rhs.de_inf, 0.0);
    }

    #[test]
    fn single_bin_diagonal() {
        // Linear grid 1..8, energy at p = 2; 2p = 4 is a node.
        let g = Grid::linear(1.0, 8.0, 8).unwrap();
        let (p, e) = (2.0, 0.7);
        let mut s = SpectrumState::zeros(8);
        s.e[1] = e;
        let rhs = collision_rhs(&s, &g, KernelConfig::Exact).unwrap();
        let expect = 8.0 * p * e * e;
        assert!((rhs.de[1] + expect).abs() < 1e-14);
        assert!((rhs.de[3] - expect).abs() < 1e-14);
        assert_eq!(rhs.net(), 0.0);
        for (k, d) in rhs.de.iter().enumerate() {
            if k != 1 && k != 3 {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn deposits_above_grid_reach_reservoir() {
        let g = Grid::linear(1.0, 4.0, 4).unwrap();
        let mut s = SpectrumState::zeros(4);
        s.e[3] = 1.0;
        let rhs = collision_rhs(&s, &g, KernelConfig::Exact).unwrap();
        assert!((rhs.de_inf - 32.0).abs() < 1e-13);
        assert!((rhs.de[3] + 32.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_states() {
        let g = Grid::geometric(0.1, 10.0, 8).unwrap();
        let op = CollisionOperator::new(g, KernelConfig::Exact).unwrap();
        let mut s = SpectrumState::zeros(8);
        s.e[2] = -1e-3;
        assert!(matches!(
            op.rhs(&s),
            Err(StateError::InvalidEnergy { index: 2, .. })
        ));
        s.e[2] = f64::NAN;
        assert!(op.rhs(&s).is_err());
        assert!(matches!(
            op.rhs(&SpectrumState::zeros(7)),
            Err(StateError::Dimension { .. })
        ));
        let mut s = SpectrumState::zeros(8);
        s.e_inf = -1.0;
        assert!(op.rhs(&s).is_err());
    }

    #[test]
    fn rejects_bad_regularization() {
        let g = Grid::geometric(0.1, 10.0, 8).unwrap();
        let cfg = KernelConfig::Regularized {
            epsilon: 0.0,
            n_cut: 1.0,
        };
        assert!(CollisionOperator::new(g, cfg).is_err());
    }

    #[test]
    fn weak_rhs_of_constant_is_zero() {
        let g = Grid::geometric(0.01, 100.0, 32).unwrap();
        let e: Vec<f64> = (0..32).map(|k| (k as f64 * 0.37).sin().abs()).collect();
        let v = weak_rhs(
            &state(e),
            &g,
            KernelConfig::Exact,
            &TestFunction::constant(1.0),
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn reciprocal_weak_rhs_is_minus_four_energy_squared() {
        // λ p_i p_j = e_i e_j, so the sum collapses to −4 (Σ e_i)².
        let g = Grid::geometric(0.05, 20.0, 24).unwrap();
        let e: Vec<f64> = (0..24).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let total: f64 = e.iter().sum();
        let s = state(e.clone());
        let v = weak_rhs(&s, &g, KernelConfig::Exact, &TestFunction::reciprocal(1.0)).unwrap();
        // independent double loop
        let p = g.nodes();
        let mut brute = 0.0;
        for i in 0..24 {
            for j in 0..24 {
                brute += -4.0 * (e[i] / p[i]) * (e[j] / p[j]) * p[i] * p[j];
            }
        }
        assert!((v - brute).abs() <= 1e-12 * brute.abs());
        assert!((v + 4.0 * total * total).abs() <= 1e-12 * total * total);
    }

    #[test]
    fn missing_value_at_infinity_is_reported() {
        let rhs = CollisionRhs {
            de: vec![0.0; 4],
            de_inf: 1.0,
        };
        let g = Grid::linear(1.0, 4.0, 4).unwrap();
        assert!(matches!(
            rhs.paired_with(&g, &TestFunction::affine(0.0, 1.0)),
            Err(EvalError::NoValueAtInfinity(_))
        ));
    }
}
