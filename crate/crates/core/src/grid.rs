//! Wavenumber discretization.
//!
//! A [`Grid`] holds strictly increasing nodes `p_1 < ... < p_N` on
//! `[p_min, p_max]` plus an implicit reservoir slot standing for `p = ∞`.
//! Energy deposited at an arbitrary wavenumber `q` is routed by
//! [`Grid::locate`]: inside the grid it is split between the two
//! neighbouring nodes so that both the amount and the first moment are
//! preserved, below `p_min` it goes to the first node, above `p_max` to the
//! reservoir.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Smallest admissible node count.
pub const MIN_NODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Geometric,
    Linear,
}

/// Where a deposit at wavenumber `q` ends up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// Fraction `theta` goes to node `left`, `1 - theta` to node `left + 1`.
    /// For a deposit exactly at the last node `left == N - 1` and `theta == 1`.
    Interior { left: usize, theta: f64 },
    /// `0 < q < p_min`: the whole amount goes to the first node.
    Floor,
    /// `q > p_max`: the whole amount goes to the reservoir.
    Reservoir,
}

impl Placement {
    /// Ordering key used to check that `locate` is monotone in `q`.
    /// Floor sorts with node 0, the reservoir after every node.
    pub fn rank(&self, n_nodes: usize) -> (usize, f64) {
        match *self {
            Placement::Floor => (0, 0.0),
            Placement::Interior { left, theta } => (left, 1.0 - theta),
            Placement::Reservoir => (n_nodes, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    kind: GridKind,
    nodes: Vec<f64>,
    widths: Vec<f64>,
}

impl Grid {
    /// Nodes `p_i = p_min (p_max/p_min)^{(i-1)/(N-1)}`.
    pub fn geometric(p_min: f64, p_max: f64, n: usize) -> Result<Self, ConfigError> {
        check_bounds(p_min, p_max, n)?;
        let ratio = p_max / p_min;
        let last = (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n)
            .map(|i| p_min * ratio.powf(i as f64 / last))
            .collect();
        nodes[0] = p_min;
        nodes[n - 1] = p_max;
        Ok(Self::from_sorted(GridKind::Geometric, nodes))
    }

    /// Evenly spaced nodes; used mostly by refinement studies at small N.
    pub fn linear(p_min: f64, p_max: f64, n: usize) -> Result<Self, ConfigError> {
        check_bounds(p_min, p_max, n)?;
        let h = (p_max - p_min) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| p_min + i as f64 * h).collect();
        nodes[n - 1] = p_max;
        Ok(Self::from_sorted(GridKind::Linear, nodes))
    }

    pub fn build(kind: GridKind, p_min: f64, p_max: f64, n: usize) -> Result<Self, ConfigError> {
        match kind {
            GridKind::Geometric => Self::geometric(p_min, p_max, n),
            GridKind::Linear => Self::linear(p_min, p_max, n),
        }
    }

    fn from_sorted(kind: GridKind, nodes: Vec<f64>) -> Self {
        let n = nodes.len();
        // Midpoint cells, with the outer half-cells mirrored at the ends.
        let widths = (0..n)
            .map(|i| {
                let lo = if i == 0 {
                    nodes[0]
                } else {
                    0.5 * (nodes[i - 1] + nodes[i])
                };
                let hi = if i == n - 1 {
                    nodes[n - 1]
                } else {
                    0.5 * (nodes[i] + nodes[i + 1])
                };
                let w = hi - lo;
                if i == 0 || i == n - 1 {
                    2.0 * w
                } else {
                    w
                }
            })
            .collect();
        Self {
            kind,
            nodes,
            widths,
        }
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Representative bin widths, used only to turn bin energies into a
    /// density for the entropy functional.
    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn p_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn p_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Index of the node equal to `p` within `rel_tol`, if any.
    pub fn node_index(&self, p: f64, rel_tol: f64) -> Option<usize> {
        let i = self.nodes.partition_point(|&x| x < p);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&k| k < self.nodes.len())
            .find(|&k| (self.nodes[k] - p).abs() <= rel_tol * p.abs())
    }

    /// Route a deposit at wavenumber `q`.
    pub fn locate(&self, q: f64) -> Result<Placement, DomainError> {
        if q.is_nan() || q <= 0.0 {
            return Err(DomainError::NonPositiveWavenumber(q));
        }
        let n = self.nodes.len();
        if q < self.nodes[0] {
            return Ok(Placement::Floor);
        }
        if q > self.nodes[n - 1] {
            return Ok(Placement::Reservoir);
        }
        // First node >= q.
        let k = self.nodes.partition_point(|&x| x < q);
        if self.nodes[k] == q {
            return Ok(Placement::Interior {
                left: k,
                theta: 1.0,
            });
        }
        let left = k - 1;
        let (lo, hi) = (self.nodes[left], self.nodes[k]);
        let theta = (hi - q) / (hi - lo);
        Ok(Placement::Interior { left, theta })
    }
}

fn check_bounds(p_min: f64, p_max: f64, n: usize) -> Result<(), ConfigError> {
    if !(p_min.is_finite() && p_min > 0.0) {
        return Err(ConfigError::invalid("grid.p_min", "must be finite and > 0"));
    }
    if !(p_max.is_finite() && p_max > p_min) {
        return Err(ConfigError::invalid(
            "grid.p_max",
            "must be finite and > p_min",
        ));
    }
    if n < MIN_NODES {
        return Err(ConfigError::invalid(
            "grid.n",
            format!("need at least {MIN_NODES} nodes, got {n}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("wavenumber must be positive, got {0}")]
    NonPositiveWavenumber(f64),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1248() -> Grid {
        Grid::geometric(1.0, 8.0, 4).unwrap()
    }

    #[test]
    fn ratio_two_grid() {
        let g = g1248();
        let expected = [1.0, 2.0, 4.0, 8.0];
        for (a, b) in g.nodes().iter().zip(expected) {
            assert!((a - b).abs() <= 1e-14 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn decade_grid() {
        let g = Grid::geometric(1e-3, 1e3, 7).unwrap();
        for (i, p) in g.nodes().iter().enumerate() {
            let want = 10f64.powi(i as i32 - 3);
            assert!((p - want).abs() <= 1e-12 * want, "{p} vs {want}");
        }
    }

    #[test]
    fn geometric_ratio_is_constant() {
        let g = Grid::geometric(1e-2, 1e3, 128).unwrap();
        let r0 = g.nodes()[1] / g.nodes()[0];
        for w in g.nodes().windows(2) {
            assert!(((w[1] / w[0]) - r0).abs() <= 1e-12 * r0);
        }
        assert_eq!(g.p_min(), 1e-2);
        assert_eq!(g.p_max(), 1e3);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(Grid::geometric(2.0, 1.0, 4).is_err());
        assert!(Grid::geometric(0.0, 1.0, 4).is_err());
        assert!(Grid::geometric(1.0, 2.0, 3).is_err());
        assert!(Grid::linear(1.0, f64::INFINITY, 8).is_err());
    }

    #[test]
    fn locate_examples() {
        let g = g1248();
        match g.locate(3.0).unwrap() {
            Placement::Interior { left, theta } => {
                assert_eq!(left, 1);
                assert!((theta - 0.5).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.locate(10.0).unwrap(), Placement::Reservoir);
        assert_eq!(g.locate(0.5).unwrap(), Placement::Floor);
        assert!(g.locate(0.0).is_err());
        assert!(g.locate(-1.0).is_err());
    }

    #[test]
    fn exact_nodes_have_unit_theta() {
        let g = g1248();
        for (k, &p) in g.nodes().iter().enumerate() {
            assert_eq!(
                g.locate(p).unwrap(),
                Placement::Interior {
                    left: k,
                    theta: 1.0
                }
            );
        }
    }

    #[test]
    fn widths_are_midpoint_cells() {
        let g = Grid::linear(1.0, 4.0, 4).unwrap();
        assert_eq!(g.widths(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn node_lookup() {
        let g = g1248();
        assert_eq!(g.node_index(4.0, 1e-12), Some(2));
        assert_eq!(g.node_index(4.0 * (1.0 + 1e-14), 1e-12), Some(2));
        assert_eq!(g.node_index(3.0, 1e-12), None);
    }
}
