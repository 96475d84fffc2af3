//! Entropy-adaptive inverse-temperature fields.
//!
//! The controller reads a noise-free soft assignment `Q`, measures how
//! uncertain each row and column is, and lowers the inverse temperature of
//! uncertain rows/columns relative to the base `beta0`. The resulting field
//! is a constant during backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, domain_err, Error, Result};
use crate::sinkhorn::{deterministic_assignment, SinkhornConfig};
use crate::tensor::Matrix;

/// How per-row and per-column temperatures are merged into entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    /// Arithmetic mean of the row and column inverse temperatures.
    #[default]
    Avg,
    /// Temperatures multiply: `beta0 / ((1 + b_row)(1 + b_col))`.
    Prod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Normalised-entropy threshold below which no boost is applied.
    pub h0: f64,
    /// Maximum relative temperature increase.
    pub b_max: f64,
    pub combine: Combine,
    /// Steps before adaptation starts; the field is constant `beta0` until then.
    pub warmup_steps: usize,
    pub entropy_floor: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            h0: 0.7,
            b_max: 0.1,
            combine: Combine::Avg,
            warmup_steps: 1,
            entropy_floor: 1e-8,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.h0) {
            return Err(Error::Config(format!("h0 must lie in [0, 1), got {}", self.h0)));
        }
        if !(self.b_max >= 0.0) || !self.b_max.is_finite() {
            return Err(Error::Config(format!("b_max must be >= 0, got {}", self.b_max)));
        }
        if !(self.entropy_floor > 0.0) {
            return Err(Error::Config("entropy_floor must be > 0".into()));
        }
        Ok(())
    }

    /// Smallest entry a field built with this config can hold, relative to `beta0`.
    pub fn min_ratio(&self) -> f64 {
        match self.combine {
            Combine::Avg => 1.0 / (1.0 + self.b_max),
            Combine::Prod => 1.0 / ((1.0 + self.b_max) * (1.0 + self.b_max)),
        }
    }
}

/// Entrywise inverse temperature with its row/column provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaField {
    beta0: f64,
    entries: Matrix,
    row_beta: Vec<f64>,
    col_beta: Vec<f64>,
}

impl BetaField {
    /// Global temperature: every entry equals `beta0`.
    pub fn constant(n: usize, beta0: f64) -> Self {
        Self {
            beta0,
            entries: Matrix::filled(n, n, beta0),
            row_beta: vec![beta0; n],
            col_beta: vec![beta0; n],
        }
    }

    /// Arbitrary field without row/column structure (row/col betas report `beta0`).
    pub fn from_entries(beta0: f64, entries: Matrix) -> Self {
        let (r, c) = entries.shape();
        Self {
            beta0,
            entries,
            row_beta: vec![beta0; r],
            col_beta: vec![beta0; c],
        }
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn row_beta(&self) -> &[f64] {
        &self.row_beta
    }

    pub fn col_beta(&self) -> &[f64] {
        &self.col_beta
    }

    pub fn min(&self) -> f64 {
        self.entries.min()
    }

    pub fn max(&self) -> f64 {
        self.entries.max()
    }
}

/// Normalised row and column entropies of `q`, computed on `max(q, floor)`.
pub fn normalized_entropies_with_floor(q: &Matrix, floor: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !q.is_square() {
        return Err(dim_err("normalized_entropies", format!("{:?}", q.shape())));
    }
    let n = q.rows();
    if n < 2 {
        return Err(domain_err("normalized_entropies", "n must be >= 2 (log n = 0)"));
    }
    if q.as_slice().iter().any(|&x| x < 0.0) {
        return Err(domain_err("normalized_entropies", "negative entry"));
    }
    let inv_log_n = 1.0 / (n as f64).ln();
    let plogp = q.map(|x| {
        let x = x.max(floor);
        x * x.ln()
    });
    let rows = plogp.row_sums().into_iter().map(|s| -s * inv_log_n).collect();
    let cols = plogp.col_sums().into_iter().map(|s| -s * inv_log_n).collect();
    Ok((rows, cols))
}

/// [`normalized_entropies_with_floor`] at the standard floor `1e-8`.
pub fn normalized_entropies(q: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    normalized_entropies_with_floor(q, 1e-8)
}

/// `b(H) = b_max * clip((H - H0) / (1 - H0), 0, 1)`.
pub fn boost(h: f64, cfg: &ControllerConfig) -> f64 {
    cfg.b_max * ((h - cfg.h0) / (1.0 - cfg.h0)).clamp(0.0, 1.0)
}

/// Combine per-row and per-column boosts into a clamped field.
///
/// Row and column inverse temperatures are `beta0 / (1 + b)`.
pub fn field_from_boosts(
    row_boost: &[f64],
    col_boost: &[f64],
    beta0: f64,
    cfg: &ControllerConfig,
) -> Result<BetaField> {
    if !(beta0 > 0.0) {
        return Err(domain_err("beta_field", "beta0 must be > 0"));
    }
    if row_boost.len() != col_boost.len() {
        return Err(dim_err("beta_field", "row/col boost lengths differ"));
    }
    let n = row_boost.len();
    let row_beta: Vec<f64> = row_boost.iter().map(|b| beta0 / (1.0 + b)).collect();
    let col_beta: Vec<f64> = col_boost.iter().map(|b| beta0 / (1.0 + b)).collect();
    let lo = beta0 * cfg.min_ratio();
    let entries = Matrix::from_fn(n, n, |i, j| {
        let b = match cfg.combine {
            Combine::Avg => 0.5 * (row_beta[i] + col_beta[j]),
            Combine::Prod => beta0 / ((1.0 + row_boost[i]) * (1.0 + col_boost[j])),
        };
        b.clamp(lo, beta0)
    });
    Ok(BetaField {
        beta0,
        entries,
        row_beta,
        col_beta,
    })
}

/// Field from already-computed entropies.
pub fn field_from_entropies(row_h: &[f64], col_h: &[f64], beta0: f64, cfg: &ControllerConfig) -> Result<BetaField> {
    let rb: Vec<f64> = row_h.iter().map(|&h| boost(h, cfg)).collect();
    let cb: Vec<f64> = col_h.iter().map(|&h| boost(h, cfg)).collect();
    field_from_boosts(&rb, &cb, beta0, cfg)
}

/// Full controller: `Q = Sinkhorn(beta0 · S)` off-tape, entropies, boosts,
/// combination and clamping. Before `warmup_steps` the field is constant.
pub fn build_beta_field(
    s: &Matrix,
    beta0: f64,
    cfg: &ControllerConfig,
    step: usize,
    sinkhorn: &SinkhornConfig,
) -> Result<BetaField> {
    let q = deterministic_assignment(s, beta0, sinkhorn.iterations)?;
    if step < cfg.warmup_steps {
        return Ok(BetaField::constant(s.rows(), beta0));
    }
    let (rh, ch) = normalized_entropies_with_floor(q.matrix(), cfg.entropy_floor)?;
    field_from_entropies(&rh, &ch, beta0, cfg)
}

/// Per-node degree statistics of a soft tour.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeSignal {
    pub adjacency: Matrix,
    pub degrees: Vec<f64>,
    pub violations: Vec<f64>,
    pub scalings: Vec<f64>,
}

/// Soft successor heatmap `H[a][b] = Σ_k P[a][k] P[b][k+1]` (positions cyclic):
/// the probability that city `b` is visited right after city `a`.
pub fn successor_heatmap(p: &Matrix) -> Result<Matrix> {
    if !p.is_square() {
        return Err(dim_err("successor_heatmap", format!("{:?}", p.shape())));
    }
    let n = p.rows();
    // P shifted left by one position: shifted[b][k] = P[b][k+1]
    let shifted = Matrix::from_fn(n, n, |b, k| p.get(b, (k + 1) % n));
    p.matmul(&shifted.transpose())
}

/// Degree-violation signal from a successor heatmap: `E = H + Hᵀ` with zero
/// diagonal, `d_i = Σ_j E_ij`, `u_i = |d_i - 2|`, `s_i = 1 + b_max · minmax(u)_i`.
/// When all violations are equal the normalised signal is all zeros.
pub fn degree_signal(successor: &Matrix, b_max: f64) -> Result<DegreeSignal> {
    if !successor.is_square() {
        return Err(dim_err("degree_signal", format!("{:?}", successor.shape())));
    }
    let n = successor.rows();
    let t = successor.transpose();
    let adjacency = Matrix::from_fn(
        n,
        n,
        |i, j| {
            if i == j {
                0.0
            } else {
                successor.get(i, j) + t.get(i, j)
            }
        },
    );
    let degrees = adjacency.row_sums();
    let violations: Vec<f64> = degrees.iter().map(|d| (d - 2.0).abs()).collect();
    let lo = violations.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = violations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scalings = violations
        .iter()
        .map(|&u| {
            let norm = if hi > lo { (u - lo) / (hi - lo + 1e-12) } else { 0.0 };
            1.0 + b_max * norm
        })
        .collect();
    Ok(DegreeSignal {
        adjacency,
        degrees,
        violations,
        scalings,
    })
}

/// Degree-violation temperature field for a soft tour `p` (city x position).
///
/// Rows take their city's boost `s_i - 1`. A position column takes the boost
/// of the city expected to occupy it, `Σ_a p[a][k] (s_a - 1)`.
pub fn degree_violation_field(p: &Matrix, beta0: f64, cfg: &ControllerConfig) -> Result<BetaField> {
    let signal = degree_signal(&successor_heatmap(p)?, cfg.b_max)?;
    let rows: Vec<f64> = signal.scalings.iter().map(|s| s - 1.0).collect();
    let n = rows.len();
    let cols: Vec<f64> = (0..n).map(|k| (0..n).map(|a| p.get(a, k) * rows[a]).sum()).collect();
    field_from_boosts(&rows, &cols, beta0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{block_cost_matrix, BlockAmbiguousSpec};

    fn cfg(h0: f64, b_max: f64) -> ControllerConfig {
        ControllerConfig {
            h0,
            b_max,
            ..ControllerConfig::default()
        }
    }

    #[test]
    fn entropy_reference_rows() {
        let q = Matrix::from_rows(&[
            vec![0.25, 0.25, 0.25, 0.25],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5],
        ])
        .unwrap();
        let (rh, _) = normalized_entropies(&q).unwrap();
        assert!((rh[0] - 1.0).abs() < 1e-12);
        assert!(rh[1].abs() < 1e-6);
        assert!((rh[2] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn entropy_needs_two_elements() {
        assert!(matches!(
            normalized_entropies(&Matrix::ones(1, 1)),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn boost_edges_and_midpoint() {
        let c = cfg(0.7, 0.1);
        assert_eq!(boost(0.7, &c), 0.0);
        assert_eq!(boost(0.2, &c), 0.0);
        assert!((boost(1.0, &c) - 0.1).abs() < 1e-15);
        assert!((boost(0.85, &c) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn confident_q_leaves_beta0() {
        let s = Matrix::identity(4).scale(20.0);
        let f = build_beta_field(&s, 2.0, &cfg(0.5, 0.3), 5, &SinkhornConfig::default()).unwrap();
        assert!(f.entries().as_slice().iter().all(|&b| b == 2.0));
    }

    #[test]
    fn uniform_q_gets_max_boost() {
        let s = Matrix::zeros(5, 5);
        let f = build_beta_field(&s, 3.0, &cfg(0.5, 0.25), 5, &SinkhornConfig::default()).unwrap();
        for &b in f.entries().as_slice() {
            assert!((b - 3.0 / 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn one_uncertain_row() {
        let c = cfg(0.7, 0.1);
        let rh = [1.0, 0.0, 0.0, 0.0];
        let ch = [0.0; 4];
        let f = field_from_entropies(&rh, &ch, 2.0, &c).unwrap();
        for j in 0..4 {
            assert!((f.entries().get(0, j) - 0.5 * (2.0 / 1.1 + 2.0)).abs() < 1e-12);
            assert!((f.entries().get(0, j) - 1.909).abs() < 1e-3);
            for i in 1..4 {
                assert_eq!(f.entries().get(i, j), 2.0);
            }
        }
    }

    #[test]
    fn prod_mode_widens_clamp() {
        let c = ControllerConfig {
            combine: Combine::Prod,
            ..cfg(0.0, 0.5)
        };
        let f = field_from_entropies(&[1.0, 1.0], &[1.0, 1.0], 1.0, &c).unwrap();
        for &b in f.entries().as_slice() {
            assert!((b - 1.0 / 2.25).abs() < 1e-12);
        }
    }

    #[test]
    fn warmup_returns_constant() {
        let s = Matrix::zeros(4, 4);
        let c = ControllerConfig {
            warmup_steps: 3,
            ..cfg(0.5, 0.3)
        };
        let f = build_beta_field(&s, 1.5, &c, 2, &SinkhornConfig::default()).unwrap();
        assert_eq!(f, BetaField::constant(4, 1.5));
        let f = build_beta_field(&s, 1.5, &c, 3, &SinkhornConfig::default()).unwrap();
        assert!(f.max() < 1.5);
    }

    #[test]
    fn hard_cycle_has_degree_two() {
        let p = Matrix::permutation(&[3, 0, 4, 1, 2]);
        let h = successor_heatmap(&p).unwrap();
        let sig = degree_signal(&h, 0.2).unwrap();
        for (&d, &u) in sig.degrees.iter().zip(&sig.violations) {
            assert!((d - 2.0).abs() < 1e-12);
            assert!(u.abs() < 1e-12);
        }
        let f = degree_violation_field(&p, 1.3, &cfg(0.65, 0.2)).unwrap();
        assert!(f.entries().as_slice().iter().all(|&b| b == 1.3));
    }

    #[test]
    fn self_loop_mass_lowers_degree() {
        // cycle 0->1->2->3->0 with half of node 2's successor mass on itself
        let mut h = Matrix::zeros(4, 4);
        for i in 0..4 {
            h.set(i, (i + 1) % 4, 1.0);
        }
        h.set(2, 3, 0.5);
        h.set(2, 2, 0.5);
        let sig = degree_signal(&h, 0.2).unwrap();
        // d_2 = E[2][1] + E[2][3] = 1 + 0.5; d_3 = 0.5 + 1
        assert!((sig.degrees[2] - 1.5).abs() < 1e-12);
        assert!(sig.violations[2] > 0.0);
        let boosts: Vec<f64> = sig.scalings.iter().map(|s| s - 1.0).collect();
        let f = field_from_boosts(&boosts, &boosts, 2.0, &cfg(0.65, 0.2)).unwrap();
        assert!(f.row_beta()[2] < 2.0);
        assert!(f.col_beta()[2] < 2.0);
        assert!(f.entries().get(2, 0) < 2.0);
        assert_eq!(f.entries().get(0, 1), 2.0);
    }

    #[test]
    fn equal_violations_normalise_to_zero() {
        let h = Matrix::filled(4, 4, 0.1);
        let sig = degree_signal(&h, 0.3).unwrap();
        assert!(sig.violations.iter().all(|&u| u > 0.0));
        assert!(sig.scalings.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn block_ambiguous_rows_are_cooled() {
        let spec = BlockAmbiguousSpec::new(4, 4, 1.0, 0.05);
        let s = block_cost_matrix(&spec).unwrap().scale(-1.0);
        let c = cfg(0.5, 0.3);
        let sk = SinkhornConfig::default();
        let q = deterministic_assignment(&s, 3.0, sk.iterations).unwrap();
        let (rh, _) = normalized_entropies(q.matrix()).unwrap();
        assert!(rh[..4].iter().all(|&h| h < c.h0));
        let f = build_beta_field(&s, 3.0, &c, 10, &sk).unwrap();
        let easy_min = f.row_beta()[..4].iter().copied().fold(f64::INFINITY, f64::min);
        let hard_max = f.row_beta()[4..].iter().copied().fold(0.0, f64::max);
        assert!(hard_max < easy_min);
        for j in 0..8 {
            for hard in 4..8 {
                for easy in 0..4 {
                    assert!(f.entries().get(hard, j) < f.entries().get(easy, j));
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1.0, 0.1).validate().is_err());
        assert!(cfg(-0.1, 0.1).validate().is_err());
        assert!(cfg(0.5, -1.0).validate().is_err());
        assert!(cfg(0.0, 0.0).validate().is_ok());
    }
}
