//! Block-ambiguous assignment fixtures and the global-temperature bounds.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::sinkhorn::log_sinkhorn;
use crate::tensor::Matrix;

/// Easy `n1 x n1` block with margin `delta_easy`, hard `n2 x n2` block with
/// margin `delta_hard`, cross-block cost `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockAmbiguousSpec {
    pub n1: usize,
    pub n2: usize,
    pub delta_easy: f64,
    pub delta_hard: f64,
    pub m: f64,
}

impl BlockAmbiguousSpec {
    /// Spec with the cross-block cost defaulted to `10 * delta_easy`.
    pub fn new(n1: usize, n2: usize, delta_easy: f64, delta_hard: f64) -> Self {
        Self {
            n1,
            n2,
            delta_easy,
            delta_hard,
            m: 10.0 * delta_easy,
        }
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::Config("block sizes must be positive".into()));
        }
        if !(self.delta_easy > 0.0 && self.delta_hard > 0.0) {
            return Err(Error::Config("block margins must be positive".into()));
        }
        if !(self.m >= 2.0 * self.delta_easy) {
            return Err(Error::Config(format!(
                "cross-block cost {} below 2 * delta_easy",
                self.m
            )));
        }
        Ok(())
    }
}

pub fn block_cost_matrix(spec: &BlockAmbiguousSpec) -> Result<Matrix> {
    spec.validate()?;
    let n1 = spec.n1;
    Ok(Matrix::from_fn(spec.n(), spec.n(), |i, j| match (i < n1, j < n1) {
        _ if i == j => 0.0,
        (true, true) => spec.delta_easy,
        (false, false) => spec.delta_hard,
        _ => spec.m,
    }))
}

/// Diagonal `a` and off-diagonal `b` of Sinkhorn(-beta C) on an isolated
/// symmetric block with margin `delta`.
pub fn hard_block_closed_form(n2: usize, beta: f64, delta: f64) -> Result<(f64, f64)> {
    if n2 < 2 || !(beta > 0.0) || !(delta > 0.0) {
        return Err(domain_err(
            "hard_block_closed_form",
            format!("need n2 >= 2, beta > 0, delta > 0 (got {n2}, {beta}, {delta})"),
        ));
    }
    let k = (n2 - 1) as f64;
    let a = 1.0 / (1.0 + k * (-beta * delta).exp());
    Ok((a, (1.0 - a) / k))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropositionBounds {
    pub epsilon: f64,
    pub eta: f64,
    pub beta_lower: f64,
    pub beta_upper: f64,
}

impl PropositionBounds {
    pub fn incompatible(&self) -> bool {
        self.beta_lower > self.beta_upper
    }
}

pub fn proposition1_bounds(spec: &BlockAmbiguousSpec, epsilon: f64, eta: f64) -> Result<PropositionBounds> {
    spec.validate()?;
    let open_half = |v: f64| v > 0.0 && v < 0.5;
    if !open_half(epsilon) || !open_half(eta) {
        return Err(domain_err(
            "proposition1_bounds",
            "epsilon and eta must lie in (0, 1/2)",
        ));
    }
    if spec.n1 < 2 || spec.n2 < 2 {
        return Err(domain_err("proposition1_bounds", "both blocks need at least two rows"));
    }
    let beta_lower = (((spec.n1 - 1) as f64) / epsilon).ln() / spec.delta_easy;
    let beta_upper = (((spec.n2 - 1) as f64) * (1.0 - eta) / eta).ln() / spec.delta_hard;
    Ok(PropositionBounds {
        epsilon,
        eta,
        beta_lower,
        beta_upper,
    })
}

/// `points` values spaced uniformly in log between `lo` and `hi` inclusive.
pub fn log_uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err(domain_err(
            "log_uniform_grid",
            format!("[{lo}, {hi}] with {points} points"),
        ));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
        .collect())
}

pub const BLOCK_SINKHORN_ITERS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaCheck {
    pub beta: f64,
    pub min_easy_diagonal: f64,
    pub max_hard_diagonal: f64,
    pub easy_sharp: bool,
    pub hard_diffuse: bool,
}

impl BetaCheck {
    pub fn feasible(&self) -> bool {
        self.easy_sharp && self.hard_diffuse
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalBetaReport {
    pub bounds: PropositionBounds,
    pub checks: Vec<BetaCheck>,
}

impl GlobalBetaReport {
    pub fn feasible(&self) -> Vec<f64> {
        self.checks.iter().filter(|c| c.feasible()).map(|c| c.beta).collect()
    }

    pub fn any_feasible(&self) -> bool {
        self.checks.iter().any(BetaCheck::feasible)
    }
}

/// Evaluate both block conditions on `Sinkhorn(-beta C)` at one beta.
pub fn check_beta(spec: &BlockAmbiguousSpec, epsilon: f64, eta: f64, beta: f64) -> Result<BetaCheck> {
    let cost = block_cost_matrix(spec)?;
    let p = log_sinkhorn(&cost.scale(-beta), BLOCK_SINKHORN_ITERS)?.into_matrix();
    let min_easy_diagonal = (0..spec.n1).map(|i| p.get(i, i)).fold(f64::INFINITY, f64::min);
    let max_hard_diagonal = (spec.n1..spec.n())
        .map(|i| p.get(i, i))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BetaCheck {
        beta,
        min_easy_diagonal,
        max_hard_diagonal,
        easy_sharp: min_easy_diagonal >= 1.0 - epsilon,
        hard_diffuse: max_hard_diagonal <= 1.0 - eta,
    })
}

pub fn verify_no_global_beta(
    spec: &BlockAmbiguousSpec,
    epsilon: f64,
    eta: f64,
    beta_grid: &[f64],
) -> Result<GlobalBetaReport> {
    let bounds = proposition1_bounds(spec, epsilon, eta)?;
    let checks = beta_grid
        .iter()
        .map(|&beta| check_beta(spec, epsilon, eta, beta))
        .collect::<Result<_>>()?;
    Ok(GlobalBetaReport { bounds, checks })
}

/// Grid over `[min(bounds)/10, max(bounds)*10]`.
pub fn default_beta_grid(bounds: &PropositionBounds, points: usize) -> Result<Vec<f64>> {
    let lo = bounds.beta_lower.min(bounds.beta_upper) / 10.0;
    let hi = bounds.beta_lower.max(bounds.beta_upper) * 10.0;
    log_uniform_grid(lo, hi, points)
}

/// Two-by-two blocks, margins 1 and 0.1, epsilon 0.1, eta 0.49.
pub fn incompatible_fixture() -> (BlockAmbiguousSpec, f64, f64) {
    (BlockAmbiguousSpec::new(2, 2, 1.0, 0.1), 0.1, 0.49)
}

/// Four-by-four blocks with equal margins, epsilon 0.2, eta 0.05.
pub fn compatible_fixture() -> (BlockAmbiguousSpec, f64, f64) {
    (BlockAmbiguousSpec::new(4, 4, 1.0, 1.0), 0.2, 0.05)
}
