//! Log-space Sinkhorn normalisation and Gumbel-Sinkhorn sampling.
//!
//! Every iteration is a row log-softmax followed by a column log-softmax,
//! so column sums of the output are exact and the row-sum error is reported
//! as [`SoftPermutation::residual`]. There is no early exit: the iteration
//! count is fixed so that gradients are deterministic.
//!
//! Functions come in pairs: a plain [`Matrix`] version and a `_var` version
//! recording onto a [`Tape`](crate::tensor::Tape). Both run the same
//! kernels, so their forward values agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::controller::BetaField;
use crate::error::{dim_err, domain_err, Error, Result};
use crate::tensor::{gumbel_noise, Axis, Matrix, Var};

/// Doubly stochastic matrix produced by Sinkhorn.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPermutation {
    matrix: Matrix,
    residual: f64,
}

impl SoftPermutation {
    pub fn from_matrix(matrix: Matrix) -> Self {
        let residual = matrix
            .row_sums()
            .into_iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max);
        Self { matrix, residual }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Max absolute deviation of row sums from 1.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn col_residual(&self) -> f64 {
        self.matrix
            .col_sums()
            .into_iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    pub iterations: usize,
    pub noise_samples: usize,
    pub seed: u64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            noise_samples: 1,
            seed: 0,
        }
    }
}

impl SinkhornConfig {
    /// Routing problems use 50 iterations.
    pub fn routing() -> Self {
        Self {
            iterations: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("sinkhorn iterations must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_square(op: &'static str, m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(dim_err(op, format!("expected square, got {:?}", m.shape())));
    }
    Ok(())
}

fn check_iterations(op: &'static str, iterations: usize) -> Result<()> {
    if iterations == 0 {
        return Err(domain_err(op, "iterations must be >= 1"));
    }
    Ok(())
}

/// `exp` of `z` after `iterations` alternating row/column log-normalisations.
pub fn log_sinkhorn(z: &Matrix, iterations: usize) -> Result<SoftPermutation> {
    check_square("log_sinkhorn", z)?;
    check_iterations("log_sinkhorn", iterations)?;
    let mut l = z.clone();
    for _ in 0..iterations {
        l.log_softmax_in_place(Axis::Row);
        l.log_softmax_in_place(Axis::Col);
    }
    Ok(SoftPermutation::from_matrix(l.map(f64::exp)))
}

/// Differentiable [`log_sinkhorn`].
pub fn log_sinkhorn_var<'t>(z: Var<'t>, iterations: usize) -> Result<Var<'t>> {
    check_square("log_sinkhorn", &z.value())?;
    check_iterations("log_sinkhorn", iterations)?;
    let mut l = z;
    for _ in 0..iterations {
        l = l.log_softmax(Axis::Row).log_softmax(Axis::Col);
    }
    Ok(l.exp())
}

fn check_gumbel_inputs(s: &Matrix, beta: &Matrix, noise: Option<&Matrix>) -> Result<()> {
    check_square("gumbel_sinkhorn", s)?;
    if !beta.same_shape(s) {
        return Err(dim_err("gumbel_sinkhorn", "beta field shape differs from scores"));
    }
    if let Some(g) = noise {
        if !g.same_shape(s) {
            return Err(dim_err("gumbel_sinkhorn", "noise shape differs from scores"));
        }
    }
    if beta.as_slice().iter().any(|&b| !(b > 0.0)) {
        return Err(domain_err("gumbel_sinkhorn", "beta entries must be > 0"));
    }
    Ok(())
}

fn resolve_noise(s: &Matrix, cfg: &SinkhornConfig, noise: Option<&Matrix>, counter: u64) -> Matrix {
    match noise {
        Some(g) => g.clone(),
        None => gumbel_noise(s.rows(), s.cols(), cfg.seed, counter),
    }
}

/// Perturbed, temperature-scaled logits `beta ⊙ (S + g)`.
///
/// When `noise` is `None`, fresh noise is drawn from stream `(cfg.seed, counter)`.
pub fn gumbel_logits(
    s: &Matrix,
    beta: &BetaField,
    cfg: &SinkhornConfig,
    noise: Option<&Matrix>,
    counter: u64,
) -> Result<Matrix> {
    check_gumbel_inputs(s, beta.entries(), noise)?;
    let g = resolve_noise(s, cfg, noise, counter);
    beta.entries().hadamard(&s.add(&g)?)
}

/// Tape version of [`gumbel_logits`]; only `s` carries gradient.
pub fn gumbel_logits_var<'t>(
    s: Var<'t>,
    beta: &BetaField,
    cfg: &SinkhornConfig,
    noise: Option<&Matrix>,
    counter: u64,
) -> Result<Var<'t>> {
    let sv = s.value();
    check_gumbel_inputs(&sv, beta.entries(), noise)?;
    let tape = s.tape();
    let g = tape.constant(resolve_noise(&sv, cfg, noise, counter));
    let b = tape.constant(beta.entries().clone());
    b.mul(s.add(g)?)
}

/// `Sinkhorn(beta ⊙ (S + g))`.
pub fn gumbel_sinkhorn(
    s: &Matrix,
    beta: &BetaField,
    cfg: &SinkhornConfig,
    noise: Option<&Matrix>,
    counter: u64,
) -> Result<SoftPermutation> {
    cfg.validate()?;
    log_sinkhorn(&gumbel_logits(s, beta, cfg, noise, counter)?, cfg.iterations)
}

pub fn gumbel_sinkhorn_var<'t>(
    s: Var<'t>,
    beta: &BetaField,
    cfg: &SinkhornConfig,
    noise: Option<&Matrix>,
    counter: u64,
) -> Result<Var<'t>> {
    cfg.validate()?;
    log_sinkhorn_var(gumbel_logits_var(s, beta, cfg, noise, counter)?, cfg.iterations)
}

/// Noise-free `Q = Sinkhorn(beta0 · S)` used by the temperature controller.
/// Computed off-tape, so nothing flows back into `S`.
pub fn deterministic_assignment(s: &Matrix, beta0: f64, iterations: usize) -> Result<SoftPermutation> {
    if !(beta0 > 0.0) {
        return Err(domain_err("deterministic_assignment", "beta0 must be > 0"));
    }
    log_sinkhorn(&s.scale(beta0), iterations)
}

/// On-tape variant with an explicit stop-gradient on the scores.
pub fn deterministic_assignment_var<'t>(s: Var<'t>, beta0: f64, iterations: usize) -> Result<Var<'t>> {
    if !(beta0 > 0.0) {
        return Err(domain_err("deterministic_assignment", "beta0 must be > 0"));
    }
    log_sinkhorn_var(s.stop_gradient().scale(beta0), iterations)
}
