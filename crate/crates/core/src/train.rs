//! Per-instance training: a free score matrix optimised with Adam through
//! Gumbel-Sinkhorn samples under a global or adaptive temperature.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{build_beta_field, degree_violation_field, normalized_entropies, BetaField, ControllerConfig};
use crate::decode::{hungarian, kendall_tau, metrics, tour_kendall_tau, MetricRecord, Permutation};
use crate::error::{dim_err, Error, Result};
use crate::sinkhorn::{deterministic_assignment, gumbel_sinkhorn_var, SinkhornConfig};
use crate::tasks::{
    distance_matrix, expected_tour_loss, jigsaw_smoothness_loss, monotonicity_loss, soft_reorder, LogitMask,
    TaskInstance, TaskKind, DECODE_MASK, TRAIN_MASK,
};
use crate::tensor::{stream_rng, Matrix, Tape, Var};

const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Exponential,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub kind: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    pub horizon_steps: usize,
}

impl AnnealSchedule {
    pub fn linear(beta_start: f64, beta_end: f64, horizon_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            beta_start,
            beta_end,
            horizon_steps,
        }
    }

    pub fn exponential(beta_start: f64, beta_end: f64, horizon_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Exponential,
            ..Self::linear(beta_start, beta_end, horizon_steps)
        }
    }

    pub fn constant(beta: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            beta_start: beta,
            beta_end: beta,
            horizon_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_start > 0.0 && self.beta_end > 0.0) || !self.beta_start.is_finite() || !self.beta_end.is_finite()
        {
            return Err(Error::Config("schedule endpoints must be positive and finite".into()));
        }
        if self.horizon_steps == 0 && self.kind != ScheduleKind::Constant {
            return Err(Error::Config("schedule horizon must be > 0".into()));
        }
        Ok(())
    }

    /// `beta0` at `step`.
    pub fn at(&self, step: usize) -> f64 {
        if self.kind == ScheduleKind::Constant {
            return self.beta_start;
        }
        if step >= self.horizon_steps {
            return self.beta_end;
        }
        let f = step as f64 / self.horizon_steps as f64;
        match self.kind {
            ScheduleKind::Linear => self.beta_start + (self.beta_end - self.beta_start) * f,
            ScheduleKind::Exponential => self.beta_start * (self.beta_end / self.beta_start).powf(f),
            ScheduleKind::Constant => unreachable!(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Global,
    EntropyAdaptive,
    DegreeAdaptive,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Global => "global",
            Mode::EntropyAdaptive => "entropy_adaptive",
            Mode::DegreeAdaptive => "degree_adaptive",
        }
    }
}

/// Training hyperparameters. `epochs` counts optimisation steps.
///
/// Gumbel noise is drawn from `seed`; `sinkhorn.seed` and
/// `sinkhorn.noise_samples` are ignored in favour of `seed` and
/// `samples_per_step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub samples_per_step: usize,
    pub schedule: AnnealSchedule,
    pub controller: ControllerConfig,
    pub sinkhorn: SinkhornConfig,
    pub init_sigma: f64,
    /// Weight of the successor row-sum penalty (tours only).
    pub row_penalty: f64,
    /// Boundary band half-width (jigsaw only).
    pub band_k: usize,
    /// Decode and record τ every this many steps; 0 decodes only at the end.
    pub decode_every: usize,
    pub scorer: Scorer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::sorting()
    }
}

impl TrainConfig {
    pub fn sorting() -> Self {
        Self {
            learning_rate: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            epochs: 3000,
            samples_per_step: 5,
            schedule: AnnealSchedule::linear(0.3, 2.0, 3000),
            controller: ControllerConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            init_sigma: 0.1,
            row_penalty: 0.0,
            band_k: 1,
            decode_every: 10,
            scorer: Scorer::Pointwise,
            seed: 0,
        }
    }

    pub fn jigsaw() -> Self {
        Self {
            scorer: Scorer::Direct,
            learning_rate: 0.05,
            epochs: 300,
            schedule: AnnealSchedule::linear(0.5, 2.0, 300),
            controller: ControllerConfig {
                h0: 0.6,
                b_max: 0.35,
                ..ControllerConfig::default()
            },
            ..Self::sorting()
        }
    }

    pub fn tsp() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 300,
            samples_per_step: 8,
            schedule: AnnealSchedule::linear(1.0, 5.0, 200),
            controller: ControllerConfig {
                h0: 0.65,
                b_max: 0.1,
                warmup_steps: 30,
                ..ControllerConfig::default()
            },
            sinkhorn: SinkhornConfig::routing(),
            row_penalty: 1.0,
            scorer: Scorer::Direct,
            ..Self::sorting()
        }
    }

    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Sorting | TaskKind::Block => Self::sorting(),
            TaskKind::Jigsaw => Self::jigsaw(),
            TaskKind::Tsp => Self::tsp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        if self.samples_per_step == 0 {
            return Err(Error::Config("samples_per_step must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("invalid Adam constants".into()));
        }
        if !(self.init_sigma >= 0.0) || !(self.row_penalty >= 0.0) {
            return Err(Error::Config("init_sigma and row_penalty must be >= 0".into()));
        }
        self.schedule.validate()?;
        self.controller.validate()?;
        self.sinkhorn.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(dim_err("adam_step", "parameter, gradient and state counts differ"));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if !p.same_shape(g) || !p.same_shape(m) {
            return Err(dim_err("adam_step", format!("{:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.as_slice())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescale so the global L2 norm is at most `clip_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Matrix], clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.iter_mut() {
            g.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Produces the square score matrix from trainable parameters.
pub trait ScoreModel {
    fn params(&self) -> &[Matrix];
    fn params_mut(&mut self) -> &mut [Matrix];
    fn scores<'t>(&self, leaves: &[Var<'t>]) -> Result<Var<'t>>;
    /// Scores evaluated off-tape.
    fn eval(&self) -> Result<Matrix> {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = self.params().iter().map(|p| tape.constant(p.clone())).collect();
        Ok((*self.scores(&leaves)?.value()).clone())
    }
}

/// An unconstrained `n x n` score matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectScores {
    params: [Matrix; 1],
}

impl DirectScores {
    /// Zeros plus seeded Gaussian noise of scale `sigma`.
    pub fn init(n: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, INIT_STREAM);
        let s = Matrix::from_fn(n, n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        });
        Self { params: [s] }
    }

    pub fn from_matrix(s: Matrix) -> Self {
        Self { params: [s] }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.params[0]
    }
}

impl ScoreModel for DirectScores {
    fn params(&self) -> &[Matrix] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    fn scores<'t>(&self, leaves: &[Var<'t>]) -> Result<Var<'t>> {
        Ok(leaves[0])
    }

    fn eval(&self) -> Result<Matrix> {
        Ok(self.params[0].clone())
    }
}

/// Per-element linear scorer: `S = [X, 1] W` with `W` of shape `(d + 1) x n`.
///
/// Every element's row of scores is a function of its own features, so an
/// update learned from one element transfers to elements with similar
/// features. Trained per instance like [`DirectScores`].
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseScores {
    features: Matrix,
    params: [Matrix; 1],
}

impl PointwiseScores {
    pub fn init(x: &Matrix, sigma: f64, seed: u64) -> Self {
        let (n, d) = x.shape();
        let features = Matrix::from_fn(n, d + 1, |i, k| if k < d { x.get(i, k) } else { 1.0 });
        let mut rng = stream_rng(seed, INIT_STREAM);
        let w = Matrix::from_fn(d + 1, n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        });
        Self { features, params: [w] }
    }
}

impl ScoreModel for PointwiseScores {
    fn params(&self) -> &[Matrix] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    fn scores<'t>(&self, leaves: &[Var<'t>]) -> Result<Var<'t>> {
        leaves[0].tape().constant(self.features.clone()).matmul(leaves[0])
    }

    fn eval(&self) -> Result<Matrix> {
        self.features.matmul(&self.params[0])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Free `n x n` scores.
    #[default]
    Direct,
    /// [`PointwiseScores`].
    Pointwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub beta0: f64,
    pub mean_row_entropy: f64,
    pub min_beta: f64,
    pub max_beta: f64,
    pub decoded_tau: Option<f64>,
}

pub const TRACE_HEADER: &str = "step,loss,beta0,mean_row_entropy,min_beta,max_beta,decoded_tau";

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        let tau = r.decoded_tau.map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.loss, r.beta0, r.mean_row_entropy, r.min_beta, r.max_beta, tau
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedResult {
    pub mode: Mode,
    pub scores: Matrix,
    pub permutation: Permutation,
    pub metrics: MetricRecord,
    /// Structural loss of the hard decoding before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub trace: Vec<TraceRow>,
}

/// Everything the loss needs that does not change between steps.
struct Objective<'a> {
    instance: &'a TaskInstance,
    distances: Option<Matrix>,
    row_penalty: f64,
    band_k: usize,
}

impl<'a> Objective<'a> {
    fn new(instance: &'a TaskInstance, cfg: &TrainConfig) -> Self {
        let distances = (instance.kind == TaskKind::Tsp).then(|| distance_matrix(&instance.x));
        Self {
            instance,
            distances,
            row_penalty: cfg.row_penalty,
            band_k: cfg.band_k,
        }
    }

    fn loss<'t>(&self, p: Var<'t>) -> Result<Var<'t>> {
        let tape = p.tape();
        let inst = self.instance;
        match inst.kind {
            TaskKind::Sorting => monotonicity_loss(soft_reorder(p, tape.constant(inst.x.clone()))?),
            TaskKind::Jigsaw => {
                let layout = inst
                    .layout
                    .as_ref()
                    .ok_or_else(|| Error::Config("jigsaw instance without layout".into()))?;
                jigsaw_smoothness_loss(soft_reorder(p, tape.constant(inst.x.clone()))?, layout, self.band_k)
            }
            TaskKind::Tsp => expected_tour_loss(p, self.distances.as_ref().expect("tsp distances"), self.row_penalty),
            TaskKind::Block => Ok(p.mul(tape.constant(inst.x.clone()))?.sum()),
        }
    }

    fn hard_loss(&self, perm: &Permutation) -> Result<f64> {
        let tape = Tape::new();
        Ok(self.loss(tape.constant(perm.to_matrix()))?.item())
    }
}

fn decode(model: &impl ScoreModel, mask: &LogitMask) -> Result<Permutation> {
    hungarian(&mask.apply(&model.eval()?, DECODE_MASK))
}

fn score_tau(kind: TaskKind, pred: &Permutation, truth: &Permutation) -> Result<f64> {
    match kind {
        TaskKind::Tsp => tour_kendall_tau(pred, truth),
        _ => kendall_tau(pred, truth),
    }
}

/// Temperature field for one step. `masked` is the anchored score matrix.
pub fn step_field(mode: Mode, masked: &Matrix, beta0: f64, step: usize, cfg: &TrainConfig) -> Result<BetaField> {
    let n = masked.rows();
    match mode {
        Mode::Global => Ok(BetaField::constant(n, beta0)),
        Mode::EntropyAdaptive => build_beta_field(masked, beta0, &cfg.controller, step, &cfg.sinkhorn),
        Mode::DegreeAdaptive => {
            let q = deterministic_assignment(masked, beta0, cfg.sinkhorn.iterations)?;
            if step < cfg.controller.warmup_steps {
                Ok(BetaField::constant(n, beta0))
            } else {
                degree_violation_field(q.matrix(), beta0, &cfg.controller)
            }
        }
    }
}

/// Train a direct score matrix on one instance.
pub fn train_instance(instance: &TaskInstance, cfg: &TrainConfig, mode: Mode) -> Result<TrainedResult> {
    match cfg.scorer {
        Scorer::Direct => train_model(
            instance,
            cfg,
            mode,
            DirectScores::init(instance.n, cfg.init_sigma, cfg.seed),
        ),
        Scorer::Pointwise => train_model(
            instance,
            cfg,
            mode,
            PointwiseScores::init(&instance.x, cfg.init_sigma, cfg.seed),
        ),
    }
}

pub fn train_model<M: ScoreModel>(
    instance: &TaskInstance,
    cfg: &TrainConfig,
    mode: Mode,
    mut model: M,
) -> Result<TrainedResult> {
    cfg.validate()?;
    instance.validate()?;
    if mode == Mode::DegreeAdaptive && instance.kind != TaskKind::Tsp {
        return Err(Error::Config(format!(
            "degree_adaptive mode needs a tsp instance, got {}",
            instance.kind.name()
        )));
    }
    let objective = Objective::new(instance, cfg);
    let mask = instance.mask();
    let adam = cfg.adam();
    let mut state = AdamState::new(model.params());
    let sinkhorn = SinkhornConfig {
        seed: cfg.seed,
        noise_samples: cfg.samples_per_step,
        ..cfg.sinkhorn.clone()
    };
    let k = cfg.samples_per_step;

    if !model.eval()?.all_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let initial_loss = objective.hard_loss(&decode(&model, &mask)?)?;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for step in 0..cfg.epochs {
        let beta0 = cfg.schedule.at(step);
        let masked = mask.apply(&model.eval()?, TRAIN_MASK);
        let field = step_field(mode, &masked, beta0, step, cfg)?;

        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = model.params().iter().map(|p| tape.param(p.clone())).collect();
        let s = mask.apply_var(model.scores(&leaves)?, TRAIN_MASK)?;
        let mut total: Option<Var<'_>> = None;
        let mut entropy = 0.0;
        for sample in 0..k {
            let counter = (step * k + sample) as u64;
            let p = gumbel_sinkhorn_var(s, &field, &sinkhorn, None, counter)?;
            let (rows, _) = normalized_entropies(&p.value())?;
            entropy += rows.iter().sum::<f64>() / rows.len() as f64;
            let l = objective.loss(p)?;
            total = Some(match total {
                None => l,
                Some(t) => t.add(l)?,
            });
        }
        let loss = total.expect("samples_per_step >= 1").scale(1.0 / k as f64);
        let loss_value = loss.item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite { step });
        }
        let grads = tape.backward(loss);
        let mut g: Vec<Matrix> = leaves.iter().map(|&v| grads.wrt(v)).collect();
        drop(grads);
        clip_gradients(&mut g, cfg.clip_norm);
        if g.iter().any(|m| !m.all_finite()) {
            return Err(Error::NonFinite { step });
        }
        adam_step(model.params_mut(), &g, &mut state, &adam)?;

        let last = step + 1 == cfg.epochs;
        let decode_now = last || (cfg.decode_every > 0 && step % cfg.decode_every == 0);
        let decoded_tau = if decode_now {
            Some(score_tau(instance.kind, &decode(&model, &mask)?, &instance.truth)?)
        } else {
            None
        };
        trace.push(TraceRow {
            step,
            loss: loss_value,
            beta0,
            mean_row_entropy: entropy / k as f64,
            min_beta: field.min(),
            max_beta: field.max(),
            decoded_tau,
        });
    }

    let permutation = decode(&model, &mask)?;
    let final_loss = objective.hard_loss(&permutation)?;
    let record = metrics(&permutation, instance, instance.reference_length, None)?;
    Ok(TrainedResult {
        mode,
        scores: model.eval()?,
        permutation,
        metrics: record,
        initial_loss,
        final_loss,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{generate_instance, InstanceSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn linear_schedule_reference_points() {
        let s = AnnealSchedule::linear(0.66, 2.0, 150);
        assert_eq!(s.at(0), 0.66);
        assert_eq!(s.at(150), 2.0);
        assert_eq!(s.at(1000), 2.0);
        assert_abs_diff_eq!(s.at(75), 1.33, epsilon = 1e-12);
    }

    #[test]
    fn exponential_schedule_is_geometric() {
        let s = AnnealSchedule::exponential(0.5, 1.33, 300);
        assert_eq!(s.at(0), 0.5);
        assert_eq!(s.at(300), 1.33);
        assert_abs_diff_eq!(s.at(150), (0.5f64 * 1.33).sqrt(), epsilon = 1e-12);
        assert!(AnnealSchedule::linear(1.0, 2.0, 0).validate().is_err());
        assert!(AnnealSchedule::constant(1.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn schedule_is_monotone_and_positive(
            a in 0.01f64..10.0, b in 0.01f64..10.0, h in 1usize..400, exp in any::<bool>(),
        ) {
            let s = if exp { AnnealSchedule::exponential(a, b, h) } else { AnnealSchedule::linear(a, b, h) };
            let vals: Vec<f64> = (0..=h + 5).map(|t| s.at(t)).collect();
            prop_assert_eq!(vals[0], a);
            prop_assert_eq!(vals[h], b);
            for w in vals.windows(2) {
                prop_assert!(w[0] > 0.0);
                if b >= a { prop_assert!(w[1] >= w[0] - 1e-12) } else { prop_assert!(w[1] <= w[0] + 1e-12) }
            }
        }

        #[test]
        fn clipping_bounds_norm(vals in proptest::collection::vec(-50.0f64..50.0, 1..40), clip in 0.01f64..5.0) {
            let mut g = vec![Matrix::from_vec(vals.len(), 1, vals.clone()).unwrap()];
            let before = clip_gradients(&mut g, clip);
            let after = global_norm(&g);
            prop_assert!(after <= clip + 1e-12);
            if before <= clip {
                prop_assert_eq!(g[0].as_slice(), &vals[..]);
            }
        }
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![Matrix::from_vec(1, 2, vec![0.0, 2.0]).unwrap()];
        assert_eq!(clip_gradients(&mut g, 1.0), 2.0);
        assert_eq!(g[0].as_slice(), &[0.0, 1.0]);
        let mut z = vec![Matrix::zeros(2, 2)];
        clip_gradients(&mut z, 1.0);
        assert_eq!(z[0], Matrix::zeros(2, 2));
        let mut small = vec![Matrix::from_vec(1, 1, vec![0.3]).unwrap()];
        clip_gradients(&mut small, 1.0);
        assert_eq!(small[0].get(0, 0), 0.3);
    }

    fn adam_cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![Matrix::from_vec(1, 2, vec![1.0, -2.0]).unwrap()];
        let mut st = AdamState::new(&p);
        st.m[0] = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let mut q = p.clone();
        adam_step(&mut q, &[Matrix::zeros(1, 2)], &mut st, &adam_cfg(0.1)).unwrap();
        assert_abs_diff_eq!(st.m[0].get(0, 0), 0.45, epsilon = 1e-15);
        // nonzero first moment still moves parameters; zero moments do not
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Matrix::zeros(1, 2)], &mut st, &adam_cfg(0.1)).unwrap();
        assert_eq!(p[0].as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_bounded_by_lr() {
        let mut p = vec![Matrix::zeros(1, 3)];
        let mut st = AdamState::new(&p);
        let g = Matrix::from_vec(1, 3, vec![3.0, -0.01, 1e-3]).unwrap();
        adam_step(&mut p, std::slice::from_ref(&g), &mut st, &adam_cfg(0.01)).unwrap();
        for k in 0..3 {
            let d = p[0].as_slice()[k];
            assert!(d.abs() <= 0.01 * (1.0 + 1e-6));
            assert_eq!(d.signum(), -g.as_slice()[k].signum());
        }
        assert!(adam_step(&mut p, &[Matrix::zeros(2, 2)], &mut st, &adam_cfg(0.01)).is_err());
    }

    #[test]
    fn adam_constant_gradient_moves_monotonically() {
        let mut p = vec![Matrix::zeros(1, 1)];
        let mut st = AdamState::new(&p);
        let mut prev = 0.0;
        for _ in 0..100 {
            adam_step(&mut p, &[Matrix::scalar(0.7)], &mut st, &adam_cfg(0.01)).unwrap();
            let x = p[0].get(0, 0);
            assert!(x < prev);
            prev = x;
        }
    }

    fn sorting(n: usize, seed: u64) -> TaskInstance {
        generate_instance(&InstanceSpec::Sorting { n, low: 0.0, high: 1.0 }, 0, seed).unwrap()
    }

    #[test]
    fn sorting_five_is_solved() {
        let inst = sorting(5, 0);
        let r = train_instance(&inst, &TrainConfig::sorting(), Mode::Global).unwrap();
        assert_eq!(r.metrics.kendall_tau, 1.0);
        assert_eq!(r.trace.len(), 3000);
    }

    #[test]
    fn zero_boost_matches_global_bitwise() {
        let inst = sorting(8, 3);
        let cfg = TrainConfig {
            epochs: 30,
            controller: ControllerConfig {
                b_max: 0.0,
                ..ControllerConfig::default()
            },
            ..TrainConfig::sorting()
        };
        let a = train_instance(&inst, &cfg, Mode::Global).unwrap();
        let b = train_instance(&inst, &cfg, Mode::EntropyAdaptive).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn training_is_deterministic() {
        let inst = sorting(6, 1);
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::sorting()
        };
        let a = train_instance(&inst, &cfg, Mode::EntropyAdaptive).unwrap();
        let b = train_instance(&inst, &cfg, Mode::EntropyAdaptive).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degree_mode_requires_tsp() {
        let inst = sorting(5, 0);
        assert!(matches!(
            train_instance(&inst, &TrainConfig::sorting(), Mode::DegreeAdaptive),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut inst = sorting(5, 0);
        inst.x.set(2, 0, f64::NAN);
        let r = train_instance(&inst, &TrainConfig::sorting(), Mode::Global);
        assert!(matches!(r, Err(Error::NonFinite { step: 0 })), "{r:?}");
    }

    #[test]
    fn trace_csv_layout() {
        let rows = vec![
            TraceRow {
                step: 0,
                loss: 0.5,
                beta0: 1.0,
                mean_row_entropy: 0.9,
                min_beta: 0.95,
                max_beta: 1.0,
                decoded_tau: Some(0.2),
            },
            TraceRow {
                step: 1,
                loss: 0.25,
                beta0: 1.5,
                mean_row_entropy: 0.8,
                min_beta: 1.5,
                max_beta: 1.5,
                decoded_tau: None,
            },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "0,0.5,1,0.9,0.95,1,0.2");
        assert_eq!(lines[2], "1,0.25,1.5,0.8,1.5,1.5,");
    }
}
