//! Self-contained verification suites with pass/fail outcomes.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::BetaField;
use crate::error::{Error, Result};
use crate::sinkhorn::{gumbel_sinkhorn_var, log_sinkhorn, log_sinkhorn_var, SinkhornConfig};
use crate::tasks::{
    check_beta, compatible_fixture, default_beta_grid, expected_tour_loss, hard_block_closed_form,
    incompatible_fixture, jigsaw_smoothness_loss, monotonicity_loss, proposition1_bounds, soft_reorder, tsp_tour_loss,
    verify_no_global_beta, JigsawLayout, BLOCK_SINKHORN_ITERS,
};
use crate::tensor::{gradcheck, stream_rng, Axis, Matrix, ReduceAxis, ReduceKind, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    ClosedForm,
    Prop1,
    Prop2,
    Gradcheck,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_form" => Ok(Suite::ClosedForm),
            "prop1" => Ok(Suite::Prop1),
            "prop2" => Ok(Suite::Prop2),
            "gradcheck" => Ok(Suite::Gradcheck),
            other => Err(Error::Config(format!("unknown verification suite '{other}'"))),
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<CheckOutcome>> {
    match suite {
        Suite::ClosedForm => closed_form(),
        Suite::Prop1 => prop1(),
        Suite::Prop2 => prop2(20, 1000, 0),
        Suite::Gradcheck => gradient_checks(50, 0),
    }
}

pub const CLOSED_FORM_TOL: f64 = 1e-6;

/// Hard-block closed form against Sinkhorn over β × δ × n₂.
pub fn closed_form() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for &beta in &[0.5, 1.0, 2.0, 5.0] {
        for &delta in &[0.05, 0.2, 2f64.ln()] {
            for &n2 in &[2usize, 3, 6] {
                let cost = Matrix::from_fn(n2, n2, |i, j| if i == j { 0.0 } else { delta });
                let p = log_sinkhorn(&cost.scale(-beta), BLOCK_SINKHORN_ITERS)?;
                let (a, b) = hard_block_closed_form(n2, beta, delta)?;
                let want = Matrix::from_fn(n2, n2, |i, j| if i == j { a } else { b });
                let err = p.matrix().max_abs_diff(&want);
                out.push(CheckOutcome::new(
                    format!("closed_form beta={beta} delta={delta:.4} n2={n2}"),
                    err < CLOSED_FORM_TOL && p.residual() < 1e-10,
                    format!("max error {err:.2e}, residual {:.2e}", p.residual()),
                ));
            }
        }
    }
    Ok(out)
}

pub fn prop1() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let (spec, eps, eta) = incompatible_fixture();
    let bounds = proposition1_bounds(&spec, eps, eta)?;
    let grid = default_beta_grid(&bounds, 100)?;
    let report = verify_no_global_beta(&spec, eps, eta, &grid)?;
    let feasible = report.feasible();
    out.push(CheckOutcome::new(
        "prop1 incompatible spec",
        bounds.incompatible() && feasible.is_empty(),
        format!(
            "beta_lower {:.4} > beta_upper {:.4}; {} of {} grid points feasible{}",
            bounds.beta_lower,
            bounds.beta_upper,
            feasible.len(),
            grid.len(),
            if feasible.is_empty() { " (no feasible beta)" } else { "" }
        ),
    ));

    let probe = check_beta(&spec, eps, eta, 2.0 * bounds.beta_lower)?;
    out.push(CheckOutcome::new(
        "prop1 beta = 2 * beta_lower",
        probe.easy_sharp && !probe.hard_diffuse,
        format!(
            "easy diagonal {:.4}, hard diagonal {:.4}",
            probe.min_easy_diagonal, probe.max_hard_diagonal
        ),
    ));

    let (spec, eps, eta) = compatible_fixture();
    let bounds = proposition1_bounds(&spec, eps, eta)?;
    let grid = default_beta_grid(&bounds, 100)?;
    let report = verify_no_global_beta(&spec, eps, eta, &grid)?;
    let feasible = report.feasible();
    let range = match (feasible.first(), feasible.last()) {
        (Some(a), Some(b)) => format!("[{a:.3}, {b:.3}]"),
        _ => "none".into(),
    };
    out.push(CheckOutcome::new(
        "prop1 compatible control",
        !feasible.is_empty(),
        format!(
            "bounds {:.4} / {:.4}; {} feasible grid points, range {range}",
            bounds.beta_lower,
            bounds.beta_upper,
            feasible.len()
        ),
    ));
    Ok(out)
}

/// `Σ β C P + Σ P ln P`, with `0 ln 0 = 0`.
pub fn regularized_objective(beta: &Matrix, cost: &Matrix, p: &Matrix) -> f64 {
    let mut total = 0.0;
    for k in 0..p.len() {
        let x = p.as_slice()[k];
        total += beta.as_slice()[k] * cost.as_slice()[k] * x;
        if x > 0.0 {
            total += x * x.ln();
        }
    }
    total
}

fn random_doubly_stochastic(n: usize, rng: &mut impl Rng, near: &Matrix) -> Result<Matrix> {
    match rng.random_range(0..3) {
        // convex combination of permutation matrices
        0 => {
            let k = rng.random_range(1..=2 * n);
            let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            let mut m = Matrix::zeros(n, n);
            let mut perm: Vec<usize> = (0..n).collect();
            for wi in w {
                perm.shuffle(rng);
                for (i, &j) in perm.iter().enumerate() {
                    m.set(i, j, m.get(i, j) + wi / total);
                }
            }
            Ok(m)
        }
        // Sinkhorn of random logits at a random scale
        1 => {
            let scale = rng.random_range(0.1..8.0);
            let z = Matrix::from_fn(n, n, |_, _| scale * (rng.random::<f64>() - 0.5));
            Ok(log_sinkhorn(&z, 300)?.into_matrix())
        }
        // small perturbation of the candidate optimum
        _ => {
            let eps = rng.random_range(1e-4..0.3);
            let z = near.map(|x| x.max(1e-300).ln());
            let z = Matrix::from_fn(n, n, |i, j| z.get(i, j) + eps * (rng.random::<f64>() - 0.5));
            Ok(log_sinkhorn(&z, 300)?.into_matrix())
        }
    }
}

/// Sinkhorn(β ⊙ S) against random doubly stochastic competitors on the
/// entropic objective with cost `-S`.
pub fn prop2(problems: usize, competitors: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let n = 5;
    for prob in 0..problems {
        let mut rng = stream_rng(seed, prob as u64);
        let s = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let beta = Matrix::from_fn(n, n, |_, _| rng.random_range(0.2..3.0));
        let cost = s.scale(-1.0);
        let p_star = log_sinkhorn(&beta.hadamard(&s)?, 1000)?;
        let f_star = regularized_objective(&beta, &cost, p_star.matrix());
        let mut worst_margin = f64::INFINITY;
        for _ in 0..competitors {
            let q = random_doubly_stochastic(n, &mut rng, p_star.matrix())?;
            let f = regularized_objective(&beta, &cost, &q);
            worst_margin = worst_margin.min(f - f_star);
        }
        out.push(CheckOutcome::new(
            format!("prop2 problem {prob}"),
            worst_margin >= -1e-9,
            format!(
                "objective {f_star:.6}, smallest competitor margin {worst_margin:.3e}, residual {:.1e}",
                p_star.residual()
            ),
        ));
    }
    Ok(out)
}

pub const GRADCHECK_TOL: f64 = 1e-4;

type Case = Box<dyn for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>>;
type CaseBuilder = Box<dyn Fn(&mut rand_chacha::ChaCha8Rng, &Matrix) -> Case>;

struct GradCase {
    name: &'static str,
    /// Input sampler: (rng) -> input matrix
    input: Box<dyn Fn(&mut rand_chacha::ChaCha8Rng) -> Matrix>,
    /// Loss builder given a side constant drawn with the input.
    build: CaseBuilder,
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Fn(&mut rand_chacha::ChaCha8Rng) -> Matrix {
    move |rng| Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Uniform magnitudes in `[lo, hi]` with random sign, keeping away from 0.
fn signed(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Fn(&mut rand_chacha::ChaCha8Rng) -> Matrix {
    move |rng| {
        Matrix::from_fn(rows, cols, |_, _| {
            let m = rng.random_range(lo..hi);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
    }
}

fn const_like(rng: &mut rand_chacha::ChaCha8Rng, m: &Matrix, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |_, _| rng.random_range(lo..hi))
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn weighted<'t>(y: Var<'t>, w: &Matrix) -> Result<Var<'t>> {
    Ok(y.mul(y.tape().constant(w.clone()))?.sum())
}

fn cases() -> Vec<GradCase> {
    fn case(
        name: &'static str,
        input: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Matrix + 'static,
        build: impl Fn(&mut rand_chacha::ChaCha8Rng, &Matrix) -> Case + 'static,
    ) -> GradCase {
        GradCase {
            name,
            input: Box::new(input),
            build: Box::new(build),
        }
    }
    let mut v = vec![
        case("add", uniform(3, 4, -1.0, 1.0), |rng, x| {
            let (c, w) = (const_like(rng, x, -1.0, 1.0), const_like(rng, x, -1.0, 1.0));
            Box::new(move |t, x| weighted(x.add(t.constant(c.clone()))?, &w))
        }),
        case("sub", uniform(3, 4, -1.0, 1.0), |rng, x| {
            let (c, w) = (const_like(rng, x, -1.0, 1.0), const_like(rng, x, -1.0, 1.0));
            Box::new(move |t, x| weighted(t.constant(c.clone()).sub(x)?, &w))
        }),
        case("mul", uniform(3, 4, -1.0, 1.0), |rng, x| {
            let (c, w) = (const_like(rng, x, -1.0, 1.0), const_like(rng, x, -1.0, 1.0));
            Box::new(move |t, x| weighted(x.mul(t.constant(c.clone()))?.mul(x)?, &w))
        }),
        case("div", uniform(3, 4, 0.5, 2.0), |rng, x| {
            let (c, w) = (const_like(rng, x, -1.0, 1.0), const_like(rng, x, -1.0, 1.0));
            Box::new(move |t, x| weighted(t.constant(c.clone()).div(x)?.add(x.div(x.square())?)?, &w))
        }),
        case("neg_scale_add_scalar", uniform(2, 5, -1.0, 1.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(x.neg().scale(1.7).add_scalar(0.3).mul(x)?, &w))
        }),
        case("exp", uniform(3, 3, -1.0, 1.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(x.exp(), &w))
        }),
        case("log", uniform(3, 3, 0.2, 3.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(x.log()?, &w))
        }),
        case("relu", signed(4, 3, 0.05, 1.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(x.relu(), &w))
        }),
        case("square", uniform(3, 3, -1.0, 1.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(x.square(), &w))
        }),
        case("sqrt", uniform(3, 3, 0.2, 3.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(x.sqrt()?, &w))
        }),
        case("matmul", uniform(3, 4, -1.0, 1.0), |rng, x| {
            let a = Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = Matrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
            let w = Matrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
            let _ = x;
            Box::new(move |t, x| weighted(t.constant(a.clone()).matmul(x)?.matmul(t.constant(b.clone()))?, &w))
        }),
        case("transpose", uniform(3, 4, -1.0, 1.0), |rng, _| {
            let w = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
            Box::new(move |_, x| weighted(x.transpose().square(), &w))
        }),
        case("log_softmax_row", uniform(4, 4, -2.0, 2.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(x.log_softmax(Axis::Row), &w))
        }),
        case("log_softmax_col", uniform(4, 4, -2.0, 2.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(x.log_softmax(Axis::Col), &w))
        }),
        case("reduce_sum_mean", uniform(3, 5, -1.0, 1.0), |rng, _| {
            let wr = Matrix::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0));
            let wc = Matrix::from_fn(1, 5, |_, _| rng.random_range(-1.0..1.0));
            Box::new(move |_, x| {
                let sq = x.square();
                let r = weighted(sq.reduce(ReduceKind::Sum, ReduceAxis::Row), &wr)?;
                let c = weighted(sq.reduce(ReduceKind::Mean, ReduceAxis::Col), &wc)?;
                r.add(c)?.add(sq.mean())
            })
        }),
        case("gather", uniform(3, 3, -1.0, 1.0), |rng, _| {
            let idx: Rc<[usize]> = (0..12).map(|_| rng.random_range(0..9)).collect();
            let w = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
            Box::new(move |_, x| weighted(x.gather(idx.clone(), 4, 3)?.square(), &w))
        }),
        case("log_sinkhorn", uniform(5, 5, -2.0, 2.0), |rng, x| {
            let w = const_like(rng, x, -1.0, 1.0);
            Box::new(move |_, x| weighted(log_sinkhorn_var(x, 10)?, &w))
        }),
    ];

    v.push(case(
        "sorting_through_gumbel_sinkhorn",
        uniform(6, 6, -1.0, 1.0),
        |rng, _| {
            let xs = Matrix::from_fn(6, 1, |_, _| rng.random_range(0.0..1.0));
            let noise = Matrix::from_fn(6, 6, |_, _| crate::tensor::gumbel(rng.random()));
            let beta = BetaField::from_entries(1.0, Matrix::from_fn(6, 6, |_, _| rng.random_range(0.5..2.0)));
            Box::new(move |t, s| {
                let p = gumbel_sinkhorn_var(s, &beta, &SinkhornConfig::default(), Some(&noise), 0)?;
                monotonicity_loss(soft_reorder(p, t.constant(xs.clone()))?)
            })
        },
    ));
    v.push(case("jigsaw_through_sinkhorn", uniform(4, 4, -1.0, 1.0), |rng, _| {
        let layout = JigsawLayout::for_image(4, 4, 2).expect("layout");
        let tiles = Matrix::from_fn(4, 4, |_, _| rng.random_range(0.0..1.0));
        Box::new(move |t, s| {
            let p = log_sinkhorn_var(s.scale(1.5), 10)?;
            let x_hat = soft_reorder(p, t.constant(tiles.clone()))?;
            let a = jigsaw_smoothness_loss(x_hat, &layout, 1)?;
            a.add(jigsaw_smoothness_loss(x_hat, &layout, 2)?)
        })
    }));
    v.push(case("tsp_through_sinkhorn", uniform(5, 5, -1.0, 1.0), |rng, _| {
        let coords = Matrix::from_fn(5, 2, |_, _| rng.random_range(-0.5..0.5));
        let dist = crate::tasks::distance_matrix(&coords);
        Box::new(move |t, s| {
            let p = log_sinkhorn_var(s.scale(2.0), 20)?;
            let expected = expected_tour_loss(p, &dist, 1.0)?;
            let direct = tsp_tour_loss(soft_reorder(p, t.constant(coords.clone()))?)?;
            expected.add(direct)
        })
    }));
    v
}

/// Finite-difference check of every primitive and composed loss path.
pub fn gradient_checks(cases_per_op: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (op_index, gc) in cases().into_iter().enumerate() {
        let mut worst = 0.0f64;
        for c in 0..cases_per_op {
            let mut rng = stream_rng(seed ^ 0x5eed, (op_index * 100_000 + c) as u64);
            let x = (gc.input)(&mut rng);
            let f = (gc.build)(&mut rng, &x);
            let r = gradcheck::check(&x, gradcheck::DEFAULT_STEP, |t, v| f(t, v))?;
            worst = worst.max(r.relative_error);
        }
        out.push(CheckOutcome::new(
            format!("gradcheck {}", gc.name),
            worst < GRADCHECK_TOL,
            format!("{cases_per_op} cases, max relative error {worst:.2e}"),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_suite_passes() {
        let r = closed_form().unwrap();
        assert_eq!(r.len(), 36);
        assert!(r.iter().all(|c| c.passed), "{r:?}");
    }

    #[test]
    fn prop1_suite_passes() {
        let r = prop1().unwrap();
        assert!(r.iter().all(|c| c.passed), "{r:?}");
        assert!(r[0].detail.contains("no feasible beta"));
    }

    #[test]
    fn prop2_suite_small() {
        let r = prop2(3, 200, 1).unwrap();
        assert!(r.iter().all(|c| c.passed), "{r:?}");
    }

    #[test]
    fn gradcheck_suite_small() {
        let r = gradient_checks(3, 2).unwrap();
        assert!(r.iter().all(|c| c.passed), "{r:?}");
    }

    #[test]
    fn objective_counts_zero_entries() {
        let p = Matrix::identity(3);
        let beta = Matrix::ones(3, 3);
        let cost = Matrix::from_fn(3, 3, |i, j| (i + j) as f64);
        assert_eq!(regularized_objective(&beta, &cost, &p), 0.0 + 2.0 + 4.0);
        assert!("prop3".parse::<Suite>().is_err());
        assert_eq!("gradcheck".parse::<Suite>().unwrap(), Suite::Gradcheck);
    }
}
