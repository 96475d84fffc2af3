use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{tour_length, JigsawLayout};
use super::theory::{block_cost_matrix, BlockAmbiguousSpec};
use crate::decode::Permutation;
use crate::error::{domain_err, Error, Result};
use crate::tensor::{stream_rng, Matrix, Var};

const DATA_STREAM: u64 = 1 << 62;
const ANCHOR_STREAM: u64 = DATA_STREAM + 1;
const SCRAMBLE_STREAM: u64 = DATA_STREAM + 2;

/// Largest tour size solved exactly; above it the reference is heuristic.
pub const EXACT_TOUR_LIMIT: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sorting,
    Jigsaw,
    Tsp,
    Block,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Sorting => "sorting",
            TaskKind::Jigsaw => "jigsaw",
            TaskKind::Tsp => "tsp",
            TaskKind::Block => "block",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub element: usize,
    pub position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    /// `a*x + b*y` with seeded, distinct slopes.
    #[default]
    Ramp,
    /// A smooth low-frequency mixture of sinusoids.
    Gradient,
}

/// Generator parameters for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSpec {
    Sorting {
        n: usize,
        #[serde(default)]
        low: f64,
        #[serde(default = "one")]
        high: f64,
    },
    Jigsaw {
        grid: usize,
        #[serde(default = "default_tile")]
        tile: usize,
        #[serde(default)]
        image: ImageKind,
    },
    Tsp {
        n: usize,
    },
    Block {
        #[serde(flatten)]
        spec: BlockAmbiguousSpec,
    },
}

fn one() -> f64 {
    1.0
}

fn default_tile() -> usize {
    4
}

impl InstanceSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            InstanceSpec::Sorting { .. } => TaskKind::Sorting,
            InstanceSpec::Jigsaw { .. } => TaskKind::Jigsaw,
            InstanceSpec::Tsp { .. } => TaskKind::Tsp,
            InstanceSpec::Block { .. } => TaskKind::Block,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            InstanceSpec::Sorting { n, .. } | InstanceSpec::Tsp { n } => *n,
            InstanceSpec::Jigsaw { grid, .. } => grid * grid,
            InstanceSpec::Block { spec } => spec.n(),
        }
    }
}

/// One unordered set of elements plus what is needed to score a reordering.
///
/// `x` holds one element per row. `truth` maps each element to its correct
/// position (for tours: its index in a reference tour starting anywhere).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub n: usize,
    pub x: Matrix,
    pub anchors: Vec<Anchor>,
    pub truth: Permutation,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<JigsawLayout>,
    /// Length of `truth` as a tour; exact when `n <= EXACT_TOUR_LIMIT`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_length: Option<f64>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<()> {
        if self.x.rows() != self.n || self.truth.len() != self.n {
            return Err(Error::Config(format!("instance arrays disagree with n = {}", self.n)));
        }
        let mut elem = vec![false; self.n];
        let mut pos = vec![false; self.n];
        for a in &self.anchors {
            if a.element >= self.n || a.position >= self.n {
                return Err(Error::Config(format!("anchor {a:?} out of range")));
            }
            if std::mem::replace(&mut elem[a.element], true) || std::mem::replace(&mut pos[a.position], true) {
                return Err(Error::Config(format!("anchor {a:?} collides with another anchor")));
            }
            if self.kind != TaskKind::Tsp && self.truth.get(a.element) != a.position {
                return Err(Error::Config(format!("anchor {a:?} disagrees with truth")));
            }
        }
        if self.kind == TaskKind::Jigsaw {
            let layout = self
                .layout
                .ok_or_else(|| Error::Config("jigsaw instance without layout".into()))?;
            if layout.tiles() != self.n || layout.tile_pixels() != self.x.cols() {
                return Err(Error::Config("jigsaw layout disagrees with tiles".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn mask(&self) -> LogitMask {
        LogitMask::new(self.n, &self.anchors)
    }

    /// Sorting instance over caller-supplied values, no anchors.
    pub fn sorting(values: &[f64]) -> Result<Self> {
        if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
            return Err(domain_err("sorting instance", "need at least 2 finite values"));
        }
        let inst = Self {
            kind: TaskKind::Sorting,
            n: values.len(),
            x: Matrix::from_vec(values.len(), 1, values.to_vec())?,
            anchors: Vec::new(),
            truth: rank(values)?,
            seed: 0,
            layout: None,
            reference_length: None,
        };
        inst.validate()?;
        Ok(inst)
    }
}

pub fn generate_instance(spec: &InstanceSpec, anchors: usize, seed: u64) -> Result<TaskInstance> {
    let n = spec.n();
    if n < 2 {
        return Err(domain_err(
            "generate_instance",
            format!("need at least 2 elements, got {n}"),
        ));
    }
    if anchors >= n {
        return Err(domain_err(
            "generate_instance",
            format!("anchor count {anchors} must be < n = {n}"),
        ));
    }
    let mut rng = stream_rng(seed, DATA_STREAM);
    let mut layout = None;
    let mut reference_length = None;
    let (x, truth) = match *spec {
        InstanceSpec::Sorting { n, low, high } => {
            if !(low < high) || !low.is_finite() || !high.is_finite() {
                return Err(domain_err(
                    "generate_instance",
                    format!("bad value range [{low}, {high}]"),
                ));
            }
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(low..high)).collect();
            let truth = rank(&values)?;
            (Matrix::from_vec(n, 1, values)?, truth)
        }
        InstanceSpec::Jigsaw { grid, tile, image } => {
            if grid < 2 || tile == 0 {
                return Err(domain_err("generate_instance", "jigsaw needs grid >= 2 and tile >= 1"));
            }
            let side = grid * tile;
            let img = synthetic_image(side, side, image, &mut rng);
            let lay = JigsawLayout::for_image(side, side, grid)?;
            let tiles = lay.cut(&img)?;
            let mut mapping: Vec<usize> = (0..n).collect();
            mapping.shuffle(&mut stream_rng(seed, SCRAMBLE_STREAM));
            let truth = Permutation::new(mapping)?;
            let x = Matrix::from_fn(n, tiles.cols(), |e, k| tiles.get(truth.get(e), k));
            layout = Some(lay);
            (x, truth)
        }
        InstanceSpec::Tsp { n } => {
            let mut coords = Matrix::from_fn(n, 2, |_, _| rng.random::<f64>());
            for d in 0..2 {
                let mean = coords.col(d).iter().sum::<f64>() / n as f64;
                for i in 0..n {
                    coords.set(i, d, coords.get(i, d) - mean);
                }
            }
            let (order, length) = if n <= EXACT_TOUR_LIMIT {
                brute_force_tour(&coords)?
            } else {
                heuristic_tour(&coords)?
            };
            reference_length = Some(length);
            (coords, Permutation::from_order(&order)?)
        }
        InstanceSpec::Block { spec } => (block_cost_matrix(&spec)?, Permutation::identity(n)),
    };
    let anchor_list = if anchors == 0 {
        Vec::new()
    } else {
        let mut elems: Vec<usize> = index::sample(&mut stream_rng(seed, ANCHOR_STREAM), n, anchors).into_vec();
        elems.sort_unstable();
        elems
            .into_iter()
            .map(|e| Anchor {
                element: e,
                position: truth.get(e),
            })
            .collect()
    };
    let inst = TaskInstance {
        kind: spec.kind(),
        n,
        x,
        anchors: anchor_list,
        truth,
        seed,
        layout,
        reference_length,
    };
    inst.validate()?;
    Ok(inst)
}

/// Position of each value in ascending order; ties broken by index.
fn rank(values: &[f64]) -> Result<Permutation> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    Permutation::from_order(&order)
}

fn synthetic_image(h: usize, w: usize, kind: ImageKind, rng: &mut impl Rng) -> Matrix {
    match kind {
        ImageKind::Ramp => {
            let a = rng.random_range(0.8..1.2);
            let b = a * rng.random_range(0.3..0.45);
            let span = a * (w - 1) as f64 + b * (h - 1) as f64;
            Matrix::from_fn(h, w, |y, x| (a * x as f64 + b * y as f64) / span)
        }
        ImageKind::Gradient => {
            let phase: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let tau = std::f64::consts::TAU;
            Matrix::from_fn(h, w, |y, x| {
                let u = x as f64 / w as f64;
                let v = y as f64 / h as f64;
                0.5 * u
                    + 0.3 * v
                    + 0.1 * (tau * (0.7 * u + phase[0])).sin()
                    + 0.1 * (tau * (0.5 * v + 0.3 * u + phase[1])).cos()
                    - 0.05 * (tau * (u * v + phase[2])).sin()
            })
        }
    }
}

/// Exact shortest tour by enumerating orders that start at city 0.
pub fn brute_force_tour(coords: &Matrix) -> Result<(Vec<usize>, f64)> {
    let n = coords.rows();
    if n < 2 {
        return Err(domain_err("brute_force_tour", "needs n >= 2"));
    }
    if n > 12 {
        return Err(domain_err(
            "brute_force_tour",
            format!("n = {n} too large to enumerate"),
        ));
    }
    let mut rest: Vec<usize> = (1..n).collect();
    let mut order = vec![0; n];
    let mut best = (Vec::new(), f64::INFINITY);
    permute(&mut rest, 0, &mut |p| {
        order[1..].copy_from_slice(p);
        let len = tour_length(coords, &order).expect("sizes match");
        if len < best.1 {
            best = (order.clone(), len);
        }
    });
    Ok(best)
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Nearest-neighbour tour improved with 2-opt until no move helps.
pub fn heuristic_tour(coords: &Matrix) -> Result<(Vec<usize>, f64)> {
    let n = coords.rows();
    if n < 2 {
        return Err(domain_err("heuristic_tour", "needs n >= 2"));
    }
    let d = super::losses::distance_matrix(coords);
    let mut order = vec![0usize];
    let mut used = vec![false; n];
    used[0] = true;
    for _ in 1..n {
        let last = *order.last().unwrap();
        let next = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| d.get(last, a).total_cmp(&d.get(last, b)))
            .unwrap();
        used[next] = true;
        order.push(next);
    }
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 2..n {
                let (a, b) = (order[i], order[i + 1]);
                let (c, e) = (order[j], order[(j + 1) % n]);
                if a == e {
                    continue;
                }
                if d.get(a, c) + d.get(b, e) + 1e-12 < d.get(a, b) + d.get(c, e) {
                    order[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let len = tour_length(coords, &order)?;
    Ok((order, len))
}

/// Mean length of uniformly random tours.
pub fn random_tour_length(coords: &Matrix, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(domain_err("random_tour_length", "samples must be >= 1"));
    }
    let mut rng = stream_rng(seed, DATA_STREAM + 3);
    let mut order: Vec<usize> = (0..coords.rows()).collect();
    let mut total = 0.0;
    for _ in 0..samples {
        order.shuffle(&mut rng);
        total += tour_length(coords, &order)?;
    }
    Ok(total / samples as f64)
}

/// Logit mask that pins anchored elements to their positions.
///
/// Anchored cells get `+strength`, the rest of an anchored row or column
/// `-strength`; every other cell keeps its score.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMask {
    keep: Matrix,
    offset: Matrix,
    empty: bool,
}

pub const TRAIN_MASK: f64 = 30.0;
pub const DECODE_MASK: f64 = 1e6;

impl LogitMask {
    pub fn new(n: usize, anchors: &[Anchor]) -> Self {
        let mut keep = Matrix::ones(n, n);
        let mut offset = Matrix::zeros(n, n);
        for a in anchors {
            for k in 0..n {
                keep.set(a.element, k, 0.0);
                keep.set(k, a.position, 0.0);
                offset.set(a.element, k, -1.0);
                offset.set(k, a.position, -1.0);
            }
        }
        for a in anchors {
            offset.set(a.element, a.position, 1.0);
        }
        Self {
            keep,
            offset,
            empty: anchors.is_empty(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn apply(&self, s: &Matrix, strength: f64) -> Matrix {
        if self.empty {
            return s.clone();
        }
        Matrix::from_fn(s.rows(), s.cols(), |i, j| {
            s.get(i, j) * self.keep.get(i, j) + strength * self.offset.get(i, j)
        })
    }

    pub fn apply_var<'t>(&self, s: Var<'t>, strength: f64) -> Result<Var<'t>> {
        if self.empty {
            return Ok(s);
        }
        let tape = s.tape();
        let keep = tape.constant(self.keep.clone());
        let offset = tape.constant(self.offset.scale(strength));
        s.mul(keep)?.add(offset)
    }
}
