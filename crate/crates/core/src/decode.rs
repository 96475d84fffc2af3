//! Discrete decoding and evaluation.
//!
//! A [`Permutation`] maps element `i` to position `mapping[i]`, matching the
//! row/column convention of soft permutations (`P[i][j]`: element `i` at
//! position `j`). Tours are the inverse view: position -> city.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, domain_err, Error, Result};
use crate::tasks::{tour_length, TaskInstance, TaskKind};
use crate::tensor::{stream_rng, Matrix};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &p in &mapping {
            if p >= n || seen[p] {
                return Err(domain_err("permutation", format!("{mapping:?} is not a bijection")));
            }
            seen[p] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &p) in self.mapping.iter().enumerate() {
            inv[p] = i;
        }
        Self { mapping: inv }
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Result<Self> {
        if self.len() != other.len() {
            return Err(dim_err("compose", "size mismatch"));
        }
        Ok(Self {
            mapping: other.mapping.iter().map(|&i| self.mapping[i]).collect(),
        })
    }

    /// Element -> position permutation whose visiting order is `order`.
    pub fn from_order(order: &[usize]) -> Result<Self> {
        Ok(Permutation::new(order.to_vec())?.inverse())
    }

    /// Elements in position order.
    pub fn order(&self) -> Vec<usize> {
        self.inverse().mapping
    }

    /// Same elements, positions mirrored (`p -> n-1-p`).
    pub fn reversed(&self) -> Self {
        let n = self.len();
        Self {
            mapping: self.mapping.iter().map(|&p| n - 1 - p).collect(),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::permutation(&self.mapping)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.mapping
    }
}

/// Maximum-profit assignment: the permutation maximising
/// `Σ_i profit[i][π(i)]`.
///
/// Shortest augmenting paths with row/column potentials, O(n³), run on the
/// negated profits. Rows are inserted in index order and ties take the
/// lowest column, so the result is deterministic.
pub fn hungarian(profit: &Matrix) -> Result<Permutation> {
    if !profit.is_square() {
        return Err(dim_err("hungarian", format!("{:?}", profit.shape())));
    }
    if !profit.all_finite() {
        return Err(domain_err("hungarian", "non-finite profit"));
    }
    let n = profit.rows();
    if n == 0 {
        return Ok(Permutation::identity(0));
    }
    let cost = |i: usize, j: usize| -profit.get(i, j);

    // 1-based internally; column 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut mapping = vec![0; n];
    for j in 1..=n {
        mapping[col_owner[j] - 1] = j - 1;
    }
    Permutation::new(mapping)
}

/// `Σ_i profit[i][π(i)]`.
pub fn assignment_value(profit: &Matrix, perm: &Permutation) -> f64 {
    perm.as_slice().iter().enumerate().map(|(i, &j)| profit.get(i, j)).sum()
}

/// Inversions of `seq` by merge sort, O(n log n).
pub fn count_inversions(seq: &[usize]) -> u64 {
    let mut buf = seq.to_vec();
    let mut tmp = vec![0; seq.len()];
    merge_count(&mut buf, &mut tmp)
}

fn merge_count(a: &mut [usize], tmp: &mut [usize]) -> u64 {
    let n = a.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (l, r) = a.split_at_mut(mid);
        let (tl, tr) = tmp.split_at_mut(mid);
        merge_count(l, tl) + merge_count(r, tr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if a[i] <= a[j] {
            tmp[k] = a[i];
            i += 1;
        } else {
            tmp[k] = a[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    tmp[k..k + mid - i].copy_from_slice(&a[i..mid]);
    k += mid - i;
    tmp[k..k + n - j].copy_from_slice(&a[j..n]);
    a.copy_from_slice(&tmp[..n]);
    inv
}

/// Kendall τ between two element -> position maps:
/// `1 - 4 · inv / (n (n - 1))`, where `inv` counts discordant element pairs.
pub fn kendall_tau(pred: &Permutation, truth: &Permutation) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(dim_err("kendall_tau", format!("{} vs {}", pred.len(), truth.len())));
    }
    let n = pred.len();
    if n < 2 {
        return Err(domain_err("kendall_tau", "needs n >= 2"));
    }
    // predicted position of each element, listed in true position order
    let seq: Vec<usize> = truth.order().into_iter().map(|e| pred.get(e)).collect();
    let inv = count_inversions(&seq) as f64;
    Ok(1.0 - 4.0 * inv / (n as f64 * (n as f64 - 1.0)))
}

/// Rotate a visiting order so that city 0 comes first.
pub fn canonical_rotation(order: &[usize]) -> Vec<usize> {
    let start = order.iter().position(|&c| c == 0).unwrap_or(0);
    order[start..].iter().chain(&order[..start]).copied().collect()
}

/// Kendall τ between tours, invariant to starting city and direction.
///
/// Both tours are rotated so city 0 is visited first; τ is the larger of
/// the forward and reversed predicted tour against the truth.
pub fn tour_kendall_tau(pred: &Permutation, truth: &Permutation) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(dim_err("tour_kendall_tau", "size mismatch"));
    }
    let truth_c = Permutation::from_order(&canonical_rotation(&truth.order()))?;
    let order = pred.order();
    let fwd = Permutation::from_order(&canonical_rotation(&order))?;
    let rev_order: Vec<usize> = order.iter().rev().copied().collect();
    let rev = Permutation::from_order(&canonical_rotation(&rev_order))?;
    Ok(kendall_tau(&fwd, &truth_c)?.max(kendall_tau(&rev, &truth_c)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

/// Expected Kendall τ of "anchors correct, everything else uniformly random".
///
/// Each trial samples a fresh anchor set of size `anchors` uniformly, keeps
/// those elements at their true positions and shuffles the rest.
pub fn mask_only_baseline(n: usize, anchors: usize, trials: usize, seed: u64) -> Result<BaselineEstimate> {
    if anchors > n {
        return Err(domain_err("mask_only_baseline", "anchors exceed n"));
    }
    if trials == 0 {
        return Err(domain_err("mask_only_baseline", "trials must be >= 1"));
    }
    if n < 2 {
        return Err(domain_err("mask_only_baseline", "needs n >= 2"));
    }
    let truth = Permutation::identity(n);
    let mut rng = stream_rng(seed, 0);
    let mut taus = Vec::with_capacity(trials);
    let mut is_anchor = vec![false; n];
    for _ in 0..trials {
        is_anchor.iter_mut().for_each(|a| *a = false);
        for e in index::sample(&mut rng, n, anchors) {
            is_anchor[e] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&e| !is_anchor[e]).collect();
        let mut slots = free.clone();
        slots.shuffle(&mut rng);
        let mut mapping: Vec<usize> = (0..n).collect();
        for (&e, &p) in free.iter().zip(&slots) {
            mapping[e] = p;
        }
        taus.push(kendall_tau(&Permutation { mapping }, &truth)?);
    }
    let mean = taus.iter().sum::<f64>() / trials as f64;
    let std_err = if trials > 1 {
        let var = taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        (var / trials as f64).sqrt()
    } else {
        0.0
    };
    Ok(BaselineEstimate { mean, std_err, trials })
}

/// Relative optimality gap `(length - reference) / reference`.
pub fn optimality_gap(length: f64, reference: Option<f64>) -> Result<f64> {
    match reference {
        Some(r) if r > 0.0 => Ok((length - r) / r),
        Some(r) => Err(domain_err(
            "optimality_gap",
            format!("reference length {r} must be > 0"),
        )),
        None => Err(Error::Config("optimality gap needs a reference length".into())),
    }
}

pub const MASK_ONLY_TRIALS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub kendall_tau: f64,
    pub tour_length: Option<f64>,
    pub gap: Option<f64>,
    pub mask_only_tau: Option<f64>,
    pub delta_tau: Option<f64>,
}

/// Evaluation record for a decoded permutation.
///
/// Tours use [`tour_kendall_tau`]. The gap is present only when a reference
/// length is supplied. Instances with anchors report Δτ against the
/// mask-only baseline; pass `mask_only_tau` to reuse an estimate, otherwise
/// one is drawn with [`MASK_ONLY_TRIALS`] trials.
pub fn metrics(
    pred: &Permutation,
    instance: &TaskInstance,
    reference_length: Option<f64>,
    mask_only_tau: Option<f64>,
) -> Result<MetricRecord> {
    let truth = &instance.truth;
    if pred.len() != truth.len() {
        return Err(dim_err("metrics", "prediction and truth sizes differ"));
    }
    let (kendall, length) = match instance.kind {
        TaskKind::Tsp => {
            let len = tour_length(&instance.x, &pred.order())?;
            (tour_kendall_tau(pred, truth)?, Some(len))
        }
        _ => (kendall_tau(pred, truth)?, None),
    };
    let gap = match (length, reference_length) {
        (Some(l), Some(r)) => Some(optimality_gap(l, Some(r))?),
        _ => None,
    };
    let mask_only = if instance.anchors.is_empty() {
        None
    } else {
        match mask_only_tau {
            Some(t) => Some(t),
            None => Some(mask_only_baseline(instance.n, instance.anchors.len(), MASK_ONLY_TRIALS, instance.seed)?.mean),
        }
    };
    Ok(MetricRecord {
        kendall_tau: kendall,
        tour_length: length,
        gap,
        mask_only_tau: mask_only,
        delta_tau: mask_only.map(|m| kendall - m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_perms(n: usize) -> Vec<Vec<usize>> {
        fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
            if cur.len() == used.len() {
                out.push(cur.clone());
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    cur.push(j);
                    rec(cur, used, out);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    fn brute_force_max(profit: &Matrix) -> f64 {
        all_perms(profit.rows())
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| profit.get(i, j)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn hungarian_identity_and_antidiagonal() {
        assert_eq!(hungarian(&Matrix::identity(5)).unwrap(), Permutation::identity(5));
        let anti = Matrix::from_fn(4, 4, |i, j| if i + j == 3 { 1.0 } else { 0.0 });
        assert_eq!(hungarian(&anti).unwrap().as_slice(), &[3, 2, 1, 0]);
        assert!(hungarian(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force_6x6() {
        let mut rng = stream_rng(11, 0);
        use rand::Rng;
        for _ in 0..200 {
            let m = Matrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let p = hungarian(&m).unwrap();
            assert!((assignment_value(&m, &p) - brute_force_max(&m)).abs() < 1e-12);
        }
    }

    #[test]
    fn kendall_reference_values() {
        let t = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        assert_eq!(kendall_tau(&t, &t).unwrap(), 1.0);
        assert_eq!(kendall_tau(&t.reversed(), &t).unwrap(), -1.0);
        let id = Permutation::identity(4);
        let swapped = Permutation::new(vec![0, 2, 1, 3]).unwrap();
        assert!((kendall_tau(&swapped, &id).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&id, &Permutation::identity(3)).is_err());
    }

    #[test]
    fn tour_tau_symmetries() {
        let truth = Permutation::from_order(&[0, 3, 1, 4, 2, 5]).unwrap();
        let rev = Permutation::from_order(&[5, 2, 4, 1, 3, 0]).unwrap();
        let rot = Permutation::from_order(&[4, 2, 5, 0, 3, 1]).unwrap();
        assert_eq!(tour_kendall_tau(&rev, &truth).unwrap(), 1.0);
        assert_eq!(tour_kendall_tau(&rot, &truth).unwrap(), 1.0);
    }

    #[test]
    fn tour_tau_adjacent_swap() {
        let truth = Permutation::from_order(&[0, 1, 2, 3, 4, 5]).unwrap();
        let swapped_order = [0, 1, 3, 2, 4, 5];
        let pred = Permutation::from_order(&swapped_order).unwrap();
        let plain = kendall_tau(&pred, &truth).unwrap();
        assert_eq!(tour_kendall_tau(&pred, &truth).unwrap(), plain);
        assert!((plain - (1.0 - 4.0 / 30.0)).abs() < 1e-15);
    }

    #[test]
    fn mask_only_edges() {
        let full = mask_only_baseline(10, 10, 50, 1).unwrap();
        assert_eq!(full.mean, 1.0);
        let none = mask_only_baseline(10, 0, 4000, 2).unwrap();
        assert!(none.mean.abs() < 3.0 / (4000f64).sqrt());
        assert!(mask_only_baseline(5, 6, 10, 0).is_err());
        assert!(mask_only_baseline(5, 1, 0, 0).is_err());
    }

    #[test]
    fn gap_requires_reference() {
        assert!(optimality_gap(5.0, None).is_err());
        assert!(optimality_gap(5.0, Some(0.0)).is_err());
        assert!((optimality_gap(5.0, Some(4.0)).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn permutation_rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(p.compose(&p.inverse()).unwrap(), Permutation::identity(3));
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[2,0,1]");
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
    }

    fn perm_strategy(n: usize) -> impl Strategy<Value = Permutation> {
        Just((0..n).collect::<Vec<_>>())
            .prop_shuffle()
            .prop_map(|v| Permutation::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn kendall_self_and_reverse(p in (2usize..40).prop_flat_map(perm_strategy)) {
            prop_assert_eq!(kendall_tau(&p, &p).unwrap(), 1.0);
            prop_assert_eq!(kendall_tau(&p.reversed(), &p).unwrap(), -1.0);
        }

        #[test]
        fn tour_tau_rotation_reversal_invariant(
            (pred, truth, shift) in (3usize..20).prop_flat_map(|n| (perm_strategy(n), perm_strategy(n), 0..n))
        ) {
            let base = tour_kendall_tau(&pred, &truth).unwrap();
            let order = pred.order();
            let rotated: Vec<usize> = order[shift..].iter().chain(&order[..shift]).copied().collect();
            let reversed: Vec<usize> = order.iter().rev().copied().collect();
            let r1 = tour_kendall_tau(&Permutation::from_order(&rotated).unwrap(), &truth).unwrap();
            let r2 = tour_kendall_tau(&Permutation::from_order(&reversed).unwrap(), &truth).unwrap();
            prop_assert_eq!(base, r1);
            prop_assert_eq!(base, r2);
        }

        #[test]
        fn inversions_match_pair_count(p in (1usize..60).prop_flat_map(perm_strategy)) {
            let s = p.as_slice();
            let mut naive = 0u64;
            for i in 0..s.len() {
                for j in i + 1..s.len() {
                    if s[i] > s[j] { naive += 1; }
                }
            }
            prop_assert_eq!(count_inversions(s), naive);
        }
    }
}
