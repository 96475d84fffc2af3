//! Structural losses on reordered data.
//!
//! All losses take the soft reordering `x_hat = Pᵀ X` (row `j` is whatever
//! the soft permutation puts at position `j`) and are recorded on the tape.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, domain_err, Result};
use crate::tensor::{Matrix, ReduceAxis, ReduceKind, Var};

/// `Pᵀ X` on the tape.
pub fn soft_reorder<'t>(p: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    p.transpose().matmul(x)
}

/// Σ ReLU(x̂_i − x̂_{i+1})² over consecutive positions: zero iff ascending.
pub fn monotonicity_loss<'t>(x_hat: Var<'t>) -> Result<Var<'t>> {
    let (n, d) = x_hat.shape();
    if d != 1 {
        return Err(dim_err("monotonicity_loss", format!("expected n x 1, got {n}x{d}")));
    }
    if n < 2 {
        return Err(domain_err("monotonicity_loss", "needs n >= 2"));
    }
    let head: Rc<[usize]> = (0..n - 1).collect();
    let tail: Rc<[usize]> = (1..n).collect();
    let cur = x_hat.gather(head, n - 1, 1)?;
    let next = x_hat.gather(tail, n - 1, 1)?;
    Ok(cur.sub(next)?.relu().square().sum())
}

/// Grid of square-cut tiles; position `r * grid + c` is row `r`, column `c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JigsawLayout {
    pub grid: usize,
    pub tile_h: usize,
    pub tile_w: usize,
}

impl JigsawLayout {
    /// Layout cutting a `height x width` image into `grid x grid` tiles.
    pub fn for_image(height: usize, width: usize, grid: usize) -> Result<Self> {
        if grid == 0 || !height.is_multiple_of(grid) || !width.is_multiple_of(grid) {
            return Err(dim_err(
                "jigsaw_layout",
                format!("{height}x{width} image not divisible into a {grid}x{grid} grid"),
            ));
        }
        Ok(Self {
            grid,
            tile_h: height / grid,
            tile_w: width / grid,
        })
    }

    pub fn tiles(&self) -> usize {
        self.grid * self.grid
    }

    pub fn tile_pixels(&self) -> usize {
        self.tile_h * self.tile_w
    }

    /// Cut an image into tiles, one flattened tile per row, in position order.
    pub fn cut(&self, image: &Matrix) -> Result<Matrix> {
        if image.shape() != (self.grid * self.tile_h, self.grid * self.tile_w) {
            return Err(dim_err("jigsaw_cut", "image does not match layout"));
        }
        let (th, tw) = (self.tile_h, self.tile_w);
        Ok(Matrix::from_fn(self.tiles(), self.tile_pixels(), |pos, k| {
            let (r, c) = (pos / self.grid, pos % self.grid);
            image.get(r * th + k / tw, c * tw + k % tw)
        }))
    }

    /// Inverse of [`cut`](Self::cut).
    pub fn assemble(&self, tiles: &Matrix) -> Result<Matrix> {
        if tiles.shape() != (self.tiles(), self.tile_pixels()) {
            return Err(dim_err("jigsaw_assemble", "tile matrix does not match layout"));
        }
        let (th, tw) = (self.tile_h, self.tile_w);
        Ok(Matrix::from_fn(self.grid * th, self.grid * tw, |y, x| {
            let pos = (y / th) * self.grid + x / tw;
            tiles.get(pos, (y % th) * tw + x % tw)
        }))
    }

    /// Flat index pairs whose differences make up the band penalty.
    ///
    /// For each neighbouring pair the last `k` pixel columns (rows) of the
    /// first tile and the first `k` of the second form a `2k`-wide strip;
    /// every adjacent pair of strip lines contributes one difference per pixel.
    pub fn seam_pairs(&self, band_k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if band_k == 0 || band_k > self.tile_h || band_k > self.tile_w {
            return Err(domain_err("jigsaw_smoothness", format!("band_k {band_k} out of range")));
        }
        let (g, th, tw, d) = (self.grid, self.tile_h, self.tile_w, self.tile_pixels());
        let mut a = Vec::new();
        let mut b = Vec::new();
        let flat = |pos: usize, y: usize, x: usize| pos * d + y * tw + x;
        for r in 0..g {
            for c in 0..g {
                let pos = r * g + c;
                if c + 1 < g {
                    let right = pos + 1;
                    // strip column s in 0..2k: left tile column tw-k+s, then right tile column s-k
                    let col = |s: usize, y: usize| {
                        if s < band_k {
                            flat(pos, y, tw - band_k + s)
                        } else {
                            flat(right, y, s - band_k)
                        }
                    };
                    for y in 0..th {
                        for s in 0..2 * band_k - 1 {
                            a.push(col(s, y));
                            b.push(col(s + 1, y));
                        }
                    }
                }
                if r + 1 < g {
                    let below = pos + g;
                    let row = |s: usize, x: usize| {
                        if s < band_k {
                            flat(pos, th - band_k + s, x)
                        } else {
                            flat(below, s - band_k, x)
                        }
                    };
                    for x in 0..tw {
                        for s in 0..2 * band_k - 1 {
                            a.push(row(s, x));
                            b.push(row(s + 1, x));
                        }
                    }
                }
            }
        }
        Ok((a, b))
    }
}

/// Squared pixel differences across every shared tile border, over a
/// `2k`-pixel band. `band_k = 1` is the plain edge-to-edge loss.
pub fn jigsaw_smoothness_loss<'t>(x_hat: Var<'t>, layout: &JigsawLayout, band_k: usize) -> Result<Var<'t>> {
    if x_hat.shape() != (layout.tiles(), layout.tile_pixels()) {
        return Err(dim_err("jigsaw_smoothness", "x_hat does not match layout"));
    }
    let (a, b) = layout.seam_pairs(band_k)?;
    let m = a.len();
    let lhs = x_hat.gather(a.into(), m, 1)?;
    let rhs = x_hat.gather(b.into(), m, 1)?;
    Ok(lhs.sub(rhs)?.square().sum())
}

/// Plain evaluation of [`jigsaw_smoothness_loss`] for a hard arrangement:
/// `order[pos]` is the tile placed at `pos`.
pub fn jigsaw_arrangement_loss(tiles: &Matrix, order: &[usize], layout: &JigsawLayout, band_k: usize) -> Result<f64> {
    let placed = Matrix::from_fn(tiles.rows(), tiles.cols(), |pos, k| tiles.get(order[pos], k));
    let (a, b) = layout.seam_pairs(band_k)?;
    let s = placed.as_slice();
    Ok(a.iter().zip(&b).map(|(&i, &j)| (s[i] - s[j]).powi(2)).sum())
}

const TOUR_EPS: f64 = 1e-12;

/// Cyclic Euclidean length Σ ||x̂_i − x̂_{i+1}|| with x̂_{n+1} = x̂_1.
/// Each edge is `sqrt(d² + 1e-12)` so the derivative stays finite.
pub fn tsp_tour_loss<'t>(x_hat: Var<'t>) -> Result<Var<'t>> {
    let (n, d) = x_hat.shape();
    if n < 2 {
        return Err(domain_err("tsp_tour_loss", "needs n >= 2"));
    }
    let next: Rc<[usize]> = (0..n * d).map(|k| ((k / d + 1) % n) * d + k % d).collect();
    let shifted = x_hat.gather(next, n, d)?;
    let sq = shifted.sub(x_hat)?.square().reduce(ReduceKind::Sum, ReduceAxis::Row);
    Ok(sq.add_scalar(TOUR_EPS).sqrt()?.sum())
}

/// Exact cyclic length of visiting `order` through `coords` (n x 2).
pub fn tour_length(coords: &Matrix, order: &[usize]) -> Result<f64> {
    let n = order.len();
    if n != coords.rows() {
        return Err(dim_err("tour_length", "order length differs from city count"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if order.iter().any(|&c| c >= n) {
        return Err(domain_err("tour_length", "city index out of range"));
    }
    // walk every rotation and reflection of a cycle the same way, so equal
    // tours give bitwise equal lengths
    let start = (0..n).min_by_key(|&k| order[k]).expect("n > 0");
    let forward = order[(start + 1) % n] <= order[(start + n - 1) % n];
    let city = |k: usize| {
        if forward {
            order[(start + k) % n]
        } else {
            order[(start + n - k) % n]
        }
    };
    Ok((0..n)
        .map(|k| {
            let a = coords.row(city(k));
            let b = coords.row(city(k + 1));
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        })
        .sum())
}

pub fn distance_matrix(coords: &Matrix) -> Matrix {
    let n = coords.rows();
    Matrix::from_fn(n, n, |i, j| {
        coords
            .row(i)
            .iter()
            .zip(coords.row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

/// Successor heatmap on the tape, `H = P · shift(P)ᵀ`, where
/// `shift(P)[b][k] = P[b][k+1]`: `H[a][b]` is the mass on "b follows a".
pub fn successor_heatmap_var<'t>(p: Var<'t>) -> Result<Var<'t>> {
    let (n, m) = p.shape();
    if n != m {
        return Err(dim_err("successor_heatmap", format!("{n}x{m}")));
    }
    let idx: Rc<[usize]> = (0..n * n).map(|k| (k / n) * n + (k % n + 1) % n).collect();
    let shifted = p.gather(idx, n, n)?;
    p.matmul(shifted.transpose())
}

/// Expected tour length under the successor heatmap plus
/// `row_penalty · Σ_a (Σ_b H[a][b] − 1)²`.
pub fn expected_tour_loss<'t>(p: Var<'t>, distances: &Matrix, row_penalty: f64) -> Result<Var<'t>> {
    let h = successor_heatmap_var(p)?;
    if distances.shape() != h.shape() {
        return Err(dim_err("expected_tour_loss", "distance matrix shape"));
    }
    let d = p.tape().constant(distances.clone());
    let length = h.mul(d)?.sum();
    if row_penalty == 0.0 {
        return Ok(length);
    }
    let rows = h.reduce(ReduceKind::Sum, ReduceAxis::Row).add_scalar(-1.0);
    length.add(rows.square().sum().scale(row_penalty))
}
