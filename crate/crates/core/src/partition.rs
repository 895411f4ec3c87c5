//! 4-neighbourhood edge graph of an image and its partition into four
//! vertex-disjoint edge sets.
//!
//! Set 1 holds horizontal edges whose left pixel sits in an even column,
//! set 2 the remaining horizontal edges, sets 3 and 4 the vertical edges
//! split by even/odd top row. Within a set no pixel appears twice, so all
//! per-edge updates over one set touch disjoint pixels. Boundaries are free
//! (no wrap-around).

use crate::error::{EpError, Result};

/// Edge sets of the 4-neighbourhood graph with a global edge index.
///
/// Edges are stored as `(i, j)` flat row-major pixel indices with `i` the
/// left (horizontal) or top (vertical) pixel; the associated gradient is
/// `u = x[i] - x[j]`. The global gradient index of the `m`-th edge of set
/// `k` is `offsets[k] + m`.
#[derive(Debug, Clone)]
pub struct EdgePartition {
    height: usize,
    width: usize,
    sets: [Vec<(u32, u32)>; 4],
    offsets: [usize; 4],
    total_edges: usize,
}

impl EdgePartition {
    /// Partition the edges of an `height x width` image.
    pub fn build(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || height * width < 2 {
            return Err(EpError::InvalidArgument(format!(
                "image must contain at least one edge, got {height}x{width}"
            )));
        }
        let mut sets: [Vec<(u32, u32)>; 4] = Default::default();
        for r in 0..height {
            for c in 0..width - 1 {
                let i = (r * width + c) as u32;
                let k = if c % 2 == 0 { 0 } else { 1 };
                sets[k].push((i, i + 1));
            }
        }
        for r in 0..height - 1 {
            for c in 0..width {
                let i = (r * width + c) as u32;
                let k = if r % 2 == 0 { 2 } else { 3 };
                sets[k].push((i, i + width as u32));
            }
        }
        let mut offsets = [0usize; 4];
        let mut total = 0;
        for k in 0..4 {
            offsets[k] = total;
            total += sets[k].len();
        }
        Ok(Self {
            height,
            width,
            sets,
            offsets,
            total_edges: total,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn edge_count(&self) -> usize {
        self.total_edges
    }

    /// Edges of set `k` (0-based, `k < 4`).
    pub fn set(&self, k: usize) -> &[(u32, u32)] {
        &self.sets[k]
    }

    /// Global gradient index of edge `m` within set `k`.
    pub fn gradient_index(&self, k: usize, m: usize) -> usize {
        debug_assert!(m < self.sets[k].len());
        self.offsets[k] + m
    }

    /// All edges in global gradient-index order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.sets.iter().flatten().copied()
    }

    /// Apply the gradient operator of set `k`: `u[m] = x[i] - x[j]`.
    pub fn gradient_apply(&self, k: usize, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.pixels(), "gradient_apply length mismatch");
        self.sets[k]
            .iter()
            .map(|&(i, j)| x[i as usize] - x[j as usize])
            .collect()
    }

    /// Adjoint of [`gradient_apply`](Self::gradient_apply).
    pub fn gradient_adjoint(&self, k: usize, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.sets[k].len(), "gradient_adjoint length mismatch");
        let mut out = vec![0.0; self.pixels()];
        for (&(i, j), &val) in self.sets[k].iter().zip(v) {
            out[i as usize] += val;
            out[j as usize] -= val;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    // Brute-force list of all 4-neighbour edges, independent of the
    // partition logic above.
    fn all_edges(h: usize, w: usize) -> HashSet<(u32, u32)> {
        let mut set = HashSet::new();
        for r in 0..h {
            for c in 0..w {
                let i = (r * w + c) as u32;
                if c + 1 < w {
                    set.insert((i, i + 1));
                }
                if r + 1 < h {
                    set.insert((i, i + w as u32));
                }
            }
        }
        set
    }

    #[test]
    fn two_by_two_exhaustive() {
        let p = EdgePartition::build(2, 2).unwrap();
        assert_eq!(p.edge_count(), 4);
        assert_eq!(p.set(0), &[(0, 1), (2, 3)]);
        assert!(p.set(1).is_empty());
        assert_eq!(p.set(2), &[(0, 2), (1, 3)]);
        assert!(p.set(3).is_empty());
    }

    #[test]
    fn three_by_three_counts() {
        let p = EdgePartition::build(3, 3).unwrap();
        assert_eq!(p.edge_count(), 12);
        for k in 0..4 {
            assert!(!p.set(k).is_empty(), "set {k} empty");
        }
    }

    #[test]
    fn two_by_three_count() {
        let p = EdgePartition::build(2, 3).unwrap();
        assert_eq!(p.edge_count(), 7);
    }

    #[test]
    fn partition_covers_disjointly_up_to_8() {
        for h in 1..=8 {
            for w in 1..=8 {
                if h * w < 2 {
                    continue;
                }
                let p = EdgePartition::build(h, w).unwrap();
                let expect = all_edges(h, w);
                let mut seen = HashSet::new();
                for k in 0..4 {
                    let mut vertices = HashSet::new();
                    for &(i, j) in p.set(k) {
                        assert!(seen.insert((i, j)), "duplicate edge ({i},{j}) {h}x{w}");
                        assert!(vertices.insert(i), "vertex {i} repeated in set {k}");
                        assert!(vertices.insert(j), "vertex {j} repeated in set {k}");
                    }
                }
                assert_eq!(seen, expect, "{h}x{w} edge coverage");
                assert_eq!(p.edge_count(), h * (w - 1) + (h - 1) * w);
            }
        }
    }

    #[test]
    fn gradient_index_is_bijective() {
        let p = EdgePartition::build(5, 7).unwrap();
        let mut seen = vec![false; p.edge_count()];
        for k in 0..4 {
            for m in 0..p.set(k).len() {
                let n = p.gradient_index(k, m);
                assert!(!seen[n]);
                seen[n] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn gradient_on_constant_image_is_zero() {
        let p = EdgePartition::build(4, 5).unwrap();
        let x = vec![3.25; 20];
        for k in 0..4 {
            assert!(p.gradient_apply(k, &x).iter().all(|&u| u == 0.0));
        }
    }

    #[test]
    fn gradient_two_by_two_example() {
        let p = EdgePartition::build(2, 2).unwrap();
        let x = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(p.gradient_apply(0, &x), vec![-1.0, -1.0]);
    }

    // Explicit sparse D_k as a dense matrix, built from the edge list.
    fn dense_gradient(p: &EdgePartition, k: usize) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; p.pixels()]; p.set(k).len()];
        for (row, &(i, j)) in p.set(k).iter().enumerate() {
            d[row][i as usize] = 1.0;
            d[row][j as usize] = -1.0;
        }
        d
    }

    #[test]
    fn gradient_matches_dense_matrix() {
        let p = EdgePartition::build(3, 4).unwrap();
        let x: Vec<f64> = (0..12).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        for k in 0..4 {
            let d = dense_gradient(&p, k);
            let want: Vec<f64> = d
                .iter()
                .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            assert_eq!(p.gradient_apply(k, &x), want);
        }
    }

    #[test]
    fn adjoint_identity() {
        let p = EdgePartition::build(4, 4).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        for k in 0..4 {
            let m = p.set(k).len();
            let v: Vec<f64> = (0..m).map(|i| (i as f64 * 1.3).cos()).collect();
            let dx = p.gradient_apply(k, &x);
            let dtv = p.gradient_adjoint(k, &v);
            let lhs: f64 = dx.iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&dtv).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_single_edge() {
        let p = EdgePartition::build(2, 2).unwrap();
        let v = [1.0, 0.0];
        let out = p.gradient_adjoint(0, &v);
        assert_eq!(out, vec![1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_degenerate_dims() {
        assert!(EdgePartition::build(1, 1).is_err());
        assert!(EdgePartition::build(0, 5).is_err());
    }

    #[test]
    fn single_row_has_only_horizontal_edges() {
        let p = EdgePartition::build(1, 2).unwrap();
        assert_eq!(p.edge_count(), 1);
        assert_eq!(p.set(0), &[(0, 1)]);
        for k in 1..4 {
            assert!(p.set(k).is_empty());
        }
        let p = EdgePartition::build(3, 1).unwrap();
        assert_eq!(p.edge_count(), 2);
        assert_eq!(p.set(2), &[(0, 1)]);
        assert_eq!(p.set(3), &[(1, 2)]);
    }
}
