//! Exact k-nearest-neighbour tables over 3D points.

use crate::{Error, Result};

/// `G × k` neighbour indices, each row sorted by distance then index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    pub k: usize,
    pub indices: Vec<usize>,
}

impl NeighborTable {
    pub fn len(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

#[inline]
fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    let d = [0, 1, 2].map(|i| a[i] as f64 - b[i] as f64);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn check(points: &[[f32; 3]], k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::config("knn: need at least one point"));
    }
    if k == 0 {
        return Err(Error::config("knn: k must be at least 1"));
    }
    if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::config(format!("knn: point {i} has non-finite coordinates")));
    }
    Ok(())
}

/// Fills a row from candidates sorted by `(d², index)`, padding short rows by
/// repeating the nearest (or `self` when there is no other point).
fn finish_row(query: usize, best: &[(f64, usize)], k: usize, out: &mut Vec<usize>) {
    let pad = best.first().map(|b| b.1).unwrap_or(query);
    for j in 0..k {
        out.push(best.get(j).map(|b| b.1).unwrap_or(pad));
    }
}

/// O(G²) reference implementation.
pub fn brute_force_knn(points: &[[f32; 3]], k: usize, include_self: bool) -> Result<NeighborTable> {
    check(points, k)?;
    let mut indices = Vec::with_capacity(points.len() * k);
    let mut cands = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        cands.clear();
        cands.extend(points.iter().enumerate().filter(|(j, _)| include_self || *j != i).map(|(j, q)| (dist2(p, q), j)));
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cands.truncate(k);
        finish_row(i, &cands, k, &mut indices);
    }
    Ok(NeighborTable { k, indices })
}

enum Node {
    Leaf(Vec<usize>),
    Split { axis: usize, value: f32, left: Box<Node>, right: Box<Node> },
}

const LEAF_SIZE: usize = 8;

fn build(points: &[[f32; 3]], mut idx: Vec<usize>) -> Node {
    if idx.len() <= LEAF_SIZE {
        return Node::Leaf(idx);
    }
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for &i in &idx {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    if hi[axis] == lo[axis] {
        return Node::Leaf(idx);
    }
    idx.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let mid = idx.len() / 2;
    let value = points[idx[mid]][axis];
    let right = idx.split_off(mid);
    Node::Split { axis, value, left: Box::new(build(points, idx)), right: Box::new(build(points, right)) }
}

struct Query<'a> {
    points: &'a [[f32; 3]],
    target: [f32; 3],
    skip: Option<usize>,
    k: usize,
    best: Vec<(f64, usize)>,
}

impl Query<'_> {
    fn worst(&self) -> f64 {
        if self.best.len() < self.k {
            f64::INFINITY
        } else {
            self.best[self.k - 1].0
        }
    }

    fn offer(&mut self, i: usize) {
        if Some(i) == self.skip {
            return;
        }
        let cand = (dist2(&self.target, &self.points[i]), i);
        if self.best.len() == self.k && cand >= self.best[self.k - 1] {
            return;
        }
        let pos = self.best.partition_point(|b| *b < cand);
        self.best.insert(pos, cand);
        self.best.truncate(self.k);
    }

    fn visit(&mut self, node: &Node) {
        match node {
            Node::Leaf(idx) => {
                for &i in idx {
                    self.offer(i);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = self.target[*axis] as f64 - *value as f64;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near);
                // ties must still be explored so equal distances resolve to the smaller index
                if diff * diff <= self.worst() {
                    self.visit(far);
                }
            }
        }
    }
}

/// Exact Euclidean kNN via a kd-tree. Ties break towards the smaller index;
/// the query point itself is excluded unless `include_self`.
pub fn build_knn_with(points: &[[f32; 3]], k: usize, include_self: bool) -> Result<NeighborTable> {
    check(points, k)?;
    let tree = build(points, (0..points.len()).collect());
    let mut indices = Vec::with_capacity(points.len() * k);
    for (i, p) in points.iter().enumerate() {
        let mut q =
            Query { points, target: *p, skip: (!include_self).then_some(i), k, best: Vec::with_capacity(k + 1) };
        q.visit(&tree);
        finish_row(i, &q.best, k, &mut indices);
    }
    Ok(NeighborTable { k, indices })
}

/// [`build_knn_with`] excluding each point from its own row.
pub fn build_knn(points: &[[f32; 3]], k: usize) -> Result<NeighborTable> {
    build_knn_with(points, k, false)
}
