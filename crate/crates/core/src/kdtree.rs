//! Exact k-nearest-neighbour search for low-dimensional dense vectors.
//!
//! Construction splits at the median of the dimension with the largest
//! spread. Search is exact under Euclidean distance; results are ordered by
//! `(distance, index)` so equal distances resolve to the smaller index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    data: Vec<f64>,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.dist_sq.total_cmp(&other.dist_sq).then(self.index.cmp(&other.index))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key(other)
    }
}

impl KdTree {
    pub fn build<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyDatabase)?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParams(format!("point {i} is not finite")));
            }
            data.extend_from_slice(p);
        }
        let mut tree = KdTree {
            dim,
            data,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, points.len());
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn coord(&self, index: usize, d: usize) -> f64 {
        self.data[index * self.dim + d]
    }

    fn point(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let (dim, spread) = (0..self.dim)
            .map(|d| {
                let (lo, hi) = self.order[start..end]
                    .iter()
                    .map(|&i| self.coord(i, d))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                (d, hi - lo)
            })
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if spread <= 0.0 {
            // All points coincide.
            return id;
        }
        let mid = start + (end - start) / 2;
        let data = &self.data;
        let stride = self.dim;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * stride + dim].total_cmp(&data[b * stride + dim])
        });
        let value = self.coord(self.order[mid], dim);
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<Neighbor> {
        self.nearest_filtered(query, k, |_| true)
    }

    /// Like [`KdTree::nearest`], restricted to indices accepted by `keep`.
    pub fn nearest_filtered(&self, query: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Vec<Neighbor> {
        assert_eq!(query.len(), self.dim, "query dimension");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &keep, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        out
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        k: usize,
        keep: &impl Fn(usize) -> bool,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    if !keep(index) {
                        continue;
                    }
                    let dist_sq = self
                        .point(index)
                        .iter()
                        .zip(query)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let cand = Neighbor { index, dist_sq };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, keep, heap);
                // `<=` keeps equal-distance points with smaller indices reachable.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist_sq {
                    self.search(far, query, k, keep, heap);
                }
            }
        }
    }
}
