//! Exact k-nearest-neighbor search with a kd-tree.
//!
//! Neighbors are ordered by (squared distance, row index), so equal
//! distances resolve to the lower training row. Subtrees are pruned only
//! when their bound is strictly worse than the current k-th candidate,
//! which keeps the result identical to an exhaustive scan.

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dims: usize,
    /// Row indices permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Squared Euclidean distance, summed in dimension order.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

impl KdTree {
    /// Builds over `points`, a row-major matrix with `dims` columns.
    pub fn build(points: &[f64], dims: usize) -> Self {
        let n = points.len() / dims;
        let mut tree = KdTree {
            dims,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build_node(points, 0, n);
        }
        tree
    }

    fn build_node(&mut self, points: &[f64], start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dims = self.dims;
        let coord = |row: usize, d: usize| points[row * dims + d];

        let mut dim = 0;
        let mut widest = -1.0;
        for d in 0..dims {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &r in &self.order[start..end] {
                let v = coord(r, d);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > widest {
                widest = hi - lo;
                dim = d;
            }
        }
        if widest <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }

        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coord(a, dim).total_cmp(&coord(b, dim)).then(a.cmp(&b))
        });
        let value = coord(self.order[mid], dim);
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(points, start, mid);
        let right = self.build_node(points, mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest rows of `points` to `query`, nearest first, as
    /// `(squared distance, row)` pairs.
    pub fn nearest(&self, points: &[f64], query: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, points, query, k, &mut best);
        }
        best
    }

    fn search(
        &self,
        node: usize,
        points: &[f64],
        query: &[f64],
        k: usize,
        best: &mut Vec<(f64, usize)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &row in &self.order[start..end] {
                    let d =
                        squared_distance(query, &points[row * self.dims..(row + 1) * self.dims]);
                    insert(best, k, (d, row));
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, points, query, k, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, points, query, k, best);
                }
            }
        }
    }
}

#[inline]
fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Inserts into a sorted candidate list capped at `k` entries.
#[inline]
fn insert(best: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
    if best.len() == k {
        if !less(cand, best[k - 1]) {
            return;
        }
        best.pop();
    }
    let pos = best
        .iter()
        .position(|&b| less(cand, b))
        .unwrap_or(best.len());
    best.insert(pos, cand);
}
