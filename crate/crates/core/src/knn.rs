//! Exact k-nearest-neighbour queries over Gaussian centers.
//!
//! Results are ordered by ascending squared distance with ties broken by
//! ascending point index, so the tree and the brute-force path agree exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;

/// Below this many points queries scan linearly.
pub const BRUTE_FORCE_LIMIT: usize = 256;
const LEAF_SIZE: usize = 12;

#[inline]
fn sq_dist(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// A kd-tree with a linear-scan fallback for small inputs.
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    root: Option<Node>,
}

impl SpatialIndex {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = if points.len() >= BRUTE_FORCE_LIMIT {
            let n = order.len();
            Some(build_node(points, &mut order, 0, n))
        } else {
            None
        };
        SpatialIndex {
            points: points.to_vec(),
            order,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to point `query`, excluding itself.
    pub fn nearest(&self, query: usize, k: usize) -> Result<Vec<usize>> {
        check_args(self.points.len(), query, k)?;
        match &self.root {
            None => Ok(brute_force(&self.points, query, k)),
            Some(root) => {
                let mut heap = BinaryHeap::with_capacity(k + 1);
                self.search(root, query, k, &mut heap);
                Ok(heap
                    .into_sorted_vec()
                    .into_iter()
                    .map(|c| c.index)
                    .collect())
            }
        }
    }

    fn search(&self, node: &Node, query: usize, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                let q = &self.points[query];
                for &i in &self.order[*start..*end] {
                    if i == query {
                        continue;
                    }
                    let c = Candidate {
                        dist: sq_dist(q, &self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = self.points[query][*axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, heap);
                // Equal distances must still be visited for index tie-breaks.
                if heap.len() < k || delta * delta <= heap.peek().map_or(f64::INFINITY, |c| c.dist)
                {
                    self.search(far, query, k, heap);
                }
            }
        }
    }

    /// Neighbour lists for every point.
    pub fn table(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        (0..self.points.len()).map(|i| self.nearest(i, k)).collect()
    }
}

fn build_node(points: &[Vector3<f64>], order: &mut [usize], start: usize, end: usize) -> Node {
    if end - start <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let slice = &mut order[start..end];
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[slice[mid]][axis];
    // Left holds coordinates <= value, right >= value; the search visits the
    // far side whenever the plane is within the current radius.
    let left = build_node(points, order, start, start + mid);
    let right = build_node(points, order, start + mid, end);
    Node::Split {
        axis,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn check_args(n: usize, query: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must satisfy 0 < k < point count {n}"
        )));
    }
    if query >= n {
        return Err(Error::InvalidArgument(format!(
            "query index {query} out of range for {n} points"
        )));
    }
    Ok(())
}

/// Exhaustive scan; also the path used for small clouds.
pub fn brute_force(points: &[Vector3<f64>], query: usize, k: usize) -> Vec<usize> {
    let q = &points[query];
    let mut all: Vec<Candidate> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, p)| Candidate {
            dist: sq_dist(q, p),
            index: i,
        })
        .collect();
    let k = k.min(all.len());
    if k < all.len() {
        all.select_nth_unstable(k);
        all.truncate(k);
    }
    all.sort_unstable();
    all.into_iter().map(|c| c.index).collect()
}

/// The `k` nearest neighbours of `cloud.points[query_index]`.
pub fn knn_indices(cloud: &GaussianCloud, query_index: usize, k: usize) -> Result<Vec<usize>> {
    check_args(cloud.len(), query_index, k)?;
    let positions = cloud.positions();
    if positions.len() < BRUTE_FORCE_LIMIT {
        return Ok(brute_force(&positions, query_index, k));
    }
    SpatialIndex::build(&positions).nearest(query_index, k)
}

/// Neighbour lists for every point of `cloud`.
pub fn knn_table(cloud: &GaussianCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    check_args(cloud.len(), 0, k)?;
    SpatialIndex::build(&cloud.positions()).table(k)
}
