//! Exact nearest-neighbour k-d tree.
//!
//! Queries return exactly the brute-force answer: candidates are compared by
//! `(squared distance, index)`, so equidistant points resolve to the lowest
//! index, and a subtree is skipped only when its splitting plane is strictly
//! farther than the current worst kept candidate.

use crate::numcore::Real;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum KdNode<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Spatial index over a borrowed point set.
#[derive(Debug, Clone)]
pub struct KdTree<'a, T> {
    points: &'a [[T; 3]],
    order: Vec<usize>,
    nodes: Vec<KdNode<T>>,
}

/// A neighbour: point index and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub dist2: T,
}

impl<T: Real> Neighbor<T> {
    fn none() -> Self {
        Neighbor {
            index: usize::MAX,
            dist2: T::infinity(),
        }
    }

    #[inline]
    fn better_than(&self, other: &Self) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.index < other.index)
    }
}

#[inline]
pub(crate) fn dist2<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl<'a, T: Real> KdTree<'a, T> {
    pub fn build(points: &'a [[T; 3]]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_range(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        // split on the axis of largest spread
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
            .unwrap();
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            pts[i][axis].partial_cmp(&pts[j][axis]).unwrap().then(i.cmp(&j))
        });
        let value = pts[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start, end });
        let left = self.build_range(start, mid);
        let right = self.build_range(mid, end);
        self.nodes[id] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest point to `q`.
    pub fn nearest(&self, q: &[T; 3]) -> Neighbor<T> {
        let mut best = [Neighbor::none(); 1];
        if !self.nodes.is_empty() {
            self.search(0, q, &mut best);
        }
        best[0]
    }

    /// Nearest and second-nearest points to `q` (second is `usize::MAX` /
    /// infinity when the tree has a single point).
    pub fn nearest2(&self, q: &[T; 3]) -> [Neighbor<T>; 2] {
        let mut best = [Neighbor::none(); 2];
        if !self.nodes.is_empty() {
            self.search(0, q, &mut best);
        }
        best
    }

    fn search<const K: usize>(&self, node: usize, q: &[T; 3], best: &mut [Neighbor<T>; K]) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: dist2(q, &self.points[i]),
                    };
                    insert(best, cand);
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best[K - 1].dist2 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[inline]
fn insert<T: Real, const K: usize>(best: &mut [Neighbor<T>; K], cand: Neighbor<T>) {
    if !cand.better_than(&best[K - 1]) {
        return;
    }
    let mut pos = K - 1;
    while pos > 0 && cand.better_than(&best[pos - 1]) {
        best[pos] = best[pos - 1];
        pos -= 1;
    }
    best[pos] = cand;
}

/// Brute-force nearest and second-nearest, with the same ordering rules.
pub fn brute_nearest2<T: Real>(points: &[[T; 3]], q: &[T; 3]) -> [Neighbor<T>; 2] {
    let mut best = [Neighbor::none(); 2];
    for (i, p) in points.iter().enumerate() {
        insert(
            &mut best,
            Neighbor {
                index: i,
                dist2: dist2(q, p),
            },
        );
    }
    best
}
