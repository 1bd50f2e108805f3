//! Exact nearest-neighbour queries over a static 3D point set.

use crate::geom::Vec3;
use crate::scalar::Real;

/// Balanced kd-tree stored implicitly: the node of range `[lo, hi)` is at
/// `(lo + hi) / 2`, its left subtree holds `[lo, mid)` and its right subtree
/// `[mid + 1, hi)`.
#[derive(Clone, Debug)]
pub struct KdTree<T> {
    points: Vec<Vec3<T>>,
    /// Original index of each stored point.
    ids: Vec<usize>,
    /// Split axis of the node at each position.
    axis: Vec<u8>,
}

impl<T: Real> KdTree<T> {
    pub fn build(points: &[Vec3<T>]) -> Self {
        let mut items: Vec<(Vec3<T>, usize)> = points.iter().copied().zip(0..).collect();
        let mut axis = vec![0u8; items.len()];
        build_range(&mut items, &mut axis);
        let (points, ids) = items.into_iter().unzip();
        Self { points, ids, axis }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index (into the build slice) and distance of the closest point.
    pub fn nearest(&self, q: Vec3<T>) -> Option<(usize, T)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (T::infinity(), usize::MAX);
        self.search(0, self.points.len(), q, &mut best);
        Some((self.ids[best.1], best.0.sqrt()))
    }

    fn search(&self, lo: usize, hi: usize, q: Vec3<T>, best: &mut (T, usize)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.points[mid];
        let d = p - q;
        let d2 = d.dot(d);
        if d2 < best.0 {
            *best = (d2, mid);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < T::zero() { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, best);
        if diff * diff < best.0 {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build_range<T: Real>(items: &mut [(Vec3<T>, usize)], axis: &mut [u8]) {
    if items.len() <= 1 {
        return;
    }
    // split on the axis of largest extent
    let mut lo = items[0].0;
    let mut hi = items[0].0;
    for (p, _) in items.iter() {
        lo = lo.min(*p);
        hi = hi.max(*p);
    }
    let ext = hi - lo;
    let ax = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| a.0[ax].partial_cmp(&b.0[ax]).unwrap_or(std::cmp::Ordering::Equal));
    axis[mid] = ax as u8;
    let (left, rest) = items.split_at_mut(mid);
    let (la, ra) = axis.split_at_mut(mid);
    build_range(left, la);
    build_range(&mut rest[1..], &mut ra[1..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3<f64>> {
        (0..n).map(|_| Vec3::new(rng.gen(), rng.gen::<f64>() * 0.1, rng.gen::<f64>() * 3.0)).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1, 2, 3, 17, 500] {
            let pts = cloud(&mut rng, n);
            let tree = KdTree::build(&pts);
            for q in cloud(&mut rng, 200) {
                let (i, d) = tree.nearest(q).unwrap();
                let bf = pts.iter().map(|p| (*p - q).norm()).fold(f64::INFINITY, f64::min);
                assert_eq!(d, bf);
                assert_eq!((pts[i] - q).norm(), bf);
            }
        }
    }

    #[test]
    fn duplicate_points() {
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 9];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest(Vec3::new(1.0, 1.0, 2.0)).unwrap().1, 1.0);
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::<f64>::build(&[]).nearest(Vec3::zero()).is_none());
    }
}
