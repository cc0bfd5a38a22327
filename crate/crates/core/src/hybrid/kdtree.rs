//! Static k-d tree over integer points with exact nearest-neighbor search.

/// Balanced k-d tree stored implicitly: the node of a range `[lo, hi)` is
/// its midpoint, with the left and right halves as children. Splitting
/// dimensions cycle with depth.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    dim: usize,
    /// Points in tree order, row-major.
    pts: Vec<i64>,
    /// Caller index of each tree slot.
    ids: Vec<usize>,
}

impl KdTree {
    /// Builds over `points` (row-major, `dim` columns). Returned ids index
    /// into the input rows.
    pub fn build(dim: usize, points: &[i64]) -> Self {
        assert!(dim > 0 && points.len() % dim == 0);
        let n = points.len() / dim;
        let mut order: Vec<usize> = (0..n).collect();
        split(dim, points, &mut order, 0);
        let mut pts = Vec::with_capacity(points.len());
        for &i in &order {
            pts.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        Self { dim, pts, ids: order }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn point(&self, slot: usize) -> &[i64] {
        &self.pts[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Nearest point as `(id, squared distance)`; among equidistant points
    /// the lexicographically smallest wins. `None` for an empty tree.
    pub fn nearest(&self, q: &[i64]) -> Option<(usize, i64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (i64::MAX, usize::MAX);
        self.search(q, 0, self.len(), 0, &mut best);
        Some((self.ids[best.1], best.0))
    }

    fn search(&self, q: &[i64], lo: usize, hi: usize, depth: usize, best: &mut (i64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.point(mid);
        let d = dist2(p, q);
        if d < best.0 || (d == best.0 && p < self.point(best.1)) {
            *best = (d, mid);
        }
        let axis = depth % self.dim;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        // equality must still be explored for the tie rule
        if diff * diff <= best.0 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

#[inline]
pub fn dist2(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn split(dim: usize, pts: &[i64], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % dim;
    let mid = order.len() / 2;
    // points equal on the axis may fall on either side; search handles that
    order.select_nth_unstable_by_key(mid, |&i| pts[i * dim + axis]);
    let (left, rest) = order.split_at_mut(mid);
    split(dim, pts, left, depth + 1);
    split(dim, pts, &mut rest[1..], depth + 1);
}

/// Linear-scan reference with the same tie rule.
pub fn nearest_linear(dim: usize, points: &[i64], q: &[i64]) -> Option<(usize, i64)> {
    let mut best: Option<(usize, i64)> = None;
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let d = dist2(p, q);
        best = match best {
            Some((b, bd)) if bd < d || (bd == d && &points[b * dim..(b + 1) * dim] <= p) => Some((b, bd)),
            _ => Some((i, d)),
        };
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        let t = KdTree::build(1, &[3, 7]);
        assert_eq!(t.nearest(&[4]), Some((0, 1)));
        // 5 is equidistant; 3 is lexicographically smaller
        assert_eq!(t.nearest(&[5]), Some((0, 4)));
        let single = KdTree::build(2, &[4, 4]);
        assert_eq!(single.nearest(&[1, 0]), Some((0, 25)));
        assert_eq!(KdTree::build(2, &[]).nearest(&[0, 0]), None);
    }

    proptest! {
        #[test]
        fn matches_linear_scan(
            pts in prop::collection::vec((0i64..40, 0i64..40), 1..200),
            qs in prop::collection::vec((-5i64..45, -5i64..45), 1..40),
        ) {
            let flat: Vec<i64> = pts.iter().flat_map(|&(a, b)| [a, b]).collect();
            let t = KdTree::build(2, &flat);
            for (a, b) in qs {
                let q = [a, b];
                let (ti, td) = t.nearest(&q).unwrap();
                let (li, ld) = nearest_linear(2, &flat, &q).unwrap();
                prop_assert_eq!(td, ld);
                prop_assert_eq!(&flat[ti * 2..ti * 2 + 2], &flat[li * 2..li * 2 + 2]);
            }
        }
    }
}
