use crate::geometry::Vec3;

/// Static 3-d tree stored implicitly: the median of each index range is the
/// splitting point for that range.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            axes: vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let (mut min, mut max) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for p in &self.points[lo..hi] {
            min = min.inf(p);
            max = max.sup(p);
        }
        let axis = (max - min).imax();
        let mid = (lo + hi) / 2;
        self.points[lo..hi].select_nth_unstable_by(mid - lo, |a, b| a[axis].total_cmp(&b[axis]));
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance from `q` to its nearest stored point.
    pub fn nearest_squared(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.points.len(), &mut best);
        best
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = &self.points[mid];
        let d2 = (p - q).norm_squared();
        if d2 < *best {
            *best = d2;
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if delta * delta < *best {
            self.search(q, far.0, far.1, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn matches_linear_scan() {
        let mut rng = crate::rng::stream(4, 0);
        let mut cloud = |n: usize| -> Vec<Vec3> {
            (0..n)
                .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
                .collect()
        };
        let pts = cloud(500);
        let tree = KdTree::new(&pts);
        for q in cloud(200) {
            let brute = pts
                .iter()
                .map(|p| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest_squared(&q), brute);
        }
    }

    #[test]
    fn handles_duplicates() {
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 9];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest_squared(&Vec3::new(1.0, 1.0, 2.0)), 1.0);
    }
}
