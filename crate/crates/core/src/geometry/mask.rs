use super::ConvexPolygon;

/// Per-point inclusion flags for a padded `N_map × N_point` map set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointMask {
    pub n_instances: usize,
    pub n_points: usize,
    pub flags: Vec<bool>,
}

impl PointMask {
    pub fn get(&self, instance: usize, point: usize) -> bool {
        self.flags[instance * self.n_points + point]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Flag every valid ground-truth point that lies inside `region`.
///
/// `points` is a padded `N_map × N_point` array; rows with `valid[i] == false`
/// are never flagged.
pub fn mask_points(points: &[Vec<[f64; 2]>], valid: &[bool], region: &ConvexPolygon) -> PointMask {
    let n_instances = points.len();
    let n_points = points.first().map_or(0, Vec::len);
    let mut flags = vec![false; n_instances * n_points];
    if !region.is_empty() {
        for (i, inst) in points.iter().enumerate() {
            if !valid.get(i).copied().unwrap_or(false) {
                continue;
            }
            for (j, &p) in inst.iter().enumerate() {
                flags[i * n_points + j] = region.contains(p);
            }
        }
    }
    PointMask {
        n_instances,
        n_points,
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rect_intersection_region, OrientedRect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<[f64; 2]>> {
        (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| [rng.random_range(-15.0..15.0), rng.random_range(-7.5..7.5)])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn empty_region_masks_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_set(&mut rng, 4, 5);
        let m = mask_points(&pts, &[true; 4], &ConvexPolygon::default());
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn whole_window_masks_everything_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_set(&mut rng, 4, 5);
        let window = OrientedRect::new([0.0, 0.0], [15.0, 7.5], 0.0).unwrap().polygon();
        let m = mask_points(&pts, &[true, true, false, true], &window);
        assert_eq!(m.count(), 15);
        assert!(!m.get(2, 0));
    }

    /// Independent ray-casting point-in-polygon (boundary points excluded by
    /// construction since random points almost surely avoid edges).
    fn ray_cast(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
        let mut inside = false;
        let n = poly.len();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (poly[i], poly[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    #[test]
    fn random_regions_match_ray_casting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pts = random_set(&mut rng, 6, 10);
            let a = OrientedRect::new(
                [rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)],
                [rng.random_range(2.0..12.0), rng.random_range(1.0..6.0)],
                rng.random_range(-3.0..3.0),
            )
            .unwrap();
            let b = OrientedRect::new(
                [rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)],
                [rng.random_range(2.0..12.0), rng.random_range(1.0..6.0)],
                rng.random_range(-3.0..3.0),
            )
            .unwrap();
            let region = rect_intersection_region(&a, &b);
            let m = mask_points(&pts, &[true; 6], &region);
            for (i, inst) in pts.iter().enumerate() {
                for (j, &p) in inst.iter().enumerate() {
                    let expected = !region.is_empty() && ray_cast(&region.vertices, p);
                    assert_eq!(m.get(i, j), expected, "point {p:?}");
                }
            }
        }
    }
}
