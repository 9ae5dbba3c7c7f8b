use super::cloud::PointCloud;
use super::quat::Vec3;
use crate::error::{Error, Result};

fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Indices chosen by greedy farthest-point sampling, starting at `start`.
/// Ties go to the lowest index.
pub fn fps_indices(points: &[Vec3], k: usize, start: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::invalid(format!("cannot sample {k} of {} points", points.len())));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(Error::invalid(format!("start index {start} out of {}", points.len())));
    }
    let mut chosen = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..k {
        chosen.push(current);
        min_d[current] = f64::NEG_INFINITY;
        let mut best = f64::NEG_INFINITY;
        let mut next = current;
        for (i, p) in points.iter().enumerate() {
            if min_d[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist_sq(p, &points[current]);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best {
                best = min_d[i];
                next = i;
            }
        }
        current = next;
    }
    Ok(chosen)
}

pub fn fps(cloud: &PointCloud, k: usize, start: usize) -> Result<PointCloud> {
    let idx = fps_indices(&cloud.points, k, start)?;
    Ok(PointCloud::new(idx.into_iter().map(|i| cloud.points[i]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn min_pairwise(points: &[Vec3]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                best = best.min(dist_sq(&points[i], &points[j]).sqrt());
            }
        }
        best
    }

    #[test]
    fn line_example() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let out = fps(&cloud, 2, 0).unwrap();
        assert_eq!(out.points, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn full_sample_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec3> = (0..40).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let mut idx = fps_indices(&pts, 40, 7).unwrap();
        assert_eq!(idx[0], 7);
        idx.sort_unstable();
        assert_eq!(idx, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_oversampling() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 3]);
        assert!(fps(&cloud, 4, 0).is_err());
    }

    #[test]
    fn spreads_better_than_random_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vec3> = (0..300).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let k = 20;
        let chosen: Vec<Vec3> = fps_indices(&pts, k, 0).unwrap().into_iter().map(|i| pts[i]).collect();
        let fps_min = min_pairwise(&chosen);
        for _ in 0..100 {
            let subset: Vec<Vec3> = sample(&mut rng, pts.len(), k).into_iter().map(|i| pts[i]).collect();
            assert!(fps_min >= min_pairwise(&subset));
        }
    }
}
