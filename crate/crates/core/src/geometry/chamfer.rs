//! Chamfer distances between point sets.
//!
//! Both forms average over each side: `chamfer_sq` sums mean squared
//! nearest-neighbor distances, `chamfer_l1` mean unsquared distances.

use super::quat::Vec3;

fn nearest_sq(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let one = |p: &Vec3| {
        to.iter()
            .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
            .fold(f64::INFINITY, f64::min)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if from.len() * to.len() > 1 << 16 {
            return from.par_iter().map(one).collect();
        }
    }
    from.iter().map(one).collect()
}

/// Order-independent, so permuting either cloud gives a bit-identical value.
fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    super::order_free_sum(v) / n as f64
}

/// Squared-distance Chamfer. Empty inputs yield 0.
pub fn chamfer_sq(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    mean(nearest_sq(a, b).into_iter(), a.len()) + mean(nearest_sq(b, a).into_iter(), b.len())
}

/// Unsquared-distance Chamfer. Empty inputs yield 0.
pub fn chamfer_l1(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    mean(nearest_sq(a, b).into_iter().map(f64::sqrt), a.len())
        + mean(nearest_sq(b, a).into_iter().map(f64::sqrt), b.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Double loop written independently of the implementation above.
    fn brute(a: &[Vec3], b: &[Vec3], squared: bool) -> f64 {
        let mut total = 0.0;
        for (xs, ys) in [(a, b), (b, a)] {
            let mut s = 0.0;
            for x in xs {
                let mut best = f64::MAX;
                for y in ys {
                    let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
                    let d = if squared { d * d } else { d };
                    if d < best {
                        best = d;
                    }
                }
                s += best;
            }
            total += s / xs.len() as f64;
        }
        total
    }

    #[test]
    fn hand_values() {
        let a = [[0.0, 0.0, 0.0]];
        let b = [[1.0, 0.0, 0.0]];
        assert_eq!(chamfer_sq(&a, &b), 2.0);
        assert_eq!(chamfer_l1(&a, &b), 2.0);
        assert_eq!(chamfer_sq(&a, &a), 0.0);
        let far = [[3.0, 4.0, 0.0]];
        assert_eq!(chamfer_sq(&a, &far), 50.0);
        assert_eq!(chamfer_l1(&a, &far), 10.0);
    }

    fn cloud() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 1..50)
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_symmetric(a in cloud(), b in cloud()) {
            prop_assert!((chamfer_sq(&a, &b) - brute(&a, &b, true)).abs() < 1e-12);
            prop_assert!((chamfer_l1(&a, &b) - brute(&a, &b, false)).abs() < 1e-12);
            prop_assert_eq!(chamfer_sq(&a, &b), chamfer_sq(&b, &a));
            prop_assert_eq!(chamfer_l1(&a, &a), 0.0);
            prop_assert!(chamfer_sq(&a, &b) >= 0.0);
        }
    }
}
