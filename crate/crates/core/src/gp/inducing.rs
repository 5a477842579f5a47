//! Inducing-input selection (k-means++ seeding followed by Lloyd refinement).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::points::{dist, Points};

const LLOYD_ITERS: usize = 15;

/// `k` inducing inputs for `x`. Returns `x` itself when `k ≥ |x|`.
pub(crate) fn select_inducing(x: &Points, k: usize, seed: u64) -> Points {
    let n = x.len();
    if k >= n {
        return x.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| dist(x.row(i), x.row(centers[0])).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a center.
            (0..n).find(|i| !centers.contains(i)).expect("k < n")
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centers.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist(x.row(i), x.row(next)).powi(2));
        }
    }
    let mut z = x.select(&centers);
    let dim = x.dim;
    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let xi = x.row(i);
            let c = (0..k)
                .min_by(|&a, &b| dist(xi, z.row(a)).total_cmp(&dist(xi, z.row(b))))
                .expect("k > 0");
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(xi) {
                *s += v;
            }
        }
        let mut moved = false;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            for d in 0..dim {
                let v = sums[c * dim + d] / counts[c] as f64;
                if v != z.data[c * dim + d] {
                    moved = true;
                }
                z.data[c * dim + d] = v;
            }
        }
        if !moved {
            break;
        }
    }
    z
}
