use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tolerance: f64,
    /// How many empty-cluster re-seeds are tolerated before giving up.
    pub max_reseeds: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-6, max_reseeds: 32 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansReport<T> {
    pub centroids: EmbeddingMatrix<T>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).to_f64_lossy().powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations over the rows of `points`.
pub fn kmeans_init<T: Scalar>(
    points: &EmbeddingMatrix<T>,
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<KMeansReport<T>> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let data = points.data();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Array2::<T>::zeros((k, points.dim()));

    // k-means++ seeding
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > r && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(pick)));
        }
    }

    let mut assignment = vec![0usize; n];
    let mut distances = vec![0.0f64; n];
    let mut objective = Vec::new();
    let mut reseeds = 0usize;
    let mut iterations = 0usize;
    loop {
        // assignment step
        for i in 0..n {
            let (best, dist) = (0..k)
                .map(|c| (c, sq_dist(data.row(i), centroids.row(c))))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            assignment[i] = best;
            distances[i] = dist;
        }
        objective.push(distances.iter().sum());
        if iterations == config.max_iterations {
            break;
        }
        iterations += 1;

        // update step
        let mut sums = Array2::<f64>::zeros((k, points.dim()));
        let mut sizes = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            sizes[c] += 1;
            for (s, &x) in sums.row_mut(c).iter_mut().zip(data.row(i).iter()) {
                *s += x.to_f64_lossy();
            }
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            if sizes[c] == 0 {
                reseeds += 1;
                if reseeds > config.max_reseeds {
                    return Err(Error::EmptyCluster { retries: config.max_reseeds });
                }
                let far = distances
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc })
                    .0;
                log::debug!("k-means: cluster {c} empty, re-seeding from point {far}");
                centroids.row_mut(c).assign(&data.row(far));
                distances[far] = 0.0;
                max_shift = f64::INFINITY;
                continue;
            }
            let inv = 1.0 / sizes[c] as f64;
            let mut shift = 0.0;
            for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c).iter()) {
                let v = T::of(s * inv);
                shift += (v - *dst).to_f64_lossy().powi(2);
                *dst = v;
            }
            max_shift = max_shift.max(shift.sqrt());
        }
        if max_shift <= config.tolerance {
            // one final assignment pass keeps `assignment` consistent with the centroids
            continue_final(data, &centroids, &mut assignment, &mut objective);
            break;
        }
    }

    Ok(KMeansReport { centroids: EmbeddingMatrix::new(centroids), assignment, objective, iterations })
}

fn continue_final<T: Scalar>(
    data: &Array2<T>,
    centroids: &Array2<T>,
    assignment: &mut [usize],
    objective: &mut Vec<f64>,
) {
    let mut total = 0.0;
    for (i, a) in assignment.iter_mut().enumerate() {
        let (best, dist) = (0..centroids.nrows())
            .map(|c| (c, sq_dist(data.row(i), centroids.row(c))))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        *a = best;
        total += dist;
    }
    objective.push(total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn clouds() -> (EmbeddingMatrix<f64>, [f64; 2], [f64; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        for i in 0..100 {
            let center = if i < 50 { [5.0, 5.0] } else { [-5.0, 0.0] };
            rows.push(center[0] + noise.sample(&mut rng));
            rows.push(center[1] + noise.sample(&mut rng));
        }
        let m = Array2::from_shape_vec((100, 2), rows).unwrap();
        let mean = |lo: usize, hi: usize, c: usize| (lo..hi).map(|i| m[[i, c]]).sum::<f64>() / (hi - lo) as f64;
        let a = [mean(0, 50, 0), mean(0, 50, 1)];
        let b = [mean(50, 100, 0), mean(50, 100, 1)];
        (EmbeddingMatrix::new(m), a, b)
    }

    #[test]
    fn separated_clouds_recover_means() {
        let (pts, a, b) = clouds();
        let r = kmeans_init(&pts, 2, 3, &KMeansConfig::default()).unwrap();
        let c = r.centroids.data();
        let close = |row: usize, t: [f64; 2]| (c[[row, 0]] - t[0]).abs() < 1e-9 && (c[[row, 1]] - t[1]).abs() < 1e-9;
        assert!((close(0, a) && close(1, b)) || (close(0, b) && close(1, a)), "{c:?}");
    }

    #[test]
    fn k_equals_n_picks_every_point() {
        let (pts, _, _) = clouds();
        let r = kmeans_init(&pts, 100, 5, &KMeansConfig::default()).unwrap();
        let mut matched = [false; 100];
        for c in r.centroids.data().rows() {
            let i = (0..100).find(|&i| pts.row(i) == c).expect("centroid is a data row");
            matched[i] = true;
        }
        assert!(matched.iter().all(|&m| m));
    }

    #[test]
    fn objective_non_increasing_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_simple_fn((200, 5), || rng.random::<f64>());
        let pts = EmbeddingMatrix::new(m);
        let r = kmeans_init(&pts, 7, 9, &KMeansConfig::default()).unwrap();
        assert!(r.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", r.objective);
        let again = kmeans_init(&pts, 7, 9, &KMeansConfig::default()).unwrap();
        assert_eq!(r.centroids, again.centroids);
        assert!(r.centroids.all_finite());
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let (pts, _, _) = clouds();
        assert!(kmeans_init(&pts, 101, 0, &KMeansConfig::default()).is_err());
    }
}
