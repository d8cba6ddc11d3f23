//! Lloyd's k-means with k-means++ seeding, the runtime baseline.

use std::ops::Range;

use crate::model::Pixels;
use crate::parallel::tree_reduce;
use crate::rng::PortableRng;

#[derive(Debug, thiserror::Error)]
pub enum KMeansError {
    #[error("{n} points cannot seed {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("point has {actual} channels, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone)]
pub struct KMeansModel {
    pub k: usize,
    pub d: usize,
    /// K x D row-major.
    pub centroids: Vec<f64>,
    /// Sum of squared distances of every point to its centroid.
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// D²-weighted seeding. Shared with the mixture initializer.
pub(crate) fn kmeans_pp_indices(x: &Pixels, k: usize, rng: &mut PortableRng) -> Vec<usize> {
    let n = x.len();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.index(n));
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining mass is zero (duplicate points): fall back to a
            // uniform draw.
            rng.index(n)
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(dist2(x.row(i), x.row(next)));
        }
    }
    chosen
}

/// Nearest-centroid pass; parallel over pixels with a fixed-tree inertia
/// reduction so results do not depend on the worker count.
fn assign(x: &Pixels, centroids: &[f64], k: usize, labels: &mut [usize]) -> f64 {
    let d = x.dim();
    let leaf = |range: Range<usize>| -> (Vec<(usize, usize)>, f64) {
        let mut out = Vec::with_capacity(range.len());
        let mut inertia = 0.0;
        for i in range {
            let row = x.row(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let dj = dist2(row, &centroids[j * d..(j + 1) * d]);
                if dj < best_d {
                    best_d = dj;
                    best = j;
                }
            }
            out.push((i, best));
            inertia += best_d;
        }
        (out, inertia)
    };
    let (pairs, inertia) = tree_reduce(
        0..x.len(),
        &leaf,
        &|mut a: (Vec<(usize, usize)>, f64), mut b| {
            a.0.append(&mut b.0);
            (a.0, a.1 + b.1)
        },
    );
    for (i, j) in pairs {
        labels[i] = j;
    }
    inertia
}

/// k-means++ init then Lloyd iterations until the largest centroid shift
/// drops below `tol` or `max_iters` is hit. Empty clusters are re-seeded
/// from the point farthest from its centroid. Deterministic given the seed.
pub fn kmeans_fit(
    x: &Pixels,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansModel, KMeansError> {
    let (n, d) = (x.len(), x.dim());
    if n < k || k == 0 {
        return Err(KMeansError::TooFewPoints { n, k });
    }
    let mut rng = PortableRng::new(seed);
    let seeds = kmeans_pp_indices(x, k, &mut rng);
    let mut centroids: Vec<f64> = seeds.iter().flat_map(|&i| x.row(i).to_vec()).collect();
    let mut labels = vec![0usize; n];

    for _ in 0..max_iters {
        assign(x, &centroids, k, &mut labels);

        let mut sums = vec![0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, &j) in labels.iter().enumerate() {
            counts[j] += 1;
            for (s, &v) in sums[j * d..(j + 1) * d].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        // Re-seed empty clusters from the farthest point.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let mut far = 0usize;
            let mut far_d = -1.0;
            for i in 0..n {
                let dj = dist2(x.row(i), &centroids[labels[i] * d..(labels[i] + 1) * d]);
                if dj > far_d {
                    far_d = dj;
                    far = i;
                }
            }
            counts[j] = 1;
            sums[j * d..(j + 1) * d].copy_from_slice(x.row(far));
            // Remove the stolen point from its old cluster's sum.
            let old = labels[far];
            counts[old] -= 1;
            for (s, &v) in sums[old * d..(old + 1) * d].iter_mut().zip(x.row(far)) {
                *s -= v;
            }
            labels[far] = j;
        }

        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let mut moved = 0.0;
            for b in 0..d {
                let new = sums[j * d + b] / counts[j] as f64;
                let delta = new - centroids[j * d + b];
                moved += delta * delta;
                centroids[j * d + b] = new;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift < tol {
            break;
        }
    }
    let inertia = assign(x, &centroids, k, &mut labels);
    Ok(KMeansModel {
        k,
        d,
        centroids,
        inertia,
    })
}

/// Nearest centroid by Euclidean distance; ties to the lower index.
/// Returns a 1-based cluster id.
pub fn kmeans_predict(model: &KMeansModel, x: &[f64]) -> Result<usize, KMeansError> {
    if x.len() != model.d {
        return Err(KMeansError::DimensionMismatch {
            expected: model.d,
            actual: x.len(),
        });
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for j in 0..model.k {
        let dj = dist2(x, &model.centroids[j * model.d..(j + 1) * model.d]);
        if dj < best_d {
            best_d = dj;
            best = j;
        }
    }
    Ok(best + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs(n_per: usize, seed: u64) -> Pixels {
        let mut rng = PortableRng::new(seed);
        let mut data = Vec::with_capacity(2 * n_per);
        for &center in &[-5.0, 5.0] {
            for _ in 0..n_per {
                data.push(center + 0.5 * rng.normal());
            }
        }
        Pixels::from_vec(2 * n_per, 1, data).unwrap()
    }

    #[test]
    fn recovers_two_separated_blobs() {
        let x = two_blobs(500, 9);
        let model = kmeans_fit(&x, 2, 1, 300, 1e-6).unwrap();
        let mut cs = vec![model.centroids[0], model.centroids[1]];
        cs.sort_by(f64::total_cmp);
        assert!((cs[0] + 5.0).abs() < 0.1, "{cs:?}");
        assert!((cs[1] - 5.0).abs() < 0.1, "{cs:?}");
    }

    #[test]
    fn k1_centroid_is_exactly_the_mean() {
        let data = vec![1.0, 2.5, -0.5, 7.0, 3.25];
        let x = Pixels::from_vec(5, 1, data.clone()).unwrap();
        let model = kmeans_fit(&x, 1, 0, 10, 1e-9).unwrap();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        assert_eq!(model.centroids[0], mean);
    }

    #[test]
    fn same_seed_same_model() {
        let x = two_blobs(100, 4);
        let a = kmeans_fit(&x, 2, 7, 300, 1e-6).unwrap();
        let b = kmeans_fit(&x, 2, 7, 300, 1e-6).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn too_few_points_rejected() {
        let x = Pixels::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            kmeans_fit(&x, 3, 0, 10, 1e-6),
            Err(KMeansError::TooFewPoints { n: 2, k: 3 })
        ));
    }

    #[test]
    fn predict_basics() {
        let model = KMeansModel {
            k: 2,
            d: 2,
            centroids: vec![0.0, 0.0, 4.0, 0.0],
            inertia: 0.0,
        };
        assert_eq!(kmeans_predict(&model, &[4.0, 0.0]).unwrap(), 2);
        // Equidistant point: lower index wins.
        assert_eq!(kmeans_predict(&model, &[2.0, 1.0]).unwrap(), 1);
        assert!(kmeans_predict(&model, &[1.0]).is_err());
    }

    #[test]
    fn predict_is_scale_invariant() {
        let model = KMeansModel {
            k: 3,
            d: 2,
            centroids: vec![1.0, 0.0, 0.0, 2.0, -3.0, 1.0],
            inertia: 0.0,
        };
        let scaled = KMeansModel {
            centroids: model.centroids.iter().map(|c| c * 2.5).collect(),
            ..model.clone()
        };
        for x in [[0.4, 0.3], [-1.0, 0.8], [2.0, 2.0]] {
            let sx: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
            assert_eq!(
                kmeans_predict(&model, &x).unwrap(),
                kmeans_predict(&scaled, &sx).unwrap()
            );
        }
    }

    #[test]
    fn inertia_non_increasing_over_iterations() {
        let x = two_blobs(200, 11);
        let mut last = f64::INFINITY;
        for iters in 1..8 {
            let model = kmeans_fit(&x, 2, 3, iters, 0.0).unwrap();
            assert!(
                model.inertia <= last + 1e-9,
                "iter {iters}: {last} -> {}",
                model.inertia
            );
            last = model.inertia;
        }
    }

    #[test]
    fn predict_reproduces_training_assignment() {
        let x = two_blobs(150, 21);
        let model = kmeans_fit(&x, 2, 5, 300, 1e-6).unwrap();
        // Assignments from a fresh pass equal predict on each row.
        let mut labels = vec![0usize; x.len()];
        assign(&x, &model.centroids, model.k, &mut labels);
        for (i, &label) in labels.iter().enumerate() {
            assert_eq!(kmeans_predict(&model, x.row(i)).unwrap(), label + 1);
        }
    }
}
