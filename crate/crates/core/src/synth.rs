//! Synthetic scenes with known mixture parameters and ground truth. These
//! are the quantitative oracle for the whole pipeline: the generating
//! parameters are exact, so recovery can be scored.

use serde::{Deserialize, Serialize};

use crate::cube::{GroundTruth, GtRegion, HsiCube};
use crate::model::Pixels;
use crate::rng::PortableRng;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(
        "layout does not cover the grid exactly once (cell {row},{col} covered {count} times)"
    )]
    BadLayout {
        row: usize,
        col: usize,
        count: usize,
    },
    #[error("rectangle {index} exceeds the grid or names component {component} of {true_k}")]
    BadRect {
        index: usize,
        component: usize,
        true_k: usize,
    },
    #[error("means/sigmas must be true_k x bands with positive sigmas")]
    BadParams,
    #[error("pi must be a simplex with positive-variance components")]
    BadSimplex,
}

/// An axis-aligned block of the grid assigned to one component (1-based).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectRegion {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub component: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub true_k: usize,
    /// K x D component means.
    pub means: Vec<Vec<f64>>,
    /// K x D per-channel standard deviations.
    pub sigmas: Vec<Vec<f64>>,
    pub layout: Vec<RectRegion>,
    pub noise_seed: u64,
}

impl SceneSpec {
    /// Paints the layout and checks every cell is covered exactly once.
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.means.len() != self.true_k
            || self.sigmas.len() != self.true_k
            || self.means.iter().any(|m| m.len() != self.bands)
            || self.sigmas.iter().any(|s| s.len() != self.bands)
        {
            return Err(SynthError::BadParams);
        }
        if self
            .sigmas
            .iter()
            .flatten()
            .any(|&s| s <= 0.0 || !s.is_finite())
        {
            return Err(SynthError::BadParams);
        }
        let mut cover = vec![0usize; self.height * self.width];
        for (i, rect) in self.layout.iter().enumerate() {
            if rect.component == 0
                || rect.component > self.true_k
                || rect.row + rect.height > self.height
                || rect.col + rect.width > self.width
            {
                return Err(SynthError::BadRect {
                    index: i,
                    component: rect.component,
                    true_k: self.true_k,
                });
            }
            for r in rect.row..rect.row + rect.height {
                for c in rect.col..rect.col + rect.width {
                    cover[r * self.width + c] += 1;
                }
            }
        }
        for (p, &count) in cover.iter().enumerate() {
            if count != 1 {
                return Err(SynthError::BadLayout {
                    row: p / self.width,
                    col: p % self.width,
                    count,
                });
            }
        }
        Ok(())
    }

    /// The stock test scene: 64x64 pixels, 20 bands spanning 400-1000 nm,
    /// `true_k` vertical strips whose means sit 6 standard deviations apart
    /// (unit noise), adjacent components 6 apart in euclidean distance.
    pub fn default_scene(true_k: usize, noise_seed: u64) -> SceneSpec {
        let (height, width, bands) = (64usize, 64usize, 20usize);
        let step = 6.0 / (bands as f64).sqrt();
        let means: Vec<Vec<f64>> = (0..true_k).map(|j| vec![j as f64 * step; bands]).collect();
        let sigmas = vec![vec![1.0; bands]; true_k];
        let mut layout = Vec::with_capacity(true_k);
        let mut col = 0usize;
        for j in 0..true_k {
            let remaining = width - col;
            let w = remaining / (true_k - j);
            layout.push(RectRegion {
                row: 0,
                col,
                height,
                width: w,
                component: j + 1,
            });
            col += w;
        }
        SceneSpec {
            height,
            width,
            bands,
            true_k,
            means,
            sigmas,
            layout,
            noise_seed,
        }
    }
}

fn scene_wavelengths(bands: usize) -> Vec<f64> {
    if bands == 1 {
        return vec![400.0];
    }
    (0..bands)
        .map(|b| 400.0 + 600.0 * b as f64 / (bands - 1) as f64)
        .collect()
}

/// Draws the scene: every pixel sampled from its rectangle's component,
/// ground truth one region per rectangle, plus the true component label per
/// pixel (1-based). Deterministic given `noise_seed`.
pub fn sample_scene(spec: &SceneSpec) -> Result<(HsiCube, GroundTruth, Vec<u32>), SynthError> {
    spec.validate()?;
    let (h, w, d) = (spec.height, spec.width, spec.bands);
    let mut component = vec![0usize; h * w];
    for rect in &spec.layout {
        for r in rect.row..rect.row + rect.height {
            for c in rect.col..rect.col + rect.width {
                component[r * w + c] = rect.component;
            }
        }
    }
    let mut rng = PortableRng::new(spec.noise_seed);
    let mut data = vec![0f32; h * w * d];
    for p in 0..h * w {
        let comp = component[p] - 1;
        let (mu, sigma) = (&spec.means[comp], &spec.sigmas[comp]);
        for b in 0..d {
            data[p * d + b] = (mu[b] + sigma[b] * rng.normal()) as f32;
        }
    }
    let cube = HsiCube::new(h, w, scene_wavelengths(d), data).expect("sampled cube is valid");
    let regions = spec
        .layout
        .iter()
        .enumerate()
        .map(|(i, rect)| {
            let mut pixels = Vec::with_capacity(rect.height * rect.width);
            for r in rect.row..rect.row + rect.height {
                for c in rect.col..rect.col + rect.width {
                    pixels.push((r, c));
                }
            }
            GtRegion {
                id: i as u32 + 1,
                class_name: format!("class-{}", rect.component),
                pixels,
            }
        })
        .collect();
    let gt = GroundTruth {
        height: h,
        width: w,
        regions,
    };
    debug_assert!(gt.validate().is_ok());
    let labels = component.iter().map(|&c| c as u32).collect();
    Ok((cube, gt, labels))
}

/// Draws `n` points from the mixture: labels ~ Categorical(pi), values from
/// the labeled component. Labels are 1-based. Deterministic given `seed`.
pub fn sample_gmm(
    pi: &[f64],
    means: &[Vec<f64>],
    sigmas: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<(Pixels, Vec<u32>), SynthError> {
    let k = pi.len();
    if k == 0
        || means.len() != k
        || sigmas.len() != k
        || pi.iter().any(|&p| p < 0.0)
        || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(SynthError::BadSimplex);
    }
    let d = means[0].len();
    if means.iter().any(|m| m.len() != d)
        || sigmas
            .iter()
            .any(|s| s.len() != d || s.iter().any(|&v| v <= 0.0 || v.is_nan()))
    {
        return Err(SynthError::BadParams);
    }
    let mut rng = PortableRng::new(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let j = rng.categorical(pi);
        labels.push(j as u32 + 1);
        for b in 0..d {
            data.push(means[j][b] + sigmas[j][b] * rng.normal());
        }
    }
    Ok((
        Pixels::from_vec(n, d, data).expect("sampled points are finite"),
        labels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_layout_partitions_the_grid() {
        for k in 1..=5 {
            let spec = SceneSpec::default_scene(k, 7);
            spec.validate().unwrap();
            let area: usize = spec.layout.iter().map(|r| r.height * r.width).sum();
            assert_eq!(area, 64 * 64);
        }
    }

    #[test]
    fn default_scene_means_are_six_apart() {
        let spec = SceneSpec::default_scene(3, 7);
        for j in 0..2 {
            let d2: f64 = spec.means[j]
                .iter()
                .zip(&spec.means[j + 1])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!((d2.sqrt() - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overlapping_layout_is_rejected() {
        let mut spec = SceneSpec::default_scene(2, 7);
        spec.layout[1].col = 0;
        assert!(matches!(spec.validate(), Err(SynthError::BadLayout { .. })));
    }

    #[test]
    fn near_zero_noise_reproduces_means() {
        let mut spec = SceneSpec::default_scene(3, 5);
        spec.sigmas = vec![vec![1e-6; spec.bands]; spec.true_k];
        let (cube, _, labels) = sample_scene(&spec).unwrap();
        for (p, &label) in labels.iter().enumerate() {
            let comp = label as usize - 1;
            for b in 0..spec.bands {
                let v = cube.data()[p * spec.bands + b] as f64;
                assert!((v - spec.means[comp][b]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn region_sample_means_obey_clt_bound() {
        let spec = SceneSpec::default_scene(3, 7);
        let (cube, gt, _) = sample_scene(&spec).unwrap();
        for region in &gt.regions {
            let comp: usize = region.class_name["class-".len()..]
                .parse::<usize>()
                .unwrap()
                - 1;
            let n = region.pixels.len() as f64;
            for b in 0..spec.bands {
                let mean: f64 = region
                    .pixels
                    .iter()
                    .map(|&(r, c)| cube.pixel(r, c)[b] as f64)
                    .sum::<f64>()
                    / n;
                let bound = 3.0 * spec.sigmas[comp][b] / n.sqrt();
                assert!(
                    (mean - spec.means[comp][b]).abs() < bound,
                    "region {} band {b}: {mean} vs {}",
                    region.id,
                    spec.means[comp][b]
                );
            }
        }
    }

    #[test]
    fn same_seed_same_cube() {
        let spec = SceneSpec::default_scene(2, 123);
        let (a, _, _) = sample_scene(&spec).unwrap();
        let (b, _, _) = sample_scene(&spec).unwrap();
        let bits = |c: &HsiCube| c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn scene_ground_truth_is_valid() {
        let spec = SceneSpec::default_scene(4, 9);
        let (_, gt, _) = sample_scene(&spec).unwrap();
        gt.validate().unwrap();
        assert_eq!(gt.regions.len(), 4);
    }

    #[test]
    fn gmm_degenerate_weight_draws_one_label() {
        let (_, labels) = sample_gmm(
            &[1.0, 0.0],
            &[vec![0.0], vec![9.0]],
            &[vec![1.0], vec![1.0]],
            200,
            3,
        )
        .unwrap();
        assert!(labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn gmm_label_frequencies_within_binomial_bound() {
        let pi = [0.25, 0.6, 0.15];
        let means = vec![vec![0.0], vec![5.0], vec![-5.0]];
        let sigmas = vec![vec![1.0]; 3];
        let n = 50_000;
        let (_, labels) = sample_gmm(&pi, &means, &sigmas, n, 11).unwrap();
        for (j, &p) in pi.iter().enumerate() {
            let freq = labels.iter().filter(|&&l| l == j as u32 + 1).count() as f64 / n as f64;
            let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < bound, "component {j}: {freq} vs {p}");
        }
    }

    #[test]
    fn gmm_component_variance_within_ten_percent() {
        let pi = [0.5, 0.5];
        let means = vec![vec![0.0], vec![10.0]];
        let sigmas = vec![vec![1.5], vec![0.5]];
        let n = 100_000;
        let (px, labels) = sample_gmm(&pi, &means, &sigmas, n, 17).unwrap();
        for (j, sig) in sigmas.iter().enumerate() {
            let vals: Vec<f64> = (0..n)
                .filter(|&i| labels[i] == j as u32 + 1)
                .map(|i| px.row(i)[0])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            let truth = sig[0] * sig[0];
            assert!(
                (var - truth).abs() / truth < 0.10,
                "component {j}: var {var} vs {truth}"
            );
        }
    }

    #[test]
    fn gmm_rejects_bad_simplex() {
        assert!(sample_gmm(
            &[0.7, 0.7],
            &[vec![0.0], vec![1.0]],
            &[vec![1.0], vec![1.0]],
            5,
            0
        )
        .is_err());
    }
}
