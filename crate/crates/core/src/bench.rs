//! Wall-clock comparison of mixture inference against the k-means baseline,
//! reported as (dataset, algorithm, execution time) rows.
//!
//! Timings are the median of repeated runs on a monotonic clock and exclude
//! all I/O: pixels are extracted before the clock starts. Mixture fit time
//! is reported separately from inference because a trained model is reusable
//! while k-means pays its fit on every scene.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::kmeans::{kmeans_fit, kmeans_predict, KMeansError};
use crate::model::{predict, ModelError, ModelParams, Pixels};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dataset_name: String,
    pub kmeans_k: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
    /// Runs per measurement; the median is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dataset_name: "scene".to_string(),
            kmeans_k: 5,
            kmeans_max_iters: 50,
            kmeans_tol: 1e-6,
            seed: 42,
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgoTiming {
    pub algorithm: String,
    /// Seconds spent fitting; absent when a pre-trained model was supplied.
    pub fit_seconds: Option<f64>,
    pub predict_seconds: f64,
    pub predict_px_per_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub dataset_name: String,
    pub pixels: usize,
    pub bands: usize,
    pub timings: Vec<AlgoTiming>,
}

fn median_of(mut times: Vec<f64>) -> f64 {
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

/// Median wall time of `repeats` runs of `work`.
fn time_runs<F: FnMut()>(repeats: usize, mut work: F) -> f64 {
    let repeats = repeats.max(1);
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        work();
        times.push(t.elapsed().as_secs_f64());
    }
    median_of(times)
}

/// Median seconds for one mixture-inference pass over the pixel set.
pub fn time_predict(
    theta: &ModelParams,
    pixels: &Pixels,
    repeats: usize,
) -> Result<f64, BenchError> {
    if !pixels.is_empty() {
        predict(theta, pixels.row(0))?; // surface dimension errors before timing
    }
    let mut sink = 0usize;
    let secs = time_runs(repeats, || {
        for i in 0..pixels.len() {
            sink ^= predict(theta, pixels.row(i)).expect("dimensions pre-checked");
        }
    });
    std::hint::black_box(sink);
    Ok(secs)
}

/// Times a mixture predict-only pass and a k-means fit+predict on the same
/// pixels.
pub fn run_bench(
    pixels: &Pixels,
    theta: &ModelParams,
    config: &BenchConfig,
) -> Result<BenchResult, BenchError> {
    let n = pixels.len();

    let dpgmm_predict = time_predict(theta, pixels, config.repeats)?;

    let kmeans_fit_s = time_runs(config.repeats, || {
        let model = kmeans_fit(
            pixels,
            config.kmeans_k,
            config.seed,
            config.kmeans_max_iters,
            config.kmeans_tol,
        )
        .expect("bench pixel count validated by caller");
        std::hint::black_box(model.inertia);
    });
    let km = kmeans_fit(
        pixels,
        config.kmeans_k,
        config.seed,
        config.kmeans_max_iters,
        config.kmeans_tol,
    )?;
    let mut sink = 0usize;
    let kmeans_predict_s = time_runs(config.repeats, || {
        for i in 0..n {
            sink ^= kmeans_predict(&km, pixels.row(i)).expect("dimensions match");
        }
    });
    std::hint::black_box(sink);

    let throughput = |secs: f64| {
        if secs > 0.0 {
            n as f64 / secs
        } else {
            f64::INFINITY
        }
    };
    Ok(BenchResult {
        dataset_name: config.dataset_name.clone(),
        pixels: n,
        bands: pixels.dim(),
        timings: vec![
            AlgoTiming {
                algorithm: "dpgmm".to_string(),
                fit_seconds: None,
                predict_seconds: dpgmm_predict,
                predict_px_per_s: throughput(dpgmm_predict),
            },
            AlgoTiming {
                algorithm: "kmeans".to_string(),
                fit_seconds: Some(kmeans_fit_s),
                predict_seconds: kmeans_predict_s,
                predict_px_per_s: throughput(kmeans_predict_s),
            },
        ],
    })
}

/// Human-readable (Dataset, Algorithm, Execution time) table. The execution
/// time column counts inference only for the mixture and fit + inference for
/// k-means.
pub fn format_table(result: &BenchResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:<10} {:>18} {:>16}\n",
        "Dataset", "Algorithm", "Execution time (s)", "predict px/s"
    ));
    for t in &result.timings {
        let total = t.fit_seconds.unwrap_or(0.0) + t.predict_seconds;
        out.push_str(&format!(
            "{:<12} {:<10} {:>18.4} {:>16.0}\n",
            result.dataset_name, t.algorithm, total, t.predict_px_per_s
        ));
    }
    out
}
