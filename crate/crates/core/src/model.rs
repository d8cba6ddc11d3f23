//! Mixture parameters, the likelihood/prior losses and their analytic
//! gradients.
//!
//! Parameters live in two spaces. [`ModelParams`] is the constrained space:
//! mixing weights on the simplex, strictly positive per-channel variances
//! and Dirichlet concentrations. [`UnconstrainedParams`] is the optimizer
//! space: softmax logits for the weights and logs for everything positive,
//! so every gradient step lands on a valid model by construction.
//!
//! The combined loss is the data negative log-likelihood plus the negative
//! log-priors: Dirichlet(α/K) on the weights, InverseGamma(1,1) on each
//! concentration and each variance, Normal(0,1) on each mean coordinate
//! (means are in standardized units).

use serde::{Deserialize, Serialize};

use crate::cube::{BandStats, HsiCube};
use crate::math::{
    digamma, log_sum_exp, neg_log_dirichlet, neg_log_inv_gamma_1_1, neg_log_std_normal,
    DENSITY_FLOOR, LN_2PI,
};
use crate::parallel::tree_reduce;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("pixel has {actual} channels, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty pixel set")]
    EmptyPixelSet,
    #[error("non-finite value in {block}")]
    NonFinite { block: &'static str },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("cannot read model file: {0}")]
    Load(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// A dense set of spectra: `n` rows of `d` channels, row-major.
#[derive(Debug, Clone)]
pub struct Pixels {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Pixels {
    pub fn from_vec(n: usize, d: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != n * d {
            return Err(ModelError::DimensionMismatch {
                expected: n * d,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { block: "pixels" });
        }
        Ok(Self { n, d, data })
    }

    /// Extracts the valid (mask-true) pixels of a cube in raster order.
    pub fn from_cube(cube: &HsiCube) -> Self {
        let d = cube.bands();
        let mut data = Vec::with_capacity(cube.valid_pixel_count() * d);
        for (p, px) in cube.data().chunks(d).enumerate() {
            if cube.mask()[p] {
                data.extend(px.iter().map(|&v| v as f64));
            }
        }
        let n = data.len() / d.max(1);
        Self { n, d, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Copies the given rows into a new set (minibatch extraction).
    pub fn subset(&self, rows: &[usize]) -> Pixels {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Pixels {
            n: rows.len(),
            d: self.d,
            data,
        }
    }
}

/// Constrained mixture parameters for `k` components over `d` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub k: usize,
    pub d: usize,
    /// Mixing weights, a K-simplex.
    pub pi: Vec<f64>,
    /// Component means, K x D row-major, standardized units.
    pub mu: Vec<f64>,
    /// Per-channel variances, K x D row-major, strictly positive.
    pub sigma2: Vec<f64>,
    /// Dirichlet concentrations, strictly positive.
    pub alpha: Vec<f64>,
}

impl ModelParams {
    pub fn new(
        k: usize,
        d: usize,
        pi: Vec<f64>,
        mu: Vec<f64>,
        sigma2: Vec<f64>,
        alpha: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let params = Self {
            k,
            d,
            pi,
            mu,
            sigma2,
            alpha,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (k, d) = (self.k, self.d);
        if k == 0 || d == 0 {
            return Err(ModelError::InvalidParams("k and d must be positive".into()));
        }
        if self.pi.len() != k || self.alpha.len() != k {
            return Err(ModelError::InvalidParams("pi/alpha length != k".into()));
        }
        if self.mu.len() != k * d || self.sigma2.len() != k * d {
            return Err(ModelError::InvalidParams("mu/sigma2 length != k*d".into()));
        }
        let sum: f64 = self.pi.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.pi.iter().any(|&p| p < 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "pi is not a simplex (sum {sum})"
            )));
        }
        if self.sigma2.iter().any(|&s| s <= 0.0 || s.is_nan()) {
            return Err(ModelError::InvalidParams("sigma2 must be positive".into()));
        }
        if self.alpha.iter().any(|&a| a <= 0.0 || a.is_nan()) {
            return Err(ModelError::InvalidParams("alpha must be positive".into()));
        }
        let all = self
            .pi
            .iter()
            .chain(&self.mu)
            .chain(&self.sigma2)
            .chain(&self.alpha);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { block: "params" });
        }
        Ok(())
    }

    pub fn mu_row(&self, j: usize) -> &[f64] {
        &self.mu[j * self.d..(j + 1) * self.d]
    }

    pub fn sigma2_row(&self, j: usize) -> &[f64] {
        &self.sigma2[j * self.d..(j + 1) * self.d]
    }
}

/// Optimizer-space mirror of [`ModelParams`]: `pi = softmax(pi_logits)`,
/// `sigma2 = exp(log_sigma2)`, `alpha = exp(log_alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams {
    pub k: usize,
    pub d: usize,
    pub pi_logits: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_sigma2: Vec<f64>,
    pub log_alpha: Vec<f64>,
}

impl UnconstrainedParams {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            k,
            d,
            pi_logits: vec![0.0; k],
            mu: vec![0.0; k * d],
            log_sigma2: vec![0.0; k * d],
            log_alpha: vec![0.0; k],
        }
    }

    /// Maps into the constrained space; every finite input yields a valid
    /// model.
    pub fn constrain(&self) -> Result<ModelParams, ModelError> {
        for (block, values) in self.blocks() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { block });
            }
        }
        let max = self
            .pi_logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = self.pi_logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let pi: Vec<f64> = exp.iter().map(|e| e / sum).collect();
        ModelParams::new(
            self.k,
            self.d,
            pi,
            self.mu.clone(),
            self.log_sigma2.iter().map(|v| v.exp()).collect(),
            self.log_alpha.iter().map(|v| v.exp()).collect(),
        )
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("pi_logits", self.pi_logits.as_slice()),
            ("mu", self.mu.as_slice()),
            ("log_sigma2", self.log_sigma2.as_slice()),
            ("log_alpha", self.log_alpha.as_slice()),
        ]
    }

    pub fn n_coords(&self) -> usize {
        2 * self.k + 2 * self.k * self.d
    }

    /// Flattens in block order pi_logits, mu, log_sigma2, log_alpha.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_coords());
        flat.extend(&self.pi_logits);
        flat.extend(&self.mu);
        flat.extend(&self.log_sigma2);
        flat.extend(&self.log_alpha);
        flat
    }

    pub fn from_flat(k: usize, d: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), 2 * k + 2 * k * d);
        let (pi_logits, rest) = flat.split_at(k);
        let (mu, rest) = rest.split_at(k * d);
        let (log_sigma2, log_alpha) = rest.split_at(k * d);
        Self {
            k,
            d,
            pi_logits: pi_logits.to_vec(),
            mu: mu.to_vec(),
            log_sigma2: log_sigma2.to_vec(),
            log_alpha: log_alpha.to_vec(),
        }
    }
}

// ---------------------------------------------------------------------------
// Likelihood
// ---------------------------------------------------------------------------

/// log Normal(x | mu, diag sigma2) for one component.
fn log_normal_diag(x: &[f64], mu: &[f64], sigma2: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&xv, &m), &s2) in x.iter().zip(mu).zip(sigma2) {
        let diff = xv - m;
        acc += LN_2PI + s2.ln() + diff * diff / s2;
    }
    -0.5 * acc
}

fn check_dim(theta: &ModelParams, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != theta.d {
        return Err(ModelError::DimensionMismatch {
            expected: theta.d,
            actual: x.len(),
        });
    }
    Ok(())
}

/// Per-component log π_j + log Normal(x | μ_j, Σ_j), written into `out`.
fn weighted_log_densities(theta: &ModelParams, x: &[f64], out: &mut [f64]) {
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = theta.pi[j].ln() + log_normal_diag(x, theta.mu_row(j), theta.sigma2_row(j));
    }
}

/// log Σ_j π_j Normal(x | μ_j, Σ_j), via log-sum-exp.
pub fn log_mixture_likelihood(theta: &ModelParams, x: &[f64]) -> Result<f64, ModelError> {
    check_dim(theta, x)?;
    let mut lp = vec![0.0; theta.k];
    weighted_log_densities(theta, x, &mut lp);
    Ok(log_sum_exp(&lp))
}

/// Posterior component probabilities r_j ∝ π_j Normal(x | μ_j, Σ_j).
pub fn responsibilities(theta: &ModelParams, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_dim(theta, x)?;
    let mut lp = vec![0.0; theta.k];
    weighted_log_densities(theta, x, &mut lp);
    let lse = log_sum_exp(&lp);
    Ok(lp.iter().map(|l| (l - lse).exp()).collect())
}

/// Hard assignment: argmax_j Normal(x | μ_j, Σ_j), deliberately unweighted
/// by π. Ties break to the lowest index. Returns a 1-based cluster id.
pub fn predict(theta: &ModelParams, x: &[f64]) -> Result<usize, ModelError> {
    check_dim(theta, x)?;
    let mut best = 0usize;
    let mut best_lp = f64::NEG_INFINITY;
    for j in 0..theta.k {
        let lp = log_normal_diag(x, theta.mu_row(j), theta.sigma2_row(j));
        if lp > best_lp {
            best_lp = lp;
            best = j;
        }
    }
    Ok(best + 1)
}

/// π-weighted posterior-mode assignment, the optional alternative to
/// [`predict`]. Returns a 1-based cluster id.
pub fn predict_weighted(theta: &ModelParams, x: &[f64]) -> Result<usize, ModelError> {
    check_dim(theta, x)?;
    let mut lp = vec![0.0; theta.k];
    weighted_log_densities(theta, x, &mut lp);
    let mut best = 0usize;
    let mut best_lp = f64::NEG_INFINITY;
    for (j, &l) in lp.iter().enumerate() {
        if l > best_lp {
            best_lp = l;
            best = j;
        }
    }
    Ok(best + 1)
}

/// −Σ_i log-mixture-likelihood over the pixel set, reduced in a fixed tree.
pub fn data_nll(theta: &ModelParams, pixels: &Pixels) -> Result<f64, ModelError> {
    if pixels.is_empty() {
        return Err(ModelError::EmptyPixelSet);
    }
    if pixels.dim() != theta.d {
        return Err(ModelError::DimensionMismatch {
            expected: theta.d,
            actual: pixels.dim(),
        });
    }
    let nll = tree_reduce(
        0..pixels.len(),
        &|range| {
            let mut lp = vec![0.0; theta.k];
            let mut acc = 0.0;
            for i in range {
                weighted_log_densities(theta, pixels.row(i), &mut lp);
                acc -= log_sum_exp(&lp);
            }
            acc
        },
        &|a, b| a + b,
    );
    Ok(nll)
}

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

/// −log prior over all parameter blocks. π and σ² are floored at
/// [`DENSITY_FLOOR`] inside the densities, which keeps the Dirichlet and
/// inverse-gamma terms finite at the boundary.
pub fn prior_nll(theta: &ModelParams) -> Result<f64, ModelError> {
    theta.validate()?;
    let k = theta.k as f64;
    let conc: Vec<f64> = theta.alpha.iter().map(|a| a / k).collect();
    if conc.iter().any(|&a| a <= 0.0 || a.is_nan()) {
        return Err(ModelError::InvalidParams("alpha/K must be positive".into()));
    }
    let mut nll = neg_log_dirichlet(&theta.pi, &conc);
    for &a in &theta.alpha {
        nll += neg_log_inv_gamma_1_1(a);
    }
    for &m in &theta.mu {
        nll += neg_log_std_normal(m);
    }
    for &s2 in &theta.sigma2 {
        nll += neg_log_inv_gamma_1_1(s2);
    }
    Ok(nll)
}

/// Combined loss: data NLL plus prior NLL at the constrained image of `u`.
pub fn total_loss(u: &UnconstrainedParams, pixels: &Pixels) -> Result<f64, ModelError> {
    let theta = u.constrain()?;
    Ok(data_nll(&theta, pixels)? + prior_nll(&theta)?)
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Data-term gradient accumulator; one per reduction leaf.
#[derive(Clone)]
pub struct DataGrad {
    pub nll: f64,
    pub pi_logits: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_sigma2: Vec<f64>,
    /// Total responsibility mass per component.
    pub mass: Vec<f64>,
}

impl DataGrad {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            nll: 0.0,
            pi_logits: vec![0.0; k],
            mu: vec![0.0; k * d],
            log_sigma2: vec![0.0; k * d],
            mass: vec![0.0; k],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.nll += other.nll;
        for (a, b) in self.pi_logits.iter_mut().zip(&other.pi_logits) {
            *a += b;
        }
        for (a, b) in self.mu.iter_mut().zip(&other.mu) {
            *a += b;
        }
        for (a, b) in self.log_sigma2.iter_mut().zip(&other.log_sigma2) {
            *a += b;
        }
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        self
    }
}

/// Data NLL with its gradient in unconstrained coordinates.
///
/// Per pixel, with responsibilities r_j = softmax_j(log π_j + log N_j):
/// d/d pi_logit_t  = π_t − r_t   (softmax chain rule; rows sum to zero)
/// d/d μ_jd        = r_j (μ_jd − x_d) / σ²_jd
/// d/d log σ²_jd   = r_j (1 − (x_d − μ_jd)² / σ²_jd) / 2
pub fn data_nll_grad(theta: &ModelParams, pixels: &Pixels) -> Result<DataGrad, ModelError> {
    if pixels.is_empty() {
        return Err(ModelError::EmptyPixelSet);
    }
    if pixels.dim() != theta.d {
        return Err(ModelError::DimensionMismatch {
            expected: theta.d,
            actual: pixels.dim(),
        });
    }
    let (k, d) = (theta.k, theta.d);
    let grad = tree_reduce(
        0..pixels.len(),
        &|range| {
            let mut acc = DataGrad::zeros(k, d);
            let mut lp = vec![0.0; k];
            for i in range {
                let x = pixels.row(i);
                weighted_log_densities(theta, x, &mut lp);
                let lse = log_sum_exp(&lp);
                acc.nll -= lse;
                for (j, &lpj) in lp.iter().enumerate() {
                    let r = (lpj - lse).exp();
                    acc.mass[j] += r;
                    acc.pi_logits[j] += theta.pi[j] - r;
                    let mu_j = theta.mu_row(j);
                    let s2_j = theta.sigma2_row(j);
                    for b in 0..d {
                        let diff = x[b] - mu_j[b];
                        acc.mu[j * d + b] += r * (mu_j[b] - x[b]) / s2_j[b];
                        acc.log_sigma2[j * d + b] += 0.5 * r * (1.0 - diff * diff / s2_j[b]);
                    }
                }
            }
            acc
        },
        &DataGrad::merge,
    );
    Ok(grad)
}

/// Prior NLL with its gradient in unconstrained coordinates.
pub fn prior_nll_grad(theta: &ModelParams) -> Result<(f64, UnconstrainedParams), ModelError> {
    let nll = prior_nll(theta)?;
    let (k, d) = (theta.k, theta.d);
    let kf = k as f64;
    let mut g = UnconstrainedParams::zeros(k, d);

    // Dirichlet(π | α/K) through the softmax. With c_j = ∂(−log Dir)/∂π_j,
    // the logit gradient is π_t (c_t − Σ_j c_j π_j). The floor zeroes the
    // density's sensitivity below DENSITY_FLOOR.
    let conc: Vec<f64> = theta.alpha.iter().map(|a| a / kf).collect();
    let c: Vec<f64> = theta
        .pi
        .iter()
        .zip(&conc)
        .map(|(&p, &a)| {
            if p > DENSITY_FLOOR {
                -(a - 1.0) / p
            } else {
                0.0
            }
        })
        .collect();
    let dot: f64 = c.iter().zip(&theta.pi).map(|(&ci, &pi)| ci * pi).sum();
    for (t, slot) in g.pi_logits.iter_mut().enumerate() {
        *slot = theta.pi[t] * (c[t] - dot);
    }

    // Dirichlet normalizer and log π terms w.r.t. log α, plus the
    // InverseGamma(1,1) prior on α itself.
    let total_conc: f64 = conc.iter().sum();
    let psi_total = digamma(total_conc);
    for (t, slot) in g.log_alpha.iter_mut().enumerate() {
        let a = conc[t];
        let log_pi_t = theta.pi[t].max(DENSITY_FLOOR).ln();
        *slot = a * (digamma(a) - psi_total - log_pi_t) + 2.0 - 1.0 / theta.alpha[t];
    }

    // Normal(0,1) on means.
    for (gm, &m) in g.mu.iter_mut().zip(&theta.mu) {
        *gm = m;
    }

    // InverseGamma(1,1) on variances, through the exp.
    for (gs, &s2) in g.log_sigma2.iter_mut().zip(&theta.sigma2) {
        *gs = if s2 > DENSITY_FLOOR {
            2.0 - 1.0 / s2
        } else {
            0.0
        };
    }

    Ok((nll, g))
}

/// Gradient of [`total_loss`] with respect to every unconstrained field.
pub fn loss_gradient(
    u: &UnconstrainedParams,
    pixels: &Pixels,
) -> Result<UnconstrainedParams, ModelError> {
    let theta = u.constrain()?;
    let data = data_nll_grad(&theta, pixels)?;
    let (_, mut g) = prior_nll_grad(&theta)?;
    for (a, b) in g.pi_logits.iter_mut().zip(&data.pi_logits) {
        *a += b;
    }
    for (a, b) in g.mu.iter_mut().zip(&data.mu) {
        *a += b;
    }
    for (a, b) in g.log_sigma2.iter_mut().zip(&data.log_sigma2) {
        *a += b;
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// JSON shape of [`ModelParams`]: mu and sigma2 as K rows of D values.
#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    k: usize,
    d: usize,
    pi: Vec<f64>,
    mu: Vec<Vec<f64>>,
    sigma2: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows = |flat: &[f64]| flat.chunks(self.d).map(|r| r.to_vec()).collect();
        ParamsRepr {
            k: self.k,
            d: self.d,
            pi: self.pi.clone(),
            mu: rows(&self.mu),
            sigma2: rows(&self.sigma2),
            alpha: self.alpha.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ParamsRepr::deserialize(deserializer)?;
        let flat = |rows: Vec<Vec<f64>>| -> Vec<f64> { rows.into_iter().flatten().collect() };
        ModelParams::new(
            repr.k,
            repr.d,
            repr.pi,
            flat(repr.mu),
            flat(repr.sigma2),
            repr.alpha,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// On-disk model document; floats round-trip exactly through JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub params: ModelParams,
    pub band_stats: BandStats,
}

impl ModelFile {
    pub fn new(params: &ModelParams, band_stats: &BandStats) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            params: params.clone(),
            band_stats: band_stats.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(ModelParams, BandStats), ModelError> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ModelError::Load(format!(
                "schema version {} (this build reads {})",
                self.schema_version, MODEL_SCHEMA_VERSION
            )));
        }
        self.params.validate()?;
        Ok((self.params, self.band_stats))
    }
}

pub fn save_model(
    path: &std::path::Path,
    params: &ModelParams,
    band_stats: &BandStats,
) -> Result<(), ModelError> {
    let file = ModelFile::new(params, band_stats);
    let json = serde_json::to_string_pretty(&file).expect("model serializes");
    std::fs::write(path, json).map_err(|e| ModelError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_model(path: &std::path::Path) -> Result<(ModelParams, BandStats), ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| ModelError::Load(e.to_string()))?;
    file.into_parts()
}
