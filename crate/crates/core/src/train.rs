//! Gradient-descent fitting of the mixture with adaptive per-coordinate
//! steps, plateau learning-rate decay, convergence detection and
//! effective-cluster pruning.
//!
//! The Dirichlet(α/K) prior drives the weights of superfluous components
//! toward zero during the fit; `effective_k` counts the components whose
//! weight survives above `prune_threshold`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::kmeans::kmeans_pp_indices;
use crate::model::{
    self, data_nll, data_nll_grad, prior_nll, prior_nll_grad, ModelError, ModelParams, Pixels,
    UnconstrainedParams,
};
use crate::rng::PortableRng;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{n} pixels cannot initialize {k} components")]
    TooFewPixels { n: usize, k: usize },
    #[error("loss diverged at epoch {epoch} in parameter block {block} after {restarts} restarts")]
    Diverged {
        epoch: usize,
        block: &'static str,
        restarts: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Upper bound on the number of components.
    pub max_k: usize,
    pub max_epochs: usize,
    /// Pixels per gradient step; 0 = full batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplied into the learning rate after `patience` epochs without
    /// improvement.
    pub lr_decay: f64,
    /// Relative loss-change threshold for convergence.
    pub rel_tol: f64,
    /// Consecutive small-change epochs required to stop.
    pub patience: usize,
    /// Minimum mixing weight for a component to count as active.
    pub prune_threshold: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_k: 5,
            max_epochs: 500,
            batch_size: 0,
            learning_rate: 0.05,
            lr_decay: 0.5,
            rel_tol: 1e-6,
            patience: 10,
            prune_threshold: 1e-2,
            seed: 42,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_k == 0 {
            return Err(TrainError::InvalidConfig("max_k must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0 / self.max_k as f64) {
            return Err(TrainError::InvalidConfig(format!(
                "prune_threshold must lie in (0, 1/max_k = {})",
                1.0 / self.max_k as f64
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(TrainError::InvalidConfig(
                "lr_decay must lie in (0, 1]".into(),
            ));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "patience and max_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub final_params: ModelParams,
    pub effective_k: usize,
    pub loss_trace: Vec<f64>,
    pub epochs_run: usize,
    pub wall_time_s: f64,
    pub converged: bool,
}

/// Adaptive first/second-moment stepping with bias correction.
#[derive(Clone)]
struct Adam {
    m: UnconstrainedParams,
    v: UnconstrainedParams,
    t: u64,
}

// Short second-moment memory: epochs here are full-batch passes, not noisy
// minibatch steps, and a long v-history keeps the denominator pinned at the
// large early-phase gradient scale, throttling the late weight-collapse
// phase by an order of magnitude.
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.9;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(k: usize, d: usize) -> Self {
        Self {
            m: UnconstrainedParams::zeros(k, d),
            v: UnconstrainedParams::zeros(k, d),
            t: 0,
        }
    }

    fn step(&mut self, u: &mut UnconstrainedParams, grad: &UnconstrainedParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        type Block<'a> = (
            &'a mut Vec<f64>,
            &'a Vec<f64>,
            &'a mut Vec<f64>,
            &'a mut Vec<f64>,
        );
        let blocks: [Block; 4] = [
            (
                &mut u.pi_logits,
                &grad.pi_logits,
                &mut self.m.pi_logits,
                &mut self.v.pi_logits,
            ),
            (&mut u.mu, &grad.mu, &mut self.m.mu, &mut self.v.mu),
            (
                &mut u.log_sigma2,
                &grad.log_sigma2,
                &mut self.m.log_sigma2,
                &mut self.v.log_sigma2,
            ),
            (
                &mut u.log_alpha,
                &grad.log_alpha,
                &mut self.m.log_alpha,
                &mut self.v.log_alpha,
            ),
        ];
        for (p, g, m, v) in blocks {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Means seeded by D²-weighted sampling from the data; logits, log-variances
/// and log-concentrations start at zero. Deterministic given the seed.
pub fn init_params(x: &Pixels, k: usize, seed: u64) -> Result<UnconstrainedParams, TrainError> {
    if k == 0 || x.len() < k {
        return Err(TrainError::TooFewPixels { n: x.len(), k });
    }
    let mut rng = PortableRng::new(seed);
    let picks = kmeans_pp_indices(x, k, &mut rng);
    let d = x.dim();
    let mut u = UnconstrainedParams::zeros(k, d);
    for (j, &i) in picks.iter().enumerate() {
        u.mu[j * d..(j + 1) * d].copy_from_slice(x.row(i));
    }
    Ok(u)
}

/// Component ids (1-based) with weight at or above `threshold`, ordered by
/// descending weight, index ascending on ties.
pub fn effective_components(theta: &ModelParams, threshold: f64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..theta.k)
        .filter(|&j| theta.pi[j] >= threshold)
        .map(|j| j + 1)
        .collect();
    ids.sort_by(|&a, &b| theta.pi[b - 1].total_cmp(&theta.pi[a - 1]).then(a.cmp(&b)));
    ids
}

/// The sub-model of active components (weights renormalized), ordered by
/// descending weight. Falls back to the single heaviest component when
/// nothing clears the threshold.
pub fn prune_model(theta: &ModelParams, threshold: f64) -> Result<ModelParams, ModelError> {
    let mut keep = effective_components(theta, threshold);
    if keep.is_empty() {
        let heaviest = (0..theta.k)
            .max_by(|&a, &b| theta.pi[a].total_cmp(&theta.pi[b]))
            .expect("k >= 1");
        keep.push(heaviest + 1);
    }
    let d = theta.d;
    let total: f64 = keep.iter().map(|&id| theta.pi[id - 1]).sum();
    let mut pi = Vec::with_capacity(keep.len());
    let mut mu = Vec::with_capacity(keep.len() * d);
    let mut sigma2 = Vec::with_capacity(keep.len() * d);
    let mut alpha = Vec::with_capacity(keep.len());
    for &id in &keep {
        let j = id - 1;
        pi.push(theta.pi[j] / total);
        mu.extend_from_slice(theta.mu_row(j));
        sigma2.extend_from_slice(theta.sigma2_row(j));
        alpha.push(theta.alpha[j]);
    }
    // Guard against rounding drift on the renormalized simplex.
    let sum: f64 = pi.iter().sum();
    if let Some(last) = pi.last_mut() {
        *last += 1.0 - sum;
    }
    ModelParams::new(keep.len(), d, pi, mu, sigma2, alpha)
}

fn first_non_finite_block(u: &UnconstrainedParams) -> Option<&'static str> {
    u.blocks()
        .into_iter()
        .find(|(_, vals)| vals.iter().any(|v| !v.is_finite()))
        .map(|(name, _)| name)
}

/// Names the parameter block responsible for an unusable point: either a
/// non-finite coordinate or a log value so negative its exp underflows to
/// exactly zero.
fn divergence_block(u: &UnconstrainedParams) -> &'static str {
    if let Some(block) = first_non_finite_block(u) {
        return block;
    }
    let underflows = |vals: &[f64]| vals.iter().any(|&v| v < -700.0);
    if underflows(&u.log_sigma2) {
        "log_sigma2"
    } else if underflows(&u.log_alpha) {
        "log_alpha"
    } else {
        "params"
    }
}

/// Offset below the largest logit that parks a mixing weight well under the
/// prior's density floor.
const COLLAPSE_LOGIT_DROP: f64 = 300.0;

/// Tries to collapse components one at a time (lightest first) by parking
/// their logit at the simplex boundary, keeping each collapse only when it
/// strictly lowers the exact loss. Gradient descent cannot make this move on
/// its own: a spurious component holding a small slice of responsibility
/// mass is a genuine stationary point, while the boundary configuration
/// scores better once the Dirichlet term is accounted to the floor.
///
/// Returns the new loss when any collapse was accepted.
fn collapse_sweep(
    u: &mut UnconstrainedParams,
    x: &Pixels,
    data_weight: f64,
    current_loss: f64,
) -> Result<Option<f64>, TrainError> {
    let eval = |u: &UnconstrainedParams| -> Result<f64, TrainError> {
        let theta = u.constrain()?;
        Ok(data_weight * data_nll(&theta, x)? + prior_nll(&theta)?)
    };
    let mut loss = current_loss;
    let mut accepted = false;
    let mut order: Vec<usize> = (0..u.k).collect();
    loop {
        let theta = u.constrain()?;
        order.sort_by(|&a, &b| theta.pi[a].total_cmp(&theta.pi[b]).then(a.cmp(&b)));
        let heaviest = *order.last().expect("k >= 1");
        let max_logit = u
            .pi_logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut improved = false;
        for &j in &order {
            if j == heaviest || u.pi_logits[j] <= max_logit - COLLAPSE_LOGIT_DROP {
                continue;
            }
            let saved = u.pi_logits[j];
            u.pi_logits[j] = max_logit - COLLAPSE_LOGIT_DROP;
            let trial = eval(u)?;
            if trial < loss {
                loss = trial;
                accepted = true;
                improved = true;
                break; // weights renormalized; re-rank before the next try
            }
            u.pi_logits[j] = saved;
        }
        if !improved {
            break;
        }
    }
    Ok(if accepted { Some(loss) } else { None })
}

/// Number of pixels of responsibility mass below which a component's
/// variance gradient is damped.
const WEAK_COMPONENT_MASS: f64 = 10.0;
const WEAK_VARIANCE_DAMPING: f64 = 0.1;
const MAX_RESTARTS: usize = 5;

/// Fits with the data term weighted by `data_weight` (1 for a normal fit;
/// tests use 0 to watch the priors alone) and an optional per-epoch progress
/// callback receiving (epoch, loss, effective_k).
pub fn fit_with_options(
    x: &Pixels,
    config: &FitConfig,
    data_weight: f64,
    mut progress: Option<&mut dyn FnMut(usize, f64, usize)>,
) -> Result<FitReport, TrainError> {
    config.validate()?;
    if x.len() < config.max_k {
        return Err(TrainError::TooFewPixels {
            n: x.len(),
            k: config.max_k,
        });
    }
    let start = Instant::now();
    let n = x.len();
    let full_batch = config.batch_size == 0 || config.batch_size >= n;

    let mut u = init_params(x, config.max_k, config.seed)?;
    let mut adam = Adam::new(config.max_k, x.dim());
    let mut lr = config.learning_rate;
    let mut shuffle_rng = PortableRng::new(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();

    let mut trace: Vec<f64> = Vec::new();
    let mut best = f64::INFINITY;
    let mut epochs_since_best = 0usize;
    let mut small_change_streak = 0usize;
    let mut converged = false;
    let mut checkpoint: Option<(UnconstrainedParams, Adam)> = None;
    let mut restarts = 0usize;

    let mut epoch = 0usize;
    while epoch < config.max_epochs {
        epoch += 1;

        // Evaluate at the current point; a non-finite loss or parameter
        // rolls back to the last good epoch at half the learning rate.
        let mut diverged: Option<&'static str> = None;
        let mut loss = f64::NAN;
        let mut full_grad: Option<(model::DataGrad, UnconstrainedParams)> = None;
        match u.constrain() {
            Err(ModelError::NonFinite { block }) => diverged = Some(block),
            // Extreme steps can underflow exp() to an exact zero: finite,
            // but not a usable model. Same recovery as a non-finite loss.
            Err(ModelError::InvalidParams(_)) => diverged = Some(divergence_block(&u)),
            Err(other) => return Err(other.into()),
            Ok(theta) => {
                if full_batch {
                    let data = data_nll_grad(&theta, x)?;
                    let (prior_loss, prior_grad) = prior_nll_grad(&theta)?;
                    loss = data_weight * data.nll + prior_loss;
                    full_grad = Some((data, prior_grad));
                } else {
                    loss = data_weight * data_nll(&theta, x)? + prior_nll(&theta)?;
                }
                if !loss.is_finite() {
                    diverged = Some(first_non_finite_block(&u).unwrap_or("loss"));
                }
            }
        }
        if let Some(block) = diverged {
            restarts += 1;
            if restarts > MAX_RESTARTS {
                return Err(TrainError::Diverged {
                    epoch,
                    block,
                    restarts: restarts - 1,
                });
            }
            match &checkpoint {
                Some((cp_u, cp_adam)) => {
                    u = cp_u.clone();
                    adam = cp_adam.clone();
                    lr *= 0.5;
                    continue;
                }
                None => {
                    return Err(TrainError::Diverged {
                        epoch,
                        block,
                        restarts,
                    })
                }
            }
        }

        trace.push(loss);
        if let Some(cb) = progress.as_deref_mut() {
            let eff = effective_components(&u.constrain()?, config.prune_threshold).len();
            cb(epoch, loss, eff);
        }

        // Convergence: the loss change across the trailing `patience`-epoch
        // window stays relatively tiny for `patience` epochs in a row. The
        // window matters: late in a fit the per-epoch change from a slowly
        // draining component is far below any single-epoch threshold while
        // the drain is still making real progress.
        if trace.len() > config.patience {
            let past = trace[trace.len() - 1 - config.patience];
            let rel = (past - loss).abs() / past.abs().max(f64::MIN_POSITIVE);
            if rel < config.rel_tol {
                small_change_streak += 1;
            } else {
                small_change_streak = 0;
            }
            if small_change_streak >= config.patience {
                // Before declaring convergence, see whether any component is
                // worth collapsing outright; if so, keep training from the
                // collapsed configuration. The step size stays at its
                // decayed value: survivors only redistribute a few percent
                // of mass, and a small rate lets the windowed criterion
                // re-fire quickly.
                match collapse_sweep(&mut u, x, data_weight, loss)? {
                    Some(new_loss) => {
                        best = new_loss;
                        small_change_streak = 0;
                        epochs_since_best = 0;
                        checkpoint = Some((u.clone(), adam.clone()));
                        continue;
                    }
                    None => {
                        converged = true;
                        break;
                    }
                }
            }
        }

        // Plateau decay: `patience` epochs without a new best loss shrink
        // the step size. Any strict improvement resets the counter, so the
        // rate survives slow monotone descent and only decays once the
        // optimizer is genuinely oscillating.
        if loss < best {
            best = loss;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                lr *= config.lr_decay;
                epochs_since_best = 0;
            }
        }

        checkpoint = Some((u.clone(), adam.clone()));

        if full_batch {
            let (data, prior_grad) = full_grad.expect("computed above");
            let g = assemble_gradient(&data, &prior_grad, data_weight, 1.0);
            adam.step(&mut u, &g, lr);
        } else {
            shuffle_rng.shuffle(&mut order);
            for batch in order.chunks(config.batch_size) {
                let bx = x.subset(batch);
                let theta = match u.constrain() {
                    Ok(t) => t,
                    // Mid-epoch blowup: the next epoch's evaluation rolls
                    // back to the checkpoint.
                    Err(ModelError::NonFinite { .. }) | Err(ModelError::InvalidParams(_)) => break,
                    Err(other) => return Err(other.into()),
                };
                let data = data_nll_grad(&theta, &bx)?;
                let (_, prior_grad) = prior_nll_grad(&theta)?;
                let scale = n as f64 / batch.len() as f64;
                let g = assemble_gradient(&data, &prior_grad, data_weight, scale);
                adam.step(&mut u, &g, lr);
            }
        }
    }

    let final_params = u.constrain()?;
    let effective_k = effective_components(&final_params, config.prune_threshold).len();
    Ok(FitReport {
        final_params,
        effective_k,
        loss_trace: trace,
        epochs_run: epoch,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged,
    })
}

/// prior + data_weight * scale * data, with the variance gradient of weak
/// components (responsibility mass below [`WEAK_COMPONENT_MASS`] pixels)
/// damped to avoid collapse toward zero variance.
fn assemble_gradient(
    data: &model::DataGrad,
    prior: &UnconstrainedParams,
    data_weight: f64,
    scale: f64,
) -> UnconstrainedParams {
    let mut g = prior.clone();
    let w = data_weight * scale;
    let d = g.d;
    for (a, b) in g.pi_logits.iter_mut().zip(&data.pi_logits) {
        *a += w * b;
    }
    for (a, b) in g.mu.iter_mut().zip(&data.mu) {
        *a += w * b;
    }
    for (a, b) in g.log_sigma2.iter_mut().zip(&data.log_sigma2) {
        *a += w * b;
    }
    for j in 0..g.k {
        if data.mass[j] * w < WEAK_COMPONENT_MASS {
            for v in &mut g.log_sigma2[j * d..(j + 1) * d] {
                *v *= WEAK_VARIANCE_DAMPING;
            }
        }
    }
    g
}

/// Full fit on the pixel set.
pub fn fit(x: &Pixels, config: &FitConfig) -> Result<FitReport, TrainError> {
    fit_with_options(x, config, 1.0, None)
}
