//! Independent oracles and checkers shared by the test suites.
//!
//! Everything here deliberately avoids the implementation paths it is used
//! to verify: mixture densities are summed directly in probability space
//! (no log-sum-exp), the Dirichlet normalizer uses statrs' gamma function,
//! and gradients come from central finite differences.

use statrs::function::gamma::ln_gamma;

/// log Σ_j π_j N(x | μ_j, diag σ²_j) by direct summation in probability
/// space. Underflows for badly scaled inputs; only use on small fixtures.
pub fn naive_log_mixture(pi: &[f64], means: &[Vec<f64>], sigmas2: &[Vec<f64>], x: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((&w, mu), s2) in pi.iter().zip(means).zip(sigmas2) {
        let mut density = 1.0;
        for ((&xv, &m), &v) in x.iter().zip(mu).zip(s2) {
            let diff = xv - m;
            density *= (-(diff * diff) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        total += w * density;
    }
    total.ln()
}

/// log Dirichlet(π | a) from the textbook formula, statrs gamma.
pub fn naive_dirichlet_log_pdf(pi: &[f64], conc: &[f64]) -> f64 {
    let total: f64 = conc.iter().sum();
    let mut lp = ln_gamma(total);
    for (&p, &a) in pi.iter().zip(conc) {
        lp += (a - 1.0) * p.ln() - ln_gamma(a);
    }
    lp
}

/// Central finite differences of `f` at `point` with step `h`.
pub fn finite_difference_gradient<F>(f: &F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Max over coordinates of |a−b| / max(|a|, |b|, 1e-3). The floor keeps
/// near-zero coordinates from amplifying finite-difference noise.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn comb2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u32, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let sum_cells: f64 = cells.values().map(|&n| comb2(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| comb2(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| comb2(n)).sum();
    let total = comb2(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        // Both labelings are constant: perfect agreement by convention.
        return 1.0;
    }
    (sum_cells - expected) / (max_index - expected)
}

/// Greedily pairs each truth vector with its nearest unused candidate;
/// returns (truth index, candidate index, euclidean distance) triples.
pub fn greedy_match_means(truth: &[Vec<f64>], fitted: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut used = vec![false; fitted.len()];
    let mut pairs = Vec::with_capacity(truth.len());
    for (ti, t) in truth.iter().enumerate() {
        let mut best = None;
        for (fi, f) in fitted.iter().enumerate() {
            if used[fi] {
                continue;
            }
            let d = dist(t, f);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((fi, d));
            }
        }
        let (fi, d) = best.expect("more truth vectors than candidates");
        used[fi] = true;
        pairs.push((ti, fi, d));
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_extremes() {
        let a = [1, 1, 2, 2, 3, 3];
        assert!((adjusted_rand_index(&a, &a) - 1.0).abs() < 1e-12);
        // Relabeled copy is still perfect agreement.
        let b = [7, 7, 5, 5, 9, 9];
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_known_value() {
        // Classic 2x2 example: one swap out of six items.
        let a = [1, 1, 1, 2, 2, 2];
        let b = [1, 1, 2, 2, 2, 2];
        // Contingency: rows (3,3), cols (2,4), cells (2,1,0,3).
        // index = 1 + 0 + 3 = 4; expected = (3+3)*(1+6)/15 = 2.8;
        // max = 0.5*(6+7) = 6.5 -> ARI = 1.2/3.7
        let expected = (4.0 - 2.8) / (6.5 - 2.8);
        assert!((adjusted_rand_index(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_on_quadratic() {
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[1];
        let g = finite_difference_gradient(&f, &[2.0, 5.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn greedy_matching_prefers_nearest() {
        let truth = vec![vec![0.0], vec![10.0]];
        let fitted = vec![vec![9.5], vec![0.2], vec![50.0]];
        let pairs = greedy_match_means(&truth, &fitted);
        assert_eq!(pairs[0].1, 1);
        assert_eq!(pairs[1].1, 0);
    }
}
