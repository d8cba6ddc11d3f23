//! Scalar special functions and the log-density building blocks shared by
//! the likelihood and prior terms.

/// ln(2π).
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Values below this are clamped before entering a log-density whose value
/// would otherwise be unbounded (Dirichlet near a simplex corner, inverse
/// gamma near zero).
///
/// The floor caps the reward the Dirichlet prior pays for parking a mixing
/// weight at the simplex boundary, so its size decides which components are
/// worth collapsing: the boundary reward is roughly (1−a)·ln(π/floor) nats
/// against the data likelihood lost by dropping the component. Dropping a
/// spurious component costs a few dozen nats, a real cluster tens of
/// thousands, so anything in [1e-300, 1e-30] separates the two; 1e-80
/// sits in the middle of that range with wide margins on both sides.
pub const DENSITY_FLOOR: f64 = 1e-80;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos approximation, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEF[0];
        for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        0.5 * LN_2PI + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Digamma ψ(x): recurrence up to x ≥ 6, then the asymptotic series.
pub fn digamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln()
        - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 120.0
                        - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))))
}

/// log Σ exp(vᵢ) without overflow. Returns −∞ for an all-−∞ input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// −log Normal(x | 0, 1).
pub fn neg_log_std_normal(x: f64) -> f64 {
    0.5 * LN_2PI + 0.5 * x * x
}

/// −log InverseGamma(x | shape 1, scale 1) = 2·log x + 1/x, with x floored
/// at [`DENSITY_FLOOR`].
pub fn neg_log_inv_gamma_1_1(x: f64) -> f64 {
    let x = x.max(DENSITY_FLOOR);
    2.0 * x.ln() + 1.0 / x
}

/// −log Dirichlet(π | a) with π components floored at [`DENSITY_FLOOR`].
///
/// `pi` and `conc` must have equal nonzero length and every concentration
/// must be positive.
pub fn neg_log_dirichlet(pi: &[f64], conc: &[f64]) -> f64 {
    debug_assert_eq!(pi.len(), conc.len());
    let total: f64 = conc.iter().sum();
    let mut nll = -ln_gamma(total);
    for (&p, &a) in pi.iter().zip(conc) {
        nll += ln_gamma(a) - (a - 1.0) * p.max(DENSITY_FLOOR).ln();
    }
    nll
}
