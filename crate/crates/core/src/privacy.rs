//! Per-round LDP accounting for CRS.
//!
//! For a privacy budget `ε`, the CRS coefficient range `p` must satisfy
//! `0 < p ≤ 1 − e^{−ε}` and the sampling size `K` must keep the neighbouring
//! ratio `d/(d−K)·(1−p)` inside `[e^{−ε}, e^{ε}]`, i.e.
//! `K ≤ d·(1 − e^{−ε} + p·e^{−ε})`. The relaxation probability is bounded by
//! the Chernoff form `δ ≤ exp(−d·KL(K/d ‖ p))`, reported in log space as well
//! since it underflows for large `d`. The bound only dominates the binomial
//! upper tail `Pr[B(d,p) > K]` when `K/d ≥ p`.
//!
//! Composition across rounds is not covered.

use rand::distr::Open01;
use rand::Rng;

use crate::error::PrivacyError;
use crate::linalg::GradientVector;

/// Default Laplace scale of the FedAvg (LDP) baseline.
pub const DEFAULT_LAPLACE_SCALE: f64 = 1e-5;

fn check_epsilon(epsilon: f64) -> Result<(), PrivacyError> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(PrivacyError::InvalidEpsilon(epsilon))
    }
}

/// `1 − e^{−ε}`, the largest admissible CRS sampling probability.
pub fn max_sampling_probability(epsilon: f64) -> Result<f64, PrivacyError> {
    check_epsilon(epsilon)?;
    Ok(-(-epsilon).exp_m1())
}

fn check_probability(epsilon: f64, p: f64) -> Result<(), PrivacyError> {
    let max = max_sampling_probability(epsilon)?;
    if p > 0.0 && p <= max {
        Ok(())
    } else {
        Err(PrivacyError::ProbabilityOutOfRange { p, max })
    }
}

/// The neighbouring-output ratio `d/(d−K)·(1−p)`. Infinite when `K = d`.
pub fn neighbour_ratio(d: usize, k: usize, p: f64) -> f64 {
    if k >= d {
        return f64::INFINITY;
    }
    d as f64 / (d - k) as f64 * (1.0 - p)
}

/// Whether `e^{−ε} ≤ d/(d−K)·(1−p) ≤ e^{ε}`.
pub fn ratio_admissible(epsilon: f64, p: f64, d: usize, k: usize) -> bool {
    let r = neighbour_ratio(d, k, p);
    (-epsilon).exp() <= r && r <= epsilon.exp()
}

/// Largest `K` with `K ≤ d(1 − e^{−ε} + p·e^{−ε})`.
///
/// The closed form is evaluated first and then nudged so that it agrees
/// exactly with [`ratio_admissible`] in floating point.
pub fn max_sampling_size(epsilon: f64, p: f64, d: usize) -> Result<usize, PrivacyError> {
    check_probability(epsilon, p)?;
    if d == 0 {
        return Err(PrivacyError::ZeroDimension);
    }
    let e = (-epsilon).exp();
    let bound = d as f64 * (1.0 - e + p * e);
    let mut k = (bound.floor().max(0.0) as usize).min(d);
    while k > 0 && !ratio_admissible(epsilon, p, d, k) {
        k -= 1;
    }
    while k < d && ratio_admissible(epsilon, p, d, k + 1) {
        k += 1;
    }
    Ok(k)
}

/// `KL(Bern(a) ‖ Bern(p))` with `0·ln 0 = 0`.
pub fn kl_bernoulli(a: f64, p: f64) -> Result<f64, PrivacyError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PrivacyError::DegenerateBernoulli(p));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(PrivacyError::RateOutOfRange(a));
    }
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    Ok((term(a, p) + term(1.0 - a, 1.0 - p)).max(0.0))
}

/// `ln δ` for `δ = exp(−d·KL(K/d ‖ p))`.
pub fn log_delta_bound(d: usize, k: usize, p: f64) -> Result<f64, PrivacyError> {
    if d == 0 {
        return Err(PrivacyError::ZeroDimension);
    }
    if k > d {
        return Err(PrivacyError::SampleSizeExceedsDim { k, d });
    }
    Ok(-(d as f64) * kl_bernoulli(k as f64 / d as f64, p)?)
}

/// `exp(−d·KL(K/d ‖ p))`. Underflows to 0 for large `d`; see [`log_delta_bound`].
pub fn delta_bound(d: usize, k: usize, p: f64) -> Result<f64, PrivacyError> {
    log_delta_bound(d, k, p).map(f64::exp)
}

/// Exact `Pr[B(d, p) > K]`, summed in log space.
pub fn binomial_tail(d: usize, p: f64, k: usize) -> f64 {
    if k >= d {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let log_odds = p.ln() - (1.0 - p).ln();
    // ln pmf(i), advanced by the ratio pmf(i+1)/pmf(i).
    let mut log_pmf = d as f64 * (1.0 - p).ln();
    let mut terms = Vec::with_capacity(d - k);
    for i in 0..d {
        log_pmf += ((d - i) as f64).ln() - ((i + 1) as f64).ln() + log_odds;
        if i + 1 > k {
            terms.push(log_pmf);
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

/// Why a certificate was not issued.
#[derive(Debug, Clone, PartialEq)]
pub enum Refusal {
    InvalidEpsilon(f64),
    ZeroDimension,
    ProbabilityOutOfRange { p: f64, max: f64 },
    SampleSizeTooLarge { k: usize, max: usize },
    /// `d/(d−K)·(1−p)` falls outside `[e^{−ε}, e^{ε}]` in floating point.
    RatioOutOfRange { ratio: f64 },
    /// `K/d = p` makes the KL divergence vanish and the bound vacuous.
    RateEqualsProbability,
}

impl std::fmt::Display for Refusal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Refusal::InvalidEpsilon(e) => write!(f, "epsilon must be positive, got {e}"),
            Refusal::ZeroDimension => write!(f, "dimension must be at least 1"),
            Refusal::ProbabilityOutOfRange { p, max } => {
                write!(f, "p = {p} outside (0, 1 - e^-epsilon] = (0, {max:.6}]")
            }
            Refusal::SampleSizeTooLarge { k, max } => {
                write!(f, "K = {k} exceeds the admissible maximum {max}")
            }
            Refusal::RatioOutOfRange { ratio } => {
                write!(f, "neighbour ratio {ratio} lies outside [e^-epsilon, e^epsilon]")
            }
            Refusal::RateEqualsProbability => {
                write!(f, "K/d equals p, so the delta bound is vacuous")
            }
        }
    }
}

/// Outcome of checking `(ε, p, K, d)` for one round of CRS.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyCertificate {
    pub epsilon: f64,
    pub p: f64,
    pub k: usize,
    pub d: usize,
    pub delta_bound: f64,
    pub log_delta_bound: f64,
    pub issued: bool,
    /// Set when `δ ≥ 1/d`.
    pub warning: bool,
    pub refusal: Option<Refusal>,
}

impl PrivacyCertificate {
    pub fn max_k(&self) -> Option<usize> {
        max_sampling_size(self.epsilon, self.p, self.d).ok()
    }

    /// The certificate, or the refusal as an error.
    pub fn require_issued(&self) -> Result<&Self, PrivacyError> {
        match &self.refusal {
            None => Ok(self),
            Some(r) => Err(PrivacyError::Refused(r.to_string())),
        }
    }
}

/// Check every admissibility condition and compute the δ bound. Never clamps:
/// an inadmissible request comes back with `issued = false` and a reason.
pub fn issue_certificate(epsilon: f64, p: f64, k: usize, d: usize) -> PrivacyCertificate {
    let mut cert = PrivacyCertificate {
        epsilon,
        p,
        k,
        d,
        delta_bound: f64::NAN,
        log_delta_bound: f64::NAN,
        issued: false,
        warning: false,
        refusal: None,
    };
    let refusal = (|| {
        if check_epsilon(epsilon).is_err() {
            return Some(Refusal::InvalidEpsilon(epsilon));
        }
        if d == 0 {
            return Some(Refusal::ZeroDimension);
        }
        let max_p = max_sampling_probability(epsilon).ok()?;
        if !(p > 0.0 && p <= max_p) {
            return Some(Refusal::ProbabilityOutOfRange { p, max: max_p });
        }
        let max_k = max_sampling_size(epsilon, p, d).ok()?;
        if k > max_k {
            return Some(Refusal::SampleSizeTooLarge { k, max: max_k });
        }
        if !ratio_admissible(epsilon, p, d, k) {
            return Some(Refusal::RatioOutOfRange {
                ratio: neighbour_ratio(d, k, p),
            });
        }
        if k as f64 / d as f64 == p {
            return Some(Refusal::RateEqualsProbability);
        }
        None
    })();
    if let Some(r) = refusal {
        cert.refusal = Some(r);
        return cert;
    }
    // p < 1 and k ≤ d hold here, so the bound is defined.
    let log_delta = log_delta_bound(d, k, p).expect("validated parameters");
    cert.log_delta_bound = log_delta;
    cert.delta_bound = log_delta.exp();
    cert.warning = log_delta >= -(d as f64).ln();
    cert.issued = true;
    cert
}

/// Add i.i.d. Laplace(0, `scale`) noise to every coordinate (inverse CDF).
pub fn laplace_perturb<R: Rng + ?Sized>(
    v: &[f64],
    scale: f64,
    rng: &mut R,
) -> Result<GradientVector, PrivacyError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PrivacyError::InvalidScale(scale));
    }
    Ok(v.iter()
        .map(|x| x + laplace_draw(scale, rng))
        .collect::<Vec<_>>()
        .into())
}

pub(crate) fn laplace_draw<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -scale * u.signum() * (-2.0 * u.abs()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn max_probability_values() {
        assert!((max_sampling_probability(1.0).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!((max_sampling_probability(0.1).unwrap() - 0.095_162_581_964_040_43).abs() < 1e-15);
        let tiny = max_sampling_probability(1e-12).unwrap();
        assert!(tiny > 0.0 && tiny < 1.1e-12);
        assert!(max_sampling_probability(0.0).is_err());
        assert!(max_sampling_probability(-1.0).is_err());
    }

    #[test]
    fn max_size_values() {
        assert_eq!(max_sampling_size(1.0, 0.5, 1000).unwrap(), 816);
        // p at its maximum gives ⌊d(1 − e^{−2ε})⌋.
        let eps = 0.7;
        let p = max_sampling_probability(eps).unwrap();
        let d = 5000;
        let expect = (d as f64 * (1.0 - (-2.0 * eps).exp())).floor() as usize;
        let got = max_sampling_size(eps, p, d).unwrap();
        assert!(got.abs_diff(expect) <= 1, "{got} vs {expect}");
        assert!(ratio_admissible(eps, p, d, got));
        assert!(!ratio_admissible(eps, p, d, got + 1));
        assert!(max_sampling_size(1.0, 0.7, 1000).is_err());
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_bernoulli(0.3, 0.3).unwrap(), 0.0);
        let want = 0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln();
        assert!((kl_bernoulli(0.25, 0.5).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.130_812).abs() < 1e-6);
        assert!((kl_bernoulli(0.0, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((kl_bernoulli(1.0, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(kl_bernoulli(0.5, 0.0).is_err());
        assert!(kl_bernoulli(0.5, 1.0).is_err());
    }

    #[test]
    fn delta_values() {
        assert_eq!(delta_bound(100, 50, 0.5).unwrap(), 1.0);
        let d = delta_bound(100, 25, 0.5).unwrap();
        let ln = log_delta_bound(100, 25, 0.5).unwrap();
        assert!((ln + 13.081_2).abs() < 1e-3, "{ln}");
        assert!((d - 2.08e-6).abs() < 0.02e-6, "{d}");
        // Large d: linear value underflows, log value does not.
        let ln_big = log_delta_bound(10_000_000, 9_000_000, 0.5).unwrap();
        assert!(ln_big.is_finite() && ln_big < -1e6);
        assert_eq!(delta_bound(10_000_000, 9_000_000, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn binomial_tail_values() {
        assert_eq!(binomial_tail(10, 0.3, 10), 0.0);
        assert!((binomial_tail(2, 0.5, 0) - 0.75).abs() < 1e-15);
        assert!((binomial_tail(4, 0.5, 2) - 5.0 / 16.0).abs() < 1e-15);
        // Against direct summation with exact binomial coefficients.
        let d = 30usize;
        let p: f64 = 0.37;
        let mut c = 1.0f64;
        let mut pmf = Vec::new();
        for i in 0..=d {
            if i > 0 {
                c = c * (d - i + 1) as f64 / i as f64;
            }
            pmf.push(c * p.powi(i as i32) * (1.0 - p).powi((d - i) as i32));
        }
        for k in 0..d {
            let direct: f64 = pmf[k + 1..].iter().sum();
            assert!((binomial_tail(d, p, k) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn certificate_outcomes() {
        let c = issue_certificate(1.0, 0.7, 10, 1000);
        assert!(!c.issued);
        assert!(matches!(c.refusal, Some(Refusal::ProbabilityOutOfRange { .. })));

        let c = issue_certificate(1.0, 0.5, 900, 1000);
        assert!(!c.issued);
        assert_eq!(c.refusal, Some(Refusal::SampleSizeTooLarge { k: 900, max: 816 }));

        let c = issue_certificate(1.0, 0.5, 50, 1000);
        assert!(c.issued);
        assert!(c.delta_bound < 1e-3);
        assert!(!c.warning);
        assert!(c.require_issued().is_ok());

        let c = issue_certificate(1.0, 0.5, 500, 1000);
        assert_eq!(c.refusal, Some(Refusal::RateEqualsProbability));
        assert!(c.require_issued().is_err());

        // Close to K/d = p the bound stops being small.
        let c = issue_certificate(1.0, 0.5, 499, 1000);
        assert!(c.issued && c.warning);
    }

    #[test]
    fn laplace_moments() {
        let scale = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let v = vec![0.0; n];
        let noisy = laplace_perturb(&v, scale, &mut rng).unwrap();
        let mean = noisy.iter().sum::<f64>() / n as f64;
        let var = noisy.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 2.0 * scale * scale;
        assert!(mean.abs() < 4.0 * (want / n as f64).sqrt(), "mean {mean}");
        assert!((var / want - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn laplace_vanishing_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = [1.0, -2.0, 3.5];
        let out = laplace_perturb(&v, 1e-300, &mut rng).unwrap();
        assert_eq!(out.as_slice(), &v);
        assert!(laplace_perturb(&v, 0.0, &mut rng).is_err());
        assert_eq!(DEFAULT_LAPLACE_SCALE, 1e-5);
    }
}
