//! Gradient compressors.
//!
//! Each compressor maps a dense gradient to a [`SparseUpdate`]. MinMax,
//! Poisson and GSpar are unbiased: the expectation of the densified output
//! equals the input. Top-K transmits raw magnitudes and is biased; it
//! optionally keeps an error-feedback residual in [`SamplerState`].
//!
//! CRS and MinMax are both priority samplers. Each coordinate gets a random
//! priority, the `K` largest are kept (ties to the lower index), and the
//! `(K+1)`-th largest priority `τ` fixes the estimator scaling. Conditional on
//! the other priorities, coordinate `j` is kept exactly when its priority
//! beats `τ`, and the output divides by that conditional probability.
//!
//! For MinMax the priority `g_j²/u_j` is unbounded, so that probability is
//! always positive and the estimate is unbiased. The CRS priority `α_j·g_j²`
//! never exceeds `p·g_j²`. Whenever the other coordinates' `K`-th priority is
//! above that bound, `j` cannot be drawn, and the CRS estimate of `g_j` is
//! shrunk by `P(τ_{-j} < p·g_j²)`. It is unbiased only when all nonzero
//! magnitudes are equal.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::SamplerError;
use crate::linalg::{CodecId, GradientVector, SparseUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Identity,
    Crs,
    MinMax,
    GSpar,
    TopK,
    Poisson,
}

impl SamplerKind {
    pub fn codec(self) -> CodecId {
        match self {
            SamplerKind::Identity => CodecId::Identity,
            SamplerKind::Crs => CodecId::Crs,
            SamplerKind::MinMax => CodecId::MinMax,
            SamplerKind::GSpar => CodecId::GSpar,
            SamplerKind::TopK => CodecId::TopK,
            SamplerKind::Poisson => CodecId::Poisson,
        }
    }

    /// Output size is capped at `K`.
    pub fn is_k_capped(self) -> bool {
        matches!(self, SamplerKind::Crs | SamplerKind::MinMax | SamplerKind::TopK)
    }

    /// `E[output] = g` for every input.
    ///
    /// CRS is excluded: its priority `α_j·g_j²` is bounded by `p·g_j²`, so a
    /// coordinate whose bound falls below the other coordinates' `K`-th
    /// priority is never drawn, and `1/q` rescaling cannot recover that mass.
    pub fn is_unbiased(self) -> bool {
        !matches!(self, SamplerKind::TopK | SamplerKind::Crs)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.codec().fmt(f)
    }
}

impl FromStr for SamplerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "none" | "fedavg" => Ok(SamplerKind::Identity),
            "crs" => Ok(SamplerKind::Crs),
            "minmax" => Ok(SamplerKind::MinMax),
            "gspar" => Ok(SamplerKind::GSpar),
            "topk" | "top-k" => Ok(SamplerKind::TopK),
            "poisson" => Ok(SamplerKind::Poisson),
            other => Err(format!("unknown sampler `{other}`")),
        }
    }
}

/// How CRS scales a selected coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrsScaling {
    /// `g_j / q_j` with `q_j` the inclusion probability conditional on `τ`.
    #[default]
    Conditional,
    /// `g_j / p`, the fixed-probability Poisson scaling. Biased; kept for comparison.
    FixedProbability,
}

impl FromStr for CrsScaling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "conditional" => Ok(CrsScaling::Conditional),
            "fixed" => Ok(CrsScaling::FixedProbability),
            other => Err(format!("unknown CRS scaling `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Sampling size `K`.
    pub k: usize,
    /// Coordinate sampling probability: the `α` range for CRS, the keep
    /// probability for Poisson.
    pub p: f64,
    /// Error accumulation for Top-K.
    pub feedback: bool,
    /// Privacy budget; required for CRS.
    pub epsilon: Option<f64>,
    pub crs_scaling: CrsScaling,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, k: usize, p: f64) -> Self {
        Self {
            kind,
            k,
            p,
            feedback: true,
            epsilon: None,
            crs_scaling: CrsScaling::Conditional,
        }
    }

    pub fn identity() -> Self {
        Self::new(SamplerKind::Identity, 1, 1.0)
    }

    pub fn crs(k: usize, p: f64, epsilon: f64) -> Self {
        Self {
            epsilon: Some(epsilon),
            ..Self::new(SamplerKind::Crs, k, p)
        }
    }

    /// Structural checks against the model dimension. Privacy admissibility
    /// of CRS parameters is the privacy module's job.
    pub fn validate(&self, dim: usize) -> Result<(), SamplerError> {
        let bad_k = SamplerError::InvalidSampleSize { k: self.k, dim };
        match self.kind {
            SamplerKind::Identity => {}
            SamplerKind::Crs | SamplerKind::MinMax => {
                if self.k == 0 || self.k >= dim {
                    return Err(bad_k);
                }
            }
            SamplerKind::TopK | SamplerKind::GSpar => {
                if self.k == 0 || self.k > dim {
                    return Err(bad_k);
                }
            }
            SamplerKind::Poisson => {}
        }
        if matches!(self.kind, SamplerKind::Crs | SamplerKind::Poisson) {
            check_probability(self.p)?;
        }
        if self.kind == SamplerKind::Crs && self.epsilon.is_none() {
            return Err(SamplerError::MissingEpsilon);
        }
        Ok(())
    }
}

/// Per-client compressor state.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub residual: GradientVector,
}

impl SamplerState {
    pub fn new(dim: usize) -> Self {
        Self {
            residual: GradientVector::zeros(dim),
        }
    }
}

/// Compress `g` with the configured sampler.
pub fn compress<R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    g: &[f64],
    state: &mut SamplerState,
    rng: &mut R,
) -> Result<SparseUpdate, SamplerError> {
    match cfg.kind {
        SamplerKind::Identity => identity_sample(g),
        SamplerKind::Crs => crs_sample(g, cfg.k, cfg.p, cfg.crs_scaling, rng),
        SamplerKind::MinMax => minmax_sample(g, cfg.k, rng),
        SamplerKind::GSpar => {
            check_finite(g)?;
            let probs = gspar_probabilities(g, cfg.k);
            gspar_sample(g, &probs, rng)
        }
        SamplerKind::TopK => topk_sample(g, cfg.k, state, cfg.feedback),
        SamplerKind::Poisson => poisson_sample(g, cfg.p, rng),
    }
}

fn check_finite(g: &[f64]) -> Result<(), SamplerError> {
    match g.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SamplerError::NonFiniteInput(i)),
        None => Ok(()),
    }
}

fn check_probability(p: f64) -> Result<(), SamplerError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(SamplerError::InvalidProbability(p))
    }
}

/// Indices of the `k` largest scores (ties to the lower index), returned in
/// ascending index order, plus the `(k+1)`-th largest score (0 when `k`
/// covers everything).
pub(crate) fn top_k_by_score(scores: &[f64], k: usize) -> (Vec<usize>, f64) {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
    };
    let next = if k < n {
        order.select_nth_unstable_by(k, cmp);
        scores[order[k]]
    } else {
        0.0
    };
    order.truncate(k.min(n));
    order.sort_unstable();
    (order, next)
}

/// Send every nonzero coordinate unchanged.
pub fn identity_sample(g: &[f64]) -> Result<SparseUpdate, SamplerError> {
    check_finite(g)?;
    Ok(SparseUpdate::from_dense_nonzeros(g, CodecId::Identity)?)
}

/// Inclusion probability of a coordinate with value `g_j` given threshold
/// `tau` when its CRS coefficient is uniform on `[0, p)`:
/// `Pr[α·g_j² > tau] = min(1, max(0, 1 − tau / (p·g_j²)))`.
pub fn inclusion_probability(g_j: f64, tau: f64, p: f64) -> f64 {
    if g_j == 0.0 {
        return 0.0;
    }
    (1.0 - tau / (p * g_j * g_j)).clamp(0.0, 1.0)
}

/// Conditional random sampling.
///
/// Draws `α_j` uniform on `[0, p)` for every coordinate, ranks coordinates by
/// `T_j = α_j·g_j²` and keeps the top `K` nonzero ones.
pub fn crs_sample<R: Rng + ?Sized>(
    g: &[f64],
    k: usize,
    p: f64,
    scaling: CrsScaling,
    rng: &mut R,
) -> Result<SparseUpdate, SamplerError> {
    check_finite(g)?;
    check_probability(p)?;
    let alphas: Vec<f64> = (0..g.len()).map(|_| p * rng.random::<f64>()).collect();
    crs_sample_with_coefficients(g, k, p, &alphas, scaling)
}

/// [`crs_sample`] with the random coefficients supplied by the caller.
pub fn crs_sample_with_coefficients(
    g: &[f64],
    k: usize,
    p: f64,
    alphas: &[f64],
    scaling: CrsScaling,
) -> Result<SparseUpdate, SamplerError> {
    check_finite(g)?;
    check_probability(p)?;
    let d = g.len();
    if k == 0 || k >= d {
        return Err(SamplerError::InvalidSampleSize { k, dim: d });
    }
    if alphas.len() != d {
        return Err(SamplerError::ProbabilityLengthMismatch(alphas.len(), d));
    }
    let priorities: Vec<f64> = g.iter().zip(alphas).map(|(x, a)| a * x * x).collect();
    let (selected, tau) = top_k_by_score(&priorities, k);

    let mut indices = Vec::with_capacity(selected.len());
    let mut values = Vec::with_capacity(selected.len());
    for j in selected {
        let gj = g[j];
        if gj == 0.0 {
            continue;
        }
        let value = match scaling {
            CrsScaling::Conditional => {
                let q = inclusion_probability(gj, tau, p);
                let v = gj / q;
                if q <= 0.0 || !v.is_finite() {
                    return Err(SamplerError::InclusionUnderflow {
                        index: j,
                        threshold: tau,
                    });
                }
                v
            }
            CrsScaling::FixedProbability => gj / p,
        };
        indices.push(j as u32);
        values.push(value);
    }
    Ok(SparseUpdate::new(d, indices, values, tau, CodecId::Crs)?)
}

/// MinMax-style priority sampling: priority `g_j²/u_j` with `u_j` uniform on
/// `(0, 1]`, value `g_j / min(1, g_j²/τ)`.
pub fn minmax_sample<R: Rng + ?Sized>(
    g: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<SparseUpdate, SamplerError> {
    check_finite(g)?;
    let uniforms: Vec<f64> = (0..g.len()).map(|_| 1.0 - rng.random::<f64>()).collect();
    minmax_sample_with_uniforms(g, k, &uniforms)
}

pub fn minmax_sample_with_uniforms(
    g: &[f64],
    k: usize,
    uniforms: &[f64],
) -> Result<SparseUpdate, SamplerError> {
    check_finite(g)?;
    let d = g.len();
    if k == 0 || k >= d {
        return Err(SamplerError::InvalidSampleSize { k, dim: d });
    }
    if uniforms.len() != d {
        return Err(SamplerError::ProbabilityLengthMismatch(uniforms.len(), d));
    }
    let priorities: Vec<f64> = g.iter().zip(uniforms).map(|(x, u)| x * x / u).collect();
    let (selected, tau) = top_k_by_score(&priorities, k);

    let mut indices = Vec::with_capacity(selected.len());
    let mut values = Vec::with_capacity(selected.len());
    for j in selected {
        let gj = g[j];
        if gj == 0.0 {
            continue;
        }
        let q = if tau > 0.0 { (gj * gj / tau).min(1.0) } else { 1.0 };
        let v = gj / q;
        if q <= 0.0 || !v.is_finite() {
            return Err(SamplerError::InclusionUnderflow {
                index: j,
                threshold: tau,
            });
        }
        indices.push(j as u32);
        values.push(v);
    }
    Ok(SparseUpdate::new(d, indices, values, tau, CodecId::MinMax)?)
}

/// Independent Bernoulli(`p`) sampling with `g_j / p` scaling.
pub fn poisson_sample<R: Rng + ?Sized>(
    g: &[f64],
    p: f64,
    rng: &mut R,
) -> Result<SparseUpdate, SamplerError> {
    check_finite(g)?;
    check_probability(p)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (j, &gj) in g.iter().enumerate() {
        let keep = rng.random::<f64>() < p;
        if keep && gj != 0.0 {
            indices.push(j as u32);
            values.push(gj / p);
        }
    }
    Ok(SparseUpdate::new(g.len(), indices, values, 0.0, CodecId::Poisson)?)
}

/// Magnitude-proportional keep probabilities summing to `k` (or to the
/// number of nonzeros, if smaller), capped at 1 with the excess redistributed.
/// Zero coordinates get probability 0.
pub fn gspar_probabilities(g: &[f64], k: usize) -> Vec<f64> {
    let mut probs = vec![0.0; g.len()];
    let mut open: Vec<usize> = (0..g.len()).filter(|&j| g[j] != 0.0).collect();
    let mut budget = k as f64;
    loop {
        if open.is_empty() || budget <= 0.0 {
            break;
        }
        let mass: f64 = open.iter().map(|&j| g[j].abs()).sum();
        let scale = budget / mass;
        let (full, rest): (Vec<usize>, Vec<usize>) =
            open.iter().partition(|&&j| g[j].abs() * scale >= 1.0);
        if full.is_empty() {
            for &j in &open {
                probs[j] = g[j].abs() * scale;
            }
            break;
        }
        for &j in &full {
            probs[j] = 1.0;
        }
        budget -= full.len() as f64;
        open = rest;
    }
    probs
}

/// Keep coordinate `j` independently with probability `probs[j]`; value `g_j / probs[j]`.
pub fn gspar_sample<R: Rng + ?Sized>(
    g: &[f64],
    probs: &[f64],
    rng: &mut R,
) -> Result<SparseUpdate, SamplerError> {
    check_finite(g)?;
    if probs.len() != g.len() {
        return Err(SamplerError::ProbabilityLengthMismatch(probs.len(), g.len()));
    }
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (j, (&gj, &pj)) in g.iter().zip(probs).enumerate() {
        let u = rng.random::<f64>();
        if gj == 0.0 {
            continue;
        }
        check_probability(pj)?;
        if u < pj {
            indices.push(j as u32);
            values.push(gj / pj);
        }
    }
    Ok(SparseUpdate::new(g.len(), indices, values, 0.0, CodecId::GSpar)?)
}

/// Top-K by magnitude with optional error feedback.
///
/// With feedback the residual is added to `g` first and whatever is not sent
/// stays in the residual. Values are sent unscaled.
pub fn topk_sample(
    g: &[f64],
    k: usize,
    state: &mut SamplerState,
    feedback: bool,
) -> Result<SparseUpdate, SamplerError> {
    check_finite(g)?;
    let d = g.len();
    if k == 0 || k > d {
        return Err(SamplerError::InvalidSampleSize { k, dim: d });
    }
    let mut h = g.to_vec();
    if feedback {
        if state.residual.dim() != d {
            return Err(SamplerError::ResidualMismatch {
                residual: state.residual.dim(),
                dim: d,
            });
        }
        for (a, r) in h.iter_mut().zip(state.residual.iter()) {
            *a += r;
        }
    }
    let magnitudes: Vec<f64> = h.iter().map(|x| x.abs()).collect();
    let (selected, next) = top_k_by_score(&magnitudes, k);
    let mut indices = Vec::with_capacity(selected.len());
    let mut values = Vec::with_capacity(selected.len());
    for j in selected {
        if h[j] == 0.0 {
            continue;
        }
        indices.push(j as u32);
        values.push(h[j]);
        h[j] = 0.0;
    }
    if feedback {
        state.residual = GradientVector::from_vec(h);
    }
    Ok(SparseUpdate::new(d, indices, values, next, CodecId::TopK)?)
}
