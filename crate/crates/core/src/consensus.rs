//! Closed-form consensus probabilities.
//!
//! Seats vote independently. A malicious seat always votes wrong; an honest
//! seat of tier `t` is right with probability `1 - epsilon`. A segment passes
//! when at least `q = ceil(tau * k)` votes are correct, and a trace passes
//! when the weighted count of passing segments reaches `beta` times the total
//! weight.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::Tier;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierParams {
    pub tier: Tier,
    /// Seats on the committee.
    pub k: u32,
    /// Honest error rate.
    pub epsilon: f64,
    /// Adversarial fraction.
    pub rho: f64,
    /// Segment weight.
    pub w: f64,
}

impl TierParams {
    /// Error and adversarial rates of the standard tier profiles: checkers
    /// are exact, model auditors err 5% of the time, human experts 30% with
    /// up to 10% adversaries.
    pub fn standard(tier: Tier, k: u32, w: f64) -> Self {
        let (epsilon, rho) = match tier {
            Tier::Computational => (0.0, 0.0),
            Tier::Llm => (0.05, 0.0),
            Tier::Human => (0.30, 0.10),
        };
        TierParams {
            tier,
            k,
            epsilon,
            rho,
            w,
        }
    }

    pub fn check(&self) -> Result<(), ConsensusError> {
        let bad = |reason| Err(ConsensusError::InvalidSegment { reason });
        if self.k == 0 {
            return bad("k must be positive");
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return bad("w must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    /// Seat quorum fraction.
    pub tau: f64,
    /// Trace quorum fraction.
    pub beta: f64,
    pub segments: Vec<TierParams>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConsensusError {
    #[error("tau = {0} must lie in (0.5, 1]")]
    InvalidTau(f64),
    #[error("beta = {0} must lie in (0, 1]")]
    InvalidBeta(f64),
    #[error("a trace needs at least one segment")]
    EmptySegments,
    #[error("invalid segment: {reason}")]
    InvalidSegment { reason: &'static str },
    #[error("majority bound needs epsilon < 0.5, got {0}")]
    EpsilonTooLarge(f64),
}

impl VoteConfig {
    pub fn check(&self) -> Result<(), ConsensusError> {
        if !(self.tau > 0.5 && self.tau <= 1.0) {
            return Err(ConsensusError::InvalidTau(self.tau));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(ConsensusError::InvalidBeta(self.beta));
        }
        if self.segments.is_empty() {
            return Err(ConsensusError::EmptySegments);
        }
        self.segments.iter().try_for_each(TierParams::check)
    }

    pub fn total_weight(&self) -> f64 {
        self.segments.iter().map(|s| s.w).sum()
    }

    /// Weighted pass total a trace must reach.
    pub fn w_beta(&self) -> f64 {
        self.beta * self.total_weight()
    }

    pub fn pass_probs(&self) -> Vec<f64> {
        self.segments
            .iter()
            .map(|s| segment_pass_prob(s, self.tau))
            .collect()
    }
}

/// `ceil(tau * k)`, with products within 1e-9 of an integer taken as that
/// integer so that e.g. `0.6 * 5` gives 3 rather than 4.
pub fn quorum(tau: f64, k: u32) -> u32 {
    let x = tau * f64::from(k);
    let r = libm::round(x);
    if libm::fabs(x - r) < 1e-9 {
        r as u32
    } else {
        libm::ceil(x) as u32
    }
}

/// Committee sizes above this are evaluated in log space.
const LOG_SPACE_ABOVE: u32 = 30;

fn ln_choose(n: u32, j: u32) -> f64 {
    let (n, j) = (f64::from(n), f64::from(j));
    libm::lgamma(n + 1.0) - libm::lgamma(j + 1.0) - libm::lgamma(n - j + 1.0)
}

fn choose(n: u32, j: u32) -> f64 {
    let j = j.min(n - j);
    (0..j).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Binomial(n, p) probability mass at `j`.
pub fn binomial_pmf(n: u32, j: u32, p: f64) -> f64 {
    if j > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if j == n { 1.0 } else { 0.0 };
    }
    if n > LOG_SPACE_ABOVE {
        let ln = ln_choose(n, j) + f64::from(j) * libm::log(p) + f64::from(n - j) * libm::log1p(-p);
        libm::exp(ln)
    } else {
        choose(n, j) * libm::pow(p, f64::from(j)) * libm::pow(1.0 - p, f64::from(n - j))
    }
}

/// Probability that a segment reaches quorum: condition on the number `m` of
/// malicious seats, then require at least `q` correct honest votes among the
/// remaining `k - m`.
pub fn segment_pass_prob(t: &TierParams, tau: f64) -> f64 {
    let k = t.k;
    let q = quorum(tau, k);
    let mut total = 0.0;
    for m in 0..=k {
        let pm = binomial_pmf(k, m, t.rho);
        if pm == 0.0 || q > k - m {
            continue;
        }
        let honest: f64 = (q..=k - m)
            .map(|c| binomial_pmf(k - m, c, 1.0 - t.epsilon))
            .sum();
        total += pm * honest;
    }
    total.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMoments {
    pub mu_vote: f64,
    pub sigma_vote_sq: f64,
    pub sigma_max_sq: f64,
}

pub fn trace_moments(cfg: &VoteConfig) -> TraceMoments {
    moments_from(&cfg.segments, &cfg.pass_probs())
}

fn moments_from(segments: &[TierParams], p: &[f64]) -> TraceMoments {
    let mut m = TraceMoments {
        mu_vote: 0.0,
        sigma_vote_sq: 0.0,
        sigma_max_sq: 0.0,
    };
    for (s, &p) in segments.iter().zip(p) {
        m.mu_vote += s.w * p;
        m.sigma_vote_sq += s.w * s.w * p * (1.0 - p);
        m.sigma_max_sq += s.w * s.w;
    }
    m
}

/// Whether a weighted pass total `w` falls short of `w_beta`. Totals within
/// 1e-9 of the threshold (relative to the total weight) count as reaching it,
/// so summation order cannot flip the outcome.
pub fn trace_fails(w: f64, w_beta: f64, total_weight: f64) -> bool {
    w < w_beta - 1e-9 * total_weight.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceBounds {
    pub hoeffding: f64,
    pub chernoff: f64,
    pub min: f64,
    /// Minimizing λ of the Chernoff exponent, if the bound is non-vacuous.
    pub chernoff_lambda: Option<f64>,
}

/// Hoeffding and optimized Chernoff upper bounds on `P[W < W_beta]`.
/// Both are reported as 1 when `mu_vote <= W_beta`.
pub fn trace_fail_bound(cfg: &VoteConfig) -> TraceBounds {
    let p = cfg.pass_probs();
    let m = moments_from(&cfg.segments, &p);
    let w_beta = cfg.w_beta();
    if m.mu_vote <= w_beta {
        return TraceBounds {
            hoeffding: 1.0,
            chernoff: 1.0,
            min: 1.0,
            chernoff_lambda: None,
        };
    }
    let gap = m.mu_vote - w_beta;
    let hoeffding = libm::exp(-2.0 * gap * gap / m.sigma_max_sq).min(1.0);

    let weights: Vec<f64> = cfg.segments.iter().map(|s| s.w).collect();
    let (lambda, exponent) = minimize_chernoff_exponent(&weights, &p, w_beta);
    let (chernoff, chernoff_lambda) = if exponent < 0.0 {
        (libm::exp(exponent), Some(lambda))
    } else {
        (1.0, None)
    };
    TraceBounds {
        hoeffding,
        chernoff,
        min: hoeffding.min(chernoff),
        chernoff_lambda,
    }
}

/// `λ W_beta + Σ ln(p_s e^{-λ w_s} + 1 - p_s)`, the log of the Chernoff bound
/// at a fixed λ.
pub fn chernoff_exponent(weights: &[f64], p: &[f64], w_beta: f64, lambda: f64) -> f64 {
    weights
        .iter()
        .zip(p)
        .fold(lambda * w_beta, |acc, (&w, &p)| {
            acc + libm::log(p * libm::exp(-lambda * w) + (1.0 - p))
        })
}

/// Upper end of the λ search interval.
pub fn chernoff_lambda_max(weights: &[f64]) -> f64 {
    50.0 / weights.iter().copied().fold(f64::MIN_POSITIVE, f64::max)
}

/// Minimizes the (convex) Chernoff exponent over λ ∈ (0, 50 / max w]:
/// a log-spaced grid brackets the minimum, golden-section search refines it
/// to a relative tolerance of 1e-9.
fn minimize_chernoff_exponent(weights: &[f64], p: &[f64], w_beta: f64) -> (f64, f64) {
    const GRID: usize = 96;
    let f = |l: f64| chernoff_exponent(weights, p, w_beta, l);
    let hi = chernoff_lambda_max(weights);
    let lo = hi * 1e-9;
    let grid: Vec<f64> = (0..=GRID)
        .map(|i| lo * libm::pow(hi / lo, i as f64 / GRID as f64))
        .collect();
    let (best, _) =
        grid.iter()
            .enumerate()
            .map(|(i, &l)| (i, f(l)))
            .fold(
                (0, f64::INFINITY),
                |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
            );

    let mut a = if best == 0 { 0.0 } else { grid[best - 1] };
    let mut b = grid[(best + 1).min(GRID)];
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > 1e-9 * b.max(1e-300) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let candidates = [(mid, f(mid)), (grid[best], f(grid[best]))];
    candidates.into_iter().fold(
        (mid, f64::INFINITY),
        |acc, c| if c.1 < acc.1 { c } else { acc },
    )
}

/// Exact `P[W < W_beta]` from the distribution of the weighted pass total,
/// built by convolving one segment at a time. Cost grows with the number of
/// distinct achievable totals, at most `2^S`.
pub fn trace_fail_exact(cfg: &VoteConfig) -> f64 {
    let p = cfg.pass_probs();
    let mut dist: Vec<(f64, f64)> = alloc::vec![(0.0, 1.0)];
    for (s, &ps) in cfg.segments.iter().zip(&p) {
        let mut next = Vec::with_capacity(dist.len() * 2);
        for &(w, pr) in &dist {
            next.push((w, pr * (1.0 - ps)));
            next.push((w + s.w, pr * ps));
        }
        next.sort_by(|a, b| a.0.total_cmp(&b.0));
        dist.clear();
        for (w, pr) in next {
            match dist.last_mut() {
                Some(last) if last.0 == w => last.1 += pr,
                _ => dist.push((w, pr)),
            }
        }
    }
    let total = cfg.total_weight();
    let w_beta = cfg.w_beta();
    dist.iter()
        .filter(|(w, _)| trace_fails(*w, w_beta, total))
        .map(|(_, pr)| pr)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Hoeffding bound on the chance that a simple majority of `k` honest seats
/// with error rate `epsilon` is wrong.
pub fn committee_error_bound(k: u32, epsilon: f64) -> Result<f64, ConsensusError> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(ConsensusError::EpsilonTooLarge(epsilon));
    }
    let margin = 0.5 - epsilon;
    Ok(libm::exp(-2.0 * f64::from(k) * margin * margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct S1Check {
    pub holds: bool,
    /// `mu_vote - W_beta`.
    pub gap: f64,
    /// `sqrt(sigma_vote² ln(λT / eps_target) / 2)`, floored at 0.
    pub required: f64,
    pub margin: f64,
}

/// Statistical dial: is the expected pass total far enough above the trace
/// quorum for a horizon of `lambda_rate * horizon_t` traces to stay below
/// `eps_target` total failure probability?
pub fn check_s1(cfg: &VoteConfig, lambda_rate: f64, horizon_t: f64, eps_target: f64) -> S1Check {
    let m = trace_moments(cfg);
    let gap = m.mu_vote - cfg.w_beta();
    let ln_term = libm::log(lambda_rate * horizon_t / eps_target);
    let rhs = 0.5 * m.sigma_vote_sq * ln_term;
    let required = if rhs > 0.0 { libm::sqrt(rhs) } else { 0.0 };
    S1Check {
        holds: gap >= required,
        gap,
        required,
        margin: gap - required,
    }
}
