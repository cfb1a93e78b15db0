//! Reputation, slashing and payoff economics.
//!
//! An honest seat earns `R` for a correct vote. An incorrect vote is slashed
//! `P` with probability `p_slash(r)`, which falls linearly from `p_max` at
//! reputation 0 to `p_min` at reputation 1; an unslashed incorrect vote
//! earns nothing.

use serde::{Deserialize, Serialize};

/// Reputation assigned to a freshly registered seat.
pub const INITIAL_REPUTATION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomicParams {
    /// Reward per correct vote.
    #[serde(alias = "R")]
    pub reward: f64,
    /// Penalty per slash.
    #[serde(alias = "P")]
    pub penalty: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Reputation learning rate.
    pub gamma: f64,
    /// Margin constant of the malicious-loss guarantee.
    pub delta: f64,
    /// Segments per unit time.
    pub lambda_rate: f64,
    pub horizon_t: f64,
    /// Honest error rate.
    #[serde(alias = "epsilon_H")]
    pub epsilon_h: f64,
}

impl EconomicParams {
    /// The worked calibration: R = 6, P = 8, slash probabilities in
    /// [0.35, 0.5], 1440 segments, 30% honest error.
    pub fn calibration() -> Self {
        EconomicParams {
            reward: 6.0,
            penalty: 8.0,
            p_min: 0.35,
            p_max: 0.5,
            gamma: 0.1,
            delta: 0.2,
            lambda_rate: 1440.0,
            horizon_t: 1.0,
            epsilon_h: 0.30,
        }
    }

    /// Expected number of segments over the horizon, `λT`.
    pub fn segments(&self) -> f64 {
        self.lambda_rate * self.horizon_t
    }

    pub fn check(&self) -> Result<(), EconError> {
        let bad = |field, reason| Err(EconError::InvalidParams { field, reason });
        if !(self.reward > 0.0 && self.reward.is_finite()) {
            return bad("reward", "must be positive");
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return bad("penalty", "must be positive");
        }
        if !(self.p_min > 0.0 && self.p_min < self.p_max && self.p_max <= 1.0) {
            return bad("p_min/p_max", "need 0 < p_min < p_max <= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", "must lie in (0, 1)");
        }
        if !(self.lambda_rate >= 0.0 && self.horizon_t >= 0.0) {
            return bad("lambda_rate/horizon_t", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.epsilon_h) {
            return bad("epsilon_h", "must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EconError {
    #[error("invalid economic parameter `{field}`: {reason}")]
    InvalidParams {
        field: &'static str,
        reason: &'static str,
    },
    #[error("honest payoff floor {mu_min} is not positive; the reward condition fails")]
    E1Violated { mu_min: f64 },
    #[error("theta = {theta} must lie in (0, {max})")]
    ThetaOutOfDomain { theta: f64, max: f64 },
    #[error("no samples")]
    EmptySamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeatState {
    pub reputation: f64,
    pub stake: f64,
    pub cumulative_payoff: f64,
    pub is_malicious: bool,
}

impl SeatState {
    pub fn new(stake: f64, is_malicious: bool) -> Self {
        SeatState {
            reputation: INITIAL_REPUTATION,
            stake,
            cumulative_payoff: 0.0,
            is_malicious,
        }
    }

    /// Books one segment: `+R` if correct, `-P` if slashed, nothing
    /// otherwise; then moves reputation. Returns the payoff.
    pub fn record(&mut self, correct: bool, slashed: bool, ep: &EconomicParams) -> f64 {
        let x = if correct {
            ep.reward
        } else if slashed {
            -ep.penalty
        } else {
            0.0
        };
        self.cumulative_payoff += x;
        self.reputation = update_reputation(self.reputation, correct, ep.gamma);
        x
    }
}

/// Exponential moving average of vote correctness, kept in `[0, 1]`.
pub fn update_reputation(r: f64, correct: bool, gamma: f64) -> f64 {
    let target = if correct { 1.0 } else { 0.0 };
    ((1.0 - gamma) * r + gamma * target).clamp(0.0, 1.0)
}

pub fn slash_probability(r: f64, ep: &EconomicParams) -> f64 {
    let r = r.clamp(0.0, 1.0);
    (ep.p_min + (ep.p_max - ep.p_min) * (1.0 - r)).clamp(ep.p_min, ep.p_max)
}

/// Expected honest payoff per segment when slashed with probability `p`.
pub fn honest_payoff_at(p_slash: f64, ep: &EconomicParams) -> f64 {
    // Same as (1-ε)R - εPp, but exact at the calibration point.
    ep.reward - ep.epsilon_h * (ep.reward + ep.penalty * p_slash)
}

pub fn expected_payoff_honest(r: f64, ep: &EconomicParams) -> f64 {
    honest_payoff_at(slash_probability(r, ep), ep)
}

/// Worst-case expected honest payoff, at `p_max`.
pub fn mu_min(ep: &EconomicParams) -> f64 {
    honest_payoff_at(ep.p_max, ep)
}

/// Expected per-segment payoff of a seat that always votes wrong, at its
/// worst-case reputation 0.
pub fn expected_payoff_malicious(ep: &EconomicParams) -> f64 {
    expected_payoff_malicious_at(0.0, ep)
}

pub fn expected_payoff_malicious_at(r: f64, ep: &EconomicParams) -> f64 {
    -ep.penalty * slash_probability(r, ep)
}

/// Guaranteed expected horizon loss of a malicious seat, `-λT·δP`.
pub fn malicious_horizon_bound(ep: &EconomicParams) -> f64 {
    -ep.segments() * ep.delta * ep.penalty
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialReport {
    pub e1: bool,
    /// `R` must exceed this.
    pub e1_threshold: f64,
    pub e2: bool,
    /// `p_min` must reach this.
    pub e2_threshold: f64,
    pub alpha: f64,
    pub mu_min: f64,
}

/// The two economic conditions: the reward outweighs expected honest
/// slashing (E1), and the slash floor is high enough for malicious seats
/// to lose at least `δP` per segment (E2).
pub fn check_economic_dials(ep: &EconomicParams) -> DialReport {
    let e1_threshold = ep.epsilon_h / (1.0 - ep.epsilon_h) * ep.penalty * ep.p_max;
    let alpha = ep.penalty * ep.p_max / (ep.reward + ep.penalty * ep.p_max);
    let e2_threshold = ep.delta / (1.0 - alpha);
    DialReport {
        e1: ep.reward > e1_threshold,
        e1_threshold,
        e2: ep.p_min >= e2_threshold,
        e2_threshold,
        alpha,
        mu_min: mu_min(ep),
    }
}

/// Tail probabilities carried as natural logarithms; `exp` of a value below
/// about -745 underflows to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBounds {
    pub ln_honest_loss: f64,
    pub ln_malicious_profit: f64,
}

impl TailBounds {
    pub fn honest_loss(&self) -> f64 {
        libm::exp(self.ln_honest_loss)
    }

    pub fn malicious_profit(&self) -> f64 {
        libm::exp(self.ln_malicious_profit)
    }
}

/// Bernstein-type bounds on an honest seat ending the horizon at or below
/// zero and a malicious seat ending at or above zero, with range bound
/// `b = R`.
pub fn tail_bounds(ep: &EconomicParams, sigma_h_sq: f64) -> Result<TailBounds, EconError> {
    let mu = mu_min(ep);
    if mu <= 0.0 {
        return Err(EconError::E1Violated { mu_min: mu });
    }
    let n = ep.segments();
    let b = ep.reward;
    let bernstein = |gap: f64| -n * gap * gap / (2.0 * sigma_h_sq + (2.0 / 3.0) * b * gap);
    let dp = ep.delta * ep.penalty;
    Ok(TailBounds {
        ln_honest_loss: bernstein(mu),
        ln_malicious_profit: bernstein(dp),
    })
}

/// Variance of the honest per-segment payoff when slashed with probability `p`.
pub fn payoff_variance_at(p_slash: f64, ep: &EconomicParams) -> f64 {
    let mu = honest_payoff_at(p_slash, ep);
    (1.0 - ep.epsilon_h) * ep.reward * ep.reward + ep.epsilon_h * p_slash * ep.penalty * ep.penalty
        - mu * mu
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBound {
    /// Supremum of the payoff variance over reputations in `[0, 1]`.
    pub sup: f64,
    pub argmax_r: f64,
    /// Range-based bound `(R + P)² / 4`.
    pub crude: f64,
}

/// Supremum of the honest payoff variance over reputation, from a 1e-3 grid
/// that includes both endpoints.
pub fn payoff_variance_bound(ep: &EconomicParams) -> VarianceBound {
    const STEPS: u32 = 1000;
    let (argmax_r, sup) = (0..=STEPS)
        .map(|i| f64::from(i) / f64::from(STEPS))
        .map(|r| (r, payoff_variance_at(slash_probability(r, ep), ep)))
        .fold(
            (0.0, f64::NEG_INFINITY),
            |acc, x| if x.1 > acc.1 { x } else { acc },
        );
    let range = ep.reward + ep.penalty;
    VarianceBound {
        sup,
        argmax_r,
        crude: range * range / 4.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfCheck {
    pub holds: bool,
    pub empirical: f64,
    pub std_err: f64,
    pub bound: f64,
    pub variance: f64,
}

/// Compares the empirical moment generating function of a centred sample
/// bounded above by `b` with `exp(θ²σ² / (2(1 - θb/3)))`, allowing three
/// standard errors of slack.
pub fn mgf_bound_check(samples: &[f64], theta: f64, b: f64) -> Result<MgfCheck, EconError> {
    let max = 3.0 / b;
    if !(theta > 0.0 && theta < max) {
        return Err(EconError::ThetaOutOfDomain { theta, max });
    }
    if samples.is_empty() {
        return Err(EconError::EmptySamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let (s1, s2) = samples.iter().fold((0.0, 0.0), |(s1, s2), &x| {
        let e = libm::exp(theta * x);
        (s1 + e, s2 + e * e)
    });
    let empirical = s1 / n;
    let std_err = libm::sqrt(((s2 / n) - empirical * empirical).max(0.0) / n);
    let bound = libm::exp(theta * theta * variance / (2.0 * (1.0 - theta * b / 3.0)));
    Ok(MgfCheck {
        holds: empirical <= bound + 3.0 * std_err,
        empirical,
        std_err,
        bound,
        variance,
    })
}
