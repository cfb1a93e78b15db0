//! Seeded Monte Carlo checks of the analytic consensus and payoff results.
//!
//! Every simulation draws from ChaCha8 keyed by a [`StreamKey`]: one key per
//! (seed, sweep cell, purpose), one ChaCha stream per trial. Trials run in
//! parallel; results are collected in trial order and reduced sequentially,
//! so reports are bit-identical regardless of scheduling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use audit_core::consensus::{
    check_s1, quorum, segment_pass_prob, trace_fail_bound, trace_fail_exact, trace_fails,
    trace_moments, ConsensusError, S1Check, TierParams, TraceBounds, TraceMoments, VoteConfig,
};
use audit_core::economics::{
    check_economic_dials, expected_payoff_honest, malicious_horizon_bound, payoff_variance_bound,
    slash_probability, tail_bounds, DialReport, EconError, EconomicParams, SeatState, TailBounds,
};
use audit_core::graph::Tier;
use audit_core::Digest;

/// Largest segment count for which the exact convolution is reported.
pub const EXACT_MAX_SEGMENTS: usize = 20;

/// Upper end of the sweep grids.
pub const GRID_MAX: f64 = 0.4;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("{name} value {value} lies outside [0, {GRID_MAX}]")]
    GridOutOfRange { name: &'static str, value: f64 },
    #[error("a sweep needs at least one non-empty grid")]
    EmptyGrid,
    #[error("a sweep needs at least one human-tier segment to vary")]
    NoHumanSegments,
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Economics(#[from] EconError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub vote: VoteConfig,
    pub econ: EconomicParams,
    pub trials: u64,
    pub seed: u64,
    /// Target failure probability over the horizon, used for per-cell
    /// feasibility in sweeps.
    pub eps_target: f64,
    pub adversarial_sweep: Option<Vec<f64>>,
    pub error_sweep: Option<Vec<f64>>,
    /// Exactly `λT` segments per horizon instead of a Poisson count.
    pub fixed_count: bool,
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        if self.trials == 0 {
            return Err(SimError::NoTrials);
        }
        self.vote.check()?;
        self.econ.check()?;
        for (name, grid) in [
            ("adversarial_sweep", &self.adversarial_sweep),
            ("error_sweep", &self.error_sweep),
        ] {
            for &value in grid.iter().flatten() {
                if !(0.0..=GRID_MAX).contains(&value) {
                    return Err(SimError::GridOutOfRange { name, value });
                }
            }
        }
        Ok(())
    }
}

/// Key of a family of independent ChaCha8 streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(pub Digest);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(Digest::hash_parts(&[b"audit-sim", &seed.to_be_bytes()]))
    }

    pub fn derive(&self, label: &[u8], index: u64) -> Self {
        StreamKey(Digest::hash_parts(&[
            self.0.as_bytes(),
            label,
            &index.to_be_bytes(),
        ]))
    }

    /// Key of sweep cell `(rho, epsilon)`.
    pub fn cell(&self, rho: f64, epsilon: f64) -> Self {
        StreamKey(Digest::hash_parts(&[
            self.0.as_bytes(),
            b"cell",
            &rho.to_bits().to_be_bytes(),
            &epsilon.to_bits().to_be_bytes(),
        ]))
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(*self.0.as_bytes());
        rng.set_stream(stream);
        rng
    }
}

/// Hit count over `trials` with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub hits: u64,
    pub trials: u64,
    pub freq: f64,
    pub se: f64,
}

impl Frequency {
    pub fn new(hits: u64, trials: u64) -> Self {
        let n = trials as f64;
        let freq = hits as f64 / n;
        Frequency {
            hits,
            trials,
            freq,
            se: (freq * (1.0 - freq) / n).sqrt(),
        }
    }

    /// Standard error implied by a reference probability `p`, floored at
    /// `1/n` so that degenerate `p` still leaves one trial of slack.
    pub fn reference_se(&self, p: f64) -> f64 {
        let n = self.trials as f64;
        (p * (1.0 - p) / n).sqrt().max(1.0 / n)
    }

    /// `|freq - p| <= z` reference standard errors.
    pub fn agrees_with(&self, p: f64, z: f64) -> bool {
        (self.freq - p).abs() <= z * self.reference_se(p)
    }
}

fn count_hits(trials: u64, key: &StreamKey, hit: impl Fn(&mut ChaCha8Rng) -> bool + Sync) -> u64 {
    (0..trials)
        .into_par_iter()
        .filter(|&t| hit(&mut key.rng(t)))
        .count() as u64
}

/// Number of correct votes from a committee of `t.k` seats: each seat is
/// adversarial with probability `rho` (always wrong), otherwise correct with
/// probability `1 - epsilon`.
fn correct_votes(t: &TierParams, rng: &mut ChaCha8Rng) -> u32 {
    let mut correct = 0;
    for _ in 0..t.k {
        let adversarial = rng.random::<f64>() < t.rho;
        if !adversarial && rng.random::<f64>() < 1.0 - t.epsilon {
            correct += 1;
        }
    }
    correct
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStat {
    pub index: usize,
    pub tier: Tier,
    pub k: u32,
    pub epsilon: f64,
    pub rho: f64,
    pub quorum: u32,
    pub empirical: Frequency,
    pub analytic: f64,
}

/// Pass frequency of every segment of `cfg.vote`, each on its own key.
pub fn simulate_segments(cfg: &SimConfig, key: &StreamKey) -> Vec<SegmentStat> {
    let tau = cfg.vote.tau;
    cfg.vote
        .segments
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let q = quorum(tau, t.k);
            let hits = count_hits(cfg.trials, &key.derive(b"segment", i as u64), |rng| {
                correct_votes(t, rng) >= q
            });
            SegmentStat {
                index: i,
                tier: t.tier,
                k: t.k,
                epsilon: t.epsilon,
                rho: t.rho,
                quorum: q,
                empirical: Frequency::new(hits, cfg.trials),
                analytic: segment_pass_prob(t, tau),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStat {
    /// Frequency of a valid trace failing the weighted pass threshold.
    pub empirical: Frequency,
    pub moments: TraceMoments,
    pub bounds: TraceBounds,
    /// Exact failure probability, for at most [`EXACT_MAX_SEGMENTS`] segments.
    pub exact: Option<f64>,
}

pub fn simulate_traces(cfg: &SimConfig, key: &StreamKey) -> TraceStat {
    let vote = &cfg.vote;
    let q: Vec<u32> = vote
        .segments
        .iter()
        .map(|t| quorum(vote.tau, t.k))
        .collect();
    let (w_beta, total) = (vote.w_beta(), vote.total_weight());
    let key = key.derive(b"trace", 0);
    let hits = count_hits(cfg.trials, &key, |rng| {
        let mut w = 0.0;
        for (t, &q) in vote.segments.iter().zip(&q) {
            if correct_votes(t, rng) >= q {
                w += t.w;
            }
        }
        trace_fails(w, w_beta, total)
    });
    TraceStat {
        empirical: Frequency::new(hits, cfg.trials),
        moments: trace_moments(vote),
        bounds: trace_fail_bound(vote),
        exact: (vote.segments.len() <= EXACT_MAX_SEGMENTS).then(|| trace_fail_exact(vote)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonStat {
    pub trials: u64,
    pub fixed_count: bool,
    pub lambda_t: f64,
    pub honest_nonpositive: u64,
    pub malicious_nonnegative: u64,
    pub mean_honest_payoff: f64,
    pub mean_malicious_payoff: f64,
    /// Mean over trials of the honest seat's average payoff per segment.
    pub honest_per_segment: f64,
    pub honest_per_segment_se: f64,
    /// Mean over trials of the honest seat's average pre-vote reputation.
    pub honest_mean_reputation: f64,
    /// Expected honest payoff per segment at `honest_mean_reputation`.
    pub analytic_per_segment: f64,
    /// Trials in which at least one segment arrived.
    pub honest_active_trials: u64,
    pub dials: DialReport,
    /// Concentration bounds, absent when the reward condition fails.
    pub tail: Option<TailBounds>,
    /// Expected horizon payoff bound for a malicious seat held at the
    /// slash floor; simulated seats use live reputation instead.
    pub malicious_bound: f64,
}

#[derive(Debug, Clone, Copy)]
struct SeatRun {
    payoff: f64,
    segments: u64,
    reputation_sum: f64,
}

fn segment_count(ep: &EconomicParams, fixed: bool, rng: &mut ChaCha8Rng) -> u64 {
    let lambda_t = ep.segments();
    if fixed {
        return lambda_t.round() as u64;
    }
    if lambda_t <= 0.0 {
        return 0;
    }
    Poisson::new(lambda_t)
        .expect("positive finite rate")
        .sample(rng) as u64
}

fn run_seat(ep: &EconomicParams, fixed: bool, malicious: bool, rng: &mut ChaCha8Rng) -> SeatRun {
    let n = segment_count(ep, fixed, rng);
    let mut seat = SeatState::new(1.0, malicious);
    let mut reputation_sum = 0.0;
    for _ in 0..n {
        reputation_sum += seat.reputation;
        let correct = !malicious && rng.random::<f64>() < 1.0 - ep.epsilon_h;
        let slashed = !correct && rng.random::<f64>() < slash_probability(seat.reputation, ep);
        seat.record(correct, slashed, ep);
    }
    SeatRun {
        payoff: seat.cumulative_payoff,
        segments: n,
        reputation_sum,
    }
}

fn run_seats(
    ep: &EconomicParams,
    fixed: bool,
    malicious: bool,
    trials: u64,
    key: &StreamKey,
) -> Vec<SeatRun> {
    (0..trials)
        .into_par_iter()
        .map(|t| run_seat(ep, fixed, malicious, &mut key.rng(t)))
        .collect()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One honest and one always-wrong seat per trial, each accruing payoffs
/// over a horizon of `Poisson(λT)` (or exactly `λT`) segments with evolving
/// reputation.
pub fn simulate_horizon(cfg: &SimConfig, key: &StreamKey) -> HorizonStat {
    let ep = &cfg.econ;
    let honest = run_seats(
        ep,
        cfg.fixed_count,
        false,
        cfg.trials,
        &key.derive(b"horizon-honest", 0),
    );
    let malicious = run_seats(
        ep,
        cfg.fixed_count,
        true,
        cfg.trials,
        &key.derive(b"horizon-malicious", 0),
    );

    let active: Vec<&SeatRun> = honest.iter().filter(|r| r.segments > 0).collect();
    let per_segment: Vec<f64> = active
        .iter()
        .map(|r| r.payoff / r.segments as f64)
        .collect();
    let reputations: Vec<f64> = active
        .iter()
        .map(|r| r.reputation_sum / r.segments as f64)
        .collect();
    let (honest_per_segment, honest_per_segment_se) = mean_and_se(&per_segment);
    let (honest_mean_reputation, _) = mean_and_se(&reputations);

    let dials = check_economic_dials(ep);
    let tail = if dials.e1 {
        tail_bounds(ep, payoff_variance_bound(ep).sup).ok()
    } else {
        None
    };
    let n = cfg.trials as f64;
    HorizonStat {
        trials: cfg.trials,
        fixed_count: cfg.fixed_count,
        lambda_t: ep.segments(),
        honest_nonpositive: honest.iter().filter(|r| r.payoff <= 0.0).count() as u64,
        malicious_nonnegative: malicious.iter().filter(|r| r.payoff >= 0.0).count() as u64,
        mean_honest_payoff: honest.iter().map(|r| r.payoff).sum::<f64>() / n,
        mean_malicious_payoff: malicious.iter().map(|r| r.payoff).sum::<f64>() / n,
        honest_per_segment,
        honest_per_segment_se,
        honest_mean_reputation,
        analytic_per_segment: expected_payoff_honest(honest_mean_reputation, ep),
        honest_active_trials: active.len() as u64,
        dials,
        tail,
        malicious_bound: malicious_horizon_bound(ep),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub trials: u64,
    pub segments: Vec<SegmentStat>,
    pub trace: TraceStat,
    pub horizon: HorizonStat,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimReport, SimError> {
    cfg.check()?;
    Ok(simulate_with_key(cfg, &StreamKey::root(cfg.seed)))
}

/// All three simulations under `key`; the configuration must be valid.
pub fn simulate_with_key(cfg: &SimConfig, key: &StreamKey) -> SimReport {
    SimReport {
        seed: cfg.seed,
        trials: cfg.trials,
        segments: simulate_segments(cfg, key),
        trace: simulate_traces(cfg, key),
        horizon: simulate_horizon(cfg, key),
    }
}

/// Standard errors of slack allowed between an empirical value and its
/// analytic counterpart.
pub const Z_SLACK: f64 = 4.0;

/// Largest count of `n` trials consistent with a per-trial probability
/// bounded by `exp(ln_bound)`.
fn allowed_count(n: u64, ln_bound: f64) -> u64 {
    let n = n as f64;
    let b = ln_bound.exp();
    (n * b + Z_SLACK * (n * b * (1.0 - b)).sqrt()).floor() as u64
}

/// Every place where `r` strays from the analytic results it echoes:
/// segment pass rates and the exact trace failure probability within
/// [`Z_SLACK`] standard errors, trace failures under the analytic bound,
/// horizon outcome counts under the tail bounds and the honest per-segment
/// mean at its expectation. Horizon checks are skipped when the reward
/// condition fails.
pub fn bound_violations(r: &SimReport) -> Vec<String> {
    let mut v = Vec::new();
    for s in &r.segments {
        if !s.empirical.agrees_with(s.analytic, Z_SLACK) {
            v.push(format!(
                "segment {}: pass frequency {:.6} vs analytic {:.6} (se {:.2e})",
                s.index,
                s.empirical.freq,
                s.analytic,
                s.empirical.reference_se(s.analytic)
            ));
        }
    }
    let t = &r.trace;
    let bound = t.bounds.min;
    if t.empirical.freq > bound + Z_SLACK * t.empirical.reference_se(bound) {
        v.push(format!(
            "trace failure frequency {:.6} exceeds the bound {:.6}",
            t.empirical.freq, bound
        ));
    }
    if let Some(p) = t.exact {
        if !t.empirical.agrees_with(p, Z_SLACK) {
            v.push(format!(
                "trace failure frequency {:.6} vs exact {:.6}",
                t.empirical.freq, p
            ));
        }
    }
    let h = &r.horizon;
    if let (true, Some(tail)) = (h.dials.e1, h.tail) {
        if h.honest_nonpositive > allowed_count(h.trials, tail.ln_honest_loss) {
            v.push(format!(
                "{} honest seats ended without profit",
                h.honest_nonpositive
            ));
        }
        if h.malicious_nonnegative > allowed_count(h.trials, tail.ln_malicious_profit) {
            v.push(format!(
                "{} malicious seats ended without loss",
                h.malicious_nonnegative
            ));
        }
        let gap = (h.honest_per_segment - h.analytic_per_segment).abs();
        if h.honest_active_trials > 1 && gap > (Z_SLACK * h.honest_per_segment_se).max(1e-9) {
            v.push(format!(
                "honest payoff per segment {:.6} vs expected {:.6} (se {:.2e})",
                h.honest_per_segment, h.analytic_per_segment, h.honest_per_segment_se
            ));
        }
    }
    v
}

/// Frequency with which a committee of `k` independent voters, each wrong
/// with probability `epsilon`, fails to reach a strict correct majority.
pub fn simulate_committee(k: u32, epsilon: f64, trials: u64, key: &StreamKey) -> Frequency {
    let t = TierParams {
        tier: Tier::Human,
        k,
        epsilon,
        rho: 0.0,
        w: 1.0,
    };
    let key = key.derive(b"committee", u64::from(k));
    Frequency::new(
        count_hits(trials, &key, |rng| 2 * correct_votes(&t, rng) <= k),
        trials,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rho: f64,
    pub epsilon: f64,
    pub report: SimReport,
    pub s1: S1Check,
    /// S1 and both economic conditions hold.
    pub feasible: bool,
}

/// Human-tier segment whose pass rate a sweep row reports.
fn probe_segment(vote: &VoteConfig) -> Option<usize> {
    vote.segments.iter().position(|t| t.tier == Tier::Human)
}

/// `cfg` with every human-tier segment (and the honest error rate of the
/// economics) moved to the given sweep coordinates.
pub fn cell_config(cfg: &SimConfig, rho: f64, epsilon: f64) -> SimConfig {
    let mut c = cfg.clone();
    for t in c.vote.segments.iter_mut().filter(|t| t.tier == Tier::Human) {
        t.rho = rho;
        t.epsilon = epsilon;
    }
    c.econ.epsilon_h = epsilon;
    c.adversarial_sweep = None;
    c.error_sweep = None;
    c
}

/// Sweep coordinates in row order: `rho` outer, `epsilon` inner. A missing
/// grid is pinned to the configuration's current value.
pub fn sweep_grid(cfg: &SimConfig) -> Result<Vec<(f64, f64)>, SimError> {
    let nonempty = |g: &Option<Vec<f64>>| g.as_ref().is_some_and(|g| !g.is_empty());
    if !nonempty(&cfg.adversarial_sweep) && !nonempty(&cfg.error_sweep) {
        return Err(SimError::EmptyGrid);
    }
    let probe = &cfg.vote.segments[probe_segment(&cfg.vote).ok_or(SimError::NoHumanSegments)?];
    let rhos = cfg
        .adversarial_sweep
        .clone()
        .filter(|g| !g.is_empty())
        .unwrap_or_else(|| vec![probe.rho]);
    let epsilons = cfg
        .error_sweep
        .clone()
        .filter(|g| !g.is_empty())
        .unwrap_or_else(|| vec![probe.epsilon]);
    Ok(rhos
        .iter()
        .flat_map(|&r| epsilons.iter().map(move |&e| (r, e)))
        .collect())
}

/// Runs every simulation in each cell of the `rho × epsilon` grid. Cells are
/// keyed by their coordinates, so results do not depend on evaluation order.
pub fn sweep(cfg: &SimConfig) -> Result<Vec<SweepCell>, SimError> {
    cfg.check()?;
    let grid = sweep_grid(cfg)?;
    let root = StreamKey::root(cfg.seed);
    let cells = grid
        .par_iter()
        .map(|&(rho, epsilon)| {
            let c = cell_config(cfg, rho, epsilon);
            c.check()?;
            let report = simulate_with_key(&c, &root.cell(rho, epsilon));
            let s1 = check_s1(&c.vote, c.econ.lambda_rate, c.econ.horizon_t, c.eps_target);
            let feasible = s1.holds && report.horizon.dials.e1 && report.horizon.dials.e2;
            Ok(SweepCell {
                rho,
                epsilon,
                report,
                s1,
                feasible,
            })
        })
        .collect::<Vec<Result<SweepCell, SimError>>>();
    cells.into_iter().collect()
}

/// One CSV row per sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub epsilon: f64,
    pub pass_freq: f64,
    pub pass_se: f64,
    pub analytic_pass: f64,
    pub trace_fail_freq: f64,
    pub trace_fail_se: f64,
    pub trace_fail_exact: Option<f64>,
    pub hoeffding: f64,
    pub chernoff: f64,
    pub honest_nonpositive: u64,
    pub malicious_nonnegative: u64,
    pub mean_honest_payoff: f64,
    pub mean_malicious_payoff: f64,
    pub s1_holds: bool,
    pub e1_holds: bool,
    pub e2_holds: bool,
    pub feasible: bool,
}

impl SweepRow {
    pub fn from_cell(cell: &SweepCell) -> Self {
        let r = &cell.report;
        let probe = r
            .segments
            .iter()
            .find(|s| s.tier == Tier::Human)
            .expect("sweeps require a human segment");
        SweepRow {
            rho: cell.rho,
            epsilon: cell.epsilon,
            pass_freq: probe.empirical.freq,
            pass_se: probe.empirical.se,
            analytic_pass: probe.analytic,
            trace_fail_freq: r.trace.empirical.freq,
            trace_fail_se: r.trace.empirical.se,
            trace_fail_exact: r.trace.exact,
            hoeffding: r.trace.bounds.hoeffding,
            chernoff: r.trace.bounds.chernoff,
            honest_nonpositive: r.horizon.honest_nonpositive,
            malicious_nonnegative: r.horizon.malicious_nonnegative,
            mean_honest_payoff: r.horizon.mean_honest_payoff,
            mean_malicious_payoff: r.horizon.mean_malicious_payoff,
            s1_holds: cell.s1.holds,
            e1_holds: r.horizon.dials.e1,
            e2_holds: r.horizon.dials.e2,
            feasible: cell.feasible,
        }
    }
}

pub fn sweep_csv(cells: &[SweepCell]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for cell in cells {
        w.serialize(SweepRow::from_cell(cell))?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(segments: Vec<TierParams>, tau: f64, beta: f64, trials: u64) -> SimConfig {
        SimConfig {
            vote: VoteConfig {
                tau,
                beta,
                segments,
            },
            econ: EconomicParams::calibration(),
            trials,
            seed: 7,
            eps_target: 1e-4,
            adversarial_sweep: None,
            error_sweep: None,
            fixed_count: true,
        }
    }

    fn human(k: u32, epsilon: f64, rho: f64) -> TierParams {
        TierParams {
            tier: Tier::Human,
            k,
            epsilon,
            rho,
            w: 1.0,
        }
    }

    #[test]
    fn streams_are_independent_of_order() {
        let key = StreamKey::root(1);
        let a: Vec<u64> = (0..4).map(|t| key.rng(t).random()).collect();
        let b: Vec<u64> = (0..4)
            .rev()
            .map(|t| key.rng(t).random())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_ne!(key.derive(b"x", 0), key.derive(b"x", 1));
        assert_ne!(key.cell(0.1, 0.2), key.cell(0.2, 0.1));
    }

    #[test]
    fn perfect_committee_always_passes() {
        let cfg = config(vec![human(5, 0.0, 0.0)], 0.66, 0.5, 2_000);
        let s = &simulate_segments(&cfg, &StreamKey::root(0))[0];
        assert_eq!(s.empirical.hits, 2_000);
        assert_eq!(s.empirical.se, 0.0);
    }

    #[test]
    fn single_voter_matches_bernoulli() {
        let cfg = config(vec![human(1, 0.3, 0.0)], 0.66, 0.5, 100_000);
        let s = &simulate_segments(&cfg, &StreamKey::root(0))[0];
        assert!(s.empirical.agrees_with(0.7, 4.0), "{:?}", s.empirical);
    }

    #[test]
    fn tiny_beta_fails_only_when_every_segment_fails() {
        let cfg = config(vec![human(5, 0.01, 0.0); 4], 0.66, 1e-6, 5_000);
        assert_eq!(simulate_traces(&cfg, &StreamKey::root(0)).empirical.hits, 0);

        let segs = vec![human(3, 0.4, 0.2); 4];
        let cfg = config(segs.clone(), 0.66, 1e-6, 100_000);
        let oracle: f64 = segs
            .iter()
            .map(|t| 1.0 - segment_pass_prob(t, 0.66))
            .product();
        let t = simulate_traces(&cfg, &StreamKey::root(0));
        assert!(
            t.empirical.agrees_with(oracle, 4.0),
            "{:?} vs {oracle}",
            t.empirical
        );
    }

    #[test]
    fn full_beta_fails_unless_every_segment_passes() {
        let segs = vec![human(3, 0.1, 0.0), human(5, 0.2, 0.1)];
        let cfg = config(segs.clone(), 0.66, 1.0, 100_000);
        let oracle = 1.0
            - segs
                .iter()
                .map(|t| segment_pass_prob(t, 0.66))
                .product::<f64>();
        let t = simulate_traces(&cfg, &StreamKey::root(3));
        assert!(
            t.empirical.agrees_with(oracle, 4.0),
            "{:?} vs {oracle}",
            t.empirical
        );
    }

    #[test]
    fn empty_horizon_pays_nothing() {
        let mut cfg = config(vec![human(3, 0.3, 0.0)], 0.66, 0.5, 50);
        cfg.econ.lambda_rate = 0.0;
        for fixed in [true, false] {
            cfg.fixed_count = fixed;
            let h = simulate_horizon(&cfg, &StreamKey::root(0));
            assert_eq!(h.mean_honest_payoff, 0.0);
            assert_eq!(h.mean_malicious_payoff, 0.0);
            assert_eq!(h.honest_nonpositive, 50);
            assert_eq!(h.honest_active_trials, 0);
        }
    }

    #[test]
    fn poisson_counts_average_to_rate() {
        let ep = EconomicParams {
            lambda_rate: 40.0,
            ..EconomicParams::calibration()
        };
        let key = StreamKey::root(5);
        let n = 20_000u64;
        let total: u64 = (0..n)
            .map(|t| segment_count(&ep, false, &mut key.rng(t)))
            .sum();
        let mean = total as f64 / n as f64;
        assert!(
            (mean - 40.0).abs() < 4.0 * (40.0 / n as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = config(vec![human(3, 0.3, 0.1), human(5, 0.2, 0.0)], 0.66, 0.5, 500);
        let a = serde_json::to_string(&simulate(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&simulate(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_needs_a_grid_and_a_human_segment() {
        let mut cfg = config(vec![human(3, 0.3, 0.1)], 0.66, 0.5, 10);
        assert!(matches!(sweep(&cfg), Err(SimError::EmptyGrid)));
        cfg.error_sweep = Some(vec![]);
        assert!(matches!(sweep(&cfg), Err(SimError::EmptyGrid)));
        cfg.error_sweep = Some(vec![0.5]);
        assert!(matches!(sweep(&cfg), Err(SimError::GridOutOfRange { .. })));
        cfg.error_sweep = Some(vec![0.2]);
        cfg.vote.segments[0].tier = Tier::Llm;
        assert!(matches!(sweep(&cfg), Err(SimError::NoHumanSegments)));
    }

    #[test]
    fn single_cell_sweep_equals_direct_run() {
        let mut cfg = config(vec![human(5, 0.3, 0.1)], 0.66, 0.5, 300);
        cfg.econ.lambda_rate = 20.0;
        cfg.adversarial_sweep = Some(vec![0.2]);
        cfg.error_sweep = Some(vec![0.25]);
        let cells = sweep(&cfg).unwrap();
        assert_eq!(cells.len(), 1);
        let direct = simulate_with_key(
            &cell_config(&cfg, 0.2, 0.25),
            &StreamKey::root(7).cell(0.2, 0.25),
        );
        assert_eq!(cells[0].report, direct);
    }

    #[test]
    fn grid_is_cartesian_and_csv_has_a_row_per_cell() {
        let mut cfg = config(vec![human(3, 0.3, 0.1)], 0.66, 0.5, 50);
        cfg.econ.lambda_rate = 10.0;
        cfg.adversarial_sweep = Some(vec![0.0, 0.1, 0.2, 0.3]);
        cfg.error_sweep = Some(vec![0.2, 0.3, 0.4]);
        assert_eq!(
            sweep_grid(&cfg).unwrap()[..4],
            [(0.0, 0.2), (0.0, 0.3), (0.0, 0.4), (0.1, 0.2)]
        );
        let cells = sweep(&cfg).unwrap();
        let csv = String::from_utf8(sweep_csv(&cells).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 13);
        assert!(
            lines[0].starts_with("rho,epsilon,pass_freq,pass_se,analytic_pass,trace_fail_freq,")
        );
    }

    #[test]
    fn committee_majority_with_perfect_voters_never_fails() {
        assert_eq!(
            simulate_committee(3, 0.0, 1_000, &StreamKey::root(0)).hits,
            0
        );
        assert_eq!(
            simulate_committee(1, 1.0, 1_000, &StreamKey::root(0)).hits,
            1_000
        );
    }
}
