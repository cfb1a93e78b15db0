//! The `audit` command line: argument parsing and one function per command.
//! Every run writes its outputs plus `manifest.json` into `--out-dir`.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use audit_core::attribution::{critical_path, localize_faults, AuditThresholds, FaultReport};
use audit_core::consensus::{
    check_s1, committee_error_bound, quorum, segment_pass_prob, trace_fail_bound, trace_fail_exact,
    trace_moments, S1Check, TraceBounds, TraceMoments,
};
use audit_core::economics::{
    check_economic_dials, expected_payoff_malicious, malicious_horizon_bound,
    payoff_variance_bound, tail_bounds, DialReport, TailBounds, VarianceBound,
};
use audit_core::graph::{
    InteractionGraph, InteractionGraphDoc, NodeId, ReasoningGraph, ReasoningGraphDoc, Status, Tier,
};
use audit_core::refinement::{
    run_refinement_loop, Regenerated, RepairRequest, Termination, DEFAULT_MAX_ROUNDS,
};

use crate::formats::{
    read_json, read_json_lines, to_json_bytes, to_json_lines, write_output, FormatError, RunConfig,
};
use crate::manifest::{inputs_digest, RunManifest};
use crate::montecarlo::{self, bound_violations, SimConfig, SweepRow, EXACT_MAX_SEGMENTS};
use crate::script::{run_script, ScriptLine};

#[derive(Debug, Parser)]
#[command(
    name = "audit",
    version,
    about = "Audit reasoning traces and multi-agent runs, and check the consensus and payoff bounds behind them"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Random seed; overrides the `seed` of a config file [default: config value, else 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo trials; overrides the `trials` of a config file
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Exit with code 5 when a checked condition or bound does not hold
    #[arg(long, global = true)]
    pub assert_bounds: bool,
    /// Directory receiving output files and manifest.json
    #[arg(long, global = true, default_value = "audit-out")]
    pub out_dir: PathBuf,
    /// Format of tabular output: simulate writes simulate.json or segments.csv;
    /// sweep always writes sweep.csv and adds sweep.json for json. Other
    /// commands write JSON only
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegeneratorKind {
    /// Every regenerated node comes back fully valid
    Perfect,
    /// Only blamed nodes (roots, negligent reviewers) are fixed; the rest are
    /// re-emitted unchanged
    RootOnly,
    /// Every regenerated node repeats its previous output
    Stuck,
    /// Scores come from --script: `{"agent": [{"validity_score": 0.9}, ...]}`,
    /// one entry per regeneration, the last one repeating
    Scripted,
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    /// Minimum validity score of a node
    #[arg(long, default_value_t = AuditThresholds::default().tau_node)]
    pub tau_node: f64,
    /// Minimum protocol and fidelity score of an edge
    #[arg(long, default_value_t = AuditThresholds::default().tau_edge)]
    pub tau_edge: f64,
    /// Similarity to the previous output at which an agent counts as looping
    #[arg(long, default_value_t = AuditThresholds::default().tau_stat)]
    pub tau_stat: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic report: pass probabilities, trace bounds, parameter conditions, tail bounds
    Bounds { config: PathBuf },
    /// Localize faults in an interaction graph; exit 3 unless every node is valid
    Audit {
        graph: PathBuf,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Check the structural rules of a reasoning graph; exit 4 on any violation
    Validate { graph: PathBuf },
    /// Monte Carlo check of the analytic report
    Simulate { config: PathBuf },
    /// Monte Carlo over the adversarial-fraction and error-rate grids of the config
    Sweep { config: PathBuf },
    /// Audit-prune-regenerate loop; exit 3 unless it ends with every node valid
    Refine {
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = RegeneratorKind::Perfect)]
        regenerator: RegeneratorKind,
        /// Score script for the scripted regenerator
        #[arg(long, required_if_eq("regenerator", "scripted"))]
        script: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
        max_rounds: u32,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Replay a JSON-lines ledger script
    Session { script: PathBuf },
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exit {
    Ok = 0,
    Internal = 1,
    Config = 2,
    AuditFail = 3,
    Structural = 4,
    Assertion = 5,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Structural(String),
    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CommandError {
    pub fn exit(&self) -> Exit {
        match self {
            CommandError::Format(_) | CommandError::Config(_) => Exit::Config,
            CommandError::Structural(_) => Exit::Structural,
            CommandError::Output { .. } => Exit::Internal,
        }
    }
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit: Exit,
    /// Human-readable summary for stdout.
    pub summary: Vec<String>,
    pub manifest: RunManifest,
}

struct Run<'a> {
    common: &'a Common,
    inputs: Vec<Vec<u8>>,
    outputs: Vec<(String, Vec<u8>)>,
    summary: Vec<String>,
    failures: Vec<String>,
    exit: Exit,
}

impl<'a> Run<'a> {
    fn new(common: &'a Common) -> Self {
        Run {
            common,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: Vec::new(),
            failures: Vec::new(),
            exit: Exit::Ok,
        }
    }

    fn input(&mut self, path: &Path) -> Result<(), CommandError> {
        let bytes = fs::read(path).map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.push(bytes);
        Ok(())
    }

    fn output(&mut self, name: &str, bytes: Vec<u8>) {
        self.outputs.push((name.to_string(), bytes));
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    fn raise(&mut self, exit: Exit) {
        self.exit = self.exit.max(exit);
    }

    /// Records failed checks; they only affect the exit code under
    /// `--assert-bounds`.
    fn check(&mut self, failures: Vec<String>) {
        if self.common.assert_bounds && !failures.is_empty() {
            self.raise(Exit::Assertion);
        }
        self.failures.extend(failures);
    }

    fn json_only(&self, command: &str) -> Result<(), CommandError> {
        match self.common.format {
            Format::Json => Ok(()),
            Format::Csv => Err(CommandError::Config(format!(
                "`{command}` has no CSV output"
            ))),
        }
    }

    fn finish(
        mut self,
        command: &str,
        seed: u64,
        trials: Option<u64>,
    ) -> Result<Outcome, CommandError> {
        let dir = &self.common.out_dir;
        let mut manifest = RunManifest {
            command: command.to_string(),
            config_digest: inputs_digest(self.inputs.iter().map(Vec::as_slice)),
            seed,
            trials,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            exit_code: self.exit.code(),
            outputs: Vec::new(),
        };
        let write = |name: &str, bytes: &[u8]| {
            write_output(dir, name, bytes).map_err(|source| CommandError::Output {
                path: dir.join(name),
                source,
            })
        };
        for (name, bytes) in &self.outputs {
            let path = write(name, bytes)?;
            manifest.output(dir, &path, bytes);
        }
        write("manifest.json", &to_json_bytes(&manifest))?;
        for f in &self.failures {
            self.summary.push(format!("check failed: {f}"));
        }
        Ok(Outcome {
            exit: self.exit,
            summary: self.summary,
            manifest,
        })
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CommandError> {
    let c = &cli.common;
    match &cli.command {
        Command::Bounds { config } => bounds(c, config),
        Command::Audit { graph, thresholds } => audit(c, graph, thresholds),
        Command::Validate { graph } => validate(c, graph),
        Command::Simulate { config } => simulate(c, config),
        Command::Sweep { config } => sweep(c, config),
        Command::Refine {
            graph,
            regenerator,
            script,
            max_rounds,
            thresholds,
        } => refine(
            c,
            graph,
            *regenerator,
            script.as_deref(),
            *max_rounds,
            thresholds,
        ),
        Command::Session { script } => session(c, script),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentBound {
    pub index: usize,
    pub tier: Tier,
    pub k: u32,
    pub epsilon: f64,
    pub rho: f64,
    pub quorum: u32,
    pub pass_prob: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommitteeBound {
    pub k: u32,
    pub epsilon: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub segments: Vec<SegmentBound>,
    pub moments: TraceMoments,
    pub trace: TraceBounds,
    pub trace_exact: Option<f64>,
    pub s1: S1Check,
    pub dials: DialReport,
    pub mu_min: f64,
    pub expected_malicious_payoff: f64,
    pub malicious_horizon_bound: f64,
    pub variance: VarianceBound,
    /// Natural-log tail bounds; absent when the reward condition fails.
    pub tail: Option<TailBounds>,
    pub committee: Vec<CommitteeBound>,
}

pub fn bounds_report(cfg: &RunConfig) -> Result<BoundsReport, CommandError> {
    let (vote, ep) = (&cfg.vote, &cfg.econ);
    let segments = vote
        .segments
        .iter()
        .enumerate()
        .map(|(index, t)| SegmentBound {
            index,
            tier: t.tier,
            k: t.k,
            epsilon: t.epsilon,
            rho: t.rho,
            quorum: quorum(vote.tau, t.k),
            pass_prob: segment_pass_prob(t, vote.tau),
        })
        .collect();
    let committee = cfg
        .committee_sizes
        .iter()
        .map(|&k| {
            committee_error_bound(k, ep.epsilon_h)
                .map(|bound| CommitteeBound {
                    k,
                    epsilon: ep.epsilon_h,
                    bound,
                })
                .map_err(|e| CommandError::Config(format!("committee_sizes: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let dials = check_economic_dials(ep);
    let variance = payoff_variance_bound(ep);
    Ok(BoundsReport {
        segments,
        moments: trace_moments(vote),
        trace: trace_fail_bound(vote),
        trace_exact: (vote.segments.len() <= EXACT_MAX_SEGMENTS).then(|| trace_fail_exact(vote)),
        s1: check_s1(vote, ep.lambda_rate, ep.horizon_t, cfg.eps_target),
        dials,
        mu_min: dials.mu_min,
        expected_malicious_payoff: expected_payoff_malicious(ep),
        malicious_horizon_bound: malicious_horizon_bound(ep),
        variance,
        tail: if dials.e1 {
            tail_bounds(ep, variance.sup).ok()
        } else {
            None
        },
        committee,
    })
}

fn bounds(c: &Common, path: &Path) -> Result<Outcome, CommandError> {
    let mut run = Run::new(c);
    run.json_only("bounds")?;
    run.input(path)?;
    let cfg = RunConfig::load(path)?;
    let r = bounds_report(&cfg)?;
    for s in &r.segments {
        run.say(format!(
            "segment {} ({:?}, k={}, q={}): pass probability {:.6}",
            s.index, s.tier, s.k, s.quorum, s.pass_prob
        ));
    }
    run.say(format!(
        "trace failure: hoeffding {:.3e}, chernoff {:.3e}{}",
        r.trace.hoeffding,
        r.trace.chernoff,
        r.trace_exact
            .map(|p| format!(", exact {p:.3e}"))
            .unwrap_or_default()
    ));
    run.say(format!(
        "S1 {}: gap {:.4}, required {:.4}",
        holds(r.s1.holds),
        r.s1.gap,
        r.s1.required
    ));
    run.say(format!("E1 {}: mu_min {:.4}", holds(r.dials.e1), r.mu_min));
    run.say(format!(
        "E2 {}: p_min threshold {:.6}, alpha {:.4}",
        holds(r.dials.e2),
        r.dials.e2_threshold,
        r.dials.alpha
    ));
    run.say(format!(
        "payoff variance bound {:.6} at r = {:.3}",
        r.variance.sup, r.variance.argmax_r
    ));
    if let Some(t) = r.tail {
        run.say(format!(
            "ln P[honest loss] <= {:.4}, ln P[malicious profit] <= {:.4}",
            t.ln_honest_loss, t.ln_malicious_profit
        ));
    }
    for b in &r.committee {
        run.say(format!(
            "committee k={}: majority error <= {:.6}",
            b.k, b.bound
        ));
    }
    let mut failures = Vec::new();
    for (ok, what) in [(r.s1.holds, "S1"), (r.dials.e1, "E1"), (r.dials.e2, "E2")] {
        if !ok {
            failures.push(format!("{what} does not hold"));
        }
    }
    run.check(failures);
    run.output("bounds.json", to_json_bytes(&r));
    run.finish("bounds", c.seed.unwrap_or(cfg.seed), None)
}

fn holds(b: bool) -> &'static str {
    if b {
        "holds"
    } else {
        "FAILS"
    }
}

fn sim_config(c: &Common, cfg: RunConfig) -> SimConfig {
    SimConfig {
        vote: cfg.vote,
        econ: cfg.econ,
        trials: c.trials.unwrap_or(cfg.trials),
        seed: c.seed.unwrap_or(cfg.seed),
        eps_target: cfg.eps_target,
        adversarial_sweep: cfg.adversarial_sweep,
        error_sweep: cfg.error_sweep,
        fixed_count: cfg.fixed_count,
    }
}

#[derive(Serialize)]
struct SegmentRow {
    index: usize,
    tier: Tier,
    k: u32,
    epsilon: f64,
    rho: f64,
    quorum: u32,
    pass_freq: f64,
    pass_se: f64,
    analytic_pass: f64,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, CommandError> {
    let internal = |e: csv::Error| CommandError::Output {
        path: "<csv>".into(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    w.into_inner().map_err(|e| internal(e.into_error().into()))
}

fn simulate(c: &Common, path: &Path) -> Result<Outcome, CommandError> {
    let mut run = Run::new(c);
    run.input(path)?;
    let cfg = sim_config(c, RunConfig::load(path)?);
    let r = montecarlo::simulate(&cfg).map_err(|e| CommandError::Config(e.to_string()))?;
    for s in &r.segments {
        run.say(format!(
            "segment {}: pass {:.6} ± {:.6} (analytic {:.6})",
            s.index, s.empirical.freq, s.empirical.se, s.analytic
        ));
    }
    run.say(format!(
        "trace failure {:.6} ± {:.6} (bound {:.3e}{})",
        r.trace.empirical.freq,
        r.trace.empirical.se,
        r.trace.bounds.min,
        r.trace
            .exact
            .map(|p| format!(", exact {p:.3e}"))
            .unwrap_or_default()
    ));
    let h = &r.horizon;
    run.say(format!(
        "horizon ({} trials, λT = {}): honest ≤ 0 in {}, malicious ≥ 0 in {}; mean payoffs {:.2} / {:.2}",
        h.trials, h.lambda_t, h.honest_nonpositive, h.malicious_nonnegative, h.mean_honest_payoff, h.mean_malicious_payoff
    ));
    if !h.dials.e1 {
        run.say("reward condition fails: horizon assertions suppressed");
    }
    run.check(bound_violations(&r));
    match c.format {
        Format::Json => run.output("simulate.json", to_json_bytes(&r)),
        Format::Csv => {
            let rows = r.segments.iter().map(|s| SegmentRow {
                index: s.index,
                tier: s.tier,
                k: s.k,
                epsilon: s.epsilon,
                rho: s.rho,
                quorum: s.quorum,
                pass_freq: s.empirical.freq,
                pass_se: s.empirical.se,
                analytic_pass: s.analytic,
            });
            let bytes = csv_bytes(rows)?;
            run.output("segments.csv", bytes);
        }
    }
    run.finish("simulate", cfg.seed, Some(cfg.trials))
}

fn sweep(c: &Common, path: &Path) -> Result<Outcome, CommandError> {
    let mut run = Run::new(c);
    run.input(path)?;
    let cfg = sim_config(c, RunConfig::load(path)?);
    let cells = montecarlo::sweep(&cfg).map_err(|e| CommandError::Config(e.to_string()))?;
    let mut failures = Vec::new();
    for cell in &cells {
        run.say(format!(
            "rho {:.3} eps {:.3}: pass {:.4}, trace failure {:.4}, feasible {}",
            cell.rho,
            cell.epsilon,
            SweepRow::from_cell(cell).pass_freq,
            cell.report.trace.empirical.freq,
            cell.feasible
        ));
        failures.extend(
            bound_violations(&cell.report)
                .into_iter()
                .map(|f| format!("cell (rho {}, eps {}): {f}", cell.rho, cell.epsilon)),
        );
    }
    run.check(failures);
    let bytes = csv_bytes(cells.iter().map(SweepRow::from_cell))?;
    run.output("sweep.csv", bytes);
    if c.format == Format::Json {
        run.output("sweep.json", to_json_bytes(&cells));
    }
    run.finish("sweep", cfg.seed, Some(cfg.trials))
}

fn thresholds(t: &ThresholdArgs) -> Result<AuditThresholds, CommandError> {
    AuditThresholds::new(t.tau_node, t.tau_edge, t.tau_stat)
        .map_err(|e| CommandError::Config(e.to_string()))
}

fn load_cig(run: &mut Run<'_>, path: &Path) -> Result<InteractionGraph, CommandError> {
    run.input(path)?;
    let doc: InteractionGraphDoc = read_json(path)?;
    InteractionGraph::try_from(doc)
        .map_err(|e| CommandError::Structural(format!("{}: {e}", path.display())))
}

fn summarize_report(run: &mut Run<'_>, r: &FaultReport) {
    for (key, status) in &r.statuses {
        run.say(format!("{key}: {status:?}"));
    }
    if !r.root_causes.is_empty() {
        let names: Vec<String> = r.root_causes.iter().map(ToString::to_string).collect();
        run.say(format!("root causes: {}", names.join(", ")));
    }
}

fn audit(c: &Common, path: &Path, t: &ThresholdArgs) -> Result<Outcome, CommandError> {
    let mut run = Run::new(c);
    run.json_only("audit")?;
    let th = thresholds(t)?;
    let g = load_cig(&mut run, path)?;
    let r = localize_faults(&g, &th)
        .map_err(|e| CommandError::Structural(format!("{}: {e}", path.display())))?;
    summarize_report(&mut run, &r);
    if !r.all_valid() {
        run.raise(Exit::AuditFail);
    }
    run.output("report.json", to_json_bytes(&r));
    run.finish("audit", c.seed.unwrap_or(0), None)
}

#[derive(Serialize)]
struct ViolationEntry {
    rule: &'static str,
    message: String,
}

#[derive(Serialize)]
struct ValidationReport {
    violations: Vec<ViolationEntry>,
    tiers: BTreeMap<NodeId, Tier>,
    critical_path: Option<Vec<NodeId>>,
}

fn validate(c: &Common, path: &Path) -> Result<Outcome, CommandError> {
    let mut run = Run::new(c);
    run.json_only("validate")?;
    run.input(path)?;
    let doc: ReasoningGraphDoc = read_json(path)?;
    let g = ReasoningGraph::try_from(doc)
        .map_err(|e| CommandError::Structural(format!("{}: {e}", path.display())))?;
    let violations: Vec<ViolationEntry> = g
        .validate()
        .iter()
        .map(|v| ViolationEntry {
            rule: v.rule(),
            message: v.to_string(),
        })
        .collect();
    for v in &violations {
        run.say(format!("{}: {}", v.rule, v.message));
    }
    if violations.is_empty() {
        run.say(format!(
            "{} nodes, {} edges: valid",
            g.nodes().len(),
            g.edges().len()
        ));
    } else {
        run.raise(Exit::Structural);
    }
    let report = ValidationReport {
        tiers: g.nodes().iter().map(|n| (n.id.clone(), n.tier)).collect(),
        critical_path: critical_path(&g).ok().map(|p| p.into_iter().collect()),
        violations,
    };
    run.output("validation.json", to_json_bytes(&report));
    run.finish("validate", c.seed.unwrap_or(0), None)
}

fn repaired() -> Regenerated {
    Regenerated {
        validity_score: 1.0,
        incoming: Some((1.0, 1.0)),
        similarity_to_prev: None,
    }
}

fn refine(
    c: &Common,
    path: &Path,
    kind: RegeneratorKind,
    script: Option<&Path>,
    max_rounds: u32,
    t: &ThresholdArgs,
) -> Result<Outcome, CommandError> {
    let mut run = Run::new(c);
    run.json_only("refine")?;
    let th = thresholds(t)?;
    let g = load_cig(&mut run, path)?;
    let mut scripted: BTreeMap<String, Vec<Regenerated>> = BTreeMap::new();
    if let Some(p) = script {
        run.input(p)?;
        scripted = read_json(p)?;
    }
    let mut calls: BTreeMap<String, usize> = BTreeMap::new();
    let mut regen = |req: &RepairRequest<'_>| -> Result<Regenerated, Infallible> {
        let keep = Regenerated::score(req.node.validity_score);
        Ok(match kind {
            RegeneratorKind::Perfect => repaired(),
            RegeneratorKind::RootOnly => match req.status {
                Status::InvalidRoot | Status::Negligent => repaired(),
                _ => keep,
            },
            RegeneratorKind::Stuck => Regenerated {
                similarity_to_prev: Some(1.0),
                ..keep
            },
            RegeneratorKind::Scripted => {
                let n = calls.entry(req.node.id.clone()).or_default();
                let out = scripted
                    .get(&req.node.id)
                    .and_then(|s| s.get(*n).or(s.last()))
                    .copied();
                *n += 1;
                out.unwrap_or(keep)
            }
        })
    };
    let outcome = run_refinement_loop(g, &th, &mut regen, max_rounds)
        .map_err(|e| CommandError::Structural(format!("{}: {e}", path.display())))?;
    for rec in &outcome.log {
        let bad = rec
            .report
            .statuses
            .values()
            .filter(|s| **s != Status::Valid)
            .count();
        let repaired = rec.plan.as_ref().map_or(0, |p| p.repair_targets.len());
        run.say(format!(
            "round {}: {bad} invalid, {repaired} regenerated",
            rec.round
        ));
    }
    run.say(format!(
        "terminated: {:?} after round {}",
        outcome.termination, outcome.rounds
    ));
    if outcome.termination != Termination::AllValid {
        run.raise(Exit::AuditFail);
    }
    run.output("rounds.jsonl", to_json_lines(&outcome.log));
    run.output("graph.json", to_json_bytes(&outcome.graph));
    run.finish("refine", c.seed.unwrap_or(0), None)
}

fn session(c: &Common, path: &Path) -> Result<Outcome, CommandError> {
    let mut run = Run::new(c);
    run.json_only("session")?;
    run.input(path)?;
    let lines: Vec<ScriptLine> = read_json_lines(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let seed = c.seed.unwrap_or(0);
    let out = run_script(&lines, base, seed).map_err(|e| {
        if e.is_config() {
            CommandError::Config(format!("{}: {e}", path.display()))
        } else {
            CommandError::Structural(format!("{}: {e}", path.display()))
        }
    })?;
    for p in &out.inputs {
        run.input(p)?;
    }
    for s in &out.sessions {
        run.say(format!(
            "session {}: {:?}, trace valid {:?}, settled {}, {} events, state {}",
            s.session, s.status, s.trace_valid, s.settled, s.events, s.state_digest
        ));
        if s.trace_valid == Some(false) {
            run.raise(Exit::AuditFail);
        }
    }
    if !out.replay_consistent() {
        run.failures
            .push("replaying an event log did not reproduce its session".into());
        run.raise(Exit::Assertion);
    }
    run.output("events.jsonl", to_json_lines(&out.events));
    run.output("state.json", to_json_bytes(&out));
    run.finish("session", seed, None)
}
