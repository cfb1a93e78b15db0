use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use audit_core::attribution::{
    localize_faults, localize_faults_observed, AuditThresholds, FaultReport,
};
use audit_core::consensus::{segment_pass_prob, TierParams};
use audit_core::economics::{
    check_economic_dials, expected_payoff_honest, expected_payoff_malicious_at, slash_probability,
    update_reputation, EconomicParams,
};
use audit_core::fixtures::{cig_edge, cig_node};
use audit_core::graph::{
    get_descendants, get_parents, CigEdge, InteractionGraph, NodeKey, Role, Status, Tier,
};
use audit_core::ledger::{commitment, merkle_root, AuditSession, Ledger, SegmentRequest};
use audit_core::refinement::{
    node_state_digest, plan_repair, repair_cost, run_refinement_loop, Regenerated, RepairRequest,
};
use audit_core::Digest;

/// Random DAG shape: node scores, roles, approval flags and forward edges
/// `(i, j, protocol, fidelity)` with `i < j` in a hidden order.
#[derive(Debug, Clone)]
struct DagShape {
    scores: Vec<f64>,
    reviewer: Vec<bool>,
    approved: Vec<bool>,
    edges: Vec<(usize, usize, f64, f64)>,
    /// Permutation applied to node names so ids do not reveal the order.
    names: Vec<usize>,
}

fn dag_shape(max_nodes: usize) -> impl Strategy<Value = DagShape> {
    (1..=max_nodes).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let m = pairs.len();
        let score = prop_oneof![3 => 0.8f64..=1.0, 2 => 0.0f64..0.8, 1 => Just(0.8)];
        let edge_score = prop_oneof![6 => Just(1.0f64), 2 => 0.0f64..=1.0];
        (
            proptest::collection::vec(score, n),
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(
                (
                    proptest::bool::weighted(0.3),
                    edge_score.clone(),
                    edge_score,
                ),
                m,
            ),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
            .prop_map(move |(scores, reviewer, approved, picks, names)| DagShape {
                scores,
                reviewer,
                approved,
                edges: pairs
                    .iter()
                    .zip(picks)
                    .filter(|(_, (on, _, _))| *on)
                    .map(|(&(i, j), (_, p, f))| (i, j, p, f))
                    .collect(),
                names,
            })
    })
}

fn name(shape: &DagShape, i: usize) -> String {
    format!("n{:02}", shape.names[i])
}

fn build(shape: &DagShape) -> InteractionGraph {
    let mut nodes: Vec<_> = (0..shape.scores.len())
        .map(|i| {
            let role = if shape.reviewer[i] {
                Role::Reviewer
            } else {
                Role::Coder
            };
            let mut n = cig_node(&name(shape, i), 0, role, shape.scores[i]);
            n.approved = shape.approved[i];
            n
        })
        .collect();
    nodes.reverse();
    let edges: Vec<CigEdge> = shape
        .edges
        .iter()
        .map(|&(i, j, p, f)| cig_edge(&name(shape, i), &name(shape, j), p, f))
        .collect();
    InteractionGraph::new(nodes, edges).unwrap()
}

/// Case table evaluated node by node, each as soon as all its parents have a
/// label, without relying on any library ordering.
fn algorithm_one_oracle(g: &InteractionGraph, th: &AuditThresholds) -> BTreeMap<NodeKey, Status> {
    let mut out: BTreeMap<NodeKey, Status> = BTreeMap::new();
    while out.len() < g.nodes().len() {
        for n in g.nodes() {
            let key = n.key();
            if out.contains_key(&key) {
                continue;
            }
            let incoming: Vec<&CigEdge> = g.edges().iter().filter(|e| e.to == key).collect();
            if incoming.iter().any(|e| !out.contains_key(&e.from)) {
                continue;
            }
            let bad_edge = incoming
                .iter()
                .any(|e| e.protocol_score < th.tau_edge || e.fidelity_score < th.tau_edge);
            let bad_parent = incoming.iter().any(|e| out[&e.from] != Status::Valid);
            let approving = n.role == Role::Reviewer && n.approved;
            let passes = n.validity_score >= th.tau_node;
            let s = match () {
                _ if bad_edge => Status::InvalidRoot,
                _ if passes && approving && bad_parent => Status::Negligent,
                _ if passes => Status::Valid,
                _ if bad_parent => Status::InvalidCascade,
                _ => Status::InvalidRoot,
            };
            out.insert(key, s);
        }
    }
    out
}

fn non_valid(r: &FaultReport) -> BTreeSet<NodeKey> {
    r.statuses
        .iter()
        .filter(|(_, s)| **s != Status::Valid)
        .map(|(k, _)| k.clone())
        .collect()
}

fn ancestors(g: &InteractionGraph, k: &NodeKey) -> BTreeSet<NodeKey> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![k.clone()];
    while let Some(x) = stack.pop() {
        for p in get_parents(g, &x).unwrap() {
            if seen.insert(p.clone()) {
                stack.push(p);
            }
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn topo_sort_is_a_linear_extension(shape in dag_shape(30)) {
        let g = build(&shape);
        let order = g.topo_sort().unwrap();
        prop_assert_eq!(order.len(), g.nodes().len());
        let pos: BTreeMap<_, _> = order.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        prop_assert_eq!(pos.len(), order.len());
        for e in g.edges() {
            prop_assert!(pos[&e.from] < pos[&e.to]);
        }
        prop_assert_eq!(build(&shape).topo_sort().unwrap(), order);
    }

    #[test]
    fn descendants_are_the_child_closure(shape in dag_shape(50)) {
        let g = build(&shape);
        for n in g.nodes() {
            let k = n.key();
            let mut fix: BTreeSet<NodeKey> =
                g.edges().iter().filter(|e| e.from == k).map(|e| e.to.clone()).collect();
            loop {
                let next: BTreeSet<NodeKey> = g
                    .edges()
                    .iter()
                    .filter(|e| fix.contains(&e.from))
                    .map(|e| e.to.clone())
                    .chain(fix.iter().cloned())
                    .collect();
                if next == fix {
                    break;
                }
                fix = next;
            }
            prop_assert_eq!(get_descendants(&g, &k).unwrap(), fix);
            let scan: BTreeSet<NodeKey> =
                g.edges().iter().filter(|e| e.to == k).map(|e| e.from.clone()).collect();
            prop_assert_eq!(get_parents(&g, &k).unwrap(), scan);
        }
    }

    #[test]
    fn localization_matches_case_table_oracle(shape in dag_shape(12)) {
        let g = build(&shape);
        let th = AuditThresholds::default();
        let r = localize_faults(&g, &th).unwrap();
        prop_assert_eq!(&r.statuses, &algorithm_one_oracle(&g, &th));
        prop_assert_eq!(&r, &localize_faults(&g, &th).unwrap());
    }

    #[test]
    fn report_sets_partition_failures(shape in dag_shape(12)) {
        let g = build(&shape);
        let th = AuditThresholds::default();
        let r = localize_faults(&g, &th).unwrap();
        let mut union = BTreeSet::new();
        for set in [&r.root_causes, &r.cascades, &r.negligent] {
            for k in set.iter() {
                prop_assert!(union.insert(k.clone()), "{} listed twice", k);
            }
        }
        prop_assert_eq!(union, non_valid(&r));
        for k in &r.cascades {
            prop_assert!(ancestors(&g, k).iter().any(|a| r.statuses[a] != Status::Valid));
        }
        for k in &r.root_causes {
            let parents_ok = get_parents(&g, k).unwrap().iter().all(|p| r.statuses[p] == Status::Valid);
            let breached = r.edge_breaches.iter().any(|b| &b.to == k);
            prop_assert!(parents_ok || breached);
        }
    }

    #[test]
    fn parents_are_classified_first(shape in dag_shape(20)) {
        let g = build(&shape);
        let mut seen: Vec<NodeKey> = Vec::new();
        localize_faults_observed(&g, &AuditThresholds::default(), |k, _| seen.push(k.clone())).unwrap();
        let pos: BTreeMap<_, _> = seen.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        for e in g.edges() {
            prop_assert!(pos[&e.from] < pos[&e.to]);
        }
    }

    #[test]
    fn raising_tau_node_never_shrinks_failures(shape in dag_shape(12), lo in 0.05f64..1.0, bump in 0.0f64..1.0) {
        let g = build(&shape);
        let hi = lo + (1.0 - lo) * bump;
        let a = localize_faults(&g, &AuditThresholds { tau_node: lo, ..Default::default() }).unwrap();
        let b = localize_faults(&g, &AuditThresholds { tau_node: hi, ..Default::default() }).unwrap();
        prop_assert!(non_valid(&a).is_subset(&non_valid(&b)));
    }

    #[test]
    fn repair_plans_are_descendant_closed(shape in dag_shape(20), round in 0u32..6) {
        let g = build(&shape);
        let r = localize_faults(&g, &AuditThresholds::default()).unwrap();
        let Ok(plan) = plan_repair(&g, &r, round) else { return Ok(()) };
        prop_assert!(plan.prune_set.is_disjoint(&plan.frozen_set));
        for k in &plan.prune_set {
            prop_assert!(get_descendants(&g, k).unwrap().is_subset(&plan.prune_set));
        }
        let seeds = r.repair_seeds();
        for k in &plan.prune_set {
            prop_assert!(seeds.contains(k) || ancestors(&g, k).iter().any(|a| seeds.contains(a)));
        }
        for k in &plan.frozen_set {
            prop_assert_eq!(r.statuses[k], Status::Valid);
        }
        prop_assert!((plan.temperature - (0.7 + 0.1 * f64::from(round))).abs() < 1e-12);
    }

    #[test]
    fn refinement_terminates_and_spares_frozen_work(
        shape in dag_shape(12),
        draws in proptest::collection::vec(0.0f64..=1.0, 64),
        max_rounds in 0u32..7,
    ) {
        let g = build(&shape);
        let th = AuditThresholds::default();
        let r0 = localize_faults(&g, &th).unwrap();
        let frozen: Vec<(NodeKey, Digest)> = match plan_repair(&g, &r0, 0) {
            Ok(p) => p.frozen_set.iter().map(|k| (k.clone(), node_state_digest(&g, k).unwrap())).collect(),
            Err(_) => Vec::new(),
        };
        let mut i = 0usize;
        let mut regen = |_: &RepairRequest<'_>| {
            i += 1;
            Ok::<_, String>(Regenerated {
                validity_score: draws[i % draws.len()],
                incoming: Some((1.0, draws[(i * 7) % draws.len()].max(0.5))),
                similarity_to_prev: Some(draws[(i * 3) % draws.len()]),
            })
        };
        let out = run_refinement_loop(g, &th, &mut regen, max_rounds).unwrap();
        prop_assert!(out.rounds <= max_rounds);
        prop_assert_eq!(out.log.len() as u32, out.rounds + 1);
        for (k, d) in frozen {
            prop_assert_eq!(node_state_digest(&out.graph, &k).unwrap(), d);
        }
    }

    #[test]
    fn savings_grow_with_depth(max_depth in 1u32..=12) {
        let mut prev = -1.0;
        for d in 1..=max_depth {
            let c = repair_cost(d, max_depth).unwrap();
            prop_assert_eq!(c.global, (1usize << max_depth) - 1);
            prop_assert_eq!(c.surgical, (1usize << (max_depth - d + 1)) - 1);
            prop_assert!(c.savings >= prev);
            prev = c.savings;
        }
    }

    #[test]
    fn reputation_stays_in_unit_interval(
        start in 0.0f64..=1.0,
        gamma in 0.001f64..=1.0,
        seq in proptest::collection::vec(any::<bool>(), 0..300),
    ) {
        let mut r = start;
        for c in seq {
            r = update_reputation(r, c, gamma);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn slash_and_payoff_monotone_in_reputation(
        p_min in 0.01f64..0.5, spread in 0.01f64..0.5, eps in 0.0f64..0.5, a in 0.0f64..=1.0, b in 0.0f64..=1.0,
    ) {
        let ep = EconomicParams { p_min, p_max: p_min + spread, epsilon_h: eps, ..EconomicParams::calibration() };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(slash_probability(lo, &ep) >= slash_probability(hi, &ep));
        for r in [lo, hi, -0.5, 1.5] {
            let p = slash_probability(r, &ep);
            prop_assert!(p >= ep.p_min && p <= ep.p_max);
        }
        prop_assert!(expected_payoff_honest(lo, &ep) <= expected_payoff_honest(hi, &ep));
    }

    #[test]
    fn dials_imply_malicious_loss(
        reward in 0.5f64..20.0, penalty in 0.5f64..20.0, p_min in 0.01f64..0.9, spread in 0.01f64..0.1,
        delta in 0.01f64..0.5, eps in 0.0f64..0.45,
    ) {
        let p_max = (p_min + spread).min(1.0);
        let ep = EconomicParams { reward, penalty, p_min, p_max, delta, epsilon_h: eps, ..EconomicParams::calibration() };
        let d = check_economic_dials(&ep);
        prop_assume!(d.e1 && d.e2);
        for i in 0..=100 {
            let r = f64::from(i) / 100.0;
            prop_assert!(expected_payoff_malicious_at(r, &ep) <= -delta * penalty + 1e-12);
        }
    }

    #[test]
    fn pass_probability_falls_with_error_and_adversaries(
        k in 1u32..=15, tau in 0.51f64..=1.0, e1 in 0.0f64..0.4, e2 in 0.0f64..0.4, r1 in 0.0f64..0.4, r2 in 0.0f64..0.4,
    ) {
        let p = |epsilon, rho| segment_pass_prob(&TierParams { tier: Tier::Human, k, epsilon, rho, w: 1.0 }, tau);
        let (elo, ehi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (rlo, rhi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(p(elo, rlo) >= p(ehi, rlo) - 1e-12);
        prop_assert!(p(elo, rlo) >= p(elo, rhi) - 1e-12);
        prop_assert!((0.0..=1.0).contains(&p(ehi, rhi)));
    }

    #[test]
    fn binding_for_every_salt(salt in any::<[u8; 32]>()) {
        let s = Digest(salt);
        prop_assert_ne!(commitment(true, &s), commitment(false, &s));
    }

    #[test]
    fn merkle_root_is_order_sensitive(leaves in proptest::collection::vec(any::<[u8; 32]>(), 2..20), i in 0usize..20, j in 0usize..20) {
        let mut v: Vec<Digest> = leaves.into_iter().map(Digest).collect();
        let (i, j) = (i % v.len(), j % v.len());
        prop_assume!(v[i] != v[j]);
        let before = merkle_root(&v).unwrap();
        v.swap(i, j);
        prop_assert_ne!(merkle_root(&v).unwrap(), before);
    }

    #[test]
    fn sessions_replay_to_identical_state(
        stakes in proptest::collection::vec(0.1f64..10.0, 3..8),
        votes in proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 8),
        seed in any::<[u8; 32]>(),
        tau in 0.51f64..=1.0,
    ) {
        let mut l = Ledger::new();
        for (i, s) in stakes.iter().enumerate() {
            l.register_seat(i as u64, Tier::Human, *s, false).unwrap();
        }
        let reqs = vec![SegmentRequest { node: "x".into(), tier: Tier::Human, k: 3 }; 2];
        let sid = l.create_session(Digest::ZERO, &reqs, Digest(seed)).unwrap();
        for seg in 0..2u32 {
            let committee = l.session(sid).unwrap().segment(seg).unwrap().committee.clone();
            let plan: Vec<_> = committee.iter().zip(&votes[seg as usize * 4..]).collect();
            for (c, (commits, _, vote)) in &plan {
                if *commits {
                    l.commit_vote(sid, seg, c.seat, commitment(*vote, &Digest([c.seat as u8; 32]))).unwrap();
                }
            }
            l.close_commit(sid, seg).unwrap();
            for (c, (commits, reveals, vote)) in &plan {
                if *commits && *reveals {
                    l.reveal_vote(sid, seg, c.seat, *vote, Digest([c.seat as u8; 32])).unwrap();
                }
            }
            l.finalize_segment(sid, seg, tau).unwrap();
        }
        let s = l.session(sid).unwrap();
        let again = AuditSession::replay(&s.events).unwrap();
        prop_assert_eq!(again.state_digest(), s.state_digest());
        prop_assert_eq!(&again, s);
        let json = serde_json::to_string(&s.events).unwrap();
        let parsed: Vec<audit_core::ledger::Event> = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(AuditSession::replay(&parsed).unwrap().state_digest(), s.state_digest());
    }
}
