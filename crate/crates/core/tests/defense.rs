use std::collections::BTreeSet;

use dri_manet::aodv::{Effect, MetricEvent, ProtocolConfig, TxMode};
use dri_manet::defense::{judge, InconclusiveReason, Judgement};
use dri_manet::fixtures::{colluder_ladder, fig6_topology};
use dri_manet::messages::{Alarm, DriEntry, Message, MessageKind, NodeId};
use dri_manet::scenario::Collusion;
use dri_manet::time::SimTime;
use dri_manet::{run_scenario, Mode, SimOptions, Simulation};

mod common;
use common::{scripted_chain, source_with_rrep_from, verdicts};

#[test]
fn judge_truth_table() {
    let mut fired = 0;
    for c in 0..4u8 {
        for r in 0..4u8 {
            let claim = DriEntry::from_bits(c).unwrap();
            let reply = DriEntry::from_bits(r).unwrap();
            let expect = claim.through && !reply.from;
            assert_eq!(judge(claim, reply) == Judgement::BlackholeSuspect, expect, "claim {c:02b} reply {r:02b}");
            fired += expect as usize;
        }
    }
    assert_eq!(fired, 4);
}

#[test]
fn reliable_responder_short_circuits_the_cross_check() {
    let out = source_with_rrep_from(true);
    assert!(!out.iter().any(|e| matches!(e, Effect::Count(MetricEvent::SessionOpened))));
    assert!(!out.iter().any(|e| matches!(e, Effect::Transmit { msg: Message::Frq(_) | Message::Rreq(_), .. })));
    assert!(out
        .iter()
        .any(|e| matches!(e, Effect::Transmit { msg: Message::Data(_), mode: TxMode::Unicast(NodeId(3)) })));
}

#[test]
fn unreliable_responder_opens_a_session_probing_around_it() {
    let out = source_with_rrep_from(false);
    assert!(out.iter().any(|e| matches!(e, Effect::Count(MetricEvent::SessionOpened))));
    let probe = out
        .iter()
        .find_map(|e| match e {
            Effect::Transmit { msg: Message::Rreq(r), mode: TxMode::Broadcast } => Some(r.clone()),
            _ => None,
        })
        .expect("probe discovery");
    assert_eq!(probe.destination, NodeId(5));
    assert_eq!(probe.avoid, BTreeSet::from([NodeId(3)]));
    assert!(!out.iter().any(|e| matches!(e, Effect::Transmit { msg: Message::Data(_), .. })));
}

#[test]
fn reliable_short_circuit_in_a_full_run() {
    // with both black holes already trusted, S accepts their forged replies without asking anyone
    let topo = fig6_topology();
    let mut sc = topo.scenario.clone();
    for b in ["B_1", "B_2"] {
        sc.dri_seed.push((topo.id("S"), topo.id(b), DriEntry::new(false, true)));
    }
    let (report, log) = run_scenario(&sc, 1, SimOptions { event_log: true, check_loops: false }).unwrap();
    assert_eq!(report.counters.sessions_opened, 0);
    assert!(!log.unwrap().lines().any(|l| l.ends_with(" FRQ")));
    assert!(report.counters.drop_malicious > 0);
}

#[test]
fn fig6_flags_both_black_holes_in_one_session_for_twenty_seeds() {
    let topo = fig6_topology();
    let expect: BTreeSet<NodeId> = [topo.id("B_1"), topo.id("B_2")].into();
    let mut first = None;
    for seed in 1..=20 {
        let (r, _) = run_scenario(&topo.scenario, seed, SimOptions::default()).unwrap();
        assert_eq!(r.counters.flagged, expect, "seed {seed}");
        assert_eq!(r.counters.sessions_opened, 1, "seed {seed}");
        assert_eq!(r.counters.verdicts_blackholes, 1, "seed {seed}");
        assert_eq!((r.false_positive_rate, r.false_negative_rate), (0.0, 0.0), "seed {seed}");
        assert_eq!(r.flagged_labels(), "B_1;B_2");
        let key = (r.counters.flagged.clone(), r.counters.verdicts_blackholes, r.counters.sessions_opened);
        assert_eq!(*first.get_or_insert(key.clone()), key);
    }
}

#[test]
fn fig6_without_defense_loses_the_flow() {
    let mut sc = fig6_topology().scenario;
    sc.mode = Mode::Attack;
    let (r, _) = run_scenario(&sc, 1, SimOptions::default()).unwrap();
    assert!(r.pdr < 0.05, "pdr {}", r.pdr);
    assert_eq!(r.false_negative_rate, 1.0);
}

#[test]
fn colluder_chain_sessions_terminate_without_blaming_honest_nodes() {
    let mut sc = colluder_ladder(7, 5).scenario;
    sc.collusion = Collusion::Chain;
    let mut sim = Simulation::new(&sc, SimOptions::default()).unwrap();
    let bh = sim.blackholes().clone();
    let limit = ProtocolConfig::default().session_timeout;
    let depth = ProtocolConfig::default().probe_depth_limit;
    while sim.step().unwrap() {
        let now = sim.now();
        for n in sim.nodes() {
            for s in n.sessions() {
                assert!(now.saturating_sub(s.started_at) <= limit, "session {} outlived its timeout", s.session_id);
                assert!(s.chain.len() <= depth && s.probes_issued <= depth);
            }
        }
    }
    let c = sim.settled_counters();
    assert!(c.sessions_opened > 0);
    let open: u64 = sim.nodes().iter().map(|n| n.open_sessions() as u64).sum();
    assert_eq!(c.verdicts_blackholes + c.verdicts_secure + c.verdicts_inconclusive + open, c.sessions_opened);
    assert!(c.flagged.is_subset(&bh), "flagged {:?}", c.flagged);
}

#[test]
fn five_colluder_chain_stops_at_the_depth_limit() {
    use dri_manet::defense::Verdict;
    let (out, probes) = scripted_chain(8);
    assert_eq!(verdicts(&out), vec![Verdict::Inconclusive(InconclusiveReason::DepthLimit)]);
    assert_eq!(probes, ProtocolConfig::default().probe_depth_limit);
    assert!(!out.iter().any(|e| matches!(e, Effect::Transmit { msg: Message::Alarm(_), .. })));
    assert!(!out.iter().any(|e| matches!(e, Effect::Transmit { msg: Message::Data(_), .. })));
    let frqs = out.iter().filter(|e| matches!(e, Effect::Transmit { msg: Message::Frq(_), .. })).count();
    assert_eq!(frqs, probes);
}

#[test]
fn chain_ending_without_a_next_hop_is_inconclusive() {
    use dri_manet::defense::Verdict;
    let (out, probes) = scripted_chain(3);
    assert_eq!(probes, 2);
    assert_eq!(verdicts(&out), vec![Verdict::Inconclusive(InconclusiveReason::NoNextHop)]);
}

#[test]
fn rejected_reply_is_followed_by_a_destination_only_request() {
    let (out, _) = scripted_chain(3);
    let rreqs: Vec<_> = out
        .iter()
        .filter_map(|e| match e {
            Effect::Transmit { msg: Message::Rreq(r), .. } if r.destination == NodeId(2) => Some(r.dest_only),
            _ => None,
        })
        .collect();
    assert_eq!(rreqs, vec![false, true]);
}

#[test]
fn forged_alarm_blacklists_an_honest_node_and_counts_as_false_positive() {
    let topo = fig6_topology();
    let mut sc = topo.scenario.clone();
    sc.blackhole_ids = None;
    sc.blackhole_count = 0;
    sc.dri_seed.clear();
    let mut sim = Simulation::new(&sc, SimOptions { event_log: true, check_loops: false }).unwrap();
    let victim = topo.id("4");
    let liar = Message::Alarm(Alarm { accuser: topo.id("1"), blackholes: [victim].into(), alarm_id: 1 });
    sim.inject_frame(SimTime::from_secs(2.0), topo.id("1"), topo.id("S"), &liar);
    sim.run_until(SimTime::from_secs(4.0)).unwrap();
    for n in sim.nodes() {
        if n.id() != victim {
            assert!(n.blacklist().contains(&victim), "node {} did not blacklist", n.id());
        }
    }
    let (report, _) = sim.run().unwrap();
    assert!(report.counters.flagged.contains(&victim));
    assert!((report.false_positive_rate - 1.0 / 8.0).abs() < 1e-12);
}

#[test]
fn no_cross_check_traffic_without_the_defense() {
    let mut sc = fig6_topology().scenario;
    for mode in [Mode::Baseline, Mode::Attack] {
        sc.mode = mode;
        let (r, log) = run_scenario(&sc, 3, SimOptions { event_log: true, check_loops: false }).unwrap();
        assert_eq!(r.counters.sessions_opened, 0);
        for k in [MessageKind::Frq, MessageKind::Frp, MessageKind::Alarm] {
            assert!(!log.as_ref().unwrap().lines().any(|l| l.ends_with(k.name())), "{mode} sent {}", k.name());
        }
    }
}

#[test]
fn blacklisted_responders_are_ignored_after_the_alarm() {
    let topo = fig6_topology();
    let mut sim = Simulation::new(&topo.scenario, SimOptions::default()).unwrap();
    sim.run_until(SimTime::from_secs(29.0)).unwrap();
    let bh: BTreeSet<NodeId> = [topo.id("B_1"), topo.id("B_2")].into();
    for n in sim.nodes().iter().filter(|n| !bh.contains(&n.id())) {
        assert!(bh.is_subset(n.blacklist()), "node {}", n.id());
        assert!(n.routes().iter().filter(|e| e.valid).all(|e| !bh.contains(&e.next_hop)));
    }
}
