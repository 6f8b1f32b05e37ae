//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use dri_manet::adversary::NodeBehavior;
use dri_manet::aodv::{Effect, Input, MetricEvent, Node, ProtocolConfig};
use dri_manet::messages::{
    Alarm, DataPacket, DriEntry, Frp, Frq, Hello, Message, NextHopClaim, NodeId, Rerr, Rrep, Rreq, SeqNum,
};
use dri_manet::time::SimTime;
use dri_manet::{Scenario, Simulation};
use proptest::prelude::*;

fn node() -> impl Strategy<Value = NodeId> {
    (0u16..64).prop_map(NodeId)
}

fn dri() -> impl Strategy<Value = DriEntry> {
    (any::<bool>(), any::<bool>()).prop_map(|(f, t)| DriEntry::new(f, t))
}

fn claim() -> impl Strategy<Value = Option<NextHopClaim>> {
    proptest::option::of((node(), dri()).prop_map(|(node, dri)| NextHopClaim { node, dri }))
}

pub fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (
            node(),
            any::<u32>(),
            any::<u32>(),
            node(),
            proptest::option::of(any::<u32>()),
            any::<u16>(),
            any::<bool>(),
            proptest::collection::btree_set(node(), 0..6)
        )
            .prop_map(|(origin, os, bid, destination, known, hop_count, dest_only, avoid)| Message::Rreq(
                Rreq {
                    origin,
                    origin_seq: SeqNum(os),
                    broadcast_id: bid,
                    destination,
                    dest_seq_known: known.map(SeqNum),
                    hop_count,
                    dest_only,
                    avoid,
                }
            )),
        (node(), node(), any::<u32>(), any::<u16>(), any::<u32>(), node(), claim()).prop_map(
            |(origin, destination, seq, hop_count, lifetime_ms, responder, next_hop)| {
                let next_hop = if responder == destination { None } else { next_hop };
                Message::Rrep(Rrep {
                    origin,
                    destination,
                    dest_seq: SeqNum(seq),
                    hop_count,
                    lifetime_ms,
                    responder,
                    next_hop,
                })
            }
        ),
        proptest::collection::vec((node(), any::<u32>().prop_map(SeqNum)), 1..5)
            .prop_map(|unreachable| Message::Rerr(Rerr { unreachable })),
        node().prop_map(|sender| Message::Hello(Hello { sender })),
        (node(), node(), node(), node()).prop_filter("distinct roles", |(a, s, t, _)| s != t && a != s).prop_map(
            |(asker, suspect_in, target_nhn, wanted_destination)| Message::Frq(Frq {
                asker,
                suspect_in,
                target_nhn,
                wanted_destination
            })
        ),
        (node(), node(), dri(), claim()).prop_map(|(asker, responder, dri_for_suspect, own_next_hop)| Message::Frp(
            Frp { asker, responder, dri_for_suspect, own_next_hop }
        )),
        (node(), proptest::collection::btree_set(node(), 1..6), any::<u32>())
            .prop_filter("accuser not accused", |(a, b, _)| !b.contains(a))
            .prop_map(|(accuser, blackholes, alarm_id)| Message::Alarm(Alarm { accuser, blackholes, alarm_id })),
        (any::<u32>(), node(), node(), any::<u32>(), any::<u16>())
            .prop_filter("src != dst", |(_, s, d, _, _)| s != d)
            .prop_map(|(flow_id, src, dst, seq_in_flow, payload_bytes)| Message::Data(DataPacket {
                flow_id,
                src,
                dst,
                seq_in_flow,
                payload_bytes
            })),
    ]
}
pub fn source_with_rrep_from(reliable: bool) -> Vec<Effect> {
    let cfg = ProtocolConfig { defense: true, ..ProtocolConfig::default() };
    let mut s = Node::new(NodeId(0), cfg, NodeBehavior::Honest, 1);
    let (inn, dest) = (NodeId(3), NodeId(9));
    if reliable {
        s.dri_mut().record(inn, DriEntry::new(false, true));
    }
    let t0 = SimTime::from_secs(1.0);
    let pkt = DataPacket { flow_id: 0, src: NodeId(0), dst: dest, seq_in_flow: 0, payload_bytes: 512 };
    s.handle(t0, Input::AppData(pkt));
    let rrep = Rrep {
        origin: NodeId(0),
        destination: dest,
        dest_seq: SeqNum(4),
        hop_count: 2,
        lifetime_ms: 10_000,
        responder: inn,
        next_hop: Some(NextHopClaim { node: NodeId(5), dri: DriEntry::BOTH }),
    };
    s.handle(t0 + SimTime::from_millis(10), Input::Frame { from: inn, msg: Message::Rrep(rrep) })
}
/// Drives a lone source through a scripted chain of colluders `b0 -> b1 ->
/// ...`, each vouching for the previous one and naming the next.
pub fn scripted_chain(colluders: u16) -> (Vec<Effect>, usize) {
    let cfg = ProtocolConfig { defense: true, ..ProtocolConfig::default() };
    let mut s = Node::new(NodeId(0), cfg, NodeBehavior::Honest, 1);
    let (relay, dest) = (NodeId(1), NodeId(2));
    let b = |i: u16| NodeId(10 + i);
    let mut now = SimTime::from_secs(1.0);
    let tick = SimTime::from_millis(10);
    let pkt = DataPacket { flow_id: 0, src: NodeId(0), dst: dest, seq_in_flow: 0, payload_bytes: 512 };
    let mut all = s.handle(now, Input::AppData(pkt));
    let forged = Rrep {
        origin: NodeId(0),
        destination: dest,
        dest_seq: SeqNum(100),
        hop_count: 1,
        lifetime_ms: 10_000,
        responder: b(0),
        next_hop: Some(NextHopClaim { node: b(1), dri: DriEntry::new(false, true) }),
    };
    now = now + tick;
    all.extend(s.handle(now, Input::Frame { from: b(0), msg: Message::Rrep(forged) }));
    let mut probes = 0;
    for i in 1..colluders {
        if s.open_sessions() == 0 {
            break;
        }
        probes += 1;
        let found = Rrep {
            origin: NodeId(0),
            destination: b(i),
            dest_seq: SeqNum(1),
            hop_count: 2,
            lifetime_ms: 10_000,
            responder: b(i),
            next_hop: None,
        };
        now = now + tick;
        all.extend(s.handle(now, Input::Frame { from: relay, msg: Message::Rrep(found) }));
        let next = (i + 1 < colluders).then(|| NextHopClaim { node: b(i + 1), dri: DriEntry::BOTH });
        let vouch = Frp { asker: NodeId(0), responder: b(i), dri_for_suspect: DriEntry::BOTH, own_next_hop: next };
        now = now + tick;
        all.extend(s.handle(now, Input::Frame { from: relay, msg: Message::Frp(vouch) }));
    }
    assert_eq!(s.open_sessions(), 0, "session still open");
    assert!(s.blacklist().is_empty());
    (all, probes)
}

pub fn verdicts(out: &[Effect]) -> Vec<dri_manet::defense::Verdict> {
    out.iter()
        .filter_map(|e| match e {
            Effect::Count(MetricEvent::Verdict(v)) => Some(v.clone()),
            _ => None,
        })
        .collect()
}
pub fn static_random(seed: u64, n: usize) -> Scenario {
    Scenario {
        nodes: n,
        speed_min_mps: 0.0,
        speed_max_mps: 0.0,
        arena_m: 600.0,
        flows: 6,
        blackhole_count: 0,
        duration_s: 120.0,
        seed,
        ..Scenario::default()
    }
}
/// Rebuilds every node's DRI table from the frame log.
pub fn replay_dri(log: &str) -> BTreeMap<(u16, u16), DriEntry> {
    let mut dri: BTreeMap<(u16, u16), DriEntry> = BTreeMap::new();
    for line in log.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        if f[4] != "DATA" || f[3] == "*" {
            continue;
        }
        let (from, to): (u16, u16) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        match f[1] {
            "TX" => dri.entry((from, to)).or_insert(DriEntry::NONE).through = true,
            "RX" => dri.entry((to, from)).or_insert(DriEntry::NONE).from = true,
            _ => {}
        }
    }
    dri
}
pub fn walk(sim: &Simulation, src: NodeId, dst: NodeId) -> Vec<NodeId> {
    let mut path = vec![src];
    let mut at = src;
    while at != dst {
        let e = sim.node(at).routes().active(dst, sim.now()).unwrap_or_else(|| panic!("{at} has no route to {dst}"));
        at = e.next_hop;
        assert!(!path.contains(&at), "loop {path:?}");
        path.push(at);
    }
    path
}
