//! Black-hole behavior layered over the honest state machine.

use std::collections::BTreeSet;

use rand::seq::IteratorRandom;

use crate::aodv::{Effect, MetricEvent, Node, TxMode};
use crate::messages::{DataPacket, DriEntry, Frp, Frq, Message, NextHopClaim, NodeId, Rrep, Rreq, SeqNum};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlackHoleConfig {
    /// Colluding black holes, in the order they are named.
    pub partners: Vec<NodeId>,
    pub seq_inflation: u32,
    /// Answer FRq by naming a partner rather than a random honest neighbor.
    pub frp_names_partner: bool,
}

impl Default for BlackHoleConfig {
    fn default() -> Self {
        BlackHoleConfig { partners: Vec::new(), seq_inflation: 100, frp_names_partner: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum NodeBehavior {
    #[default]
    Honest,
    BlackHole(BlackHoleConfig),
}

impl NodeBehavior {
    pub fn is_blackhole(&self) -> bool {
        matches!(self, NodeBehavior::BlackHole(_))
    }

    pub fn partners(&self) -> &[NodeId] {
        match self {
            NodeBehavior::BlackHole(c) => &c.partners,
            NodeBehavior::Honest => &[],
        }
    }
}

impl Node {
    fn bh_config(&self) -> &BlackHoleConfig {
        match &self.behavior {
            NodeBehavior::BlackHole(c) => c,
            NodeBehavior::Honest => panic!("node {} is not a black hole", self.me),
        }
    }

    fn random_neighbor(&mut self, exclude: &BTreeSet<NodeId>) -> Option<NodeId> {
        self.neighbors.keys().copied().filter(|n| !exclude.contains(n)).choose(&mut self.rng)
    }

    /// Answers every RREQ with a forged, maximally attractive RREP and
    /// swallows the request.
    pub(crate) fn blackhole_on_rreq(&mut self, rreq: &Rreq, from: NodeId, now: SimTime, out: &mut Vec<Effect>) {
        let cfg = self.bh_config().clone();
        let claim_node = match cfg.partners.first() {
            Some(&p) => Some(p),
            None => self.random_neighbor(&BTreeSet::from([self.me, rreq.origin])),
        };
        let rrep = Rrep {
            origin: rreq.origin,
            destination: rreq.destination,
            dest_seq: SeqNum(rreq.dest_seq_known.unwrap_or_default().0.saturating_add(cfg.seq_inflation)),
            hop_count: 1,
            lifetime_ms: self.cfg.active_route_lifetime.as_millis() as u32,
            responder: self.me,
            next_hop: claim_node.map(|node| NextHopClaim { node, dri: DriEntry::new(false, true) }),
        };
        let next = self.routes.active(rreq.origin, now).map_or(from, |e| e.next_hop);
        out.push(Effect::Count(MetricEvent::ForgedRrep));
        out.push(Effect::Transmit { msg: Message::Rrep(rrep), mode: TxMode::Unicast(next) });
    }

    pub(crate) fn blackhole_on_data(&mut self, pkt: &DataPacket) -> Vec<Effect> {
        debug_assert_ne!(pkt.dst, self.me);
        vec![Effect::Count(MetricEvent::DropMalicious)]
    }

    /// All-positive FRp vouching for the suspect and pointing the asker at
    /// some neighbor that looks plausible.
    pub fn colluder_answer_frq(&mut self, frq: &Frq) -> Frp {
        let cfg = self.bh_config().clone();
        let base: BTreeSet<NodeId> = [self.me, frq.asker, frq.suspect_in, frq.wanted_destination].into();
        let named = if cfg.frp_names_partner {
            cfg.partners.iter().copied().find(|p| !base.contains(p))
        } else {
            let mut honest_only = base.clone();
            honest_only.extend(cfg.partners.iter().copied());
            self.random_neighbor(&honest_only).or_else(|| self.random_neighbor(&base))
        };
        Frp {
            asker: frq.asker,
            responder: self.me,
            dri_for_suspect: DriEntry::BOTH,
            own_next_hop: named.map(|node| NextHopClaim { node, dri: DriEntry::BOTH }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aodv::ProtocolConfig;

    fn blackhole(me: u16, partners: &[u16]) -> Node {
        let cfg = BlackHoleConfig { partners: partners.iter().map(|&p| NodeId(p)).collect(), ..Default::default() };
        Node::new(NodeId(me), ProtocolConfig::default(), NodeBehavior::BlackHole(cfg), 7)
    }

    fn rreq(known: Option<u32>) -> Rreq {
        Rreq {
            origin: NodeId(0),
            origin_seq: SeqNum(1),
            broadcast_id: 1,
            destination: NodeId(7),
            dest_seq_known: known.map(SeqNum),
            hop_count: 0,
            dest_only: false,
            avoid: BTreeSet::new(),
        }
    }

    #[test]
    fn forged_rrep_inflates_sequence_and_names_partner() {
        let mut b1 = blackhole(5, &[6]);
        let out = b1.handle_rreq(&rreq(Some(7)), NodeId(0), SimTime::ZERO);
        let rrep = out
            .iter()
            .find_map(|e| match e {
                Effect::Transmit { msg: Message::Rrep(r), mode: TxMode::Unicast(NodeId(0)) } => Some(r.clone()),
                _ => None,
            })
            .expect("forged rrep");
        assert_eq!(rrep.dest_seq, SeqNum(107));
        assert_eq!(rrep.hop_count, 1);
        assert_eq!(rrep.next_hop, Some(NextHopClaim { node: NodeId(6), dri: DriEntry::new(false, true) }));
        assert!(!out.iter().any(|e| matches!(e, Effect::Transmit { msg: Message::Rreq(_), .. })));
    }

    #[test]
    fn avoided_blackhole_stays_silent() {
        let mut b1 = blackhole(5, &[6]);
        let mut r = rreq(None);
        r.avoid.insert(NodeId(5));
        assert!(b1.handle_rreq(&r, NodeId(0), SimTime::ZERO).is_empty());
    }

    #[test]
    fn colluder_names_honest_neighbor_with_positive_bits() {
        let mut b2 = blackhole(6, &[5]);
        for n in [3, 4, 5] {
            b2.neighbors.insert(NodeId(n), SimTime::ZERO);
        }
        let frq = Frq { asker: NodeId(0), suspect_in: NodeId(5), target_nhn: NodeId(6), wanted_destination: NodeId(7) };
        for _ in 0..20 {
            let frp = b2.colluder_answer_frq(&frq);
            assert_eq!(frp.dri_for_suspect, DriEntry::BOTH);
            let nh = frp.own_next_hop.unwrap();
            assert!(nh.node == NodeId(3) || nh.node == NodeId(4));
            assert_eq!(nh.dri, DriEntry::BOTH);
        }
    }

    #[test]
    fn colluder_without_neighbors_names_nobody() {
        let mut b2 = blackhole(6, &[5]);
        let frq = Frq { asker: NodeId(0), suspect_in: NodeId(5), target_nhn: NodeId(6), wanted_destination: NodeId(7) };
        assert_eq!(b2.colluder_answer_frq(&frq).own_next_hop, None);
    }

    #[test]
    fn transit_data_is_dropped_and_own_data_delivered() {
        let mut b = blackhole(5, &[]);
        let transit = DataPacket { flow_id: 0, src: NodeId(0), dst: NodeId(9), seq_in_flow: 0, payload_bytes: 512 };
        let out = b.handle(SimTime::ZERO, crate::aodv::Input::Frame { from: NodeId(0), msg: Message::Data(transit) });
        assert_eq!(out, vec![Effect::Count(MetricEvent::DropMalicious)]);
        let mine = DataPacket { dst: NodeId(5), ..transit };
        let out = b.handle(SimTime::ZERO, crate::aodv::Input::Frame { from: NodeId(0), msg: Message::Data(mine) });
        assert_eq!(out, vec![Effect::DeliverToApp(mine)]);
    }
}
