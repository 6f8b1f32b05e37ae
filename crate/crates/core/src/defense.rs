//! Data Routing Information (DRI) tables and the FRq/FRp cross-check that
//! detects cooperating black holes.
//!
//! A discovery source accepts an RREP outright when the responder is the
//! destination or a *reliable* node (one it has routed data through).
//! Otherwise it walks the responder's claimed next-hop chain with FRq probes,
//! each sent over a route discovered while avoiding every node already under
//! suspicion, until a reliable witness confirms or refutes the claim of the
//! current suspect.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::aodv::{Effect, MetricEvent, Node, TimerKind, TxMode};
use crate::messages::{Alarm, DriEntry, Frp, Frq, Message, NextHopClaim, NodeId, Rrep};
use crate::time::SimTime;

/// Deferred RREPs kept per destination while a cross-check is running.
const DEFERRED_CAP: usize = 8;

/// Per-node map from neighbor to its DRI bits. Absent keys read as `(0,0)`.
/// Bits only ever go from 0 to 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DriTable {
    entries: BTreeMap<NodeId, DriEntry>,
}

impl DriTable {
    pub fn get(&self, node: NodeId) -> DriEntry {
        self.entries.get(&node).copied().unwrap_or_default()
    }

    pub fn record(&mut self, node: NodeId, bits: DriEntry) {
        let e = self.entries.entry(node).or_default();
        *e = e.merge(bits);
    }

    pub fn mark_from(&mut self, node: NodeId) {
        self.record(node, DriEntry::new(true, false));
    }

    pub fn mark_through(&mut self, node: NodeId) {
        self.record(node, DriEntry::new(false, true));
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, DriEntry)> + '_ {
        self.entries.iter().map(|(&n, &e)| (n, e))
    }
}

/// A node is reliable once data has been routed through it.
pub fn is_reliable(dri: &DriTable, node: NodeId) -> bool {
    dri.get(node).through
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    BlackholeSuspect,
    NotImplicated,
}

/// The suspect claims it routed data through the witness, and the witness
/// has never received data from the suspect.
pub fn judge(suspect_claim: DriEntry, witness_reply: DriEntry) -> Judgement {
    if suspect_claim.through && !witness_reply.from {
        Judgement::BlackholeSuspect
    } else {
        Judgement::NotImplicated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InconclusiveReason {
    MissingExtension,
    NoNextHop,
    DepthLimit,
    AlreadyVisited,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    RouteSecure { via: NodeId },
    Blackholes(BTreeSet<NodeId>),
    Inconclusive(InconclusiveReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingRouteToTarget,
    AwaitingFrp,
    Closed,
}

#[derive(Debug, Clone)]
pub struct CrossCheckSession {
    pub session_id: u32,
    pub wanted_destination: NodeId,
    pub current_suspect: NodeId,
    /// What the current suspect claims about the probe target.
    pub suspect_claim: DriEntry,
    pub probe_target: NodeId,
    pub chain: Vec<NodeId>,
    pub visited: BTreeSet<NodeId>,
    pub original_rrep: Rrep,
    /// Neighbor that relayed the original RREP to us.
    pub rrep_from: NodeId,
    pub started_at: SimTime,
    pub state: SessionState,
    pub probes_issued: usize,
    probe_bid: u32,
    probe_retries: u32,
}

#[derive(Debug, Clone, Default)]
pub struct DefenseState {
    pub dri: DriTable,
    pub blacklist: BTreeSet<NodeId>,
    pub sessions: BTreeMap<u32, CrossCheckSession>,
    next_session_id: u32,
    seen_alarms: BTreeSet<(NodeId, u32)>,
    alarm_counter: u32,
    deferred: BTreeMap<NodeId, VecDeque<(Rrep, NodeId)>>,
}

impl DefenseState {
    pub fn is_blacklisted(&self, node: NodeId) -> bool {
        self.blacklist.contains(&node)
    }

    pub fn session_for(&self, dest: NodeId) -> Option<&CrossCheckSession> {
        self.sessions.values().find(|s| s.wanted_destination == dest)
    }
}

impl Node {
    /// Adds the responder's next hop toward the destination and its DRI row
    /// for that hop. Destination responders carry no extension.
    pub fn fill_rrep_extension(&self, mut rrep: Rrep, now: SimTime) -> Rrep {
        if rrep.responder == rrep.destination {
            rrep.next_hop = None;
            return rrep;
        }
        rrep.next_hop = self
            .routes
            .active(rrep.destination, now)
            .map(|e| NextHopClaim { node: e.next_hop, dri: self.defense.dri.get(e.next_hop) });
        rrep
    }

    pub(crate) fn on_rrep_at_source(&mut self, rrep: &Rrep, from: NodeId, now: SimTime, out: &mut Vec<Effect>) {
        if rrep.responder == rrep.destination {
            let waiting: Vec<u32> = self
                .defense
                .sessions
                .values()
                .filter(|s| s.state == SessionState::AwaitingRouteToTarget && s.probe_target == rrep.destination)
                .map(|s| s.session_id)
                .collect();
            self.accept_route(rrep, from, now, out);
            for id in waiting {
                self.send_frq(id, now, out);
            }
            return;
        }
        let probing = self
            .defense
            .sessions
            .values()
            .any(|s| s.state == SessionState::AwaitingRouteToTarget && s.probe_target == rrep.destination);
        if probing {
            // probe routes must come from the target itself
            out.push(Effect::Count(MetricEvent::RrepRejected));
            return;
        }
        if is_reliable(&self.defense.dri, rrep.responder) {
            self.accept_route(rrep, from, now, out);
            return;
        }
        let Some(claim) = rrep.next_hop else {
            out.push(Effect::Count(MetricEvent::Verdict(Verdict::Inconclusive(InconclusiveReason::MissingExtension))));
            out.push(Effect::Count(MetricEvent::RrepRejected));
            return;
        };
        if self.defense.session_for(rrep.destination).is_some() {
            let queue = self.defense.deferred.entry(rrep.destination).or_default();
            if queue.len() < DEFERRED_CAP {
                queue.push_back((rrep.clone(), from));
            }
            return;
        }
        self.open_session(rrep, from, claim, now, out);
    }

    fn open_session(&mut self, rrep: &Rrep, from: NodeId, claim: NextHopClaim, now: SimTime, out: &mut Vec<Effect>) {
        let id = self.defense.next_session_id;
        self.defense.next_session_id += 1;
        let session = CrossCheckSession {
            session_id: id,
            wanted_destination: rrep.destination,
            current_suspect: rrep.responder,
            suspect_claim: claim.dri,
            probe_target: claim.node,
            chain: vec![rrep.responder],
            visited: BTreeSet::from([rrep.responder]),
            original_rrep: rrep.clone(),
            rrep_from: from,
            started_at: now,
            state: SessionState::AwaitingRouteToTarget,
            probes_issued: 0,
            probe_bid: 0,
            probe_retries: 0,
        };
        self.defense.sessions.insert(id, session);
        out.push(Effect::Count(MetricEvent::SessionOpened));
        out.push(Effect::SetTimer { kind: TimerKind::Session(id), at: now + self.cfg.session_timeout });
        self.issue_probe(id, now, out);
    }

    /// Looks for a route to the session's probe target that avoids every
    /// node already in the chain.
    fn issue_probe(&mut self, id: u32, now: SimTime, out: &mut Vec<Effect>) {
        let me = self.me;
        let limit = self.cfg.probe_depth_limit;
        let Some(s) = self.defense.sessions.get_mut(&id) else { return };
        if s.probe_target == me || s.visited.contains(&s.probe_target) {
            self.close_session(id, Verdict::Inconclusive(InconclusiveReason::AlreadyVisited), now, out);
            return;
        }
        if s.probes_issued >= limit {
            self.close_session(id, Verdict::Inconclusive(InconclusiveReason::DepthLimit), now, out);
            return;
        }
        s.probes_issued += 1;
        s.probe_retries = 0;
        s.state = SessionState::AwaitingRouteToTarget;
        let (target, avoid) = (s.probe_target, s.visited.clone());
        let bid = self.start_discovery(target, false, avoid, out);
        self.defense.sessions.get_mut(&id).expect("present").probe_bid = bid;
        out.push(Effect::SetTimer {
            kind: TimerKind::ProbeDiscovery { session: id, broadcast_id: bid },
            at: now + self.cfg.discovery_timeout,
        });
    }

    pub(crate) fn on_probe_timeout(&mut self, id: u32, bid: u32, now: SimTime, out: &mut Vec<Effect>) {
        let retries = self.cfg.rreq_retries;
        let Some(s) = self.defense.sessions.get_mut(&id) else { return };
        if s.state != SessionState::AwaitingRouteToTarget || s.probe_bid != bid || s.probe_retries >= retries {
            return;
        }
        s.probe_retries += 1;
        let (target, avoid) = (s.probe_target, s.visited.clone());
        let bid = self.start_discovery(target, false, avoid, out);
        self.defense.sessions.get_mut(&id).expect("present").probe_bid = bid;
        out.push(Effect::SetTimer {
            kind: TimerKind::ProbeDiscovery { session: id, broadcast_id: bid },
            at: now + self.cfg.discovery_timeout,
        });
    }

    pub(crate) fn on_session_timeout(&mut self, id: u32, now: SimTime, out: &mut Vec<Effect>) {
        if self.defense.sessions.contains_key(&id) {
            self.close_session(id, Verdict::Inconclusive(InconclusiveReason::Timeout), now, out);
        }
    }

    fn send_frq(&mut self, id: u32, now: SimTime, out: &mut Vec<Effect>) {
        let me = self.me;
        let Some(s) = self.defense.sessions.get_mut(&id) else { return };
        s.state = SessionState::AwaitingFrp;
        let frq = Frq {
            asker: me,
            suspect_in: s.current_suspect,
            target_nhn: s.probe_target,
            wanted_destination: s.wanted_destination,
        };
        self.unicast_toward(frq.target_nhn, Message::Frq(frq), now, out);
    }

    pub fn handle_frq(&mut self, frq: &Frq, from: NodeId, now: SimTime) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.defense.is_blacklisted(from) {
            return out;
        }
        if frq.target_nhn != self.me {
            self.relay_toward(frq.target_nhn, Message::Frq(*frq), now, &mut out);
            return out;
        }
        let frp = if self.behavior.is_blackhole() { self.colluder_answer_frq(frq) } else { self.answer_frq(frq, now) };
        self.unicast_toward(frp.asker, Message::Frp(frp), now, &mut out);
        out
    }

    /// Truthful FRp: our DRI row for the suspect, our next hop toward the
    /// wanted destination and our DRI row for that hop.
    pub fn answer_frq(&self, frq: &Frq, now: SimTime) -> Frp {
        Frp {
            asker: frq.asker,
            responder: self.me,
            dri_for_suspect: self.defense.dri.get(frq.suspect_in),
            own_next_hop: self
                .routes
                .active(frq.wanted_destination, now)
                .map(|e| NextHopClaim { node: e.next_hop, dri: self.defense.dri.get(e.next_hop) }),
        }
    }

    pub fn handle_frp(&mut self, frp: &Frp, from: NodeId, now: SimTime) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.defense.is_blacklisted(from) {
            return out;
        }
        if frp.asker != self.me {
            self.relay_toward(frp.asker, Message::Frp(*frp), now, &mut out);
        } else if self.cfg.defense {
            self.on_frp_at_source(frp, now, &mut out);
        }
        out
    }

    pub(crate) fn on_frp_at_source(&mut self, frp: &Frp, now: SimTime, out: &mut Vec<Effect>) {
        let Some(id) = self
            .defense
            .sessions
            .values()
            .find(|s| s.state == SessionState::AwaitingFrp && s.probe_target == frp.responder)
            .map(|s| s.session_id)
        else {
            // stale: no open session is waiting on this responder
            return;
        };
        let s = &self.defense.sessions[&id];
        if is_reliable(&self.defense.dri, frp.responder) {
            let verdict = match judge(s.suspect_claim, frp.dri_for_suspect) {
                Judgement::BlackholeSuspect => Verdict::Blackholes(s.chain.iter().copied().collect()),
                Judgement::NotImplicated if s.suspect_claim.through || frp.own_next_hop.is_some() => {
                    Verdict::RouteSecure { via: s.original_rrep.responder }
                }
                Judgement::NotImplicated => Verdict::Inconclusive(InconclusiveReason::NoNextHop),
            };
            self.close_session(id, verdict, now, out);
            return;
        }
        let Some(next) = frp.own_next_hop else {
            self.close_session(id, Verdict::Inconclusive(InconclusiveReason::NoNextHop), now, out);
            return;
        };
        let s = self.defense.sessions.get_mut(&id).expect("present");
        s.current_suspect = frp.responder;
        s.suspect_claim = next.dri;
        s.probe_target = next.node;
        s.chain.push(frp.responder);
        s.visited.insert(frp.responder);
        self.issue_probe(id, now, out);
    }

    fn close_session(&mut self, id: u32, verdict: Verdict, now: SimTime, out: &mut Vec<Effect>) {
        let Some(mut s) = self.defense.sessions.remove(&id) else { return };
        s.state = SessionState::Closed;
        out.push(Effect::Count(MetricEvent::Verdict(verdict.clone())));
        match &verdict {
            Verdict::RouteSecure { via } => {
                self.defense.dri.mark_through(*via);
                self.accept_route(&s.original_rrep, s.rrep_from, now, out);
            }
            Verdict::Blackholes(set) => self.raise_alarm(set.clone(), now, out),
            Verdict::Inconclusive(_) => out.push(Effect::Count(MetricEvent::RrepRejected)),
        }
        let rejected = matches!(verdict, Verdict::Inconclusive(_)).then_some(s.original_rrep.responder);
        let queued = self.defense.deferred.remove(&s.wanted_destination).unwrap_or_default();
        for (rrep, from) in queued {
            if Some(rrep.responder) == rejected {
                continue;
            }
            if self.defense.is_blacklisted(from) || self.defense.is_blacklisted(rrep.responder) {
                out.push(Effect::Count(MetricEvent::BlacklistedRrepDropped));
                continue;
            }
            self.on_rrep_at_source(&rrep, from, now, out);
        }
        if rejected.is_some() {
            self.retry_destination_only(s.wanted_destination, now, out);
        }
    }

    /// Re-floods a pending data discovery so that only the destination may answer.
    fn retry_destination_only(&mut self, dest: NodeId, now: SimTime, out: &mut Vec<Effect>) {
        if self.routes.active(dest, now).is_some() || self.defense.session_for(dest).is_some() {
            return;
        }
        let Some(disc) = self.discoveries.get_mut(&dest) else { return };
        if disc.dest_only {
            return;
        }
        disc.dest_only = true;
        disc.retries_used = 0;
        self.begin_data_discovery(dest, now, out);
    }

    fn blacklist_and_cut(&mut self, nodes: &BTreeSet<NodeId>, now: SimTime, out: &mut Vec<Effect>) {
        let me = self.me;
        self.defense.blacklist.extend(nodes.iter().copied().filter(|&n| n != me));
        let bl = &self.defense.blacklist;
        let broken = self.routes.invalidate_via(|n| bl.contains(&n));
        self.emit_rerr(broken, now, out);
    }

    fn raise_alarm(&mut self, blackholes: BTreeSet<NodeId>, now: SimTime, out: &mut Vec<Effect>) {
        self.blacklist_and_cut(&blackholes, now, out);
        self.defense.alarm_counter += 1;
        let alarm = Alarm { accuser: self.me, blackholes, alarm_id: self.defense.alarm_counter };
        self.defense.seen_alarms.insert((alarm.accuser, alarm.alarm_id));
        out.push(Effect::Transmit { msg: Message::Alarm(alarm), mode: TxMode::Broadcast });
    }

    /// Blacklists the accused nodes, cuts routes through them and re-floods once.
    pub fn handle_alarm(&mut self, alarm: &Alarm, _from: NodeId, now: SimTime) -> Vec<Effect> {
        let mut out = Vec::new();
        if !self.defense.seen_alarms.insert((alarm.accuser, alarm.alarm_id)) {
            return out;
        }
        self.blacklist_and_cut(&alarm.blackholes, now, &mut out);
        out.push(Effect::Transmit { msg: Message::Alarm(alarm.clone()), mode: TxMode::Broadcast });
        out
    }
}
