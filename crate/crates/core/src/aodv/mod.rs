//! AODV as a sans-I/O state machine.
//!
//! A [`Node`] consumes `(now, Input)` and returns the [`Effect`]s the
//! simulator must carry out. Nodes never see positions, adjacency or each
//! other's state.

mod route;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use route::{RouteEntry, RouteTable};

use crate::adversary::NodeBehavior;
use crate::defense::{CrossCheckSession, DefenseState, DriTable, Verdict};
use crate::messages::{self, DataPacket, Hello, Message, NodeId, Rerr, Rrep, Rreq, SeqNum};
use crate::time::SimTime;

const RELAY_MEMORY: SimTime = SimTime(1_000_000);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    pub hello_interval: SimTime,
    pub allowed_hello_loss: u32,
    pub active_route_lifetime: SimTime,
    pub rreq_retries: u32,
    pub discovery_timeout: SimTime,
    pub buffer_cap: usize,
    pub probe_depth_limit: usize,
    pub session_timeout: SimTime,
    /// Run the DRI cross-check at discovery sources.
    pub defense: bool,
    /// RREQs are not re-broadcast once their hop count reaches this bound.
    pub max_hops: u16,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            hello_interval: SimTime::from_secs(1.0),
            allowed_hello_loss: 3,
            active_route_lifetime: SimTime::from_secs(10.0),
            rreq_retries: 2,
            discovery_timeout: SimTime::from_secs(1.0),
            buffer_cap: 64,
            probe_depth_limit: 5,
            session_timeout: SimTime::from_secs(3.0),
            defense: false,
            max_hops: 30,
        }
    }
}

impl ProtocolConfig {
    fn neighbor_timeout(&self) -> SimTime {
        SimTime(self.hello_interval.0 * self.allowed_hello_loss as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxMode {
    Broadcast,
    Unicast(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimerKind {
    Hello,
    Discovery { destination: NodeId, broadcast_id: u32 },
    ProbeDiscovery { session: u32, broadcast_id: u32 },
    Session(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricEvent {
    DropNoRoute,
    DropMalicious,
    DropBuffer,
    NoReverseRoute,
    ForgedRrep,
    /// A route was installed from an RREP generated by `responder`.
    RouteLearned {
        destination: NodeId,
        responder: NodeId,
    },
    BlacklistedRrepDropped,
    SessionOpened,
    RrepRejected,
    Verdict(Verdict),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Transmit { msg: Message, mode: TxMode },
    DeliverToApp(DataPacket),
    SetTimer { kind: TimerKind, at: SimTime },
    Count(MetricEvent),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    Frame { from: NodeId, msg: Message },
    Timer(TimerKind),
    AppData(DataPacket),
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Discovery {
    pub broadcast_id: u32,
    pub retries_used: u32,
    /// Set once a reply for this discovery was rejected by the cross-check.
    pub dest_only: bool,
    pub buffer: VecDeque<DataPacket>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub(crate) me: NodeId,
    pub(crate) cfg: ProtocolConfig,
    pub(crate) own_seq: SeqNum,
    pub(crate) broadcast_counter: u32,
    pub(crate) routes: RouteTable,
    pub(crate) seen_rreqs: BTreeSet<(NodeId, u32)>,
    /// Recently relayed unicast control messages, to cut forwarding loops.
    pub(crate) relayed: BTreeMap<Vec<u8>, SimTime>,
    pub(crate) discoveries: BTreeMap<NodeId, Discovery>,
    pub(crate) neighbors: BTreeMap<NodeId, SimTime>,
    /// Destinations this node originated data for, with the last send time.
    pub(crate) active_dests: BTreeMap<NodeId, SimTime>,
    pub(crate) behavior: NodeBehavior,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) defense: DefenseState,
}

impl Node {
    pub fn new(me: NodeId, cfg: ProtocolConfig, behavior: NodeBehavior, rng_seed: u64) -> Node {
        Node {
            me,
            cfg,
            own_seq: SeqNum(0),
            broadcast_counter: 0,
            routes: RouteTable::default(),
            seen_rreqs: BTreeSet::new(),
            relayed: BTreeMap::new(),
            discoveries: BTreeMap::new(),
            neighbors: BTreeMap::new(),
            active_dests: BTreeMap::new(),
            behavior,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            defense: DefenseState::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.me
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn own_seq(&self) -> SeqNum {
        self.own_seq
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    pub fn dri(&self) -> &DriTable {
        &self.defense.dri
    }

    pub fn dri_mut(&mut self) -> &mut DriTable {
        &mut self.defense.dri
    }

    pub fn blacklist(&self) -> &BTreeSet<NodeId> {
        &self.defense.blacklist
    }

    pub fn behavior(&self) -> &NodeBehavior {
        &self.behavior
    }

    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.neighbors.keys().copied()
    }

    /// Data packets waiting for a route.
    pub fn buffered(&self) -> usize {
        self.discoveries.values().map(|d| d.buffer.len()).sum()
    }

    pub fn open_sessions(&self) -> usize {
        self.defense.sessions.len()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &CrossCheckSession> + '_ {
        self.defense.sessions.values()
    }

    /// Arms the periodic hello timer.
    pub fn boot(&mut self, first_hello: SimTime) -> Vec<Effect> {
        vec![Effect::SetTimer { kind: TimerKind::Hello, at: first_hello }]
    }

    pub fn handle(&mut self, now: SimTime, input: Input) -> Vec<Effect> {
        match input {
            Input::AppData(pkt) => self.originate_data(pkt, now),
            Input::Timer(kind) => self.handle_timer(kind, now),
            Input::Frame { from, msg } => {
                // any frame heard proves the link is alive
                self.neighbors.insert(from, now);
                match msg {
                    Message::Rreq(r) => self.handle_rreq(&r, from, now),
                    Message::Rrep(r) => self.handle_rrep(&r, from, now),
                    Message::Rerr(r) => self.handle_rerr(&r, from, now),
                    Message::Hello(h) => self.handle_hello(h, from, now),
                    Message::Frq(q) => self.handle_frq(&q, from, now),
                    Message::Frp(p) => self.handle_frp(&p, from, now),
                    Message::Alarm(a) => self.handle_alarm(&a, from, now),
                    Message::Data(d) => self.receive_data(d, from, now),
                }
            }
        }
    }

    fn handle_timer(&mut self, kind: TimerKind, now: SimTime) -> Vec<Effect> {
        let mut out = Vec::new();
        match kind {
            TimerKind::Hello => return self.handle_hello_timer(now),
            TimerKind::Discovery { destination, broadcast_id } => {
                self.on_discovery_timeout(destination, broadcast_id, now, &mut out)
            }
            TimerKind::ProbeDiscovery { session, broadcast_id } => {
                self.on_probe_timeout(session, broadcast_id, now, &mut out)
            }
            TimerKind::Session(id) => self.on_session_timeout(id, now, &mut out),
        }
        out
    }

    pub fn originate_data(&mut self, pkt: DataPacket, now: SimTime) -> Vec<Effect> {
        debug_assert_eq!(pkt.src, self.me);
        let mut out = Vec::new();
        self.active_dests.insert(pkt.dst, now);
        if self.routes.active(pkt.dst, now).is_some() && !self.discoveries.contains_key(&pkt.dst) {
            self.send_data(pkt, now, &mut out);
            return out;
        }
        let cap = self.cfg.buffer_cap;
        let pending = self.discoveries.contains_key(&pkt.dst);
        let disc = self.discoveries.entry(pkt.dst).or_default();
        disc.buffer.push_back(pkt);
        if disc.buffer.len() > cap {
            disc.buffer.pop_front();
            out.push(Effect::Count(MetricEvent::DropBuffer));
        }
        if !pending {
            self.begin_data_discovery(pkt.dst, now, &mut out);
        }
        out
    }

    /// Unicasts `pkt` over the active route. Caller guarantees a route exists.
    fn send_data(&mut self, pkt: DataPacket, now: SimTime, out: &mut Vec<Effect>) {
        let Some(next) = self.routes.active(pkt.dst, now).map(|e| e.next_hop) else {
            out.push(Effect::Count(MetricEvent::DropNoRoute));
            return;
        };
        let life = self.cfg.active_route_lifetime;
        self.routes.refresh(pkt.dst, now, life);
        self.routes.refresh(pkt.src, now, life);
        self.defense.dri.mark_through(next);
        out.push(Effect::Transmit { msg: Message::Data(pkt), mode: TxMode::Unicast(next) });
    }

    /// Broadcasts a fresh RREQ and returns its broadcast id.
    pub(crate) fn start_discovery(
        &mut self,
        destination: NodeId,
        dest_only: bool,
        avoid: BTreeSet<NodeId>,
        out: &mut Vec<Effect>,
    ) -> u32 {
        self.own_seq = SeqNum(self.own_seq.0 + 1);
        self.broadcast_counter += 1;
        let broadcast_id = self.broadcast_counter;
        self.seen_rreqs.insert((self.me, broadcast_id));
        let rreq = Rreq {
            origin: self.me,
            origin_seq: self.own_seq,
            broadcast_id,
            destination,
            dest_seq_known: self.routes.get(destination).map(|e| e.dest_seq),
            hop_count: 0,
            dest_only,
            avoid,
        };
        out.push(Effect::Transmit { msg: Message::Rreq(rreq), mode: TxMode::Broadcast });
        broadcast_id
    }

    pub(crate) fn begin_data_discovery(&mut self, dest: NodeId, now: SimTime, out: &mut Vec<Effect>) {
        let dest_only = self.discoveries.get(&dest).is_some_and(|d| d.dest_only);
        let bid = self.start_discovery(dest, dest_only, BTreeSet::new(), out);
        let disc = self.discoveries.entry(dest).or_default();
        disc.broadcast_id = bid;
        out.push(Effect::SetTimer {
            kind: TimerKind::Discovery { destination: dest, broadcast_id: bid },
            at: now + self.cfg.discovery_timeout,
        });
    }

    fn on_discovery_timeout(&mut self, dest: NodeId, bid: u32, now: SimTime, out: &mut Vec<Effect>) {
        let Some(disc) = self.discoveries.get(&dest) else { return };
        if disc.broadcast_id != bid {
            return;
        }
        if self.routes.active(dest, now).is_some() {
            self.flush(dest, now, out);
            return;
        }
        if disc.retries_used < self.cfg.rreq_retries {
            let disc = self.discoveries.get_mut(&dest).expect("checked above");
            disc.retries_used += 1;
            self.begin_data_discovery(dest, now, out);
            return;
        }
        if self.defense.session_for(dest).is_some() {
            // a cross-check may still produce a route; keep the packets until it ends
            out.push(Effect::SetTimer {
                kind: TimerKind::Discovery { destination: dest, broadcast_id: bid },
                at: now + self.cfg.discovery_timeout,
            });
            return;
        }
        let disc = self.discoveries.remove(&dest).expect("checked above");
        out.extend(disc.buffer.iter().map(|_| Effect::Count(MetricEvent::DropNoRoute)));
    }

    /// Sends every packet buffered for `dest` once a route is in place.
    pub(crate) fn flush(&mut self, dest: NodeId, now: SimTime, out: &mut Vec<Effect>) {
        if self.routes.active(dest, now).is_none() {
            return;
        }
        if let Some(disc) = self.discoveries.remove(&dest) {
            for pkt in disc.buffer {
                self.send_data(pkt, now, out);
            }
        }
    }

    /// Starts discovery toward destinations this node was recently sending to.
    fn rediscover(&mut self, broken: &[(NodeId, SeqNum)], now: SimTime, out: &mut Vec<Effect>) {
        for &(dest, _) in broken {
            let recent =
                self.active_dests.get(&dest).is_some_and(|&t| now.saturating_sub(t) <= self.cfg.active_route_lifetime);
            if recent && !self.discoveries.contains_key(&dest) {
                self.discoveries.insert(dest, Discovery::default());
                self.begin_data_discovery(dest, now, out);
            }
        }
    }

    pub(crate) fn emit_rerr(&mut self, broken: Vec<(NodeId, SeqNum)>, now: SimTime, out: &mut Vec<Effect>) {
        if broken.is_empty() {
            return;
        }
        if !self.behavior.is_blackhole() {
            out.push(Effect::Transmit {
                msg: Message::Rerr(Rerr { unreachable: broken.clone() }),
                mode: TxMode::Broadcast,
            });
        }
        self.rediscover(&broken, now, out);
    }

    fn reverse_route_entry(&self, origin: NodeId, via: NodeId, hops: u16, seq: SeqNum, now: SimTime) -> RouteEntry {
        RouteEntry {
            destination: origin,
            next_hop: via,
            hop_count: hops,
            dest_seq: seq,
            expiry: now + self.cfg.active_route_lifetime,
            valid: true,
        }
    }

    /// Forwards `msg` toward `target` unless the same message was relayed
    /// within the last second. RREPs are keyed without their hop count.
    /// False when there is no route.
    pub(crate) fn relay_toward(&mut self, target: NodeId, msg: Message, now: SimTime, out: &mut Vec<Effect>) -> bool {
        if self.routes.active(target, now).is_none() {
            return false;
        }
        let key = match &msg {
            Message::Rrep(r) => messages::encode(&Message::Rrep(Rrep { hop_count: 0, ..r.clone() })),
            m => messages::encode(m),
        };
        if let Some(&t) = self.relayed.get(&key) {
            if now.saturating_sub(t) < RELAY_MEMORY {
                return true;
            }
        }
        self.relayed.insert(key, now);
        self.unicast_toward(target, msg, now, out)
    }

    /// Unicasts toward `target` over the active route, if any.
    pub(crate) fn unicast_toward(&mut self, target: NodeId, msg: Message, now: SimTime, out: &mut Vec<Effect>) -> bool {
        let Some(next) = self.routes.active(target, now).map(|e| e.next_hop) else {
            return false;
        };
        self.routes.refresh(target, now, self.cfg.active_route_lifetime);
        out.push(Effect::Transmit { msg, mode: TxMode::Unicast(next) });
        true
    }

    pub fn handle_rreq(&mut self, rreq: &Rreq, from: NodeId, now: SimTime) -> Vec<Effect> {
        let mut out = Vec::new();
        if rreq.origin == self.me || rreq.avoid.contains(&self.me) || self.defense.is_blacklisted(from) {
            return out;
        }
        if !self.seen_rreqs.insert((rreq.origin, rreq.broadcast_id)) {
            return out;
        }
        let back = self.reverse_route_entry(rreq.origin, from, rreq.hop_count + 1, rreq.origin_seq, now);
        self.routes.offer(back, now);

        if self.behavior.is_blackhole() && rreq.destination != self.me {
            self.blackhole_on_rreq(rreq, from, now, &mut out);
            return out;
        }

        let known = rreq.dest_seq_known;
        let reply = if rreq.destination == self.me {
            self.own_seq = SeqNum(self.own_seq.0 + 1).max(known.unwrap_or_default());
            Some(Rrep {
                origin: rreq.origin,
                destination: self.me,
                dest_seq: self.own_seq,
                hop_count: 0,
                lifetime_ms: self.cfg.active_route_lifetime.as_millis() as u32,
                responder: self.me,
                next_hop: None,
            })
        } else {
            // requests carrying an avoid set are answered by their destination only
            self.routes
                .active(rreq.destination, now)
                .filter(|e| !rreq.dest_only && rreq.avoid.is_empty() && e.next_hop != from)
                .filter(|e| known.is_none_or(|k| e.dest_seq >= k))
                .map(|e| Rrep {
                    origin: rreq.origin,
                    destination: rreq.destination,
                    dest_seq: e.dest_seq,
                    hop_count: e.hop_count,
                    lifetime_ms: e.expiry.saturating_sub(now).as_millis() as u32,
                    responder: self.me,
                    next_hop: None,
                })
                .map(|base| self.fill_rrep_extension(base, now))
        };

        match reply {
            Some(rrep) => {
                let next = self.routes.active(rreq.origin, now).map_or(from, |e| e.next_hop);
                out.push(Effect::Transmit { msg: Message::Rrep(rrep), mode: TxMode::Unicast(next) });
            }
            None if rreq.hop_count + 1 < self.cfg.max_hops => {
                let mut fwd = rreq.clone();
                fwd.hop_count += 1;
                if let Some(mine) = self.routes.get(rreq.destination).map(|e| e.dest_seq) {
                    fwd.dest_seq_known = Some(known.map_or(mine, |k| k.max(mine)));
                }
                out.push(Effect::Transmit { msg: Message::Rreq(fwd), mode: TxMode::Broadcast });
            }
            None => {}
        }
        out
    }

    pub fn handle_rrep(&mut self, rrep: &Rrep, from: NodeId, now: SimTime) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.defense.is_blacklisted(from) || self.defense.is_blacklisted(rrep.responder) {
            if rrep.origin == self.me {
                out.push(Effect::Count(MetricEvent::BlacklistedRrepDropped));
            }
            return out;
        }
        if rrep.origin == self.me {
            if self.cfg.defense {
                self.on_rrep_at_source(rrep, from, now, &mut out);
            } else {
                self.accept_route(rrep, from, now, &mut out);
            }
            return out;
        }
        if rrep.destination != self.me {
            self.learn_route(rrep, from, now, &mut out);
        }
        let mut fwd = rrep.clone();
        fwd.hop_count = fwd.hop_count.saturating_add(1);
        if !self.relay_toward(rrep.origin, Message::Rrep(fwd), now, &mut out) {
            out.push(Effect::Count(MetricEvent::NoReverseRoute));
        }
        out
    }

    fn learn_route(&mut self, rrep: &Rrep, from: NodeId, now: SimTime, out: &mut Vec<Effect>) -> bool {
        let entry = RouteEntry {
            destination: rrep.destination,
            next_hop: from,
            hop_count: rrep.hop_count.saturating_add(1),
            dest_seq: rrep.dest_seq,
            expiry: now + SimTime::from_millis(rrep.lifetime_ms as u64),
            valid: true,
        };
        let installed = self.routes.offer(entry, now);
        if installed {
            out.push(Effect::Count(MetricEvent::RouteLearned {
                destination: rrep.destination,
                responder: rrep.responder,
            }));
        }
        installed
    }

    /// Source-side acceptance: install if fresher, then release buffered data.
    pub(crate) fn accept_route(&mut self, rrep: &Rrep, from: NodeId, now: SimTime, out: &mut Vec<Effect>) {
        if rrep.destination == self.me {
            return;
        }
        self.learn_route(rrep, from, now, out);
        self.flush(rrep.destination, now, out);
    }

    pub fn handle_rerr(&mut self, rerr: &Rerr, from: NodeId, now: SimTime) -> Vec<Effect> {
        let mut out = Vec::new();
        let mut broken = Vec::new();
        for &(dest, seq) in &rerr.unreachable {
            let via_sender = self.routes.get(dest).is_some_and(|e| e.valid && e.next_hop == from);
            if via_sender {
                broken.extend(self.routes.invalidate(dest, Some(seq)));
            }
        }
        self.emit_rerr(broken, now, &mut out);
        out
    }

    pub fn handle_link_break(&mut self, dead: NodeId, now: SimTime) -> Vec<Effect> {
        let mut out = Vec::new();
        self.neighbors.remove(&dead);
        let broken = self.routes.invalidate_via(|n| n == dead);
        self.emit_rerr(broken, now, &mut out);
        out
    }

    pub fn handle_hello_timer(&mut self, now: SimTime) -> Vec<Effect> {
        let mut out =
            vec![Effect::Transmit { msg: Message::Hello(Hello { sender: self.me }), mode: TxMode::Broadcast }];
        let limit = self.cfg.neighbor_timeout();
        let lost: Vec<NodeId> =
            self.neighbors.iter().filter(|(_, &heard)| now.saturating_sub(heard) > limit).map(|(&n, _)| n).collect();
        self.relayed.retain(|_, t| now.saturating_sub(*t) < RELAY_MEMORY);
        for n in lost {
            out.extend(self.handle_link_break(n, now));
        }
        out.push(Effect::SetTimer { kind: TimerKind::Hello, at: now + self.cfg.hello_interval });
        out
    }

    pub fn handle_hello(&mut self, _hello: Hello, from: NodeId, now: SimTime) -> Vec<Effect> {
        self.neighbors.insert(from, now);
        Vec::new()
    }

    fn receive_data(&mut self, pkt: DataPacket, from: NodeId, now: SimTime) -> Vec<Effect> {
        self.defense.dri.mark_from(from);
        if pkt.dst == self.me {
            return vec![Effect::DeliverToApp(pkt)];
        }
        if self.behavior.is_blackhole() {
            return self.blackhole_on_data(&pkt);
        }
        self.forward_data(pkt, from, now)
    }

    /// Relays a transit packet, recording the from-bit for `from` and the
    /// through-bit for the next hop.
    pub fn forward_data(&mut self, pkt: DataPacket, from: NodeId, now: SimTime) -> Vec<Effect> {
        debug_assert_ne!(pkt.dst, self.me);
        self.defense.dri.mark_from(from);
        let mut out = Vec::new();
        if self.routes.active(pkt.dst, now).is_some() {
            self.send_data(pkt, now, &mut out);
        } else {
            out.push(Effect::Count(MetricEvent::DropNoRoute));
            let seq = self.routes.get(pkt.dst).map(|e| e.dest_seq).unwrap_or_default();
            out.push(Effect::Transmit {
                msg: Message::Rerr(Rerr { unreachable: vec![(pkt.dst, seq)] }),
                mode: TxMode::Broadcast,
            });
        }
        out
    }
}
