//! Discrete-event engine: event queue, unit-disk radio, CBR traffic and
//! dispatch into the node state machines.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aodv::{Effect, Input, MetricEvent, Node, TimerKind, TxMode};
use crate::defense::Verdict;
use crate::messages::{self, DataPacket, MalformedMessage, Message, MessageKind, NodeId};
use crate::metrics::{finalize, Counters, MetricsReport};
use crate::mobility::{generate_trace, MobilityError, MobilityTrace, Position};
use crate::scenario::{Mode, Scenario, ScenarioError};
use crate::time::SimTime;

/// Independent random streams, so that e.g. toggling the defense leaves
/// motion and traffic untouched.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Mobility = 1,
    Traffic = 2,
    Adversary = 3,
    Loss = 4,
    Placement = 5,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error("frame failed to decode: {0}")]
    Codec(#[from] MalformedMessage),
    #[error("routing loop toward {destination} at {at}: {cycle:?}")]
    RoutingLoop { at: SimTime, destination: NodeId, cycle: Vec<NodeId> },
    #[error("conservation ledger violated: {0}")]
    Conservation(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSpec {
    pub flow_id: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub rate_pps: f64,
    pub payload_b: u16,
    pub start: SimTime,
    /// No packet is generated at or after this time.
    pub stop: SimTime,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Keep a plain-text log of every frame.
    pub event_log: bool,
    /// Check for forwarding loops after every event.
    pub check_loops: bool,
}

#[derive(Debug, Clone)]
enum EventKind {
    Frame { to: NodeId, from: NodeId, bytes: Vec<u8>, data: bool },
    Timer { node: NodeId, kind: TimerKind },
    AppSend { flow: usize, seq: u32 },
    TopologyTick,
}

#[derive(Debug, Clone)]
struct Event {
    at: SimTime,
    order: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}

impl Eq for Event {}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.order).cmp(&(self.at, self.order))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Simulation {
    scenario: Scenario,
    opts: SimOptions,
    now: SimTime,
    end: SimTime,
    warmup: SimTime,
    latency: SimTime,
    tick: SimTime,
    range: f64,
    loss_probability: f64,
    nodes: Vec<Node>,
    trace: MobilityTrace,
    adjacency: Vec<Vec<bool>>,
    queue: BinaryHeap<Event>,
    order: u64,
    counters: Counters,
    blackholes: BTreeSet<NodeId>,
    flows: Vec<FlowSpec>,
    loss_rng: ChaCha8Rng,
    data_frames_queued: u64,
    log: Option<String>,
}

/// Places black holes: explicit ids, else a seeded uniform sample.
pub fn place_blackholes(scenario: &Scenario, rng: &mut impl Rng) -> Vec<NodeId> {
    let mut ids = match &scenario.blackhole_ids {
        Some(ids) => ids.clone(),
        None => index::sample(rng, scenario.nodes, scenario.blackhole_count.min(scenario.nodes))
            .into_iter()
            .map(|i| NodeId(i as u16))
            .collect(),
    };
    ids.sort();
    ids
}

impl Simulation {
    pub fn new(scenario: &Scenario, opts: SimOptions) -> Result<Simulation, SimError> {
        scenario.validate()?;
        let sc = scenario.clone();
        let seed = sc.seed;
        let n = sc.nodes;
        let end = SimTime::from_secs(sc.duration_s);

        // placement is drawn in every mode so traffic matches across modes
        let mut placement = stream(seed, Stream::Placement);
        let placed = place_blackholes(&sc, &mut placement);
        let blackholes: BTreeSet<NodeId> =
            if sc.mode == Mode::Baseline { BTreeSet::new() } else { placed.iter().copied().collect() };

        let mut mob = stream(seed, Stream::Mobility);
        let trace = if let Some(p) = &sc.positions {
            MobilityTrace::stationary(p, sc.duration_s)
        } else if sc.speed_max_mps == 0.0 || sc.duration_s == 0.0 {
            let p: Vec<Position> = (0..n)
                .map(|_| Position::new(mob.gen_range(0.0..=sc.arena_m), mob.gen_range(0.0..=sc.arena_m)))
                .collect();
            MobilityTrace::stationary(&p, sc.duration_s)
        } else {
            generate_trace(n, sc.arena_m, sc.speed_min_mps, sc.speed_max_mps, sc.pause_s, sc.duration_s, &mut mob)?
        };

        let behaviors = sc.behaviors(&blackholes.iter().copied().collect::<Vec<_>>());
        let cfg = sc.protocol_config();
        let mut adv = stream(seed, Stream::Adversary);
        let mut nodes: Vec<Node> = behaviors
            .into_iter()
            .enumerate()
            .map(|(i, b)| Node::new(NodeId(i as u16), cfg, b, adv.next_u64()))
            .collect();
        for &(holder, subject, bits) in &sc.dri_seed {
            nodes[holder.index()].dri_mut().record(subject, bits);
        }

        let honest: Vec<NodeId> = (0..n as u16).map(NodeId).filter(|x| !placed.contains(x)).collect();
        let pairs: Vec<(NodeId, NodeId)> = match &sc.flow_list {
            Some(list) => list.clone(),
            None => (0..sc.flows)
                .map(|_| {
                    let two: Vec<NodeId> = honest.choose_multiple(&mut placement, 2).copied().collect();
                    (two[0], two[1])
                })
                .collect(),
        };
        let mut traffic = stream(seed, Stream::Traffic);
        let cutoff = SimTime::from_secs((sc.duration_s - 1.0).max(0.0));
        let flows = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (src, dst))| {
                let start = SimTime::from_secs(sc.warmup_s + traffic.gen_range(0.0..10.0));
                let stop = match sc.flow_duration_s {
                    Some(d) => (start + SimTime::from_secs(d)).min(cutoff),
                    None => cutoff,
                };
                FlowSpec { flow_id: i as u32, src, dst, rate_pps: sc.rate_pps, payload_b: sc.payload_b, start, stop }
            })
            .collect();

        let mut sim = Simulation {
            opts,
            now: SimTime::ZERO,
            end,
            warmup: SimTime::from_secs(sc.warmup_s),
            latency: SimTime::from_secs(sc.per_hop_latency_s),
            tick: SimTime::from_secs(sc.tick_interval_s),
            range: sc.range_m,
            loss_probability: sc.loss_probability,
            adjacency: vec![vec![false; n]; n],
            nodes,
            trace,
            queue: BinaryHeap::new(),
            order: 0,
            counters: Counters::default(),
            blackholes,
            flows,
            loss_rng: stream(seed, Stream::Loss),
            data_frames_queued: 0,
            log: opts.event_log.then(String::new),
            scenario: sc,
        };
        sim.recompute_adjacency()?;
        if !sim.trace.is_static() {
            sim.push(sim.tick, EventKind::TopologyTick);
        }
        let hello = sim.scenario.hello_interval_s;
        for i in 0..n {
            let first = SimTime::from_secs(traffic.gen_range(0.0..hello));
            let effects = sim.nodes[i].boot(first);
            sim.apply(NodeId(i as u16), effects);
        }
        for f in 0..sim.flows.len() {
            if sim.flows[f].start < sim.flows[f].stop {
                sim.push(sim.flows[f].start, EventKind::AppSend { flow: f, seq: 0 });
            }
        }
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn flows(&self) -> &[FlowSpec] {
        &self.flows
    }

    pub fn blackholes(&self) -> &BTreeSet<NodeId> {
        &self.blackholes
    }

    pub fn trace(&self) -> &MobilityTrace {
        &self.trace
    }

    pub fn event_log(&self) -> Option<&str> {
        self.log.as_deref()
    }

    pub fn adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a.index()][b.index()]
    }

    /// Delivers `msg` to `to` at `at` as if `from` had sent it, bypassing
    /// radio range. Test hook for spoofed traffic.
    pub fn inject_frame(&mut self, at: SimTime, from: NodeId, to: NodeId, msg: &Message) {
        let data = matches!(msg, Message::Data(_));
        if data {
            self.data_frames_queued += 1;
        }
        self.push(at.max(self.now), EventKind::Frame { to, from, bytes: messages::encode(msg), data });
    }

    fn push(&mut self, at: SimTime, kind: EventKind) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        self.order += 1;
        self.queue.push(Event { at, order: self.order, kind });
    }

    fn recompute_adjacency(&mut self) -> Result<(), SimError> {
        let t = self.now.as_secs().min(self.trace.duration);
        let pos: Vec<Position> =
            (0..self.nodes.len()).map(|i| self.trace.position_at(i, t)).collect::<Result<_, _>>()?;
        for (i, row) in self.adjacency.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = i != j && pos[i].distance(pos[j]) <= self.range;
            }
        }
        Ok(())
    }

    fn log_line(&mut self, verb: &str, from: NodeId, to: Option<NodeId>, kind: MessageKind) {
        if let Some(log) = &mut self.log {
            let to = to.map_or("*".to_string(), |t| t.to_string());
            let _ = writeln!(log, "{} {verb} {from} {to} {}", self.now, kind.name());
        }
    }

    fn send_frame(&mut self, from: NodeId, to: NodeId, bytes: &[u8], kind: MessageKind) -> bool {
        if self.loss_probability > 0.0 && self.loss_rng.gen_bool(self.loss_probability) {
            self.log_line("LOST", from, Some(to), kind);
            return false;
        }
        let data = kind == MessageKind::Data;
        if data {
            self.data_frames_queued += 1;
        }
        self.push(self.now + self.latency, EventKind::Frame { to, from, bytes: bytes.to_vec(), data });
        true
    }

    fn transmit(&mut self, from: NodeId, msg: Message, mode: TxMode) {
        let kind = msg.kind();
        if self.now >= self.warmup {
            match kind {
                MessageKind::Hello => self.counters.hello_tx += 1,
                MessageKind::Data => {}
                k => *self.counters.control_tx.entry(k).or_default() += 1,
            }
        }
        if let Message::Alarm(a) = &msg {
            self.counters.flagged.extend(a.blackholes.iter().copied());
        }
        let bytes = messages::encode(&msg);
        match mode {
            TxMode::Broadcast => {
                self.log_line("TX", from, None, kind);
                for to in 0..self.nodes.len() {
                    if self.adjacency[from.index()][to] {
                        self.send_frame(from, NodeId(to as u16), &bytes, kind);
                    }
                }
            }
            TxMode::Unicast(to) => {
                self.log_line("TX", from, Some(to), kind);
                let delivered = self.adjacency[from.index()][to.index()] && self.send_frame(from, to, &bytes, kind);
                if !delivered && kind == MessageKind::Data {
                    self.counters.drop_link += 1;
                }
            }
        }
    }

    fn count(&mut self, node: NodeId, ev: MetricEvent) {
        let c = &mut self.counters;
        match ev {
            MetricEvent::DropNoRoute => c.drop_no_route += 1,
            MetricEvent::DropMalicious => c.drop_malicious += 1,
            MetricEvent::DropBuffer => c.drop_buffer += 1,
            MetricEvent::ForgedRrep => {
                c.false_rreps_sent += 1;
                c.attacking.insert(node);
            }
            MetricEvent::RouteLearned { destination, responder } => {
                if responder != destination && self.blackholes.contains(&responder) {
                    c.poisoned.insert(node);
                }
            }
            MetricEvent::SessionOpened => c.sessions_opened += 1,
            MetricEvent::Verdict(Verdict::Blackholes(set)) => {
                c.verdicts_blackholes += 1;
                c.flagged.extend(set);
            }
            MetricEvent::Verdict(Verdict::RouteSecure { .. }) => c.verdicts_secure += 1,
            MetricEvent::Verdict(Verdict::Inconclusive(why)) => {
                c.verdicts_inconclusive += 1;
                *c.inconclusive_reasons.entry(why).or_default() += 1;
            }
            MetricEvent::NoReverseRoute | MetricEvent::BlacklistedRrepDropped | MetricEvent::RrepRejected => {}
        }
    }

    fn apply(&mut self, node: NodeId, effects: Vec<Effect>) {
        for e in effects {
            match e {
                Effect::Transmit { msg, mode } => self.transmit(node, msg, mode),
                Effect::DeliverToApp(pkt) => {
                    debug_assert_eq!(pkt.dst, node);
                    self.counters.data_delivered += 1;
                }
                Effect::SetTimer { kind, at } => self.push(at.max(self.now), EventKind::Timer { node, kind }),
                Effect::Count(ev) => self.count(node, ev),
            }
        }
    }

    /// Processes the next event if it falls within the run. Returns false
    /// once the queue is exhausted or past the end.
    pub fn step(&mut self) -> Result<bool, SimError> {
        match self.queue.peek() {
            Some(ev) if ev.at <= self.end => {}
            _ => return Ok(false),
        }
        let ev = self.queue.pop().expect("peeked");
        self.now = ev.at;
        match ev.kind {
            EventKind::Frame { to, from, bytes, data } => {
                if data {
                    self.data_frames_queued -= 1;
                }
                let msg = messages::decode(&bytes)?;
                self.log_line("RX", from, Some(to), msg.kind());
                let effects = self.nodes[to.index()].handle(self.now, Input::Frame { from, msg });
                self.apply(to, effects);
            }
            EventKind::Timer { node, kind } => {
                let effects = self.nodes[node.index()].handle(self.now, Input::Timer(kind));
                self.apply(node, effects);
            }
            EventKind::AppSend { flow, seq } => {
                let f = self.flows[flow];
                let pkt = DataPacket {
                    flow_id: f.flow_id,
                    src: f.src,
                    dst: f.dst,
                    seq_in_flow: seq,
                    payload_bytes: f.payload_b,
                };
                self.counters.data_generated += 1;
                let effects = self.nodes[f.src.index()].handle(self.now, Input::AppData(pkt));
                self.apply(f.src, effects);
                let next = f.start + SimTime::from_secs((seq + 1) as f64 / f.rate_pps);
                if next < f.stop {
                    self.push(next, EventKind::AppSend { flow, seq: seq + 1 });
                }
            }
            EventKind::TopologyTick => {
                self.recompute_adjacency()?;
                self.push(self.now + self.tick, EventKind::TopologyTick);
            }
        }
        if self.opts.check_loops {
            if let Some((destination, cycle)) = find_routing_loop(&self.nodes, self.now) {
                return Err(SimError::RoutingLoop { at: self.now, destination, cycle });
            }
        }
        Ok(true)
    }

    pub fn run_until(&mut self, t: SimTime) -> Result<(), SimError> {
        while self.queue.peek().is_some_and(|e| e.at <= t.min(self.end)) {
            self.step()?;
        }
        Ok(())
    }

    /// Counters with the in-flight term filled in.
    pub fn settled_counters(&self) -> Counters {
        let mut c = self.counters.clone();
        c.in_flight = self.data_frames_queued + self.nodes.iter().map(|n| n.buffered() as u64).sum::<u64>();
        c
    }

    pub fn run(mut self) -> Result<(MetricsReport, Option<String>), SimError> {
        while self.step()? {}
        let c = self.settled_counters();
        if !c.conserved() {
            return Err(SimError::Conservation(format!("{c:?}")));
        }
        let report = finalize(c, &self.scenario, self.scenario.seed, &self.blackholes);
        Ok((report, self.log))
    }
}

/// Follows active next-hop pointers toward every destination and returns
/// the first cycle found.
pub fn find_routing_loop(nodes: &[Node], now: SimTime) -> Option<(NodeId, Vec<NodeId>)> {
    let n = nodes.len();
    for d in 0..n {
        let dest = NodeId(d as u16);
        let succ = |v: usize| -> Option<usize> {
            (v != d).then(|| nodes[v].routes().active(dest, now).map(|e| e.next_hop.index())).flatten()
        };
        // 0 unvisited, 1 on current walk, 2 done
        let mut color = vec![0u8; n];
        for start in 0..n {
            let mut path = Vec::new();
            let mut v = Some(start);
            while let Some(x) = v {
                if x >= n || color[x] == 2 {
                    break;
                }
                if color[x] == 1 {
                    let at = path.iter().position(|&p| p == x).expect("on path");
                    return Some((dest, path[at..].iter().map(|&p| NodeId(p as u16)).collect()));
                }
                color[x] = 1;
                path.push(x);
                v = succ(x);
            }
            for p in path {
                color[p] = 2;
            }
        }
    }
    None
}

/// Runs one replication of `scenario` under `seed`.
pub fn run_scenario(
    scenario: &Scenario,
    seed: u64,
    opts: SimOptions,
) -> Result<(MetricsReport, Option<String>), SimError> {
    let mut sc = scenario.clone();
    sc.seed = seed;
    Simulation::new(&sc, opts)?.run()
}
