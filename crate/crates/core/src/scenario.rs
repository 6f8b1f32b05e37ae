//! Scenario files: flat `key = value` lines with `#` comments.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::adversary::{BlackHoleConfig, NodeBehavior};
use crate::aodv::ProtocolConfig;
use crate::messages::{DriEntry, NodeId};
use crate::mobility::Position;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Baseline,
    Attack,
    Defense,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Attack, Mode::Defense];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Attack => "attack",
            Mode::Defense => "defense",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "attack" => Ok(Mode::Attack),
            "defense" => Ok(Mode::Defense),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

/// How black holes are wired to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collusion {
    /// Every black hole lists all the others as partners.
    Group,
    /// Each black hole lists only the next one and names it in FRp answers.
    Chain,
}

impl FromStr for Collusion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "group" => Ok(Collusion::Group),
            "chain" => Ok(Collusion::Chain),
            _ => Err(format!("unknown collusion `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration_s: f64,
    pub arena_m: f64,
    pub nodes: usize,
    pub range_m: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub pause_s: f64,
    pub flows: usize,
    pub rate_pps: f64,
    pub payload_b: u16,
    pub blackhole_count: usize,
    pub blackhole_ids: Option<Vec<NodeId>>,
    pub mode: Mode,
    pub seed: u64,
    pub warmup_s: f64,
    /// Flow lifetime; `None` runs flows until the traffic cut-off.
    pub flow_duration_s: Option<f64>,

    pub hello_interval_s: f64,
    pub allowed_hello_loss: u32,
    pub active_route_lifetime_s: f64,
    pub rreq_retries: u32,
    pub discovery_timeout_s: f64,
    pub buffer_cap: usize,
    pub probe_depth_limit: usize,
    pub session_timeout_s: f64,
    pub max_hops: u16,
    pub seq_inflation: u32,
    pub per_hop_latency_s: f64,
    pub loss_probability: f64,
    pub tick_interval_s: f64,
    pub collusion: Collusion,

    /// Fixed node positions; makes the scenario static.
    pub positions: Option<Vec<Position>>,
    pub labels: Option<Vec<String>>,
    pub flow_list: Option<Vec<(NodeId, NodeId)>>,
    /// Pre-loaded DRI rows: (holder, subject, bits).
    pub dri_seed: Vec<(NodeId, NodeId, DriEntry)>,
}

impl Default for Scenario {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Scenario {
            duration_s: 1000.0,
            arena_m: 1000.0,
            nodes: 30,
            range_m: 200.0,
            speed_min_mps: 1.0,
            speed_max_mps: 20.0,
            pause_s: 10.0,
            flows: 15,
            rate_pps: 2.0,
            payload_b: 512,
            blackhole_count: 2,
            blackhole_ids: None,
            mode: Mode::Baseline,
            seed: 1,
            warmup_s: 100.0,
            flow_duration_s: None,
            hello_interval_s: p.hello_interval.as_secs(),
            allowed_hello_loss: p.allowed_hello_loss,
            active_route_lifetime_s: p.active_route_lifetime.as_secs(),
            rreq_retries: p.rreq_retries,
            discovery_timeout_s: p.discovery_timeout.as_secs(),
            buffer_cap: p.buffer_cap,
            probe_depth_limit: p.probe_depth_limit,
            session_timeout_s: p.session_timeout.as_secs(),
            max_hops: p.max_hops,
            seq_inflation: BlackHoleConfig::default().seq_inflation,
            per_hop_latency_s: 0.001,
            loss_probability: 0.0,
            tick_interval_s: 0.1,
            collusion: Collusion::Group,
            positions: None,
            labels: None,
            flow_list: None,
            dri_seed: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

fn list<T>(v: &str, sep: char, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    v.split(sep).map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn num<T: FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("bad number `{s}`"))
}

fn node(s: &str) -> Result<NodeId, String> {
    num::<u16>(s).map(NodeId)
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut sc = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ScenarioError::Parse { line: i + 1, msg: "expected `key = value`".into() })?;
            sc.set(key.trim(), value.trim()).map_err(|msg| ScenarioError::Parse { line: i + 1, msg })?;
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "duration_s" => self.duration_s = num(v)?,
            "arena_m" => self.arena_m = num(v)?,
            "nodes" => self.nodes = num(v)?,
            "range_m" => self.range_m = num(v)?,
            "speed_min_mps" => self.speed_min_mps = num(v)?,
            "speed_max_mps" => self.speed_max_mps = num(v)?,
            "pause_s" => self.pause_s = num(v)?,
            "flows" => self.flows = num(v)?,
            "rate_pps" => self.rate_pps = num(v)?,
            "payload_b" => self.payload_b = num(v)?,
            "blackhole_count" => self.blackhole_count = num(v)?,
            "blackhole_ids" => {
                let ids = list(v, ',', node)?;
                self.blackhole_count = ids.len();
                self.blackhole_ids = Some(ids);
            }
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = num(v)?,
            "warmup_s" => self.warmup_s = num(v)?,
            "flow_duration_s" => self.flow_duration_s = if v == "none" { None } else { Some(num(v)?) },
            "hello_interval_s" => self.hello_interval_s = num(v)?,
            "allowed_hello_loss" => self.allowed_hello_loss = num(v)?,
            "active_route_lifetime_s" => self.active_route_lifetime_s = num(v)?,
            "rreq_retries" => self.rreq_retries = num(v)?,
            "discovery_timeout_s" => self.discovery_timeout_s = num(v)?,
            "buffer_cap" => self.buffer_cap = num(v)?,
            "probe_depth_limit" => self.probe_depth_limit = num(v)?,
            "session_timeout_s" => self.session_timeout_s = num(v)?,
            "max_hops" => self.max_hops = num(v)?,
            "seq_inflation" => self.seq_inflation = num(v)?,
            "per_hop_latency_s" => self.per_hop_latency_s = num(v)?,
            "loss_probability" => self.loss_probability = num(v)?,
            "tick_interval_s" => self.tick_interval_s = num(v)?,
            "collusion" => self.collusion = v.parse()?,
            "positions" => {
                self.positions = Some(list(v, ';', |p| {
                    let (x, y) = p.split_once(',').ok_or_else(|| format!("bad position `{p}`"))?;
                    Ok(Position::new(num(x)?, num(y)?))
                })?)
            }
            "labels" => self.labels = Some(v.split_whitespace().map(String::from).collect()),
            "flow_list" => {
                self.flow_list = Some(list(v, ';', |p| {
                    let (a, b) = p.split_once('>').ok_or_else(|| format!("bad flow `{p}`"))?;
                    Ok((node(a)?, node(b)?))
                })?)
            }
            "dri_seed" => {
                self.dri_seed = list(v, ';', |p| {
                    let (pair, bits) = p.split_once('=').ok_or_else(|| format!("bad dri row `{p}`"))?;
                    let (h, s) = pair.split_once(':').ok_or_else(|| format!("bad dri row `{p}`"))?;
                    let dri = match bits.trim() {
                        "00" => DriEntry::NONE,
                        "01" => DriEntry::new(false, true),
                        "10" => DriEntry::new(true, false),
                        "11" => DriEntry::BOTH,
                        b => return Err(format!("bad dri bits `{b}`")),
                    };
                    Ok((node(h)?, node(s)?, dri))
                })?
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: &str| Err(ScenarioError::Validation(m.to_string()));
        let finite_nonneg = [
            self.duration_s,
            self.pause_s,
            self.warmup_s,
            self.speed_min_mps,
            self.speed_max_mps,
            self.per_hop_latency_s,
        ];
        if finite_nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail("times and speeds must be finite and non-negative");
        }
        if self.nodes < 2 || self.nodes > u16::MAX as usize {
            return fail("nodes must be between 2 and 65535");
        }
        if !(self.arena_m > 0.0 && self.range_m > 0.0) {
            return fail("arena_m and range_m must be positive");
        }
        if !(self.rate_pps > 0.0) {
            return fail("rate_pps must be positive");
        }
        if !(self.tick_interval_s > 0.0 && self.hello_interval_s > 0.0 && self.discovery_timeout_s > 0.0) {
            return fail("tick, hello and discovery intervals must be positive");
        }
        if !(self.session_timeout_s > 0.0 && self.active_route_lifetime_s > 0.0) {
            return fail("session timeout and route lifetime must be positive");
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return fail("loss_probability must lie in [0, 1]");
        }
        if self.speed_max_mps < self.speed_min_mps {
            return fail("speed_max_mps must be at least speed_min_mps");
        }
        if self.speed_max_mps > 0.0 && self.speed_min_mps == 0.0 {
            return fail("moving nodes need speed_min_mps > 0");
        }
        if self.flow_duration_s.is_some_and(|d| !(d > 0.0)) {
            return fail("flow_duration_s must be positive");
        }
        if self.buffer_cap == 0 {
            return fail("buffer_cap must be positive");
        }
        match self.mode {
            Mode::Attack if self.blackhole_count == 0 => return fail("attack mode requires at least one black hole"),
            _ => {}
        }
        if self.mode != Mode::Baseline && self.blackhole_count + 2 > self.nodes {
            return fail("at least two honest nodes are required");
        }
        let in_range = |n: &NodeId| n.index() < self.nodes;
        if let Some(ids) = &self.blackhole_ids {
            if !ids.iter().all(in_range) {
                return fail("blackhole_ids out of range");
            }
            let mut sorted = ids.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != ids.len() {
                return fail("blackhole_ids must be distinct");
            }
        }
        if let Some(p) = &self.positions {
            if p.len() != self.nodes {
                return fail("positions must list every node");
            }
            let arena = self.arena_m;
            if !p.iter().all(|q| (0.0..=arena).contains(&q.x) && (0.0..=arena).contains(&q.y)) {
                return fail("positions must lie inside the arena");
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.nodes {
                return fail("labels must name every node");
            }
        }
        if let Some(f) = &self.flow_list {
            if !f.iter().all(|(a, b)| in_range(a) && in_range(b) && a != b) {
                return fail("flow_list endpoints must be distinct existing nodes");
            }
        }
        if !self.dri_seed.iter().all(|(h, s, _)| in_range(h) && in_range(s)) {
            return fail("dri_seed names unknown nodes");
        }
        Ok(())
    }

    /// Baseline mode runs without adversaries whatever the count says.
    pub fn normalized(&self) -> Scenario {
        let mut s = self.clone();
        if s.mode == Mode::Baseline {
            s.blackhole_count = 0;
            s.blackhole_ids = None;
        }
        s
    }

    pub fn is_static(&self) -> bool {
        self.positions.is_some() || self.speed_max_mps == 0.0
    }

    pub fn label(&self, n: NodeId) -> String {
        match &self.labels {
            Some(l) => l[n.index()].clone(),
            None => n.to_string(),
        }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            hello_interval: SimTime::from_secs(self.hello_interval_s),
            allowed_hello_loss: self.allowed_hello_loss,
            active_route_lifetime: SimTime::from_secs(self.active_route_lifetime_s),
            rreq_retries: self.rreq_retries,
            discovery_timeout: SimTime::from_secs(self.discovery_timeout_s),
            buffer_cap: self.buffer_cap,
            probe_depth_limit: self.probe_depth_limit,
            session_timeout: SimTime::from_secs(self.session_timeout_s),
            defense: self.mode == Mode::Defense,
            max_hops: self.max_hops,
        }
    }

    /// Behaviors for the chosen black-hole set, in ascending id order.
    pub fn behaviors(&self, blackholes: &[NodeId]) -> Vec<NodeBehavior> {
        let mut out = vec![NodeBehavior::Honest; self.nodes];
        for (i, &b) in blackholes.iter().enumerate() {
            let partners = match self.collusion {
                Collusion::Group => blackholes.iter().copied().filter(|&p| p != b).collect(),
                Collusion::Chain => blackholes.get(i + 1).copied().into_iter().collect(),
            };
            out[b.index()] = NodeBehavior::BlackHole(BlackHoleConfig {
                partners,
                seq_inflation: self.seq_inflation,
                frp_names_partner: self.collusion == Collusion::Chain,
            });
        }
        out
    }

    /// Value of a sweepable field as it appears in the file.
    pub fn get(&self, key: &str) -> Option<String> {
        self.to_pairs().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("duration_s", self.duration_s.to_string()),
            ("arena_m", self.arena_m.to_string()),
            ("nodes", self.nodes.to_string()),
            ("range_m", self.range_m.to_string()),
            ("speed_min_mps", self.speed_min_mps.to_string()),
            ("speed_max_mps", self.speed_max_mps.to_string()),
            ("pause_s", self.pause_s.to_string()),
            ("flows", self.flows.to_string()),
            ("rate_pps", self.rate_pps.to_string()),
            ("payload_b", self.payload_b.to_string()),
            ("blackhole_count", self.blackhole_count.to_string()),
            ("mode", self.mode.to_string()),
            ("seed", self.seed.to_string()),
            ("warmup_s", self.warmup_s.to_string()),
            ("flow_duration_s", self.flow_duration_s.map_or("none".into(), |d| d.to_string())),
            ("hello_interval_s", self.hello_interval_s.to_string()),
            ("allowed_hello_loss", self.allowed_hello_loss.to_string()),
            ("active_route_lifetime_s", self.active_route_lifetime_s.to_string()),
            ("rreq_retries", self.rreq_retries.to_string()),
            ("discovery_timeout_s", self.discovery_timeout_s.to_string()),
            ("buffer_cap", self.buffer_cap.to_string()),
            ("probe_depth_limit", self.probe_depth_limit.to_string()),
            ("session_timeout_s", self.session_timeout_s.to_string()),
            ("max_hops", self.max_hops.to_string()),
            ("seq_inflation", self.seq_inflation.to_string()),
            ("per_hop_latency_s", self.per_hop_latency_s.to_string()),
            ("loss_probability", self.loss_probability.to_string()),
            ("tick_interval_s", self.tick_interval_s.to_string()),
            (
                "collusion",
                match self.collusion {
                    Collusion::Group => "group".into(),
                    Collusion::Chain => "chain".into(),
                },
            ),
        ];
        if let Some(ids) = &self.blackhole_ids {
            v.push(("blackhole_ids", ids.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")));
        }
        if let Some(p) = &self.positions {
            v.push(("positions", p.iter().map(|q| format!("{},{}", q.x, q.y)).collect::<Vec<_>>().join("; ")));
        }
        if let Some(l) = &self.labels {
            v.push(("labels", l.join(" ")));
        }
        if let Some(f) = &self.flow_list {
            v.push(("flow_list", f.iter().map(|(a, b)| format!("{a}>{b}")).collect::<Vec<_>>().join("; ")));
        }
        if !self.dri_seed.is_empty() {
            let rows = self.dri_seed.iter().map(|(h, s, d)| format!("{h}:{s}={}{}", d.from as u8, d.through as u8));
            v.push(("dri_seed", rows.collect::<Vec<_>>().join("; ")));
        }
        v
    }

    /// Scalar fields in file order, for CSV echo.
    pub fn csv_fields(&self) -> Vec<(&'static str, String)> {
        self.to_pairs()
            .into_iter()
            .filter(|(k, _)| !matches!(*k, "positions" | "labels" | "flow_list" | "dri_seed" | "blackhole_ids"))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let s = Scenario::parse("").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!((s.nodes, s.flows, s.blackhole_count, s.mode), (30, 15, 2, Mode::Baseline));
        assert_eq!((s.duration_s, s.range_m, s.pause_s, s.rate_pps), (1000.0, 200.0, 10.0, 2.0));
    }

    #[test]
    fn zero_max_speed_with_positive_min_is_rejected() {
        let e = Scenario::parse("speed_max_mps = 0\nspeed_min_mps = 1\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Validation(_)));
        assert!(Scenario::parse("speed_max_mps = 0\nspeed_min_mps = 0\n").is_ok());
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = Scenario::parse("# comment\nnodes = 30\nbogus = 1\n").unwrap_err();
        assert_eq!(e, ScenarioError::Parse { line: 3, msg: "unknown key `bogus`".into() });
    }

    #[test]
    fn mode_rules() {
        assert!(Scenario::parse("mode = defense\nblackhole_count = 6\n").is_ok());
        assert!(Scenario::parse("mode = attack\nblackhole_count = 0\n").is_err());
        let s = Scenario::parse("mode = baseline\nblackhole_count = 4\n").unwrap();
        assert_eq!(s.normalized().blackhole_count, 0);
    }

    #[test]
    fn text_round_trip() {
        let mut s = Scenario::default();
        s.mode = Mode::Defense;
        s.positions = Some(vec![Position::new(0.0, 0.5), Position::new(10.0, 20.0)]);
        s.nodes = 2;
        s.blackhole_count = 0;
        s.labels = Some(vec!["S".into(), "D".into()]);
        s.flow_list = Some(vec![(NodeId(0), NodeId(1))]);
        s.dri_seed = vec![(NodeId(0), NodeId(1), DriEntry::new(false, true))];
        s.flow_duration_s = Some(12.5);
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn chain_collusion_links_successors() {
        let s = Scenario { collusion: Collusion::Chain, ..Scenario::default() };
        let b = s.behaviors(&[NodeId(3), NodeId(5), NodeId(8)]);
        assert_eq!(b[3].partners(), &[NodeId(5)]);
        assert_eq!(b[5].partners(), &[NodeId(8)]);
        assert!(b[8].partners().is_empty());
        assert!(!b[0].is_blackhole());
    }
}
