//! Run counters, per-run reports and cross-seed aggregation.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::defense::InconclusiveReason;
use crate::messages::{MessageKind, NodeId};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub data_generated: u64,
    pub data_delivered: u64,
    pub drop_no_route: u64,
    pub drop_malicious: u64,
    pub drop_buffer: u64,
    /// Unicast DATA frames lost because the next hop had moved out of range.
    pub drop_link: u64,
    pub in_flight: u64,
    pub control_tx: BTreeMap<MessageKind, u64>,
    pub hello_tx: u64,
    pub false_rreps_sent: u64,
    pub sessions_opened: u64,
    pub verdicts_blackholes: u64,
    pub verdicts_secure: u64,
    pub verdicts_inconclusive: u64,
    pub inconclusive_reasons: BTreeMap<InconclusiveReason, u64>,
    pub poisoned: BTreeSet<NodeId>,
    pub flagged: BTreeSet<NodeId>,
    pub attacking: BTreeSet<NodeId>,
}

impl Counters {
    pub fn control_total(&self) -> u64 {
        self.control_tx.values().sum()
    }

    pub fn drops_total(&self) -> u64 {
        self.drop_no_route + self.drop_malicious + self.drop_buffer + self.drop_link
    }

    /// generated = delivered + drops + in flight.
    pub fn conserved(&self) -> bool {
        self.data_generated == self.data_delivered + self.drops_total() + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub pdr: f64,
    pub false_rrep_count: u64,
    pub poisoned_node_count: usize,
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
    pub control_overhead_pct: f64,
    pub control_overhead_with_hello_pct: f64,
    pub honest: BTreeSet<NodeId>,
    pub blackholes: BTreeSet<NodeId>,
    pub counters: Counters,
}

pub fn finalize(counters: Counters, scenario: &Scenario, seed: u64, blackholes: &BTreeSet<NodeId>) -> MetricsReport {
    let honest: BTreeSet<NodeId> = (0..scenario.nodes as u16).map(NodeId).filter(|n| !blackholes.contains(n)).collect();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let pdr = if counters.data_generated == 0 {
        0.0
    } else {
        counters.data_delivered as f64 / counters.data_generated as f64
    };
    let delivered = counters.data_delivered.max(1) as f64;
    let control = counters.control_total();
    MetricsReport {
        scenario: scenario.clone(),
        seed,
        pdr,
        false_rrep_count: counters.false_rreps_sent,
        poisoned_node_count: counters.poisoned.len(),
        false_positive_rate: ratio(honest.intersection(&counters.flagged).count(), honest.len()),
        false_negative_rate: ratio(counters.attacking.difference(&counters.flagged).count(), counters.attacking.len()),
        control_overhead_pct: 100.0 * control as f64 / delivered,
        control_overhead_with_hello_pct: 100.0 * (control + counters.hello_tx) as f64 / delivered,
        honest,
        blackholes: blackholes.clone(),
        counters,
    }
}

impl MetricsReport {
    /// Numeric columns in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let c = &self.counters;
        let ctl = |k: MessageKind| c.control_tx.get(&k).copied().unwrap_or(0) as f64;
        vec![
            ("pdr", self.pdr),
            ("false_rrep_count", self.false_rrep_count as f64),
            ("poisoned_node_count", self.poisoned_node_count as f64),
            ("fp_rate", self.false_positive_rate),
            ("fn_rate", self.false_negative_rate),
            ("control_overhead_pct", self.control_overhead_pct),
            ("control_overhead_with_hello_pct", self.control_overhead_with_hello_pct),
            ("data_generated", c.data_generated as f64),
            ("data_delivered", c.data_delivered as f64),
            ("drop_no_route", c.drop_no_route as f64),
            ("drop_malicious", c.drop_malicious as f64),
            ("drop_buffer", c.drop_buffer as f64),
            ("drop_link", c.drop_link as f64),
            ("in_flight", c.in_flight as f64),
            ("control_tx", c.control_total() as f64),
            ("hello_tx", c.hello_tx as f64),
            ("rreq_tx", ctl(MessageKind::Rreq)),
            ("rrep_tx", ctl(MessageKind::Rrep)),
            ("rerr_tx", ctl(MessageKind::Rerr)),
            ("frq_tx", ctl(MessageKind::Frq)),
            ("frp_tx", ctl(MessageKind::Frp)),
            ("alarm_tx", ctl(MessageKind::Alarm)),
            ("sessions_opened", c.sessions_opened as f64),
            ("verdicts_blackholes", c.verdicts_blackholes as f64),
            ("verdicts_secure", c.verdicts_secure as f64),
            ("verdicts_inconclusive", c.verdicts_inconclusive as f64),
            ("flagged_count", c.flagged.len() as f64),
            ("attacking_count", c.attacking.len() as f64),
        ]
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.values().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v)
    }

    /// Flagged nodes by label, `;`-separated in id order.
    pub fn flagged_labels(&self) -> String {
        self.counters.flagged.iter().map(|&n| self.scenario.label(n)).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation; 0 for a single report.
    pub stddev: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Stats {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Stats {
            mean,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            stddev: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub stats: Vec<(&'static str, Stats)>,
    /// Nodes flagged in every run.
    pub flagged_in_all: BTreeSet<NodeId>,
}

impl Summary {
    pub fn get(&self, name: &str) -> Option<Stats> {
        self.stats.iter().find(|(k, _)| *k == name).map(|(_, s)| *s)
    }

    pub fn mean(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |s| s.mean)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no reports to aggregate")]
    Empty,
    #[error("reports come from different scenarios")]
    MixedScenarios,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<Summary, AggregateError> {
    let first = reports.first().ok_or(AggregateError::Empty)?;
    let same = |r: &MetricsReport| {
        let mut a = r.scenario.clone();
        a.seed = first.scenario.seed;
        a == first.scenario
    };
    if !reports.iter().all(same) {
        return Err(AggregateError::MixedScenarios);
    }
    let mut sorted: Vec<&MetricsReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    let names: Vec<&'static str> = first.values().into_iter().map(|(k, _)| k).collect();
    let columns: Vec<Vec<f64>> = sorted.iter().map(|r| r.values().into_iter().map(|(_, v)| v).collect()).collect();
    let stats = names
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, Stats::of(&columns.iter().map(|row| row[i]).collect::<Vec<_>>())))
        .collect();
    let flagged_in_all = sorted
        .iter()
        .skip(1)
        .fold(sorted[0].counters.flagged.clone(), |acc, r| acc.intersection(&r.counters.flagged).copied().collect());
    Ok(Summary { runs: reports.len(), stats, flagged_in_all })
}
