use std::collections::BTreeMap;

use crate::messages::{NodeId, SeqNum};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteEntry {
    pub destination: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u16,
    pub dest_seq: SeqNum,
    pub expiry: SimTime,
    pub valid: bool,
}

impl RouteEntry {
    pub fn is_active(&self, now: SimTime) -> bool {
        self.valid && self.expiry > now
    }
}

#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    entries: BTreeMap<NodeId, RouteEntry>,
}

impl RouteTable {
    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    /// A route that is valid and unexpired at `now`.
    pub fn active(&self, dest: NodeId, now: SimTime) -> Option<&RouteEntry> {
        self.entries.get(&dest).filter(|e| e.is_active(now))
    }

    pub fn iter(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }

    /// Installs `cand` if it is fresher than the stored entry: higher sequence
    /// number, or an equal one with fewer hops or replacing an inactive route.
    /// Ties otherwise keep the incumbent. Returns whether it was installed.
    pub fn offer(&mut self, cand: RouteEntry, now: SimTime) -> bool {
        let better = match self.entries.get(&cand.destination) {
            None => true,
            Some(e) => {
                cand.dest_seq > e.dest_seq
                    || (cand.dest_seq == e.dest_seq && (!e.is_active(now) || cand.hop_count < e.hop_count))
            }
        };
        if better {
            self.entries.insert(cand.destination, cand);
        }
        better
    }

    pub fn refresh(&mut self, dest: NodeId, now: SimTime, lifetime: SimTime) {
        if let Some(e) = self.entries.get_mut(&dest) {
            if e.is_active(now) {
                e.expiry = e.expiry.max(now + lifetime);
            }
        }
    }

    /// Marks the route broken, bumping its sequence number to at least `seq`
    /// (or by one when no number is supplied). Returns the advertised pair.
    pub fn invalidate(&mut self, dest: NodeId, seq: Option<SeqNum>) -> Option<(NodeId, SeqNum)> {
        let e = self.entries.get_mut(&dest)?;
        if !e.valid {
            return None;
        }
        e.valid = false;
        e.dest_seq = match seq {
            Some(s) => e.dest_seq.max(s),
            None => SeqNum(e.dest_seq.0.wrapping_add(1)),
        };
        Some((dest, e.dest_seq))
    }

    /// Invalidates every valid route whose next hop satisfies `pred`.
    pub fn invalidate_via(&mut self, pred: impl Fn(NodeId) -> bool) -> Vec<(NodeId, SeqNum)> {
        let dests: Vec<NodeId> =
            self.entries.values().filter(|e| e.valid && pred(e.next_hop)).map(|e| e.destination).collect();
        dests.into_iter().filter_map(|d| self.invalidate(d, None)).collect()
    }
}
