//! Hand-built static topologies and a breadth-first route oracle.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::messages::{DriEntry, NodeId};
use crate::mobility::Position;
use crate::scenario::{Mode, Scenario};

pub type Adjacency = Vec<BTreeSet<NodeId>>;

/// A scenario with fixed positions and an intended link set.
#[derive(Debug, Clone)]
pub struct StaticTopology {
    pub scenario: Scenario,
}

#[derive(Debug, Error, PartialEq)]
pub enum FixtureError {
    #[error("{0} and {1} are not connected")]
    Unreachable(NodeId, NodeId),
    #[error("geometry does not realize the intended links: {0}")]
    Geometry(String),
}

impl StaticTopology {
    pub fn positions(&self) -> &[Position] {
        self.scenario.positions.as_deref().expect("static topology has positions")
    }

    pub fn id(&self, label: &str) -> NodeId {
        let labels = self.scenario.labels.as_ref().expect("labelled topology");
        NodeId(labels.iter().position(|l| l == label).unwrap_or_else(|| panic!("no node {label}")) as u16)
    }

    pub fn adjacency(&self) -> Adjacency {
        adjacency_from_positions(self.positions(), self.scenario.range_m)
    }

    /// Checks that positions produce exactly `edges`.
    pub fn check_edges(&self, edges: &[(NodeId, NodeId)]) -> Result<(), FixtureError> {
        let mut want: Adjacency = vec![BTreeSet::new(); self.scenario.nodes];
        for &(a, b) in edges {
            want[a.index()].insert(b);
            want[b.index()].insert(a);
        }
        let got = self.adjacency();
        if got == want {
            Ok(())
        } else {
            Err(FixtureError::Geometry(format!("want {want:?}, got {got:?}")))
        }
    }
}

pub fn adjacency_from_positions(p: &[Position], range: f64) -> Adjacency {
    (0..p.len())
        .map(|i| (0..p.len()).filter(|&j| j != i && p[i].distance(p[j]) <= range).map(|j| NodeId(j as u16)).collect())
        .collect()
}

/// Drops every edge touching a node in `removed`.
pub fn subgraph(adj: &Adjacency, removed: &BTreeSet<NodeId>) -> Adjacency {
    adj.iter()
        .enumerate()
        .map(|(i, nb)| {
            if removed.contains(&NodeId(i as u16)) {
                BTreeSet::new()
            } else {
                nb.difference(removed).copied().collect()
            }
        })
        .collect()
}

/// Shortest hop count from `src` to `dst` and every path of that length.
pub fn oracle_route(adj: &Adjacency, src: NodeId, dst: NodeId) -> Result<(usize, Vec<Vec<NodeId>>), FixtureError> {
    let n = adj.len();
    let mut dist = vec![usize::MAX; n];
    let mut preds: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    dist[src.index()] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(v) = q.pop_front() {
        for &w in &adj[v.index()] {
            let d = dist[v.index()] + 1;
            if dist[w.index()] == usize::MAX {
                dist[w.index()] = d;
                q.push_back(w);
            }
            if dist[w.index()] == d {
                preds[w.index()].push(v);
            }
        }
    }
    if dist[dst.index()] == usize::MAX {
        return Err(FixtureError::Unreachable(src, dst));
    }
    let mut paths = Vec::new();
    let mut stack = vec![vec![dst]];
    while let Some(partial) = stack.pop() {
        let head = *partial.last().expect("non-empty");
        if head == src {
            paths.push(partial.into_iter().rev().collect());
            continue;
        }
        for &p in &preds[head.index()] {
            let mut next = partial.clone();
            next.push(p);
            stack.push(next);
        }
    }
    paths.sort();
    Ok((dist[dst.index()], paths))
}

pub const FIG6_LABELS: [&str; 8] = ["S", "1", "2", "4", "6", "B_1", "B_2", "D"];

const FIG6_EDGES: [(&str, &str); 10] = [
    ("S", "1"),
    ("S", "2"),
    ("S", "B_1"),
    ("2", "4"),
    ("4", "6"),
    ("4", "B_2"),
    ("6", "B_2"),
    ("B_1", "B_2"),
    ("B_2", "D"),
    ("6", "D"),
];

/// The cooperative black-hole walkthrough: B_1 answers S's discovery for D
/// and names B_2, which vouches for it. S already trusts 2, 4 and 6.
pub fn fig6_topology() -> StaticTopology {
    let pos = [
        (220.0, 640.0),
        (70.0, 730.0),
        (240.0, 470.0),
        (360.0, 430.0),
        (530.0, 460.0),
        (390.0, 680.0),
        (480.0, 530.0),
        (610.0, 520.0),
    ];
    let id = |l: &str| NodeId(FIG6_LABELS.iter().position(|x| *x == l).expect("label") as u16);
    let scenario = Scenario {
        nodes: FIG6_LABELS.len(),
        positions: Some(pos.iter().map(|&(x, y)| Position::new(x, y)).collect()),
        labels: Some(FIG6_LABELS.iter().map(|s| s.to_string()).collect()),
        blackhole_ids: Some(vec![id("B_1"), id("B_2")]),
        blackhole_count: 2,
        flows: 1,
        flow_list: Some(vec![(id("S"), id("D"))]),
        dri_seed: vec![
            (id("S"), id("2"), DriEntry::BOTH),
            (id("S"), id("4"), DriEntry::new(false, true)),
            (id("S"), id("6"), DriEntry::new(false, true)),
        ],
        mode: Mode::Defense,
        duration_s: 30.0,
        warmup_s: 5.0,
        ..Scenario::default()
    };
    let topo = StaticTopology { scenario };
    let edges: Vec<(NodeId, NodeId)> = FIG6_EDGES.iter().map(|&(a, b)| (id(a), id(b))).collect();
    topo.check_edges(&edges).expect("fig6 geometry");
    topo
}

/// `n` nodes on a line, consecutive nodes `spacing` apart.
pub fn line_topology(n: usize, spacing: f64) -> StaticTopology {
    let scenario = Scenario {
        nodes: n,
        positions: Some((0..n).map(|i| Position::new(i as f64 * spacing, 0.0)).collect()),
        arena_m: (n as f64 * spacing).max(1.0),
        blackhole_count: 0,
        flows: 1,
        flow_list: Some(vec![(NodeId(0), NodeId(n as u16 - 1))]),
        duration_s: 60.0,
        warmup_s: 5.0,
        ..Scenario::default()
    };
    StaticTopology { scenario }
}

/// A `rows` x `cols` grid with the given spacing, row-major ids.
pub fn grid_topology(rows: usize, cols: usize, spacing: f64, flows: Vec<(NodeId, NodeId)>) -> StaticTopology {
    let positions =
        (0..rows * cols).map(|i| Position::new((i % cols) as f64 * spacing, (i / cols) as f64 * spacing)).collect();
    let scenario = Scenario {
        nodes: rows * cols,
        positions: Some(positions),
        arena_m: (rows.max(cols) as f64 * spacing).max(1.0),
        blackhole_count: 0,
        flows: flows.len(),
        flow_list: Some(flows),
        duration_s: 60.0,
        warmup_s: 5.0,
        ..Scenario::default()
    };
    StaticTopology { scenario }
}

/// Honest spine `S = 0 .. spine-1 = D` along y = 0 and `k` black holes on a
/// parallel row, each linked to its neighbors in the row. The first black
/// hole hangs off S.
pub fn colluder_ladder(spine: usize, k: usize) -> StaticTopology {
    let n = spine + k;
    let mut positions: Vec<Position> = (0..spine).map(|i| Position::new(i as f64 * 150.0, 0.0)).collect();
    positions.extend((0..k).map(|i| Position::new(i as f64 * 150.0, 150.0)));
    let scenario = Scenario {
        nodes: n,
        positions: Some(positions),
        arena_m: (spine.max(k) as f64 * 150.0).max(300.0),
        blackhole_ids: Some((spine..n).map(|i| NodeId(i as u16)).collect()),
        blackhole_count: k,
        flows: 1,
        flow_list: Some(vec![(NodeId(0), NodeId(spine as u16 - 1))]),
        mode: Mode::Defense,
        duration_s: 40.0,
        warmup_s: 5.0,
        ..Scenario::default()
    };
    StaticTopology { scenario }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig6_loads_with_intended_links() {
        let t = fig6_topology();
        let adj = t.adjacency();
        assert_eq!(adj[t.id("S").index()], [t.id("1"), t.id("2"), t.id("B_1")].into());
        assert!(!adj[t.id("B_1").index()].contains(&t.id("D")));
    }

    #[test]
    fn fig6_honest_route_is_four_hops() {
        let t = fig6_topology();
        let honest = subgraph(&t.adjacency(), &[t.id("B_1"), t.id("B_2")].into());
        let (hops, paths) = oracle_route(&honest, t.id("S"), t.id("D")).unwrap();
        assert_eq!(hops, 4);
        assert_eq!(paths, vec![vec![t.id("S"), t.id("2"), t.id("4"), t.id("6"), t.id("D")]]);
        let (hops, _) = oracle_route(&t.adjacency(), t.id("S"), t.id("D")).unwrap();
        assert_eq!(hops, 3);
    }

    #[test]
    fn oracle_trivial_cases() {
        let t = line_topology(3, 300.0);
        let adj = t.adjacency();
        assert_eq!(oracle_route(&adj, NodeId(1), NodeId(1)).unwrap(), (0, vec![vec![NodeId(1)]]));
        assert_eq!(oracle_route(&adj, NodeId(0), NodeId(2)), Err(FixtureError::Unreachable(NodeId(0), NodeId(2))));
    }

    #[test]
    fn grid_has_multiple_minimal_paths() {
        let t = grid_topology(2, 2, 150.0, vec![]);
        let (hops, paths) = oracle_route(&t.adjacency(), NodeId(0), NodeId(3)).unwrap();
        assert_eq!((hops, paths.len()), (2, 2));
    }
}
