//! Dependency clusters and communication checks.

use std::collections::{BTreeMap, BTreeSet};

use crate::stl::{participants, PhiFormula, TaskFormula};
use crate::AgentId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("self-loop on agent {0}")]
    SelfLoop(AgentId),
}

/// Undirected communication graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommGraph {
    nodes: BTreeSet<AgentId>,
    edges: BTreeSet<(AgentId, AgentId)>,
}

impl CommGraph {
    pub fn complete(agents: impl IntoIterator<Item = AgentId>) -> Self {
        let nodes: BTreeSet<_> = agents.into_iter().collect();
        let mut edges = BTreeSet::new();
        for &a in &nodes {
            for &b in nodes.range(a + 1..) {
                edges.insert((a, b));
            }
        }
        CommGraph { nodes, edges }
    }

    pub fn from_edges(
        agents: impl IntoIterator<Item = AgentId>,
        edges: impl IntoIterator<Item = (AgentId, AgentId)>,
    ) -> Result<Self, TopologyError> {
        let mut g = CommGraph {
            nodes: agents.into_iter().collect(),
            edges: BTreeSet::new(),
        };
        for (a, b) in edges {
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            g.nodes.insert(a);
            g.nodes.insert(b);
            g.edges.insert((a.min(b), a.max(b)));
        }
        Ok(g)
    }

    pub fn edges(&self) -> impl Iterator<Item = (AgentId, AgentId)> + '_ {
        self.edges.iter().copied()
    }

    /// Whether `a` and `b` can exchange messages, possibly over several hops.
    pub fn connected(&self, a: AgentId, b: AgentId) -> bool {
        if a == b {
            return true;
        }
        let mut uf = UnionFind::new(self.nodes.iter().copied());
        for &(x, y) in &self.edges {
            uf.union(x, y);
        }
        uf.contains(a) && uf.contains(b) && uf.find(a) == uf.find(b)
    }
}

/// Disjoint-set forest over agent ids.
struct UnionFind {
    parent: BTreeMap<AgentId, AgentId>,
}

impl UnionFind {
    fn new(ids: impl IntoIterator<Item = AgentId>) -> Self {
        UnionFind {
            parent: ids.into_iter().map(|i| (i, i)).collect(),
        }
    }

    fn contains(&self, a: AgentId) -> bool {
        self.parent.contains_key(&a)
    }

    fn find(&mut self, a: AgentId) -> AgentId {
        let mut root = a;
        while self.parent[&root] != root {
            root = self.parent[&root];
        }
        let mut cur = a;
        while cur != root {
            let next = self.parent[&cur];
            self.parent.insert(cur, root);
            cur = next;
        }
        root
    }

    /// Unites two sets; the smaller id becomes the root so results are order-free.
    fn union(&mut self, a: AgentId, b: AgentId) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent.insert(hi, lo);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Ascending agent ids.
    pub agents: Vec<AgentId>,
    /// All tasks in the cluster are structurally identical.
    pub case_a: bool,
    /// Every pair of agents in the cluster can communicate.
    pub comm_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    /// Ordered by smallest member.
    pub clusters: Vec<Cluster>,
}

impl ClusterPartition {
    pub fn cluster_of(&self, agent: AgentId) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.agents.contains(&agent))
    }
}

/// Maximal dependency clusters: connected components of the graph with an
/// edge `(i, j)` whenever agent `j` participates in agent `i`'s task.
pub fn clusters(tasks: &BTreeMap<AgentId, TaskFormula>, comm: &CommGraph) -> ClusterPartition {
    let mut uf = UnionFind::new(tasks.keys().copied());
    for (&owner, task) in tasks {
        for j in participants(task, owner) {
            if !uf.contains(j) {
                uf.parent.insert(j, j);
            }
            uf.union(owner, j);
        }
    }
    let ids: Vec<AgentId> = uf.parent.keys().copied().collect();
    let mut groups: BTreeMap<AgentId, Vec<AgentId>> = BTreeMap::new();
    for id in ids {
        let root = uf.find(id);
        groups.entry(root).or_default().push(id);
    }
    let clusters = groups
        .into_values()
        .map(|agents| {
            let first = tasks.get(&agents[0]);
            let case_a = agents.iter().all(|a| tasks.get(a) == first);
            let comm_ok = agents
                .iter()
                .enumerate()
                .all(|(k, &a)| agents[k + 1..].iter().all(|&b| comm.connected(a, b)));
            Cluster {
                agents,
                case_a,
                comm_ok,
            }
        })
        .collect();
    ClusterPartition { clusters }
}

/// What the stage-2 timing check needs to know about another participant.
#[derive(Debug, Clone, Copy)]
pub struct PeerStatus<'a> {
    pub collab: i64,
    /// The participant's current own unit, if any remain.
    pub unit: Option<&'a PhiFormula>,
}

/// Whether every other participant of `unit` is free, or busy with its own task
/// but with a deadline later than `unit`'s. Tasks without other participants
/// never qualify: there is nobody to collaborate with.
pub fn stage2_timing_ok(owner: AgentId, unit: &PhiFormula, peers: &BTreeMap<AgentId, PeerStatus<'_>>) -> bool {
    let others: Vec<AgentId> = crate::stl::unit_participants(unit, owner)
        .into_iter()
        .filter(|&j| j != owner)
        .collect();
    if others.is_empty() {
        return false;
    }
    others.iter().all(|j| match peers.get(j) {
        Some(p) if p.collab == -1 => true,
        Some(PeerStatus {
            collab: 0,
            unit: Some(pj),
        }) => {
            let deadline = if pj.is_eventually() { pj.b } else { pj.a };
            unit.b < deadline
        }
        _ => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{parse_phi, parse_task};

    fn tasks(list: &[(AgentId, &str)]) -> BTreeMap<AgentId, TaskFormula> {
        list.iter().map(|(a, s)| (*a, parse_task(s).unwrap())).collect()
    }

    fn members(p: &ClusterPartition) -> Vec<Vec<AgentId>> {
        p.clusters.iter().map(|c| c.agents.clone()).collect()
    }

    #[test]
    fn example_one_clusters() {
        let t = tasks(&[
            (1, "F[0,5] dist(1,2) <= 1"),
            (2, "F[0,5] dist(2,[0,0]) <= 1"),
            (3, "F[0,5] dist(3,[4,4]) <= 1"),
        ]);
        let p = clusters(&t, &CommGraph::complete([1, 2, 3]));
        assert_eq!(members(&p), vec![vec![1, 2], vec![3]]);
        assert!(!p.clusters[0].case_a);
        assert!(p.clusters[1].case_a && p.clusters[1].comm_ok);
    }

    #[test]
    fn singletons_are_case_a() {
        let t = tasks(&[
            (1, "true"),
            (2, "F[0,1] dist(2,[0,0]) <= 1"),
            (5, "G[0,1] dist(5,[1,1]) <= 2"),
        ]);
        let p = clusters(&t, &CommGraph::default());
        assert_eq!(members(&p), vec![vec![1], vec![2], vec![5]]);
        assert!(p.clusters.iter().all(|c| c.case_a && c.comm_ok));
    }

    #[test]
    fn comm_coverage() {
        let t = tasks(&[(1, "F[0,5] dist(1,2) <= 1 && dist(1,3) <= 1")]);
        let line = CommGraph::from_edges([1, 2, 3], [(1, 2), (2, 3)]).unwrap();
        assert!(clusters(&t, &line).clusters[0].comm_ok);
        let split = CommGraph::from_edges([1, 2, 3], [(1, 2)]).unwrap();
        assert!(!clusters(&t, &split).clusters[0].comm_ok);
        assert_eq!(CommGraph::from_edges([1], [(1, 1)]), Err(TopologyError::SelfLoop(1)));
    }

    #[test]
    fn timing_check() {
        let phi4 = parse_phi("F[5,10] dist(4,5) <= 10 && dist(4,[50,70]) <= 10").unwrap();
        let phi5 = parse_phi("F[5,15] dist(5,[10,10]) <= 5").unwrap();
        let g5 = parse_phi("G[8,15] dist(5,[10,10]) <= 5").unwrap();
        let peers = |collab, unit| BTreeMap::from([(5, PeerStatus { collab, unit })]);
        assert!(stage2_timing_ok(4, &phi4, &peers(-1, None)));
        assert!(stage2_timing_ok(4, &phi4, &peers(0, Some(&phi5))));
        assert!(!stage2_timing_ok(4, &phi4, &peers(0, Some(&g5))));
        assert!(!stage2_timing_ok(4, &phi4, &peers(7, Some(&phi5))));
        assert!(!stage2_timing_ok(4, &phi4, &BTreeMap::new()));
        // equal deadlines do not leave time for the helper's own task
        let phi1 = parse_phi("G[0,15] dist(1,2) <= 10 && dist(1,3) <= 10").unwrap();
        let phi2 = parse_phi("F[5,15] dist(2,[90,90]) <= 5").unwrap();
        let phi3 = parse_phi("F[5,15] dist(3,[90,10]) <= 5").unwrap();
        let peers = BTreeMap::from([
            (
                2,
                PeerStatus {
                    collab: 0,
                    unit: Some(&phi2),
                },
            ),
            (
                3,
                PeerStatus {
                    collab: 0,
                    unit: Some(&phi3),
                },
            ),
        ]);
        assert!(!stage2_timing_ok(1, &phi1, &peers));
        let solo = parse_phi("F[0,1] dist(1,[0,0]) <= 1").unwrap();
        assert!(!stage2_timing_ok(1, &solo, &peers));
    }
}
