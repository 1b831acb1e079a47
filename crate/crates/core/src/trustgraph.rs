//! Trust graphs: recipients linked by consistent reports, sender clusters
//! for every uniformly reported value, bi-star pruning and the reachability
//! decision.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::distribution::{consistent, uniform_value, Report};
use crate::netmodel::{Config, PartyId, Payload};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrustGraphError {
    #[error("two reports claim owner {0}")]
    DuplicateOwner(PartyId),
    #[error("no reports to build a trust graph from")]
    NoReports,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrustNode {
    Recipient(PartyId),
    /// Member `member` (in `0..=d`) of the cluster standing for the sender
    /// asserting `value`.
    SenderCluster {
        value: Payload,
        member: usize,
    },
}

impl TrustNode {
    pub fn label(&self) -> String {
        match self {
            TrustNode::Recipient(p) => format!("R{}", p.0),
            TrustNode::SenderCluster { value, member } => format!("S{}#{}", value.to_hex(), member),
        }
    }

    fn cluster_value(&self) -> Option<&Payload> {
        match self {
            TrustNode::SenderCluster { value, .. } => Some(value),
            TrustNode::Recipient(_) => None,
        }
    }
}

/// Undirected simple graph over trust nodes. Nodes are kept in canonical
/// order; adjacency is by node position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustGraph {
    nodes: Vec<TrustNode>,
    index: BTreeMap<TrustNode, usize>,
    adj: Vec<BTreeSet<usize>>,
    h: usize,
    payload_len: usize,
}

impl TrustGraph {
    /// Edgeless graph on `nodes`; `h` is the bi-star size used by pruning and
    /// `payload_len` the length of the default decision.
    pub fn new(nodes: impl IntoIterator<Item = TrustNode>, h: usize, payload_len: usize) -> Self {
        let set: BTreeSet<TrustNode> = nodes.into_iter().collect();
        let nodes: Vec<TrustNode> = set.into_iter().collect();
        let index = nodes
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, n)| (n, i))
            .collect();
        let adj = vec![BTreeSet::new(); nodes.len()];
        TrustGraph {
            nodes,
            index,
            adj,
            h,
            payload_len,
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn payload_len(&self) -> usize {
        self.payload_len
    }

    pub fn nodes(&self) -> &[TrustNode] {
        &self.nodes
    }

    pub fn contains(&self, node: &TrustNode) -> bool {
        self.index.contains_key(node)
    }

    /// Adds an edge between two distinct existing nodes; returns whether it
    /// was new.
    pub fn add_edge(&mut self, a: &TrustNode, b: &TrustNode) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) if i != j => {
                self.adj[j].insert(i);
                self.adj[i].insert(j)
            }
            _ => false,
        }
    }

    pub fn remove_edge(&mut self, a: &TrustNode, b: &TrustNode) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => {
                self.adj[j].remove(&i);
                self.adj[i].remove(&j)
            }
            _ => false,
        }
    }

    pub fn has_edge(&self, a: &TrustNode, b: &TrustNode) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.adj[i].contains(&j),
            _ => false,
        }
    }

    pub fn edges(&self) -> Vec<(TrustNode, TrustNode)> {
        self.edge_positions()
            .into_iter()
            .map(|(i, j)| (self.nodes[i].clone(), self.nodes[j].clone()))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, node: &TrustNode) -> Vec<TrustNode> {
        self.index
            .get(node)
            .map(|&i| self.adj[i].iter().map(|&j| self.nodes[j].clone()).collect())
            .unwrap_or_default()
    }

    fn edge_positions(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.range(i + 1..).map(move |&j| (i, j)))
            .collect()
    }

    fn bistar_at(&self, i: usize, j: usize) -> bool {
        if !self.adj[i].contains(&j) {
            return false;
        }
        let needed = self.h.saturating_sub(2);
        self.adj[i].intersection(&self.adj[j]).take(needed).count() >= needed
    }

    /// Values of all sender clusters in the connected component of `from`.
    pub fn clusters_reachable_from(&self, from: &TrustNode) -> BTreeSet<Payload> {
        let Some(&start) = self.index.get(from) else {
            return BTreeSet::new();
        };
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut values = BTreeSet::new();
        while let Some(i) = queue.pop_front() {
            if let Some(v) = self.nodes[i].cluster_value() {
                values.insert(v.clone());
            }
            for &j in &self.adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        values
    }

    /// Two distinct cluster values joined by a path, if any component holds
    /// more than one.
    pub fn cluster_path(&self) -> Option<(Payload, Payload)> {
        let mut checked = BTreeSet::new();
        for node in &self.nodes {
            let Some(v) = node.cluster_value() else {
                continue;
            };
            if !checked.insert(v.clone()) {
                continue;
            }
            let reached = self.clusters_reachable_from(node);
            if let Some(w) = reached.iter().find(|w| *w != v) {
                return Some((v.clone(), w.clone()));
            }
        }
        None
    }

    /// Adjacency list, one line per node: `label: neighbour labels`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let _ = write!(out, "{}:", node.label());
            for &j in &self.adj[i] {
                let _ = write!(out, " {}", self.nodes[j].label());
            }
            out.push('\n');
        }
        out
    }
}

/// Trust graph of one level from the agreed reports of all its recipients.
pub fn build_trust_graph(agreed: &[Report], cfg: &Config) -> Result<TrustGraph, TrustGraphError> {
    let mut owners = BTreeSet::new();
    for r in agreed {
        if !owners.insert(r.owner) {
            return Err(TrustGraphError::DuplicateOwner(r.owner));
        }
    }
    let payload_len = agreed
        .iter()
        .flat_map(|r| r.values.values())
        .map(Payload::len)
        .next()
        .ok_or(TrustGraphError::NoReports)?;

    let uniform: Vec<Option<Payload>> = agreed.iter().map(uniform_value).collect();
    let cluster_values: BTreeSet<&Payload> = uniform.iter().flatten().collect();
    let cluster = |value: &Payload, member: usize| TrustNode::SenderCluster {
        value: value.clone(),
        member,
    };

    let mut nodes: Vec<TrustNode> = agreed
        .iter()
        .map(|r| TrustNode::Recipient(r.owner))
        .collect();
    for v in &cluster_values {
        nodes.extend((0..=cfg.d).map(|m| cluster(v, m)));
    }
    let mut g = TrustGraph::new(nodes, cfg.h, payload_len);

    for (x, a) in agreed.iter().enumerate() {
        for b in &agreed[x + 1..] {
            if consistent(a, b) && consistent(b, a) {
                g.add_edge(
                    &TrustNode::Recipient(a.owner),
                    &TrustNode::Recipient(b.owner),
                );
            }
        }
    }
    for v in &cluster_values {
        for m in 0..=cfg.d {
            for m2 in m + 1..=cfg.d {
                g.add_edge(&cluster(v, m), &cluster(v, m2));
            }
        }
    }
    for (r, u) in agreed.iter().zip(&uniform) {
        if let Some(v) = u {
            for m in 0..=cfg.d {
                g.add_edge(&TrustNode::Recipient(r.owner), &cluster(v, m));
            }
        }
    }
    Ok(g)
}

/// True iff `a`-`b` is an edge and the two centres share at least `h - 2`
/// neighbours, i.e. they span an `h`-node bi-star.
pub fn has_bistar(g: &TrustGraph, a: &TrustNode, b: &TrustNode) -> bool {
    match (g.index.get(a), g.index.get(b)) {
        (Some(&i), Some(&j)) if i != j => g.bistar_at(i, j),
        _ => false,
    }
}

/// Removes edges outside every bi-star until none is left.
///
/// The removal condition only gets easier to meet as edges disappear, so
/// removing every failing edge per pass reaches the same fixpoint as any
/// one-at-a-time order.
pub fn prune(g: &TrustGraph) -> TrustGraph {
    let mut g = g.clone();
    loop {
        let doomed: Vec<(usize, usize)> = g
            .edge_positions()
            .into_iter()
            .filter(|&(i, j)| !g.bistar_at(i, j))
            .collect();
        if doomed.is_empty() {
            return g;
        }
        for (i, j) in doomed {
            g.adj[i].remove(&j);
            g.adj[j].remove(&i);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub value: Payload,
    /// Set when more than one sender cluster was reachable; the value is then
    /// the default.
    pub conflicting: Option<BTreeSet<Payload>>,
}

/// The value of the unique reachable sender cluster, or zeros.
pub fn decide(g: &TrustGraph, me: PartyId) -> Decision {
    let reached = g.clusters_reachable_from(&TrustNode::Recipient(me));
    match reached.len() {
        1 => Decision {
            value: reached.into_iter().next().expect("one value"),
            conflicting: None,
        },
        0 => Decision {
            value: Payload::zeros(g.payload_len),
            conflicting: None,
        },
        _ => Decision {
            value: Payload::zeros(g.payload_len),
            conflicting: Some(reached),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::KSet;

    fn r(i: usize) -> TrustNode {
        TrustNode::Recipient(PartyId(i))
    }

    fn s(bit: bool, m: usize) -> TrustNode {
        TrustNode::SenderCluster {
            value: Payload::bit(bit),
            member: m,
        }
    }

    fn graph(n: usize, h: usize, edges: &[(usize, usize)]) -> TrustGraph {
        let mut g = TrustGraph::new((0..n).map(r), h, 1);
        for &(a, b) in edges {
            g.add_edge(&r(a), &r(b));
        }
        g
    }

    fn complete(n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect()
    }

    fn cycle(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|a| (a, (a + 1) % n)).collect()
    }

    #[test]
    fn bistar_examples() {
        let g = graph(2, 2, &[(0, 1)]);
        assert!(has_bistar(&g, &r(0), &r(1)));

        let g = graph(4, 4, &complete(4));
        assert!(complete(4)
            .iter()
            .all(|&(a, b)| has_bistar(&g, &r(a), &r(b))));

        let g = graph(5, 3, &cycle(5));
        assert!(cycle(5).iter().all(|&(a, b)| !has_bistar(&g, &r(a), &r(b))));
        assert!(!has_bistar(&g, &r(0), &r(2)));
    }

    #[test]
    fn prune_examples() {
        let k4 = graph(4, 4, &complete(4));
        assert_eq!(prune(&k4), k4);

        assert_eq!(prune(&graph(5, 3, &cycle(5))).edge_count(), 0);

        let mut edges = complete(3);
        edges.push((2, 3));
        let pruned = prune(&graph(4, 3, &edges));
        assert_eq!(pruned.edge_count(), 3);
        assert!(!pruned.has_edge(&r(2), &r(3)));
    }

    #[test]
    fn prune_cascades() {
        // Two triangles sharing vertex 2 plus a bridge: with h = 4 nothing
        // survives because no edge has two common neighbours.
        let edges = [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (2, 4), (4, 5)];
        assert_eq!(prune(&graph(6, 4, &edges)).edge_count(), 0);
        // With h = 3 the triangles stay and the bridge goes.
        let pruned = prune(&graph(6, 3, &edges));
        assert_eq!(pruned.edge_count(), 6);
        assert!(!pruned.has_edge(&r(4), &r(5)));
    }

    fn report(owner: usize, entries: &[(&[usize], bool)]) -> Report {
        Report::new(
            PartyId(owner),
            entries
                .iter()
                .map(|(set, v)| {
                    let set: KSet = set.iter().copied().map(PartyId).collect();
                    (set, Payload::bit(*v))
                })
                .collect(),
        )
    }

    #[test]
    fn compliant_distribution_builds_clique_plus_cluster() {
        // k = 2, recipients 1..=3, sender input 1, two missing parties.
        let reports = vec![
            report(1, &[(&[1, 2], true), (&[1, 3], true)]),
            report(2, &[(&[1, 2], true), (&[2, 3], true)]),
            report(3, &[(&[1, 3], true), (&[2, 3], true)]),
        ];
        let cfg = Config::with_present(2, 3, 2, 4).unwrap();
        assert_eq!(cfg.d, 1);
        let g = build_trust_graph(&reports, &cfg).unwrap();
        assert_eq!(g.nodes().len(), 5);
        assert_eq!(g.edge_count(), 10);
        assert_eq!(
            g.dump(),
            "R1: R2 R3 S1#0 S1#1\nR2: R1 R3 S1#0 S1#1\nR3: R1 R2 S1#0 S1#1\n\
             S1#0: R1 R2 R3 S1#1\nS1#1: R1 R2 R3 S1#0\n"
        );
        let pruned = prune(&g);
        assert_eq!(pruned, g);
        assert_eq!(decide(&pruned, PartyId(2)).value, Payload::bit(true));
    }

    #[test]
    fn top_level_clusters_are_single_nodes() {
        let reports = vec![report(1, &[(&[1], false)]), report(2, &[(&[2], false)])];
        let cfg = Config::top_level(1, 2, 1).unwrap();
        let g = build_trust_graph(&reports, &cfg).unwrap();
        assert_eq!(g.nodes(), &[r(1), r(2), s(false, 0)]);
    }

    #[test]
    fn opposed_uniform_recipients_get_separate_clusters() {
        let reports = vec![
            report(1, &[(&[1, 2], false), (&[1, 3], false)]),
            report(2, &[(&[1, 2], true), (&[2, 3], true)]),
            report(3, &[(&[1, 3], false), (&[2, 3], false)]),
        ];
        let cfg = Config::top_level(2, 2, 2).unwrap();
        let g = build_trust_graph(&reports, &cfg).unwrap();
        let expected: BTreeSet<(TrustNode, TrustNode)> = [
            (r(1), r(3)),
            (r(1), s(false, 0)),
            (r(2), s(true, 0)),
            (r(3), s(false, 0)),
        ]
        .into_iter()
        .collect();
        assert_eq!(g.edges().into_iter().collect::<BTreeSet<_>>(), expected);
        assert!(g.cluster_path().is_none());
    }

    #[test]
    fn duplicate_owners_are_rejected() {
        let reports = vec![report(1, &[(&[1], true)]), report(1, &[(&[1], true)])];
        let cfg = Config::top_level(1, 2, 0).unwrap();
        assert_eq!(
            build_trust_graph(&reports, &cfg),
            Err(TrustGraphError::DuplicateOwner(PartyId(1)))
        );
    }

    #[test]
    fn decide_defaults_and_flags_conflicts() {
        let mut g = TrustGraph::new([r(1), r(2), s(false, 0), s(true, 0)], 2, 1);
        assert_eq!(decide(&g, PartyId(1)).value, Payload::bit(false));
        assert_eq!(decide(&g, PartyId(1)).conflicting, None);

        g.add_edge(&r(1), &s(true, 0));
        assert_eq!(decide(&g, PartyId(1)).value, Payload::bit(true));

        g.add_edge(&r(1), &r(2));
        g.add_edge(&r(2), &s(false, 0));
        let d = decide(&g, PartyId(1));
        assert_eq!(d.value, Payload::bit(false));
        assert_eq!(d.conflicting.map(|c| c.len()), Some(2));
        assert!(g.cluster_path().is_some());
    }
}
