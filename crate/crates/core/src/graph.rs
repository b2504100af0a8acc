//! Observation graph, spanning trees, fundamental cycles and misclosures.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::equations::{self, CoordMap};
use crate::fieldbook::{DataSet, ObservationKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("dataset has no observations")]
    EmptyDataset,
    #[error("station {0} is not in the graph")]
    RootUnknown(String),
    #[error("network is disconnected into {} components", components.len())]
    DisconnectedNetwork { components: Vec<Vec<String>> },
    #[error("cycle leg {0} has no distance observation")]
    MissingLegObservation(String),
    #[error("no coordinates for station {0}")]
    MissingCoordinates(String),
}

type Result<T> = std::result::Result<T, GraphError>;

/// One observed leg. Direction is that of its first observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub kinds: BTreeSet<ObservationKind>,
}

impl GraphEdge {
    fn other(&self, node: &str) -> &str {
        if self.from == node {
            &self.to
        } else {
            &self.from
        }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkGraph {
    /// Stations in first-reference order.
    pub nodes: Vec<String>,
    pub edges: Vec<GraphEdge>,
    #[serde(skip)]
    incident: HashMap<String, Vec<usize>>,
}

impl NetworkGraph {
    /// Builds the graph without checking connectivity.
    pub fn from_dataset(dataset: &DataSet) -> Self {
        let mut edges: Vec<GraphEdge> = Vec::new();
        let mut lookup: HashMap<(String, String), usize> = HashMap::new();
        for obs in dataset.observations() {
            let legs: Vec<(&str, &str)> = match obs.kind {
                ObservationKind::Angle => {
                    let mut v = vec![(obs.at.as_str(), obs.from_target.as_str())];
                    if let Some(to) = &obs.to_target {
                        v.push((obs.at.as_str(), to.as_str()));
                    }
                    v
                }
                ObservationKind::Distance => vec![(obs.at.as_str(), obs.from_target.as_str())],
            };
            for (a, b) in legs {
                let key = if a < b {
                    (a.to_owned(), b.to_owned())
                } else {
                    (b.to_owned(), a.to_owned())
                };
                let i = *lookup.entry(key).or_insert_with(|| {
                    edges.push(GraphEdge {
                        from: a.to_owned(),
                        to: b.to_owned(),
                        kinds: BTreeSet::new(),
                    });
                    edges.len() - 1
                });
                edges[i].kinds.insert(obs.kind);
            }
        }
        Self::from_parts(dataset.stations().to_vec(), edges)
    }

    /// Graph over explicit nodes and directed edges; repeated pairs are merged.
    pub fn from_edges<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Self {
        let mut out: Vec<GraphEdge> = Vec::new();
        let mut seen = BTreeSet::new();
        for (a, b) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            let key = if a < b { (a, b) } else { (b, a) };
            if a != b && seen.insert(key) {
                out.push(GraphEdge {
                    from: a.to_owned(),
                    to: b.to_owned(),
                    kinds: BTreeSet::new(),
                });
            }
        }
        let mut names: Vec<String> = nodes.iter().map(|n| n.as_ref().to_owned()).collect();
        for e in &out {
            for n in [&e.from, &e.to] {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        Self::from_parts(names, out)
    }

    fn from_parts(nodes: Vec<String>, edges: Vec<GraphEdge>) -> Self {
        let mut incident: HashMap<String, Vec<usize>> = nodes.iter().map(|n| (n.clone(), Vec::new())).collect();
        for (i, e) in edges.iter().enumerate() {
            incident.entry(e.from.clone()).or_default().push(i);
            incident.entry(e.to.clone()).or_default().push(i);
        }
        Self { nodes, edges, incident }
    }

    pub fn contains(&self, node: &str) -> bool {
        self.incident.contains_key(node)
    }

    fn incident(&self, node: &str) -> &[usize] {
        self.incident.get(node).map_or(&[], Vec::as_slice)
    }

    /// Connected components (edge direction ignored), each sorted, ordered by
    /// their smallest member.
    pub fn components(&self) -> Vec<Vec<String>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut sorted = self.nodes.clone();
        sorted.sort();
        for start in &sorted {
            if seen.contains(start.as_str()) {
                continue;
            }
            let mut comp = vec![start.clone()];
            seen.insert(start.as_str());
            let mut queue = VecDeque::from([start.as_str()]);
            while let Some(u) = queue.pop_front() {
                for &e in self.incident(u) {
                    let v = self.edges[e].other(u);
                    if seen.insert(v) {
                        comp.push(v.to_owned());
                        queue.push_back(v);
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
        out
    }
}

/// Builds the observation graph, failing when it is not connected.
pub fn build_graph(dataset: &DataSet) -> Result<NetworkGraph> {
    if dataset.is_empty() {
        return Err(GraphError::EmptyDataset);
    }
    let g = NetworkGraph::from_dataset(dataset);
    let components = g.components();
    if components.len() > 1 {
        return Err(GraphError::DisconnectedNetwork { components });
    }
    Ok(g)
}

/// Tree edge in discovery direction `parent -> child`, referencing the graph edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreeEdge {
    pub parent: String,
    pub child: String,
    pub edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanningTree {
    pub root: String,
    pub span_tree: Vec<TreeEdge>,
    pub span_index: Vec<String>,
    /// Non-tree edges of the component, as graph edges in observation order.
    pub back_edges: Vec<usize>,
    #[serde(skip)]
    edges: Vec<GraphEdge>,
}

impl SpanningTree {
    pub fn edge(&self, i: usize) -> &GraphEdge {
        &self.edges[i]
    }

    pub fn tree_labels(&self) -> Vec<String> {
        self.span_tree
            .iter()
            .map(|t| format!("{}{}", t.parent, t.child))
            .collect()
    }

    pub fn back_labels(&self) -> Vec<String> {
        self.back_edges.iter().map(|&e| self.edges[e].label()).collect()
    }

    fn component_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.span_tree
            .iter()
            .map(|t| t.edge)
            .chain(self.back_edges.iter().copied())
    }
}

fn finish_tree(graph: &NetworkGraph, root: &str, span_tree: Vec<TreeEdge>, span_index: Vec<String>) -> SpanningTree {
    let tree_set: BTreeSet<usize> = span_tree.iter().map(|t| t.edge).collect();
    let members: BTreeSet<&str> = span_index.iter().map(String::as_str).collect();
    let back_edges = graph
        .edges
        .iter()
        .enumerate()
        .filter(|(i, e)| !tree_set.contains(i) && members.contains(e.from.as_str()))
        .map(|(i, _)| i)
        .collect();
    SpanningTree {
        root: root.to_owned(),
        span_tree,
        span_index,
        back_edges,
        edges: graph.edges.clone(),
    }
}

/// Depth-first tree by forward-tracking and back-tracking.
///
/// From the current node the first edge, in observation order, that leaves
/// it along the observed direction and reaches an unvisited node is added.
/// At a leaf the search retraces the discovery path to the nearest node with
/// an unexplored edge. If the observed directions alone leave part of the
/// component unreached, the search resumes over the visited nodes allowing
/// edges to be traversed against their observed direction.
pub fn dfs_spanning_tree(graph: &NetworkGraph, root: &str) -> Result<SpanningTree> {
    if !graph.contains(root) {
        return Err(GraphError::RootUnknown(root.to_owned()));
    }
    let component_size = graph
        .components()
        .into_iter()
        .find(|c| c.iter().any(|n| n == root))
        .map_or(1, |c| c.len());
    let mut visited: BTreeSet<String> = BTreeSet::from([root.to_owned()]);
    let mut span_index = vec![root.to_owned()];
    let mut span_tree = Vec::new();
    for allow_reverse in [false, true] {
        let mut path: Vec<String> = span_index.clone();
        while let Some(u) = path.last().cloned() {
            let next = graph.incident(&u).iter().copied().find(|&e| {
                let edge = &graph.edges[e];
                (edge.from == u || allow_reverse) && !visited.contains(edge.other(&u))
            });
            match next {
                Some(e) => {
                    let v = graph.edges[e].other(&u).to_owned();
                    visited.insert(v.clone());
                    span_index.push(v.clone());
                    span_tree.push(TreeEdge {
                        parent: u,
                        child: v.clone(),
                        edge: e,
                    });
                    path.push(v);
                }
                None => {
                    path.pop();
                }
            }
        }
        if span_index.len() == component_size {
            break;
        }
    }
    Ok(finish_tree(graph, root, span_tree, span_index))
}

/// Breadth-first tree; every direction leaving a node is investigated before
/// moving one layer outward. Non-tree edges are the cross edges.
pub fn bfs_spanning_tree(graph: &NetworkGraph, root: &str) -> Result<SpanningTree> {
    if !graph.contains(root) {
        return Err(GraphError::RootUnknown(root.to_owned()));
    }
    let mut visited: BTreeSet<String> = BTreeSet::from([root.to_owned()]);
    let mut span_index = vec![root.to_owned()];
    let mut span_tree = Vec::new();
    let mut queue = VecDeque::from([root.to_owned()]);
    while let Some(u) = queue.pop_front() {
        for &e in graph.incident(&u) {
            let v = graph.edges[e].other(&u).to_owned();
            if visited.insert(v.clone()) {
                span_index.push(v.clone());
                span_tree.push(TreeEdge {
                    parent: u.clone(),
                    child: v.clone(),
                    edge: e,
                });
                queue.push_back(v);
            }
        }
    }
    Ok(finish_tree(graph, root, span_tree, span_index))
}

/// One tree per component, rooted at the smallest fixed station of the
/// component, or at its smallest station when none is fixed.
pub fn spanning_forest(
    graph: &NetworkGraph,
    fixed: &BTreeSet<String>,
    build: fn(&NetworkGraph, &str) -> Result<SpanningTree>,
) -> Vec<SpanningTree> {
    graph
        .components()
        .iter()
        .map(|comp| {
            let root = comp.iter().find(|n| fixed.contains(*n)).unwrap_or(&comp[0]);
            build(graph, root).expect("component member is a graph node")
        })
        .collect()
}

/// Edge of a cycle; `direction` is +1 when traversed with the observed
/// direction and -1 against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CycleEdge {
    pub from: String,
    pub to: String,
    pub direction: i8,
    pub edge: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cycle {
    /// Closed walk, first node repeated at the end.
    pub node_sequence: Vec<String>,
    pub edges: Vec<CycleEdge>,
    /// The non-tree edge this cycle introduces.
    pub closing_edge: usize,
}

impl Cycle {
    pub fn label(&self) -> String {
        self.node_sequence.concat()
    }

    pub fn node_set(&self) -> BTreeSet<&str> {
        self.node_sequence.iter().map(String::as_str).collect()
    }

    /// Number of legs.
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// How a non-tree edge `(u, v)` is closed into a loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClosureRule {
    /// Shortest route from `u` back to `v` over tree edges and the non-tree
    /// edges already closed. Each cycle still introduces exactly one new
    /// non-tree edge, so the set is a cycle basis.
    #[default]
    ShortestClosure,
    /// The unique tree path from `u` to `v`.
    TreePath,
}

/// One cycle per non-tree edge, with the default closure rule.
pub fn fundamental_cycles(tree: &SpanningTree) -> Vec<Cycle> {
    fundamental_cycles_with(tree, ClosureRule::default())
}

pub fn fundamental_cycles_with(tree: &SpanningTree, rule: ClosureRule) -> Vec<Cycle> {
    let mut allowed: BTreeSet<usize> = tree.span_tree.iter().map(|t| t.edge).collect();
    let mut adjacency: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for e in tree.component_edges() {
        let ge = &tree.edges[e];
        adjacency.entry(&ge.from).or_default().push(e);
        adjacency.entry(&ge.to).or_default().push(e);
    }
    for list in adjacency.values_mut() {
        list.sort_unstable();
    }
    let mut out = Vec::new();
    for &closing in &tree.back_edges {
        let ge = &tree.edges[closing];
        let (u, v) = (ge.from.as_str(), ge.to.as_str());
        let route = match rule {
            ClosureRule::ShortestClosure => shortest_route(&tree.edges, &adjacency, &allowed, u, v),
            ClosureRule::TreePath => tree_route(tree, u, v),
        };
        let Some(route) = route else { continue };
        let mut nodes = vec![u.to_owned()];
        let mut edges = Vec::new();
        for e in route.into_iter().chain(std::iter::once(closing)) {
            let last = nodes.last().expect("nonempty").clone();
            let edge = &tree.edges[e];
            let next = edge.other(&last).to_owned();
            edges.push(CycleEdge {
                from: last.clone(),
                to: next.clone(),
                direction: if edge.from == last { 1 } else { -1 },
                edge: e,
            });
            nodes.push(next);
        }
        out.push(Cycle {
            node_sequence: nodes,
            edges,
            closing_edge: closing,
        });
        if rule == ClosureRule::ShortestClosure {
            allowed.insert(closing);
        }
    }
    out
}

/// Breadth-first route `u -> v` over `allowed` edges; ties go to the
/// earliest-observed edge.
fn shortest_route(
    edges: &[GraphEdge],
    adjacency: &BTreeMap<&str, Vec<usize>>,
    allowed: &BTreeSet<usize>,
    u: &str,
    v: &str,
) -> Option<Vec<usize>> {
    let mut via: HashMap<&str, usize> = HashMap::new();
    let mut seen = BTreeSet::from([u]);
    let mut queue = VecDeque::from([u]);
    while let Some(n) = queue.pop_front() {
        if n == v {
            break;
        }
        for &e in adjacency.get(n).map_or(&[][..], Vec::as_slice) {
            if !allowed.contains(&e) {
                continue;
            }
            let m = edges[e].other(n);
            if seen.insert(m) {
                via.insert(m, e);
                queue.push_back(m);
            }
        }
    }
    let mut route = Vec::new();
    let mut n = v;
    while n != u {
        let e = *via.get(n)?;
        route.push(e);
        n = edges[e].other(n);
    }
    route.reverse();
    Some(route)
}

fn tree_route(tree: &SpanningTree, u: &str, v: &str) -> Option<Vec<usize>> {
    let parent: HashMap<&str, (&str, usize)> = tree
        .span_tree
        .iter()
        .map(|t| (t.child.as_str(), (t.parent.as_str(), t.edge)))
        .collect();
    let up_u = ancestry(&parent, u);
    let up_v = ancestry(&parent, v);
    let depth_v: HashMap<&str, usize> = up_v.iter().enumerate().map(|(i, (n, _))| (*n, i)).collect();
    let (iu, iv) = up_u
        .iter()
        .enumerate()
        .find_map(|(i, (n, _))| depth_v.get(n).map(|&j| (i, j)))?;
    // edges are stored on the child side of each step
    let mut route: Vec<usize> = up_u[..iu].iter().filter_map(|(_, e)| *e).collect();
    let down: Vec<usize> = up_v[..iv].iter().filter_map(|(_, e)| *e).collect();
    route.extend(down.into_iter().rev());
    Some(route)
}

/// `node, parent, grandparent, ...` with the edge to each node's parent.
fn ancestry<'a>(parent: &HashMap<&'a str, (&'a str, usize)>, mut n: &'a str) -> Vec<(&'a str, Option<usize>)> {
    let mut chain = Vec::new();
    loop {
        match parent.get(n) {
            Some(&(p, e)) => {
                chain.push((n, Some(e)));
                n = p;
            }
            None => {
                chain.push((n, None));
                return chain;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Misclosure {
    pub de: f64,
    pub dn: f64,
    pub length: f64,
    /// `|(dE, dN)| / length`.
    pub closure_ratio: f64,
}

impl Misclosure {
    pub fn linear(&self) -> f64 {
        self.de.hypot(self.dn)
    }
}

impl fmt::Display for Misclosure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dE {:+.4} m  dN {:+.4} m  ratio {}",
            self.de,
            self.dn,
            format_ratio(self.closure_ratio)
        )
    }
}

/// `1:n` form of a closure ratio; ratios at round-off level print as `1:inf`.
pub fn format_ratio(ratio: f64) -> String {
    if ratio <= 1e-12 || !ratio.is_finite() {
        "1:inf".to_owned()
    } else {
        format!("1:{:.0}", 1.0 / ratio)
    }
}

/// Vector sum of the legs `(l sinθ, l cosθ)` around the cycle, with `l`
/// observed and `θ` from the supplied coordinates.
pub fn cycle_misclosure(cycle: &Cycle, dataset: &DataSet, coords: &CoordMap) -> Result<Misclosure> {
    let (mut de, mut dn, mut length) = (0.0, 0.0, 0.0);
    for leg in &cycle.edges {
        let l = dataset
            .distance_between(&leg.from, &leg.to)
            .ok_or_else(|| GraphError::MissingLegObservation(format!("{}-{}", leg.from, leg.to)))?
            .value;
        let a = coords
            .get(&leg.from)
            .ok_or_else(|| GraphError::MissingCoordinates(leg.from.clone()))?;
        let b = coords
            .get(&leg.to)
            .ok_or_else(|| GraphError::MissingCoordinates(leg.to.clone()))?;
        let theta = equations::bearing(*a, *b).ok_or_else(|| GraphError::MissingCoordinates(leg.to.clone()))?;
        de += l * theta.sin();
        dn += l * theta.cos();
        length += l;
    }
    Ok(Misclosure {
        de,
        dn,
        length,
        closure_ratio: if length > 0.0 { de.hypot(dn) / length } else { 0.0 },
    })
}
