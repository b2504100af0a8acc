use std::collections::BTreeSet;

use netadjust::fieldbook::SigmaPolicy;
use netadjust::graph::{self, ClosureRule, Cycle, NetworkGraph, SpanningTree};
use netadjust::synth::SyntheticNetwork;
use proptest::prelude::*;

/// Connected simple graph: a random tree plus extra chords.
fn connected_graph() -> impl Strategy<Value = (Vec<String>, Vec<(String, String)>)> {
    (2usize..12).prop_flat_map(|n| {
        let parents = proptest::collection::vec(any::<prop::sample::Index>(), n - 1);
        let chords = proptest::collection::vec((0..n, 0..n), 0..2 * n);
        (parents, chords).prop_map(move |(parents, chords)| {
            let name = |i: usize| format!("N{i}");
            let mut seen = BTreeSet::new();
            let mut edges = Vec::new();
            for (k, p) in parents.iter().enumerate() {
                let child = k + 1;
                let parent = p.index(child);
                seen.insert((parent.min(child), parent.max(child)));
                edges.push((name(parent), name(child)));
            }
            for (a, b) in chords {
                if a != b && seen.insert((a.min(b), a.max(b))) {
                    edges.push((name(a), name(b)));
                }
            }
            ((0..n).map(name).collect(), edges)
        })
    })
}

fn check_walk(tree: &SpanningTree, c: &Cycle) -> Result<(), TestCaseError> {
    prop_assert!(c.node_sequence.len() >= 4);
    prop_assert_eq!(c.node_sequence.first(), c.node_sequence.last());
    prop_assert_eq!(c.edges.len() + 1, c.node_sequence.len());
    let mut used = BTreeSet::new();
    for (k, e) in c.edges.iter().enumerate() {
        prop_assert_eq!(&e.from, &c.node_sequence[k]);
        prop_assert_eq!(&e.to, &c.node_sequence[k + 1]);
        let g = tree.edge(e.edge);
        let forward = g.from == e.from && g.to == e.to;
        let backward = g.from == e.to && g.to == e.from;
        prop_assert!(forward || backward);
        prop_assert_eq!(e.direction, if forward { 1 } else { -1 });
        prop_assert!(used.insert(e.edge), "edge repeated in cycle");
    }
    let inner: BTreeSet<&String> = c.node_sequence[1..].iter().collect();
    prop_assert_eq!(inner.len(), c.node_sequence.len() - 1, "walk is not simple");
    Ok(())
}

proptest! {
    #[test]
    fn cycle_count_is_cyclomatic_number((nodes, edges) in connected_graph()) {
        let g = NetworkGraph::from_edges(&nodes, &edges);
        prop_assert_eq!(g.components().len(), 1);
        let expected = g.edges.len() + 1 - g.nodes.len();
        for tree in [graph::dfs_spanning_tree(&g, "N0").unwrap(), graph::bfs_spanning_tree(&g, "N0").unwrap()] {
            prop_assert_eq!(tree.span_tree.len(), g.nodes.len() - 1);
            prop_assert_eq!(tree.back_edges.len(), expected);
            for rule in [ClosureRule::ShortestClosure, ClosureRule::TreePath] {
                let cycles = graph::fundamental_cycles_with(&tree, rule);
                prop_assert_eq!(cycles.len(), expected);
                for c in &cycles {
                    check_walk(&tree, c)?;
                }
            }
        }
    }

    #[test]
    fn tree_path_cycles_hold_one_non_tree_edge((nodes, edges) in connected_graph()) {
        let g = NetworkGraph::from_edges(&nodes, &edges);
        let tree = graph::dfs_spanning_tree(&g, "N0").unwrap();
        let tree_edges: BTreeSet<usize> = tree.span_tree.iter().map(|t| t.edge).collect();
        let closing: BTreeSet<usize> = graph::fundamental_cycles_with(&tree, ClosureRule::TreePath)
            .iter()
            .map(|c| {
                let extra: Vec<usize> = c.edges.iter().map(|e| e.edge).filter(|e| !tree_edges.contains(e)).collect();
                assert_eq!(extra, [c.closing_edge]);
                c.closing_edge
            })
            .collect();
        prop_assert_eq!(closing, tree.back_edges.iter().copied().collect::<BTreeSet<_>>());
    }

    #[test]
    fn shortest_closure_introduces_one_new_edge_each((nodes, edges) in connected_graph()) {
        let g = NetworkGraph::from_edges(&nodes, &edges);
        let tree = graph::dfs_spanning_tree(&g, "N0").unwrap();
        let mut allowed: BTreeSet<usize> = tree.span_tree.iter().map(|t| t.edge).collect();
        for c in graph::fundamental_cycles(&tree) {
            let new: Vec<usize> = c.edges.iter().map(|e| e.edge).filter(|e| !allowed.contains(e)).collect();
            prop_assert_eq!(new, vec![c.closing_edge]);
            allowed.insert(c.closing_edge);
        }
    }

    #[test]
    fn cycles_are_independent_over_gf2((nodes, edges) in connected_graph()) {
        let g = NetworkGraph::from_edges(&nodes, &edges);
        let tree = graph::bfs_spanning_tree(&g, "N0").unwrap();
        // Gaussian elimination on edge-incidence bit vectors
        let mut basis: Vec<Vec<bool>> = Vec::new();
        for c in graph::fundamental_cycles(&tree) {
            let mut v = vec![false; g.edges.len()];
            let mut degree = vec![0usize; g.nodes.len()];
            for e in &c.edges {
                v[e.edge] ^= true;
                for s in [&e.from, &e.to] {
                    degree[g.nodes.iter().position(|n| n == s).unwrap()] += 1;
                }
            }
            prop_assert!(degree.iter().all(|d| d % 2 == 0));
            for b in &basis {
                let pivot = b.iter().position(|&x| x).unwrap();
                if v[pivot] {
                    for (x, y) in v.iter_mut().zip(b) {
                        *x ^= *y;
                    }
                }
            }
            prop_assert!(v.iter().any(|&x| x), "dependent cycle");
            basis.push(v);
            basis.sort_by_key(|b| b.iter().position(|&x| x));
            // keep a reduced echelon form
            let n = basis.len();
            for i in 0..n {
                let p = basis[i].iter().position(|&x| x).unwrap();
                for j in 0..n {
                    if i != j && basis[j][p] {
                        let bi = basis[i].clone();
                        for (x, y) in basis[j].iter_mut().zip(&bi) {
                            *x ^= *y;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn discovery_order_is_valid((nodes, edges) in connected_graph()) {
        let g = NetworkGraph::from_edges(&nodes, &edges);
        for tree in [graph::dfs_spanning_tree(&g, "N0").unwrap(), graph::bfs_spanning_tree(&g, "N0").unwrap()] {
            prop_assert_eq!(&tree.span_index[0], "N0");
            let set: BTreeSet<&String> = tree.span_index.iter().collect();
            prop_assert_eq!(set.len(), g.nodes.len());
            for t in &tree.span_tree {
                let pi = tree.span_index.iter().position(|n| *n == t.parent).unwrap();
                let ci = tree.span_index.iter().position(|n| *n == t.child).unwrap();
                prop_assert!(pi < ci);
            }
        }
    }
}

#[test]
fn bfs_cycles_no_longer_than_dfs_on_braced() {
    let ds = SyntheticNetwork::braced().dataset(&SigmaPolicy::default());
    let g = graph::build_graph(&ds).unwrap();
    let mean = |t: SpanningTree| {
        let c = graph::fundamental_cycles(&t);
        c.iter().map(Cycle::len).sum::<usize>() as f64 / c.len() as f64
    };
    let dfs = mean(graph::dfs_spanning_tree(&g, "X").unwrap());
    let bfs = mean(graph::bfs_spanning_tree(&g, "X").unwrap());
    assert!(bfs <= dfs, "bfs {bfs} dfs {dfs}");
    assert_eq!((bfs, dfs), (3.0, 3.0));
}

#[test]
fn braced_tree_path_cycles() {
    let ds = SyntheticNetwork::braced().dataset(&SigmaPolicy::default());
    let g = graph::build_graph(&ds).unwrap();
    let tree = graph::dfs_spanning_tree(&g, "X").unwrap();
    let labels: Vec<String> = graph::fundamental_cycles_with(&tree, ClosureRule::TreePath)
        .iter()
        .map(Cycle::label)
        .collect();
    assert_eq!(labels, ["XABX", "XABYX", "ABCA", "CBYC", "CBYDC"]);
}

#[test]
fn exact_network_closes() {
    let net = SyntheticNetwork::braced();
    let ds = net.dataset(&SigmaPolicy::default());
    let g = graph::build_graph(&ds).unwrap();
    let tree = graph::dfs_spanning_tree(&g, "X").unwrap();
    for c in graph::fundamental_cycles(&tree) {
        let m = graph::cycle_misclosure(&c, &ds, &net.truth).unwrap();
        assert!(m.linear() < 1e-9, "{} {}", c.label(), m.linear());
    }
}

#[test]
fn disconnected_dataset_rejected() {
    let g = NetworkGraph::from_edges(&["A", "B", "C", "D"], &[("A", "B"), ("C", "D")]);
    assert_eq!(g.components().len(), 2);
    let f = graph::spanning_forest(&g, &BTreeSet::from(["C".to_owned()]), graph::dfs_spanning_tree);
    let roots: Vec<&str> = f.iter().map(|t| t.root.as_str()).collect();
    assert_eq!(roots, ["A", "C"]);
}
