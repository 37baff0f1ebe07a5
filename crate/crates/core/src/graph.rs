//! Interaction graph, leakage-edge removal and second-order biased random
//! walks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected weighted graph with string node ids. Adjacency lists are kept
/// sorted by neighbor index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpiGraph {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    adj: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeInsert {
    Added,
    Replaced { old_weight: f64 },
    SelfLoop,
}

impl PpiGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        self.adj.push(Vec::new());
        i
    }

    /// Inserts or reweights the undirected edge `{a, b}`. Self-loops are not
    /// stored and are reported as [`EdgeInsert::SelfLoop`].
    pub fn insert_edge(&mut self, a: &str, b: &str, weight: f64) -> Result<EdgeInsert> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::Input(format!(
                "edge {a}–{b}: weight must be positive and finite, got {weight}"
            )));
        }
        let u = self.add_node(a);
        let v = self.add_node(b);
        if u == v {
            return Ok(EdgeInsert::SelfLoop);
        }
        let old = Self::upsert(&mut self.adj[u], v, weight);
        Self::upsert(&mut self.adj[v], u, weight);
        Ok(match old {
            Some(old_weight) => EdgeInsert::Replaced { old_weight },
            None => EdgeInsert::Added,
        })
    }

    fn upsert(list: &mut Vec<(usize, f64)>, v: usize, w: f64) -> Option<f64> {
        match list.binary_search_by_key(&v, |&(n, _)| n) {
            Ok(pos) => Some(std::mem::replace(&mut list[pos].1, w)),
            Err(pos) => {
                list.insert(pos, (v, w));
                None
            }
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, v: usize) -> &str {
        &self.ids[v]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let list = &self.adj[u];
        list.binary_search_by_key(&v, |&(n, _)| n)
            .ok()
            .map(|p| list[p].1)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.weight(u, v).is_some()
    }

    pub fn has_edge_ids(&self, a: &str, b: &str) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(u), Some(v)) => self.has_edge(u, v),
            _ => false,
        }
    }

    /// Edges as `(u, v, weight)` with `u < v`, in index order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (u, list) in self.adj.iter().enumerate() {
            out.extend(
                list.iter()
                    .filter(|&&(v, _)| u < v)
                    .map(|&(v, w)| (u, v, w)),
            );
        }
        out
    }
}

/// Copy of `graph` without any edge whose endpoints appear together in
/// `eval_pairs` (in either orientation). Returns the graph and the number of
/// distinct edges removed. Node set and indices are preserved.
pub fn remove_leakage_edges(
    graph: &PpiGraph,
    eval_pairs: &[(String, String)],
) -> (PpiGraph, usize) {
    let mut doomed = BTreeSet::new();
    for (a, b) in eval_pairs {
        if let (Some(u), Some(v)) = (graph.index_of(a), graph.index_of(b)) {
            if graph.has_edge(u, v) {
                doomed.insert((u.min(v), u.max(v)));
            }
        }
    }
    let mut out = graph.clone();
    for &(u, v) in &doomed {
        out.adj[u].retain(|&(n, _)| n != v);
        out.adj[v].retain(|&(n, _)| n != u);
    }
    (out, doomed.len())
}

/// Next-step distribution of a second-order walk currently at `curr` that
/// arrived from `prev` (`None` at the walk start). The unnormalized score of
/// neighbor `x` is `alpha · w(curr, x)` with `alpha = 1/p` when `x == prev`,
/// `1` when `x` is adjacent to `prev`, and `1/q` otherwise; `alpha = 1` at
/// the start. Returns `(neighbor, probability)` pairs, empty for an isolated
/// node.
pub fn transition_distribution(
    graph: &PpiGraph,
    prev: Option<usize>,
    curr: usize,
    p: f64,
    q: f64,
) -> Result<Vec<(usize, f64)>> {
    if !(p > 0.0) || !(q > 0.0) {
        return Err(Error::Config(format!(
            "walk biases must be positive, got p={p}, q={q}"
        )));
    }
    if let Some(t) = prev {
        if !graph.has_edge(t, curr) {
            return Err(Error::Contract(format!(
                "previous node {} is not a neighbor of {}",
                graph.id(t),
                graph.id(curr)
            )));
        }
    }
    let mut scores: Vec<(usize, f64)> = graph
        .neighbors(curr)
        .iter()
        .map(|&(x, w)| {
            let alpha = match prev {
                None => 1.0,
                Some(t) if x == t => 1.0 / p,
                Some(t) if graph.has_edge(t, x) => 1.0,
                Some(_) => 1.0 / q,
            };
            (x, alpha * w)
        })
        .collect();
    let z: f64 = scores.iter().map(|s| s.1).sum();
    for s in &mut scores {
        s.1 /= z;
    }
    Ok(scores)
}

/// Draws one index from a normalized distribution by inverting its CDF.
pub fn sample_from<R: Rng>(dist: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(x, pr) in dist {
        acc += pr;
        if u < acc {
            return x;
        }
    }
    dist.last().expect("nonempty distribution").0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub p: f64,
    pub q: f64,
    pub walks_per_node: usize,
    pub walk_length: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p: 1.0,
            q: 1.0,
            walks_per_node: 10,
            walk_length: 80,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<usize>>,
}

impl WalkCorpus {
    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.walks.iter().map(Vec::len).sum()
    }
}

/// `walks_per_node` rounds; each round visits every node once in a freshly
/// shuffled order and walks up to `walk_length` nodes from it.
pub fn generate_walks(graph: &PpiGraph, cfg: &WalkConfig, seed: u64) -> Result<WalkCorpus> {
    if cfg.walks_per_node == 0 || cfg.walk_length == 0 {
        return Err(Error::Config(
            "walks_per_node and walk_length must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..graph.num_nodes()).collect();
    let mut walks = Vec::with_capacity(cfg.walks_per_node * order.len());
    for _ in 0..cfg.walks_per_node {
        order.shuffle(&mut rng);
        for &start in &order {
            let mut walk = Vec::with_capacity(cfg.walk_length);
            walk.push(start);
            let mut prev = None;
            while walk.len() < cfg.walk_length {
                let curr = *walk.last().expect("walk is nonempty");
                let dist = transition_distribution(graph, prev, curr, cfg.p, cfg.q)?;
                if dist.is_empty() {
                    break;
                }
                walk.push(sample_from(&dist, &mut rng));
                prev = Some(curr);
            }
            walks.push(walk);
        }
    }
    Ok(WalkCorpus { walks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> PpiGraph {
        let mut g = PpiGraph::new();
        g.insert_edge("A", "B", 1.0).unwrap();
        g.insert_edge("B", "C", 1.0).unwrap();
        g.insert_edge("C", "A", 1.0).unwrap();
        g
    }

    fn pairs(p: &[(&str, &str)]) -> Vec<(String, String)> {
        p.iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn leakage_removal() {
        let g = triangle();
        let (same, n) = remove_leakage_edges(&g, &[]);
        assert_eq!((same, n), (g.clone(), 0));

        let (h, n) = remove_leakage_edges(&g, &pairs(&[("A", "B")]));
        assert_eq!(n, 1);
        assert!(!h.has_edge_ids("A", "B") && !h.has_edge_ids("B", "A"));
        assert!(h.has_edge_ids("B", "C") && h.has_edge_ids("C", "A"));
        assert_eq!(g.num_edges(), 3);

        let (_, n) = remove_leakage_edges(&h, &pairs(&[("A", "B"), ("X", "Y")]));
        assert_eq!(n, 0);
    }

    #[test]
    fn uniform_bias_follows_weights() {
        let mut g = PpiGraph::new();
        g.insert_edge("c", "x", 1.0).unwrap();
        g.insert_edge("c", "y", 3.0).unwrap();
        let d = transition_distribution(&g, None, 0, 1.0, 1.0).unwrap();
        assert_eq!(d, vec![(1, 0.25), (2, 0.75)]);
    }

    #[test]
    fn triangle_with_return_and_inout_bias() {
        let g = triangle();
        let (a, b, c) = (0, 1, 2);
        let d = transition_distribution(&g, Some(a), b, 2.0, 0.5).unwrap();
        let pa = d.iter().find(|e| e.0 == a).unwrap().1;
        let pc = d.iter().find(|e| e.0 == c).unwrap().1;
        assert!((pa - 1.0 / 3.0).abs() < 1e-12);
        assert!((pc - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn star_start_is_uniform() {
        let mut g = PpiGraph::new();
        for i in 0..7 {
            g.insert_edge("hub", &format!("leaf{i}"), 1.0).unwrap();
        }
        let d = transition_distribution(&g, None, 0, 0.3, 4.0).unwrap();
        assert_eq!(d.len(), 7);
        assert!(d.iter().all(|e| (e.1 - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn degenerate_walks() {
        let mut g = triangle();
        g.add_node("lonely");
        let cfg = WalkConfig {
            walk_length: 1,
            walks_per_node: 3,
            ..WalkConfig::default()
        };
        let c = generate_walks(&g, &cfg, 1).unwrap();
        assert_eq!(c.len(), 12);
        assert!(c.walks.iter().all(|w| w.len() == 1));

        let cfg = WalkConfig {
            walk_length: 10,
            ..cfg
        };
        let c = generate_walks(&g, &cfg, 1).unwrap();
        let lonely = g.index_of("lonely").unwrap();
        for w in &c.walks {
            if w[0] == lonely {
                assert_eq!(w.len(), 1);
            } else {
                assert_eq!(w.len(), 10);
                assert!(w.windows(2).all(|s| g.has_edge(s[0], s[1])));
            }
        }
    }

    #[test]
    fn two_node_walks_alternate() {
        let mut g = PpiGraph::new();
        g.insert_edge("A", "B", 1.0).unwrap();
        let cfg = WalkConfig {
            walk_length: 5,
            walks_per_node: 4,
            p: 0.7,
            q: 2.0,
        };
        for w in generate_walks(&g, &cfg, 5).unwrap().walks {
            assert_eq!(w.len(), 5);
            for (i, &n) in w.iter().enumerate() {
                assert_eq!(n, if i % 2 == 0 { w[0] } else { 1 - w[0] });
            }
        }
    }

    #[test]
    fn walks_are_seeded() {
        let g = triangle();
        let cfg = WalkConfig::default();
        assert_eq!(
            generate_walks(&g, &cfg, 3).unwrap(),
            generate_walks(&g, &cfg, 3).unwrap()
        );
    }

    #[test]
    fn reweighting_and_self_loops() {
        let mut g = PpiGraph::new();
        assert_eq!(g.insert_edge("A", "B", 1.0).unwrap(), EdgeInsert::Added);
        assert_eq!(
            g.insert_edge("B", "A", 2.0).unwrap(),
            EdgeInsert::Replaced { old_weight: 1.0 }
        );
        assert_eq!(g.weight(0, 1), Some(2.0));
        assert_eq!(g.weight(1, 0), Some(2.0));
        assert_eq!(g.insert_edge("A", "A", 1.0).unwrap(), EdgeInsert::SelfLoop);
        assert!(g.insert_edge("A", "C", 0.0).is_err());
        assert_eq!(g.num_edges(), 1);
    }
}
