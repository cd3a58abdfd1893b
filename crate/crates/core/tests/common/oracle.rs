//! Reference implementations used only by tests. They share no code with the
//! crate: graphs are dense matrices or explicit path lists, label sets are
//! bitmasks over a small universe.

#![allow(dead_code)]

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use slr_core::citenet::CitationGraph;
use slr_core::{LabelSet, PaperId};

/// Directed graph on nodes `0..n` as an adjacency matrix.
#[derive(Debug, Clone)]
pub struct DenseGraph {
    pub n: usize,
    pub adj: Vec<Vec<bool>>,
}

impl DenseGraph {
    pub fn random(rng: &mut ChaCha8Rng, max_nodes: usize) -> Self {
        let n = rng.gen_range(1..=max_nodes);
        let p: f64 = rng.gen_range(0.05..0.7);
        let adj = (0..n)
            .map(|i| (0..n).map(|j| i != j && rng.gen_bool(p)).collect())
            .collect();
        Self { n, adj }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![vec![false; n]; n];
        for &(a, b) in edges {
            adj[a][b] = true;
        }
        Self { n, adj }
    }

    pub fn id(i: usize) -> PaperId {
        PaperId::new(format!("N{i}"))
    }

    pub fn to_citation_graph(&self) -> CitationGraph {
        let mut g = CitationGraph::default();
        for i in 0..self.n {
            g.add_node(Self::id(i), 2000 + i as i32);
        }
        for i in 0..self.n {
            for j in 0..self.n {
                if self.adj[i][j] {
                    g.add_edge(&Self::id(i), &Self::id(j));
                }
            }
        }
        g
    }

    fn out_degree(&self, i: usize) -> usize {
        self.adj[i].iter().filter(|&&e| e).count()
    }

    /// Google matrix power iteration run far past convergence.
    pub fn pagerank(&self, damping: f64) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![vec![0.0; n]; n];
        for j in 0..n {
            let k = self.out_degree(j);
            for (i, row) in m.iter_mut().enumerate() {
                let link = if k == 0 {
                    1.0 / n as f64
                } else if self.adj[j][i] {
                    1.0 / k as f64
                } else {
                    0.0
                };
                row[j] = damping * link + (1.0 - damping) / n as f64;
            }
        }
        let mut x = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let next: Vec<f64> = m.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
            let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            x = next;
            if change < 1e-15 {
                break;
            }
        }
        x
    }

    fn distances_from(&self, s: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[s] = Some(0);
        let mut frontier = vec![s];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for v in 0..self.n {
                    if self.adj[u][v] && dist[v].is_none() {
                        dist[v] = Some(d);
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    /// Every simple path from `s` to `t` with exactly `len` edges.
    fn paths(&self, s: usize, t: usize, len: usize) -> Vec<Vec<usize>> {
        fn walk(g: &DenseGraph, path: &mut Vec<usize>, t: usize, len: usize, out: &mut Vec<Vec<usize>>) {
            let u = *path.last().unwrap();
            if path.len() - 1 == len {
                if u == t {
                    out.push(path.clone());
                }
                return;
            }
            for v in 0..g.n {
                if g.adj[u][v] && !path.contains(&v) {
                    path.push(v);
                    walk(g, path, t, len, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut vec![s], t, len, &mut out);
        out
    }

    /// Exact betweenness by listing all shortest paths of every ordered pair.
    pub fn betweenness(&self) -> Vec<BigRational> {
        let mut cb = vec![BigRational::zero(); self.n];
        for s in 0..self.n {
            let dist = self.distances_from(s);
            for t in 0..self.n {
                let Some(len) = dist[t].filter(|_| t != s) else { continue };
                let paths = self.paths(s, t, len);
                let total = BigInt::from(paths.len());
                for (v, score) in cb.iter_mut().enumerate() {
                    if v == s || v == t {
                        continue;
                    }
                    let through = paths.iter().filter(|p| p.contains(&v)).count();
                    *score += BigRational::new(BigInt::from(through), total.clone());
                }
            }
        }
        cb
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("finite")
}

/// Multi-label fixture: gold and predicted sets as bitmasks over `labels` labels.
#[derive(Debug, Clone)]
pub struct LabelFixture {
    pub labels: usize,
    pub gold: Vec<u32>,
    pub pred: Vec<u32>,
}

fn nonempty_mask(rng: &mut ChaCha8Rng, labels: usize) -> u32 {
    rng.gen_range(1..(1u32 << labels))
}

impl LabelFixture {
    pub fn random(rng: &mut ChaCha8Rng, max_papers: usize, max_labels: usize) -> Self {
        let labels = rng.gen_range(1..=max_labels);
        let papers = rng.gen_range(1..=max_papers);
        let gold = (0..papers).map(|_| nonempty_mask(rng, labels)).collect();
        let pred = (0..papers).map(|_| nonempty_mask(rng, labels)).collect();
        Self { labels, gold, pred }
    }

    pub fn paper(i: usize) -> PaperId {
        PaperId::new(format!("P{i:03}"))
    }

    pub fn label_set(mask: u32, labels: usize) -> LabelSet {
        (0..labels).filter(|b| mask & (1 << b) != 0).map(|b| format!("L{b}")).collect()
    }

    /// (predictions, gold) keyed by paper.
    pub fn maps(&self) -> (BTreeMap<PaperId, LabelSet>, BTreeMap<PaperId, LabelSet>) {
        let to_map = |masks: &[u32]| {
            masks
                .iter()
                .enumerate()
                .map(|(i, &m)| (Self::paper(i), Self::label_set(m, self.labels)))
                .collect()
        };
        (to_map(&self.pred), to_map(&self.gold))
    }

    /// Per-paper (tp, fp, fn) from walking every label of the universe.
    fn cells(&self) -> Vec<(usize, usize, usize)> {
        self.gold
            .iter()
            .zip(&self.pred)
            .map(|(&g, &p)| {
                let (mut tp, mut fp, mut fn_) = (0, 0, 0);
                for b in 0..self.labels {
                    match (g & (1 << b) != 0, p & (1 << b) != 0) {
                        (true, true) => tp += 1,
                        (false, true) => fp += 1,
                        (true, false) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                (tp, fp, fn_)
            })
            .collect()
    }

    pub fn oracle(&self) -> MetricOracle {
        let cells = self.cells();
        let n = cells.len() as f64;
        let (tp, fp, fn_) = cells
            .iter()
            .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
        let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
        let micro_p = tp / (tp + fp);
        let micro_r = tp / (tp + fn_);
        let avg = |f: &dyn Fn(&(usize, usize, usize)) -> f64| cells.iter().map(f).sum::<f64>() / n;
        MetricOracle {
            micro_precision: micro_p,
            micro_recall: micro_r,
            micro_f1_harmonic: if micro_p + micro_r == 0.0 {
                0.0
            } else {
                2.0 * micro_p * micro_r / (micro_p + micro_r)
            },
            sample_precision: avg(&|c| c.0 as f64 / (c.0 + c.1) as f64),
            sample_recall: avg(&|c| c.0 as f64 / (c.0 + c.2) as f64),
            sample_f1: avg(&|c| 2.0 * c.0 as f64 / (2 * c.0 + c.1 + c.2) as f64),
            jaccard: avg(&|c| c.0 as f64 / (c.0 + c.1 + c.2) as f64),
            lenient: avg(&|c| if c.0 > 0 { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MetricOracle {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1_harmonic: f64,
    pub sample_precision: f64,
    pub sample_recall: f64,
    pub sample_f1: f64,
    pub jaccard: f64,
    pub lenient: f64,
}

/// Share of papers whose runs are all equal; `runs[paper][run]`.
pub fn self_consistency_oracle(runs: &[Vec<u32>]) -> f64 {
    let same = runs.iter().filter(|r| r.windows(2).all(|w| w[0] == w[1])).count();
    same as f64 / runs.len() as f64
}
