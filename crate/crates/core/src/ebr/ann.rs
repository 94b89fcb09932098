//! Hierarchical navigable small-world graph over unit vectors.
//!
//! Similarity is the dot product (cosine for unit vectors). Construction
//! follows the usual HNSW insertion with the diversity heuristic for
//! neighbor selection; every layer, including layer 0, keeps at most `m`
//! neighbors per node.
//!
//! Search spends a hard budget of `scan_limit` similarity evaluations:
//! greedy descent through the upper layers, then best-first expansion on
//! layer 0 until the budget is exhausted or the frontier is empty. The
//! layer-0 beam is as wide as the budget, so nothing evaluated on layer 0
//! is discarded before the final top-k cut.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PostId;
use crate::error::{Error, Result};
use crate::tbr::sort_scored;
use crate::text::{dot, Embedding};

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnConfig {
    /// Maximum neighbors per node per layer.
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            m: 16,
            ef_construction: 100,
            seed: 0x05ee_da11,
        }
    }
}

/// Result of one budgeted search.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnSearch {
    /// Descending similarity, ties by ascending post id.
    pub results: Vec<(PostId, f64)>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    sim: f64,
    node: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Similarity evaluations remaining; `None` means unlimited.
struct Budget {
    remaining: Option<usize>,
    used: usize,
}

impl Budget {
    fn take(&mut self) -> bool {
        match &mut self.remaining {
            Some(0) => return false,
            Some(r) => *r -= 1,
            None => {}
        }
        self.used += 1;
        true
    }
}

#[derive(Debug, Clone)]
pub struct AnnIndex {
    config: AnnConfig,
    dim: usize,
    ids: Vec<PostId>,
    vectors: Vec<f64>,
    /// `links[node][level]` lists neighbor nodes.
    links: Vec<Vec<Vec<u32>>>,
    by_id: HashMap<PostId, u32>,
    entry: Option<u32>,
    top_level: usize,
    level_mult: f64,
    rng: ChaCha8Rng,
}

impl AnnIndex {
    pub fn new(dim: usize, config: AnnConfig) -> Result<Self> {
        if config.m < 2 {
            return Err(Error::invalid("ann config", "m must be at least 2"));
        }
        if config.ef_construction < 1 {
            return Err(Error::invalid("ann config", "ef_construction must be positive"));
        }
        Ok(AnnIndex {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            links: Vec::new(),
            by_id: HashMap::new(),
            entry: None,
            top_level: 0,
            level_mult: 1.0 / (config.m as f64).ln(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: PostId) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn config(&self) -> &AnnConfig {
        &self.config
    }

    pub fn entry_point(&self) -> Option<PostId> {
        self.entry.map(|n| self.ids[n as usize])
    }

    pub fn ids(&self) -> &[PostId] {
        &self.ids
    }

    /// Neighbor post ids of `id` at `level`, if the node reaches that level.
    pub fn neighbors(&self, id: PostId, level: usize) -> Option<Vec<PostId>> {
        let node = *self.by_id.get(&id)? as usize;
        self.links[node]
            .get(level)
            .map(|l| l.iter().map(|n| self.ids[*n as usize]).collect())
    }

    pub fn max_degree(&self) -> usize {
        self.links
            .iter()
            .flat_map(|levels| levels.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    /// Number of nodes reachable from the entry point over layer-0 edges.
    pub fn reachable_from_entry(&self) -> usize {
        let Some(entry) = self.entry else { return 0 };
        let mut seen = vec![false; self.ids.len()];
        let mut stack = vec![entry];
        seen[entry as usize] = true;
        let mut count = 0;
        while let Some(n) = stack.pop() {
            count += 1;
            for &m in &self.links[n as usize][0] {
                if !seen[m as usize] {
                    seen[m as usize] = true;
                    stack.push(m);
                }
            }
        }
        count
    }

    fn vector(&self, node: u32) -> &[f64] {
        let start = node as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    fn sim_nodes(&self, a: u32, b: u32) -> f64 {
        dot(self.vector(a), self.vector(b))
    }

    fn random_level(&mut self) -> usize {
        let u: f64 = 1.0 - self.rng.gen::<f64>(); // (0, 1]
        ((-u.ln() * self.level_mult).floor() as usize).min(MAX_LEVEL)
    }

    pub fn insert(&mut self, id: PostId, embedding: &Embedding) -> Result<()> {
        if embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: embedding.dim(),
            });
        }
        if (embedding.norm() - 1.0).abs() > Embedding::NORM_TOLERANCE {
            return Err(Error::invalid("ann insert", "embedding is not unit-norm"));
        }
        if self.by_id.contains_key(&id) {
            return Err(Error::DuplicatePost(id));
        }
        let level = self.random_level();
        let node = self.ids.len() as u32;
        self.ids.push(id);
        self.vectors.extend_from_slice(embedding.as_slice());
        self.links.push(vec![Vec::new(); level + 1]);
        self.by_id.insert(id, node);

        let Some(entry) = self.entry else {
            self.entry = Some(node);
            self.top_level = level;
            return Ok(());
        };

        let q = embedding.as_slice();
        let mut unlimited = Budget {
            remaining: None,
            used: 0,
        };
        let mut ep = Cand {
            sim: dot(q, self.vector(entry)),
            node: entry,
        };
        for lc in (level + 1..=self.top_level).rev() {
            ep = self.greedy(q, ep, lc, &mut unlimited);
        }
        let mut eps = vec![ep];
        for lc in (0..=level.min(self.top_level)).rev() {
            let found = self.search_layer(q, &eps, self.config.ef_construction, lc, &mut unlimited);
            let chosen = self.select_neighbors(q, &found, self.config.m);
            for &n in &chosen {
                self.links[n as usize][lc].push(node);
                if self.links[n as usize][lc].len() > self.config.m {
                    self.shrink(n, lc);
                }
            }
            self.links[node as usize][lc] = chosen;
            eps = found;
        }
        if level > self.top_level {
            self.top_level = level;
            self.entry = Some(node);
        }
        Ok(())
    }

    fn shrink(&mut self, node: u32, level: usize) {
        let base = self.vector(node).to_vec();
        let mut cands: Vec<Cand> = self.links[node as usize][level]
            .iter()
            .map(|&n| Cand {
                sim: dot(&base, self.vector(n)),
                node: n,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        self.links[node as usize][level] = self.select_neighbors(&base, &cands, self.config.m);
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor kept so far, then top up with the closest
    /// rejected candidates. `cands` must be sorted by descending similarity.
    fn select_neighbors(&self, _base: &[f64], cands: &[Cand], m: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(m);
        let mut rejected = Vec::new();
        for c in cands {
            if kept.len() >= m {
                break;
            }
            if kept.iter().all(|&k| self.sim_nodes(c.node, k) < c.sim) {
                kept.push(c.node);
            } else {
                rejected.push(c.node);
            }
        }
        for r in rejected {
            if kept.len() >= m {
                break;
            }
            kept.push(r);
        }
        kept
    }

    fn greedy(&self, q: &[f64], mut cur: Cand, level: usize, budget: &mut Budget) -> Cand {
        loop {
            let mut moved = false;
            for &n in &self.links[cur.node as usize][level] {
                if !budget.take() {
                    return cur;
                }
                let c = Cand {
                    sim: dot(q, self.vector(n)),
                    node: n,
                };
                if c > cur {
                    cur = c;
                    moved = true;
                }
            }
            if !moved {
                return cur;
            }
        }
    }

    /// Best-first search on one layer; returns up to `ef` nodes sorted by
    /// descending similarity.
    fn search_layer(&self, q: &[f64], entry: &[Cand], ef: usize, level: usize, budget: &mut Budget) -> Vec<Cand> {
        let mut visited: HashSet<u32> = entry.iter().map(|c| c.node).collect();
        let mut frontier: BinaryHeap<Cand> = entry.iter().copied().collect();
        let mut best: BinaryHeap<Reverse<Cand>> = entry.iter().copied().map(Reverse).collect();
        while best.len() > ef {
            best.pop();
        }
        'outer: while let Some(c) = frontier.pop() {
            let worst = best.peek().expect("non-empty").0;
            if best.len() >= ef && c < worst {
                break;
            }
            for &n in &self.links[c.node as usize][level] {
                if !visited.insert(n) {
                    continue;
                }
                if !budget.take() {
                    break 'outer;
                }
                let cand = Cand {
                    sim: dot(q, self.vector(n)),
                    node: n,
                };
                if best.len() < ef || cand > best.peek().expect("non-empty").0 {
                    frontier.push(cand);
                    best.push(Reverse(cand));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Top-`k` approximate neighbors of `query` using at most `scan_limit`
    /// similarity evaluations.
    pub fn search(&self, query: &[f64], k: usize, scan_limit: usize) -> Result<AnnSearch> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if scan_limit < k {
            return Err(Error::invalid("scan_limit", format!("{scan_limit} is below k = {k}")));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let Some(entry) = self.entry else {
            return Ok(AnnSearch {
                results: Vec::new(),
                evaluations: 0,
            });
        };
        let mut budget = Budget {
            remaining: Some(scan_limit),
            used: 0,
        };
        budget.take();
        let mut ep = Cand {
            sim: dot(query, self.vector(entry)),
            node: entry,
        };
        for lc in (1..=self.top_level).rev() {
            ep = self.greedy(query, ep, lc, &mut budget);
        }
        let found = self.search_layer(query, &[ep], scan_limit, 0, &mut budget);
        assert!(budget.used <= scan_limit, "ann search exceeded its scan budget");
        let mut results: Vec<(PostId, f64)> = found.iter().map(|c| (self.ids[c.node as usize], c.sim)).collect();
        sort_scored(&mut results);
        results.truncate(k);
        Ok(AnnSearch {
            results,
            evaluations: budget.used,
        })
    }

    /// Builds an index by inserting `(id, embedding)` pairs in the given order.
    pub fn build<'a>(
        dim: usize,
        config: AnnConfig,
        items: impl IntoIterator<Item = (PostId, &'a Embedding)>,
    ) -> Result<Self> {
        let mut index = AnnIndex::new(dim, config)?;
        for (id, e) in items {
            index.insert(id, e)?;
        }
        Ok(index)
    }
}
