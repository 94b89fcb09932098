//! Offline metrics: on-topic rate over the top 10 results, long-dwell
//! counts, a rule-based judge, simulated dwell, and the alpha sweep.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DwellThresholds, MemberId, PostId, PostStore, PostType, Query};
use crate::engine::{Engine, RetrievalMode, SearchOptions};
use crate::error::{Error, LineError, Result};

/// Results past this rank do not count toward the on-topic rate.
pub const TOP_N: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedQuery {
    pub text: String,
    #[serde(default)]
    pub searcher_id: MemberId,
    #[serde(default)]
    pub contains_job_title: bool,
    pub topic: String,
    #[serde(default)]
    pub expected: BTreeSet<PostId>,
    /// Phrased with words that appear in no post.
    #[serde(default)]
    pub cross_vocabulary: bool,
}

impl JudgedQuery {
    pub fn query(&self) -> Query {
        Query {
            text: self.text.clone(),
            searcher_id: self.searcher_id,
            contains_job_title: self.contains_job_title,
            issued_at: 0,
        }
    }
}

/// Lognormal parameters: `ln(dwell)` is normal with mean `ln(median)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellDistribution {
    pub median: f64,
    pub sigma: f64,
}

impl DwellDistribution {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        LogNormal::new(self.median.ln(), self.sigma)
            .expect("validated dwell distribution")
            .sample(rng)
    }

    fn validate(&self) -> Result<()> {
        if self.median > 0.0 && self.median.is_finite() && self.sigma >= 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("dwell distribution", format!("{self:?}")))
        }
    }
}

/// Dwell distributions per (topic match, quality) class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DwellModel {
    pub matched_quality: DwellDistribution,
    pub matched_low_quality: DwellDistribution,
    pub unmatched_quality: DwellDistribution,
    pub unmatched_low_quality: DwellDistribution,
}

impl Default for DwellModel {
    fn default() -> Self {
        let d = |median, sigma| DwellDistribution { median, sigma };
        DwellModel {
            matched_quality: d(40.0, 0.5),
            matched_low_quality: d(6.0, 0.6),
            unmatched_quality: d(5.0, 0.6),
            unmatched_low_quality: d(3.0, 0.6),
        }
    }
}

impl DwellModel {
    pub fn pick(&self, topic_match: bool, quality: bool) -> &DwellDistribution {
        match (topic_match, quality) {
            (true, true) => &self.matched_quality,
            (true, false) => &self.matched_low_quality,
            (false, true) => &self.unmatched_quality,
            (false, false) => &self.unmatched_low_quality,
        }
    }

    fn validate(&self) -> Result<()> {
        for d in [
            &self.matched_quality,
            &self.matched_low_quality,
            &self.unmatched_quality,
            &self.unmatched_low_quality,
        ] {
            d.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostAnnotation {
    pub post_id: PostId,
    pub topic: String,
    pub quality: bool,
    #[serde(default)]
    pub dwell: DwellModel,
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FixtureRecord {
    Query(JudgedQuery),
    Post(PostAnnotation),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalFixtures {
    pub queries: Vec<JudgedQuery>,
    pub posts: BTreeMap<PostId, PostAnnotation>,
}

impl EvalFixtures {
    pub fn load<R: BufRead>(source: R) -> Result<Self> {
        let mut fixtures = EvalFixtures::default();
        let mut errors = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<FixtureRecord>(&line)
                .map_err(|e| e.to_string())
                .and_then(|rec| fixtures.insert(rec).map_err(|e| e.to_string()));
            if let Err(message) = outcome {
                errors.push(LineError { line: i + 1, message });
            }
        }
        if errors.is_empty() {
            Ok(fixtures)
        } else {
            Err(Error::Lines(errors))
        }
    }

    pub fn insert(&mut self, record: FixtureRecord) -> Result<()> {
        match record {
            FixtureRecord::Query(q) => {
                Query::validate(&q.query())?;
                self.queries.push(q);
            }
            FixtureRecord::Post(p) => {
                p.dwell.validate()?;
                if self.posts.contains_key(&p.post_id) {
                    return Err(Error::DuplicatePost(p.post_id));
                }
                self.posts.insert(p.post_id, p);
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let records = self
            .queries
            .iter()
            .cloned()
            .map(FixtureRecord::Query)
            .chain(self.posts.values().cloned().map(FixtureRecord::Post));
        for r in records {
            serde_json::to_writer(&mut out, &r).map_err(|e| Error::Format {
                what: "fixture record",
                reason: e.to_string(),
            })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Every expected id and annotated post must exist in the corpus.
    pub fn check_against(&self, posts: &PostStore) -> Result<()> {
        let ids = self.queries.iter().flat_map(|q| q.expected.iter()).chain(self.posts.keys());
        for &id in ids {
            if !posts.contains(id) {
                return Err(Error::PostNotFound(id));
            }
        }
        Ok(())
    }
}

/// 1 iff the post's topic equals the query's topic and the post is marked
/// as well written.
pub fn synthetic_judge(query: &JudgedQuery, annotation: &PostAnnotation) -> bool {
    annotation.quality && annotation.topic == query.topic
}

/// Fixture-backed judge that counts lookups of unannotated posts.
pub struct Judge<'a> {
    fixtures: &'a EvalFixtures,
    missing: AtomicU64,
}

impl<'a> Judge<'a> {
    pub fn new(fixtures: &'a EvalFixtures) -> Self {
        Judge {
            fixtures,
            missing: AtomicU64::new(0),
        }
    }

    /// Unannotated posts are judged 0.
    pub fn judge(&self, query: &JudgedQuery, post_id: PostId) -> bool {
        match self.fixtures.posts.get(&post_id) {
            Some(a) => synthetic_judge(query, a),
            None => {
                self.missing.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(%post_id, "post has no fixture annotation");
                false
            }
        }
    }

    pub fn missing(&self) -> u64 {
        self.missing.load(Ordering::Relaxed)
    }
}

/// On-topic rate of one ranked label list: the fraction of label-1 results
/// among the first `min(10, len)`; 0 for an empty list.
pub fn query_on_topic_rate(labels: &[bool]) -> f64 {
    let n = labels.len().min(TOP_N);
    if n == 0 {
        return 0.0;
    }
    labels[..n].iter().filter(|&&l| l).count() as f64 / n as f64
}

/// Mean per-query on-topic rate; 0 when there are no queries.
pub fn on_topic_rate(per_query_labels: &[Vec<bool>]) -> f64 {
    if per_query_labels.is_empty() {
        return 0.0;
    }
    per_query_labels.iter().map(|l| query_on_topic_rate(l)).sum::<f64>() / per_query_labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub post_id: PostId,
    pub post_type: PostType,
    pub dwell_seconds: f64,
}

/// Number of entries whose dwell is strictly above the threshold for their
/// post type.
pub fn long_dwells(session: &[SessionEntry], thresholds: &DwellThresholds) -> Result<usize> {
    let mut n = 0;
    for e in session {
        if thresholds.is_long_dwell(e.post_type, e.dwell_seconds)? {
            n += 1;
        }
    }
    Ok(n)
}

/// Draws one dwell per returned post from the fixture's distribution for
/// its (topic match, quality) class.
pub fn simulate_dwell(
    query: &JudgedQuery,
    results: &[(PostId, PostType)],
    fixtures: &EvalFixtures,
    seed: u64,
) -> Vec<SessionEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fallback = DwellModel::default();
    results
        .iter()
        .map(|&(post_id, post_type)| {
            let dist = match fixtures.posts.get(&post_id) {
                Some(a) => a.dwell.pick(a.topic == query.topic, a.quality),
                None => fallback.pick(false, false),
            };
            SessionEntry {
                post_id,
                post_type,
                dwell_seconds: dist.sample(&mut rng),
            }
        })
        .collect()
}

/// Independent per-query seed.
pub fn query_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub text: String,
    pub topic: String,
    pub cross_vocabulary: bool,
    pub results: Vec<PostId>,
    pub judged: Vec<bool>,
    pub on_topic_rate: f64,
    pub long_dwells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub mode: RetrievalMode,
    pub query_count: usize,
    pub on_topic_rate: f64,
    pub long_dwells: usize,
    pub missing_annotations: u64,
    pub per_query: Vec<QueryOutcome>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha {:.2}  mode {:?}  queries {}", self.alpha, self.mode, self.query_count);
        let _ = writeln!(s, "{:<40} {:>8} {:>8} {:>6}", "query", "results", "on-topic", "long");
        for q in &self.per_query {
            let _ = writeln!(
                s,
                "{:<40} {:>8} {:>8.3} {:>6}",
                truncate(&q.text, 40),
                q.results.len(),
                q.on_topic_rate,
                q.long_dwells
            );
        }
        let _ = writeln!(s, "on-topic rate {:.4}  long-dwells {}", self.on_topic_rate, self.long_dwells);
        if self.missing_annotations > 0 {
            let _ = writeln!(s, "unannotated results: {}", self.missing_annotations);
        }
        s
    }
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        s.chars().take(n - 1).chain(['~']).collect()
    }
}

/// Runs every judged query through the engine and scores the first page.
pub fn evaluate(engine: &Engine, fixtures: &EvalFixtures, options: &SearchOptions, seed: u64) -> Result<EvalReport> {
    let judge = Judge::new(fixtures);
    let thresholds = &engine.config().dwell_thresholds;
    let mut per_query = Vec::with_capacity(fixtures.queries.len());
    for (i, jq) in fixtures.queries.iter().enumerate() {
        let response = engine.search_with(&jq.query(), options)?;
        let mut typed = Vec::with_capacity(response.results.len());
        for r in &response.results {
            typed.push((r.post_id, engine.posts().get_post(r.post_id)?.post_type));
        }
        let judged: Vec<bool> = typed.iter().map(|&(id, _)| judge.judge(jq, id)).collect();
        let session = simulate_dwell(jq, &typed, fixtures, query_seed(seed, i));
        per_query.push(QueryOutcome {
            text: jq.text.clone(),
            topic: jq.topic.clone(),
            cross_vocabulary: jq.cross_vocabulary,
            results: typed.iter().map(|&(id, _)| id).collect(),
            on_topic_rate: query_on_topic_rate(&judged),
            long_dwells: long_dwells(&session, thresholds)?,
            judged,
        });
    }
    let labels: Vec<Vec<bool>> = per_query.iter().map(|q| q.judged.clone()).collect();
    Ok(EvalReport {
        alpha: options.alpha.unwrap_or(engine.config().alpha),
        mode: options.mode,
        query_count: per_query.len(),
        on_topic_rate: on_topic_rate(&labels),
        long_dwells: per_query.iter().map(|q| q.long_dwells).sum(),
        missing_annotations: judge.missing(),
        per_query,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub on_topic_rate: f64,
    pub long_dwells: usize,
}

/// One full evaluation per alpha with everything else fixed, sorted by
/// alpha.
pub fn alpha_sweep(engine: &Engine, fixtures: &EvalFixtures, alphas: &[f64], seed: u64) -> Result<Vec<SweepRow>> {
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid("alpha", format!("{a} is outside [0, 1]")));
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .par_iter()
        .map(|&alpha| {
            let options = SearchOptions {
                alpha: Some(alpha),
                ..SearchOptions::default()
            };
            let report = evaluate(engine, fixtures, &options, seed)?;
            Ok(SweepRow {
                alpha,
                on_topic_rate: report.on_topic_rate,
                long_dwells: report.long_dwells,
            })
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!("{:>6} {:>14} {:>12}\n", "alpha", "on_topic_rate", "long_dwells");
    for r in rows {
        let _ = writeln!(s, "{:>6.2} {:>14.4} {:>12}", r.alpha, r.on_topic_rate, r.long_dwells);
    }
    s
}
