//! Generated synonym corpus.
//!
//! Each topic cluster has three disjoint word families: words used only in
//! queries, a canonical family used by half the cluster's posts (and by
//! some queries), and a synonym family used by the other half. Queries
//! phrased in the query-only family match no post token, so only a
//! retriever that learned the families from interaction logs can serve
//! them. A fraction of posts are low quality: fewer topic words and
//! appended spam tokens.

use std::collections::BTreeSet;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DwellModel, EvalFixtures, JudgedQuery, PostAnnotation};
use crate::corpus::{
    Author, DirectoryRecord, InteractionLine, InteractionRecord, MemberId, Post, PostId, PostType, Searcher,
};
use crate::error::{Error, Result};

pub struct Topic {
    pub tag: &'static str,
    pub query_only: [&'static str; 5],
    pub canonical: [&'static str; 5],
    pub synonyms: [&'static str; 5],
}

pub const TOPICS: [Topic; 10] = [
    Topic {
        tag: "compensation",
        query_only: ["paycheck", "payrise", "remuneration", "earnings", "wages"],
        canonical: ["salary", "raise", "negotiate", "compensation", "increase"],
        synonyms: ["stipend", "bump", "haggle", "payscale", "uplift"],
    },
    Topic {
        tag: "interviewing",
        query_only: ["interviewer", "hiring", "screening", "recruiter", "callback"],
        canonical: ["interview", "questions", "prepare", "answers", "behavioral"],
        synonyms: ["audition", "grilling", "rehearse", "responses", "panel"],
    },
    Topic {
        tag: "remote_work",
        query_only: ["telework", "wfh", "homeoffice", "distributed", "offsite"],
        canonical: ["remote", "workfromhome", "flexible", "commute", "hybrid"],
        synonyms: ["virtual", "nomad", "asynchronous", "coworking", "location"],
    },
    Topic {
        tag: "machine_learning",
        query_only: ["ai", "neural", "deeplearning", "modeling", "predictive"],
        canonical: ["machine", "learning", "model", "training", "dataset"],
        synonyms: ["gradient", "backprop", "tensor", "inference", "classifier"],
    },
    Topic {
        tag: "leadership",
        query_only: ["manager", "boss", "executive", "supervisor", "mentorship"],
        canonical: ["leadership", "team", "vision", "delegate", "motivate"],
        synonyms: ["steward", "crew", "roadmap", "empower", "inspire"],
    },
    Topic {
        tag: "startups",
        query_only: ["founder", "entrepreneur", "venture", "seed", "pitchdeck"],
        canonical: ["startup", "funding", "investors", "launch", "growth"],
        synonyms: ["bootstrap", "angel", "runway", "traction", "incubator"],
    },
    Topic {
        tag: "career_change",
        query_only: ["pivot", "switching", "reskilling", "transition", "newfield"],
        canonical: ["career", "change", "skills", "industry", "path"],
        synonyms: ["vocation", "shift", "competencies", "sector", "trajectory"],
    },
    Topic {
        tag: "productivity",
        query_only: ["efficiency", "timeblocking", "focus", "procrastination", "habits"],
        canonical: ["productivity", "time", "management", "tasks", "schedule"],
        synonyms: ["workflow", "calendar", "prioritize", "todo", "routine"],
    },
    Topic {
        tag: "networking",
        query_only: ["linking", "connections", "referral", "contacts", "outreach"],
        canonical: ["networking", "events", "meetup", "introductions", "relationships"],
        synonyms: ["mingle", "conference", "rapport", "acquaintances", "socializing"],
    },
    Topic {
        tag: "resume",
        query_only: ["cv", "curriculum", "vitae", "portfolio", "profile"],
        canonical: ["resume", "format", "template", "experience", "bullet"],
        synonyms: ["dossier", "layout", "skeleton", "accomplishments", "summary"],
    },
];

pub const FILLER: [&str; 16] = [
    "today", "really", "think", "great", "people", "share", "some", "thoughts", "week", "lessons", "learned", "my",
    "about", "our", "new", "here",
];

pub const SPAM: [&str; 8] = ["click", "free", "promo", "winner", "cheap", "offer", "deal", "subscribe"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Number of topic clusters used, at most 10.
    pub clusters: usize,
    pub posts_per_cluster: usize,
    pub low_quality_fraction: f64,
    /// Judged queries per cluster; half canonical, half cross-vocabulary.
    pub judged_per_cluster: usize,
    pub training_queries_per_cluster: usize,
    pub same_topic_pairs: usize,
    pub other_topic_pairs: usize,
    pub searchers: usize,
    pub authors: usize,
    pub as_of: i64,
    pub max_age_days: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            clusters: 10,
            posts_per_cluster: 200,
            low_quality_fraction: 0.2,
            judged_per_cluster: 4,
            training_queries_per_cluster: 40,
            same_topic_pairs: 8,
            other_topic_pairs: 4,
            searchers: 50,
            authors: 200,
            as_of: 1_735_689_600,
            max_age_days: 60.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.clusters > TOPICS.len() {
            return Err(Error::invalid("clusters", format!("must be in 1..={}", TOPICS.len())));
        }
        if self.posts_per_cluster < 2 || self.searchers == 0 || self.authors == 0 {
            return Err(Error::invalid("synthetic config", "needs posts, searchers and authors"));
        }
        if !self.judged_per_cluster.is_multiple_of(2) || self.judged_per_cluster > 8 {
            return Err(Error::invalid("judged_per_cluster", "must be even and at most 8"));
        }
        if !(0.0..1.0).contains(&self.low_quality_fraction) {
            return Err(Error::invalid("low_quality_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }
}

pub struct SyntheticDataset {
    pub posts: Vec<Post>,
    pub members: Vec<DirectoryRecord>,
    pub interactions: Vec<InteractionLine>,
    pub fixtures: EvalFixtures,
}

const SEARCHER_BASE: u64 = 1;
const AUTHOR_BASE: u64 = 10_000;

struct GenPost {
    cluster: usize,
    quality: bool,
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str], n: usize) -> Vec<&'a str> {
    words.choose_multiple(rng, n).copied().collect()
}

fn pairs(words: &[&'static str; 5]) -> Vec<[&'static str; 2]> {
    let mut out = Vec::new();
    for i in 0..5 {
        for j in i + 1..5 {
            out.push([words[i], words[j]]);
        }
    }
    out
}

fn post_text(rng: &mut ChaCha8Rng, topic: &Topic, synonym: bool, quality: bool) -> String {
    let family = if synonym { &topic.synonyms } else { &topic.canonical };
    let mut words = if quality {
        pick(rng, family, 3)
    } else {
        pick(rng, family, 2)
    };
    words.extend(pick(rng, &FILLER, 3));
    if !quality {
        words.extend(pick(rng, &SPAM, 3));
    }
    words.shuffle(rng);
    words.join(" ")
}

/// Generates the corpus, member file, interaction log and eval fixtures.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dwell = DwellModel::default();

    let authors: Vec<Author> = (0..config.authors as u64)
        .map(|i| Author {
            author_id: MemberId(AUTHOR_BASE + i),
            popularity: rng.gen_range(0.0..1.0),
        })
        .collect();
    let searchers: Vec<Searcher> = (0..config.searchers as u64)
        .map(|i| {
            let k = rng.gen_range(0..=10);
            let connections: BTreeSet<MemberId> =
                authors.iter().map(|a| a.author_id).choose_multiple(&mut rng, k).into_iter().collect();
            Searcher {
                searcher_id: MemberId(SEARCHER_BASE + i),
                job_seeking_intent: rng.gen_bool(0.3),
                connections,
            }
        })
        .collect();

    let total = config.clusters * config.posts_per_cluster;
    let mut ids: Vec<u64> = (1..=total as u64).collect();
    ids.shuffle(&mut rng);
    let mut posts = Vec::with_capacity(total);
    let mut meta = Vec::with_capacity(total);
    let mut fixtures = EvalFixtures::default();
    for (cluster, topic) in TOPICS.iter().enumerate().take(config.clusters) {
        for j in 0..config.posts_per_cluster {
            let synonym = j % 2 == 1;
            let quality = !rng.gen_bool(config.low_quality_fraction);
            let post_id = PostId(ids[posts.len()]);
            let age_days = rng.gen_range(0.0..config.max_age_days);
            posts.push(Post {
                post_id,
                text: post_text(&mut rng, topic, synonym, quality),
                post_type: *PostType::ALL.choose(&mut rng).expect("non-empty"),
                author_id: authors.choose(&mut rng).expect("authors").author_id,
                created_at: config.as_of - (age_days * 86_400.0) as i64,
                popularity: rng.gen_range(0.0..1.0),
            });
            meta.push(GenPost { cluster, quality });
            fixtures.posts.insert(
                post_id,
                PostAnnotation {
                    post_id,
                    topic: topic.tag.into(),
                    quality,
                    dwell,
                },
            );
        }
    }
    let by_cluster: Vec<Vec<usize>> = (0..config.clusters)
        .map(|c| (0..posts.len()).filter(|&i| meta[i].cluster == c).collect())
        .collect();

    let mut interactions = Vec::new();
    let per_family = config.judged_per_cluster / 2;
    for cluster in 0..config.clusters {
        let topic = &TOPICS[cluster];
        let mut cross = pairs(&topic.query_only);
        let mut canon = pairs(&topic.canonical);
        cross.shuffle(&mut rng);
        canon.shuffle(&mut rng);
        let expected: BTreeSet<PostId> = by_cluster[cluster]
            .iter()
            .filter(|&&i| meta[i].quality)
            .map(|&i| posts[i].post_id)
            .collect();
        for (family, is_cross) in [(&canon, false), (&cross, true)] {
            for words in &family[..per_family] {
                fixtures.queries.push(JudgedQuery {
                    text: words.join(" "),
                    searcher_id: searchers.choose(&mut rng).expect("searchers").searcher_id,
                    contains_job_title: false,
                    topic: topic.tag.into(),
                    expected: expected.clone(),
                    cross_vocabulary: is_cross,
                });
            }
        }
        // Judged phrasings are held out of the interaction log.
        let train_cross = &cross[per_family..];
        let train_canon = &canon[per_family..];
        for q in 0..config.training_queries_per_cluster {
            let words = if q % 2 == 0 {
                train_cross[(q / 2) % train_cross.len()]
            } else {
                train_canon[(q / 2) % train_canon.len()]
            };
            let searcher = searchers.choose(&mut rng).expect("searchers");
            let mut shown: Vec<usize> = by_cluster[cluster]
                .choose_multiple(&mut rng, config.same_topic_pairs)
                .copied()
                .collect();
            for _ in 0..config.other_topic_pairs {
                if config.clusters < 2 {
                    break;
                }
                let mut other = rng.gen_range(0..config.clusters - 1);
                if other >= cluster {
                    other += 1;
                }
                shown.push(*by_cluster[other].choose(&mut rng).expect("non-empty cluster"));
            }
            for i in shown {
                let m = &meta[i];
                let matched = m.cluster == cluster;
                let dist = dwell.pick(matched, m.quality);
                let dwell_seconds = rand_distr::Distribution::sample(
                    &rand_distr::LogNormal::new(dist.median.ln(), dist.sigma).expect("valid dwell"),
                    &mut rng,
                );
                interactions.push(InteractionLine {
                    query_text: words.join(" "),
                    searcher_id: searcher.searcher_id,
                    post_id: posts[i].post_id,
                    dwell_seconds,
                    on_topic: (matched && m.quality) as u8,
                    contains_job_title: false,
                    issued_at: 0,
                });
            }
        }
    }
    let members = authors
        .into_iter()
        .map(DirectoryRecord::Author)
        .chain(searchers.into_iter().map(DirectoryRecord::Searcher))
        .collect();
    posts.sort_by_key(|p| p.post_id);
    Ok(SyntheticDataset {
        posts,
        members,
        interactions,
        fixtures,
    })
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| Error::Format {
            what: "generated record",
            reason: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

impl SyntheticDataset {
    pub const POSTS_FILE: &'static str = "posts.jsonl";
    pub const MEMBERS_FILE: &'static str = "members.jsonl";
    pub const INTERACTIONS_FILE: &'static str = "interactions.jsonl";
    pub const FIXTURES_FILE: &'static str = "fixtures.jsonl";

    pub fn interaction_records(&self) -> Result<Vec<InteractionRecord>> {
        self.interactions.iter().cloned().map(InteractionLine::into_record).collect()
    }

    /// Writes the four line-delimited files into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_lines(&dir.join(Self::POSTS_FILE), &self.posts)?;
        write_lines(&dir.join(Self::MEMBERS_FILE), &self.members)?;
        write_lines(&dir.join(Self::INTERACTIONS_FILE), &self.interactions)?;
        let path = dir.join(Self::FIXTURES_FILE);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.fixtures.write(BufWriter::new(file))
    }
}
