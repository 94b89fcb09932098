use std::collections::BTreeSet;
use std::sync::OnceLock;

use semsearch::corpus::{InteractionRecord, MemberId, Post, PostId, PostType, Query};
use semsearch::engine::{Engine, EngineConfig, RetrievalMode, SearchOptions, SearchResponse};
use semsearch::error::Error;
use semsearch::eval::alpha_sweep;
use semsearch::eval::synthetic::{generate, SyntheticConfig, SyntheticDataset};
use semsearch::ranking::Source;

fn post(id: u64, text: &str) -> Post {
    Post {
        post_id: PostId(id),
        text: text.into(),
        post_type: PostType::Text,
        author_id: MemberId(100 + id % 3),
        created_at: 1_735_600_000,
        popularity: 0.5,
    }
}

fn record(q: &str, id: u64, good: bool) -> InteractionRecord {
    InteractionRecord {
        query: Query::new(q, MemberId(1)),
        post_id: PostId(id),
        dwell_seconds: if good { 60.0 } else { 2.0 },
        on_topic: good,
    }
}

const FILLER: [&str; 19] = [
    "gardening tips for tomatoes",
    "ask your manager about remote days",
    "how to bake sourdough bread",
    "a raise in interest rates",
    "ask me anything about rust",
    "running a marathon for charity",
    "how to plan a product launch",
    "raise funds for a startup",
    "notes on distributed systems",
    "for the love of jazz",
    "weekend hiking trip photos",
    "how to write a cover letter",
    "team offsite agenda ideas",
    "a quick guide to sql joins",
    "learning to paint with watercolors",
    "ask better questions in interviews",
    "awareness for ocean cleanup",
    "book club picks this month",
    "for new grads entering tech",
];

/// Twenty posts; post 9 is the only one containing every token of
/// "how to ask for a raise" and the only one labelled relevant to it.
fn post_nine_engine() -> Engine {
    let mut engine = Engine::in_memory(EngineConfig::default()).unwrap();
    let mut filler = FILLER.iter();
    for id in 1..=20u64 {
        let text = if id == 9 {
            "how to ask for a raise and negotiate your salary"
        } else {
            filler.next().unwrap()
        };
        engine.add_post(post(id, text)).unwrap();
    }
    engine.build_tbr().unwrap();
    let mut records = Vec::new();
    for q in ["how to ask for a raise", "ask for a raise", "negotiate salary", "salary raise"] {
        for _ in 0..4 {
            for id in 1..=20u64 {
                records.push(record(q, id, id == 9));
            }
        }
    }
    engine.train(&records).unwrap();
    engine
}

#[test]
fn post_nine_ranks_first_from_both_retrievers() {
    let engine = post_nine_engine();
    let query = Query::new("how to ask for a raise", MemberId(1));
    // Fixture premises: only post 9 matches every token, and it is nearest.
    let tbr = engine.retrieve(&query, RetrievalMode::TbrOnly).unwrap();
    assert_eq!(tbr.candidates, vec![(PostId(9), Source::Tbr)]);
    assert_eq!(engine.ebr_search(&query, 1).unwrap()[0].0, PostId(9));

    let response = engine.search(&query).unwrap();
    assert_eq!(response.results[0].post_id, PostId(9));
    assert_eq!(response.results[0].source, Source::Both);
    assert_eq!(response.tbr_candidates, 1);
}

#[test]
fn page_is_truncated_to_available_candidates() {
    let engine = post_nine_engine();
    // "raise" appears in exactly three posts.
    let query = Query::new("raise", MemberId(1));
    let options = SearchOptions {
        mode: RetrievalMode::TbrOnly,
        page_size: Some(10),
        ..SearchOptions::default()
    };
    let response = engine.search_with(&query, &options).unwrap();
    assert_eq!(response.results.len(), 3);
    let ids: BTreeSet<PostId> = response.results.iter().map(|r| r.post_id).collect();
    assert_eq!(ids, [4, 8, 9].into_iter().map(PostId).collect());
}

#[test]
fn untrained_engine_and_empty_query_are_errors() {
    let engine = Engine::in_memory(EngineConfig::default()).unwrap();
    engine.add_post(post(1, "hello world")).unwrap();
    engine.build_tbr().unwrap();
    let err = engine.search(&Query::new("hello", MemberId(1))).unwrap_err();
    assert!(matches!(err, Error::Uninitialized(_)), "{err}");

    let trained = post_nine_engine();
    let err = trained.search(&Query::new("   ", MemberId(1))).unwrap_err();
    assert!(matches!(err, Error::Invalid { .. }), "{err}");
}

fn synthetic() -> &'static (SyntheticDataset, Engine) {
    static CELL: OnceLock<(SyntheticDataset, Engine)> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = SyntheticConfig {
            clusters: 5,
            posts_per_cluster: 80,
            training_queries_per_cluster: 24,
            ..SyntheticConfig::default()
        };
        let ds = generate(&config, 3).unwrap();
        let mut engine = Engine::in_memory(EngineConfig::default()).unwrap();
        for p in &ds.posts {
            engine.add_post(p.clone()).unwrap();
        }
        {
            let mut dir = engine.directory().write();
            for m in &ds.members {
                dir.insert(m.clone()).unwrap();
            }
        }
        engine.build_tbr().unwrap();
        engine.train(&ds.interaction_records().unwrap()).unwrap();
        (ds, engine)
    })
}

fn without_timings(mut r: SearchResponse) -> SearchResponse {
    r.timings = Default::default();
    r
}

#[test]
fn responses_respect_cascade_invariants_and_are_deterministic() {
    let (ds, engine) = synthetic();
    let c = engine.config();
    for q in &ds.fixtures.queries {
        let query = q.query();
        let retrieved = engine.retrieve(&query, RetrievalMode::Hybrid).unwrap();
        let emitted: BTreeSet<PostId> = retrieved.candidates.iter().map(|(id, _)| *id).collect();

        let r = engine.search(&query).unwrap();
        assert!(r.results.len() <= c.page_size);
        assert!(r.l1_input <= c.k_tbr + c.k_ebr);
        assert_eq!(r.l1_input, emitted.len());
        assert!(r.l2_input <= c.keep_l1);
        for s in &r.results {
            assert!(emitted.contains(&s.post_id), "post {} was never retrieved", s.post_id);
            assert!(s.fused > 0.0 && s.fused < 1.0);
        }
        let t = r.timings;
        assert!(t.retrieval_us + t.l1_us + t.l2_us <= t.total_us);

        let again = engine.search(&query).unwrap();
        assert_eq!(without_timings(r), without_timings(again));
    }
}

#[test]
fn cross_vocabulary_queries_are_served_by_ebr_alone() {
    let (ds, engine) = synthetic();
    for q in ds.fixtures.queries.iter().filter(|q| q.cross_vocabulary) {
        let r = engine.search(&q.query()).unwrap();
        assert_eq!(r.tbr_candidates, 0, "{}", q.text);
        assert!(!r.results.is_empty());
        assert!(r.results.iter().all(|s| s.source == Source::Ebr));
    }
}

#[test]
fn alpha_override_changes_only_the_fusion() {
    let (ds, engine) = synthetic();
    let query = ds.fixtures.queries[0].query();
    for alpha in [0.0, 1.0] {
        let r = engine
            .search_with(
                &query,
                &SearchOptions {
                    alpha: Some(alpha),
                    ..SearchOptions::default()
                },
            )
            .unwrap();
        for s in &r.results {
            let expected = alpha * s.on_topicness.unwrap() + (1.0 - alpha) * s.long_dwell;
            assert_eq!(s.fused, expected);
        }
    }
    let bad = SearchOptions {
        alpha: Some(1.5),
        ..SearchOptions::default()
    };
    assert!(engine.search_with(&query, &bad).is_err());
}

#[test]
fn alpha_sweep_rows_and_repeatability() {
    let (ds, engine) = synthetic();
    let rows = alpha_sweep(engine, &ds.fixtures, &[1.0, 0.0], 5).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].alpha, 0.0);
    assert_eq!(rows[1].alpha, 1.0);
    assert_eq!(rows, alpha_sweep(engine, &ds.fixtures, &[0.0, 1.0], 5).unwrap());
    assert!(alpha_sweep(engine, &ds.fixtures, &[-0.1], 5).is_err());
}

#[test]
fn saved_engine_reopens_with_identical_results() {
    let (ds, engine) = synthetic();
    let dir = tempfile::tempdir().unwrap();
    let config = EngineConfig {
        data_dir: dir.path().to_path_buf(),
        ..EngineConfig::default()
    };
    {
        let mut copy = Engine::open(config.clone()).unwrap();
        for p in &ds.posts {
            copy.add_post(p.clone()).unwrap();
        }
        {
            let mut d = copy.directory().write();
            for m in &ds.members {
                d.insert(m.clone()).unwrap();
            }
        }
        copy.build_tbr().unwrap();
        copy.train(&ds.interaction_records().unwrap()).unwrap();
        copy.save().unwrap();
    }
    let reopened = Engine::open(config).unwrap();
    assert!(reopened.is_trained());
    for q in ds.fixtures.queries.iter().take(6) {
        let a = engine.search(&q.query()).unwrap();
        let b = reopened.search(&q.query()).unwrap();
        assert_eq!(without_timings(a), without_timings(b));
    }
}
