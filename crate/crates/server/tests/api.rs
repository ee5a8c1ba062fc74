use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeDelta, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use propscope::analytics::{self, AggregateStats, SourceDirectory};
use propscope::detector::LexiconDetector;
use propscope::ingest::FixtureTransport;
use propscope::model::ArticleParts;
use propscope::store::ArticleStore;
use propscope::{tokenize, AnalyzedArticle, Detector, FilterSpec, MediaSource, Orientation, Topic};
use propscope_server::api::{AnalysisResponse, ArticlePage};
use propscope_server::{router, AppState, Detectors};

fn fixture_http() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/http")
}

fn sources() -> Vec<MediaSource> {
    [("left", Orientation::Left), ("right", Orientation::Right), ("mid", Orientation::Center)]
        .iter()
        .map(|(id, o)| MediaSource {
            source_id: id.to_string(),
            name: format!("The {id}"),
            feed_urls: vec![],
            orientation: *o,
        })
        .collect()
}

fn topics() -> Vec<Topic> {
    vec![
        Topic {
            topic_id: "brexit".into(),
            display_name: "Brexit".into(),
            keywords: vec!["Brexit".into()],
        },
        Topic {
            topic_id: "empty".into(),
            display_name: "Nothing yet".into(),
            keywords: vec!["zzzz".into()],
        },
    ]
}

const BODIES: [&str; 4] = [
    "Brexit is a betrayal. BUILD THE WALL! Wake up, people.",
    "Brexit talks continue on Tuesday.",
    "Brexit? Everyone knows the truth. Make America great again.",
    "Brexit means Brexit. Traitors everywhere.",
];

fn article(n: usize, source: &str, day: u32) -> AnalyzedArticle {
    let text = tokenize(BODIES[n % BODIES.len()]);
    let detection = LexiconDetector::builtin().analyze(&text);
    AnalyzedArticle::new(ArticleParts {
        article_id: format!("art{n:02}"),
        source_id: source.into(),
        url: format!("https://{source}.example/{n}"),
        title: format!("Story {n}"),
        published_at: Utc.with_ymd_and_hms(2020, 3, day, 12, 0, 0).unwrap(),
        text,
        fragments: detection.fragments,
        sentence_flags: detection.sentence_flags,
        topics: BTreeSet::from(["brexit".to_string()]),
        content_hash: format!("{n:064x}"),
    })
    .unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(ArticleStore::open(dir.path()).unwrap());
    // left 4, right 2, mid 1
    let layout = [("left", 1), ("right", 1), ("left", 2), ("mid", 3), ("left", 3), ("right", 5), ("left", 6)];
    for (n, (source, day)) in layout.iter().enumerate() {
        store.append(article(n, source, *day)).unwrap();
    }
    let state = Arc::new(AppState::new(
        store,
        sources(),
        topics(),
        Detectors::load("lexicon", None, None).unwrap(),
        Arc::new(FixtureTransport::new(fixture_http())),
    ));
    Fixture {
        _dir: dir,
        app: router(Arc::clone(&state)),
        state,
    }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api/v1/analyze")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

#[tokio::test]
async fn analyze_slogan() {
    let f = fixture();
    let (status, body) = post(&f.app, json!({"text": "BUILD THE WALL!"})).await;
    assert_eq!(status, StatusCode::OK);
    let resp: AnalysisResponse = serde_json::from_value(body).unwrap();
    let slogans: Vec<_> = resp.fragments.iter().filter(|fr| fr.technique.id() == "slogans").collect();
    assert_eq!(slogans.len(), 1);
    assert_eq!((slogans[0].char_begin, slogans[0].char_end), (0, 14));
    assert_eq!((slogans[0].token_begin, slogans[0].token_end), (0, 2));
    assert_eq!(slogans[0].text, "BUILD THE WALL");
    assert_eq!(resp.token_count, 4);
    // 3 of 4 tokens covered
    assert_eq!(resp.propaganda_score, 0.75);
    assert_eq!(resp.sentences.len(), 1);
    assert_eq!(resp.sentences[0].propaganda_probability, 1.0);
    assert_eq!(resp.detector.name, "lexicon");
}

#[tokio::test]
async fn analyze_validation() {
    let f = fixture();
    let at_limit = "a".repeat(4096);
    assert_eq!(post(&f.app, json!({"text": at_limit})).await.0, StatusCode::OK);
    let over = "a".repeat(4097);
    let (status, body) = post(&f.app, json!({"text": over})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("4097"));
    // the limit counts characters, not bytes
    assert_eq!(post(&f.app, json!({"text": "é".repeat(4096)})).await.0, StatusCode::OK);

    for bad in [
        json!({"text": ""}),
        json!({"text": "   "}),
        json!({}),
        json!({"text": "x", "url": "https://left.example/news/rally"}),
        json!({"text": "x", "threshold": 1.1}),
        json!({"text": "x", "threshold": -0.1}),
        json!({"text": "x", "detector": "mgn"}),
        json!({"text": 5}),
    ] {
        let (status, body) = post(&f.app, bad.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert!(body["error"].is_string(), "{bad}");
    }
    let req = Request::post("/api/analyze")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(call(&f.app, req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn analyze_threshold_matches_detector() {
    let f = fixture();
    let text = "Wake up, people! Everyone knows they are traitors. BUILD THE WALL!";
    let detector = Arc::clone(f.state.detectors.get(None).unwrap());
    let tokens = tokenize(text);
    for tau in [0.0, 0.5, 1.0] {
        let (status, body) = post(&f.app, json!({"text": text, "threshold": tau})).await;
        assert_eq!(status, StatusCode::OK);
        let resp: AnalysisResponse = serde_json::from_value(body).unwrap();
        let expected = detector.analyze(&tokens).with_threshold(tau).fragments;
        let got: Vec<_> = resp.fragments.iter().map(|v| (v.technique, v.char_begin, v.char_end, v.confidence)).collect();
        let want: Vec<_> = expected.iter().map(|v| (v.technique, v.char_begin, v.char_end, v.confidence)).collect();
        assert_eq!(got, want);
        for v in &resp.fragments {
            assert!(v.char_begin < v.char_end && v.char_end <= text.chars().count());
            assert!(v.confidence >= tau);
        }
    }
}

#[tokio::test]
async fn analyze_url() {
    let f = fixture();
    let (status, body) = post(&f.app, json!({"url": "https://left.example/news/rally"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["title"], "Border rally");
    assert!(body["fragments"].as_array().unwrap().iter().any(|fr| fr["technique"] == "slogans"));

    let (status, _) = post(&f.app, json!({"url": "https://www.right.example/story/removed"})).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    let (status, _) = post(&f.app, json!({"url": "https://unreachable.example/"})).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    // a feed document is not an extractable page
    let (status, _) = post(&f.app, json!({"url": "https://left.example/rss"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn techniques_and_topics() {
    let f = fixture();
    let (status, body) = get(&f.app, "/api/techniques").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 18);
    let (_, body) = get(&f.app, "/api/v1/topics").await;
    assert_eq!(body[0]["topic_id"], "brexit");
    assert_eq!(body[0]["article_count"], 7);
    assert_eq!(body[1]["article_count"], 0);
}

#[tokio::test]
async fn stats_equal_direct_aggregate() {
    let f = fixture();
    let articles = f.state.store.articles();
    let dir = SourceDirectory::new(&f.state.sources);
    for (query, spec) in [
        ("orientation=left", FilterSpec { orientation: Some(Orientation::Left), ..Default::default() }),
        ("", FilterSpec::default()),
        ("source=right&keyword=TRUTH", FilterSpec { source_id: Some("right".into()), keyword: Some("TRUTH".into()), ..Default::default() }),
        (
            "from=2020-03-02&to=2020-03-03",
            FilterSpec {
                time_from: Some(Utc.with_ymd_and_hms(2020, 3, 2, 0, 0, 0).unwrap()),
                time_to: Some(Utc.with_ymd_and_hms(2020, 3, 3, 23, 59, 59).unwrap()),
                ..Default::default()
            },
        ),
    ] {
        let spec = FilterSpec { topic_id: Some("brexit".into()), ..spec };
        let (status, body) = get(&f.app, &format!("/api/v1/topics/brexit/stats?{query}")).await;
        assert_eq!(status, StatusCode::OK, "{query}");
        let got: AggregateStats = serde_json::from_value(body).unwrap();
        let selected = analytics::filter_articles(articles.iter().map(Arc::as_ref), &dir, &spec).unwrap();
        let want = analytics::aggregate(selected, TimeDelta::days(1)).unwrap();
        assert_eq!(got, want, "{query}");
    }
    let (_, body) = get(&f.app, "/api/topics/brexit/stats?bucket=3600").await;
    assert_eq!(body["bucket_seconds"], 3600);
}

#[tokio::test]
async fn bad_filters_and_unknown_ids() {
    let f = fixture();
    for uri in [
        "/api/topics/brexit/stats?from=yesterday",
        "/api/topics/brexit/stats?orientation=sideways",
        "/api/topics/brexit/stats?bucket=0",
        "/api/topics/brexit/stats?bucket=abc",
        "/api/topics/brexit/stats?from=2020-03-05&to=2020-03-01",
        "/api/topics/brexit/articles?limit=0",
        "/api/topics/brexit/articles?offset=-1",
    ] {
        let (status, body) = get(&f.app, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert!(body["error"].is_string());
    }
    for uri in ["/api/topics/nope/stats", "/api/topics/nope/articles", "/api/media?topic=nope", "/api/articles/nope"] {
        let (status, body) = get(&f.app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn ranked_articles_paginate() {
    let f = fixture();
    let (status, body) = get(&f.app, "/api/topics/brexit/articles").await;
    assert_eq!(status, StatusCode::OK);
    let all: ArticlePage = serde_json::from_value(body).unwrap();
    assert_eq!((all.total, all.limit, all.offset), (7, 50, 0));
    let scores: Vec<f64> = all.articles.iter().map(|a| a.propaganda_score).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let (_, body) = get(&f.app, "/api/topics/brexit/articles?limit=3&offset=2").await;
    let page: ArticlePage = serde_json::from_value(body).unwrap();
    assert_eq!(page.total, 7);
    assert_eq!(page.articles, all.articles[2..5]);

    let (_, body) = get(&f.app, "/api/topics/brexit/articles?orientation=right").await;
    let right: ArticlePage = serde_json::from_value(body).unwrap();
    assert_eq!(right.total, 2);
    assert!(right.articles.iter().all(|a| a.source_name == "The right"));
}

#[tokio::test]
async fn media_sorted_by_article_count() {
    let f = fixture();
    let (status, body) = get(&f.app, "/api/media?topic=brexit").await;
    assert_eq!(status, StatusCode::OK);
    let counts: Vec<(String, u64)> = body
        .as_array()
        .unwrap()
        .iter()
        .map(|m| (m["source_id"].as_str().unwrap().to_string(), m["article_count"].as_u64().unwrap()))
        .collect();
    assert_eq!(counts, [("left".into(), 4), ("right".into(), 2), ("mid".into(), 1)]);
    let (_, body) = get(&f.app, "/api/media?topic=empty").await;
    assert!(body.as_array().unwrap().is_empty());
}

#[tokio::test]
async fn article_detail() {
    let f = fixture();
    let (status, body) = get(&f.app, "/api/v1/articles/art00").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["article_id"], "art00");
    assert_eq!(body["source_name"], "The left");
    assert_eq!(body["orientation"], "left");
    let stored = f.state.store.get("art00").unwrap();
    assert_eq!(body["propaganda_score"].as_f64().unwrap(), stored.propaganda_score);
    let views = body["fragment_views"].as_array().unwrap();
    assert_eq!(views.len(), stored.fragments.len());
    assert!(views.iter().any(|v| v["text"] == "BUILD THE WALL"));
    let back: AnalyzedArticle = serde_json::from_value(body).unwrap();
    assert_eq!(back, *stored);
}

#[tokio::test]
async fn cors_allows_browsers() {
    let f = fixture();
    let req = Request::get("/api/techniques")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = f.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
