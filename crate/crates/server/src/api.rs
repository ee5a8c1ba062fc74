//! JSON routes, mounted under both `/api/v1` and `/api`.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use propscope::analytics::{self, AggregateStats, MediaCount};
use propscope::detector::DetectorInfo;
use propscope::ingest::{fetch_page, FetchError};
use propscope::{tokenize, AnalyzedArticle, FilterSpec, Fragment, Orientation, TechniqueLabel, TokenizedText};

use crate::{AppState, MAX_TEXT_CHARS};

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 500;
pub const DEFAULT_BUCKET_SECONDS: i64 = 86_400;

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Unprocessable(String),
    BadGateway(String),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::BadGateway(m) => (StatusCode::BAD_GATEWAY, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(ErrorBody { error })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/analyze", post(analyze))
        .route("/techniques", get(techniques))
        .route("/topics", get(topics))
        .route("/topics/{id}/stats", get(topic_stats))
        .route("/topics/{id}/articles", get(topic_articles))
        .route("/media", get(media))
        .route("/articles/{id}", get(article));
    Router::new()
        .nest("/api/v1", api.clone())
        .nest("/api", api)
        .route("/health", get(|| async { "ok" }))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub text: Option<String>,
    pub url: Option<String>,
    pub threshold: Option<f64>,
    pub detector: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentView {
    pub technique: TechniqueLabel,
    pub technique_name: String,
    pub token_begin: usize,
    pub token_end: usize,
    pub char_begin: usize,
    pub char_end: usize,
    pub confidence: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceView {
    pub index: usize,
    pub char_begin: usize,
    pub char_end: usize,
    pub propaganda_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResponse {
    pub detector: DetectorInfo,
    pub threshold: f64,
    pub url: Option<String>,
    pub title: Option<String>,
    pub text: String,
    pub token_count: usize,
    pub sentences: Vec<SentenceView>,
    pub fragments: Vec<FragmentView>,
    pub technique_counts: BTreeMap<TechniqueLabel, usize>,
    /// Share of tokens covered by the returned fragments.
    pub propaganda_score: f64,
}

fn char_slice(s: &str, begin: usize, end: usize) -> String {
    s.chars().skip(begin).take(end - begin).collect()
}

pub fn fragment_view(text: &TokenizedText, f: &Fragment) -> FragmentView {
    FragmentView {
        technique: f.technique,
        technique_name: f.technique.display_name().to_string(),
        token_begin: f.token_begin,
        token_end: f.token_end,
        char_begin: f.char_begin,
        char_end: f.char_end,
        confidence: f.confidence,
        text: char_slice(text.raw_text(), f.char_begin, f.char_end),
    }
}

async fn analyze(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AnalysisRequest>, JsonRejection>,
) -> ApiResult<AnalysisResponse> {
    let Json(req) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let threshold = req.threshold.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ApiError::BadRequest(format!("threshold {threshold} outside [0, 1]")));
    }
    let detector = state
        .detectors
        .get(req.detector.as_deref())
        .cloned()
        .ok_or_else(|| {
            ApiError::BadRequest(format!(
                "unknown detector `{}`",
                req.detector.as_deref().unwrap_or_default()
            ))
        })?;
    let (raw, title, url) = match (req.text, req.url) {
        (Some(text), None) => {
            if text.trim().is_empty() {
                return Err(ApiError::BadRequest("text is empty".into()));
            }
            let n = text.chars().count();
            if n > MAX_TEXT_CHARS {
                return Err(ApiError::BadRequest(format!(
                    "text has {n} characters; the limit is {MAX_TEXT_CHARS}"
                )));
            }
            (text, None, None)
        }
        (None, Some(url)) => {
            let transport = Arc::clone(&state.transport);
            let target = url.clone();
            let page = blocking(move || {
                fetch_page(transport.as_ref(), &target).map_err(|e| match e {
                    FetchError::Extract(e) => ApiError::Unprocessable(format!("{target}: {e}")),
                    other => ApiError::BadGateway(other.to_string()),
                })
            })
            .await?;
            let title = Some(page.title).filter(|t| !t.is_empty());
            (page.text, title, Some(url))
        }
        _ => return Err(ApiError::BadRequest("give exactly one of `text` and `url`".into())),
    };
    blocking(move || {
        let text = tokenize(&raw);
        if text.is_empty() {
            return Err(ApiError::Unprocessable("no tokens in text".into()));
        }
        let detection = detector.analyze(&text).with_threshold(threshold);
        let mut technique_counts: BTreeMap<TechniqueLabel, usize> =
            TechniqueLabel::techniques().map(|t| (t, 0)).collect();
        for f in &detection.fragments {
            *technique_counts.entry(f.technique).or_default() += 1;
        }
        let propaganda_score =
            analytics::covered_token_count(&detection.fragments) as f64 / text.token_count() as f64;
        let sentences = text
            .sentences()
            .iter()
            .zip(&detection.sentence_flags)
            .map(|(s, flag)| {
                let (char_begin, char_end) = text.char_span(s.first_token, s.last_token);
                SentenceView {
                    index: s.index,
                    char_begin,
                    char_end,
                    propaganda_probability: flag.propaganda_probability,
                }
            })
            .collect();
        Ok(Json(AnalysisResponse {
            detector: detector.info(),
            threshold,
            url,
            title,
            token_count: text.token_count(),
            sentences,
            fragments: detection.fragments.iter().map(|f| fragment_view(&text, f)).collect(),
            technique_counts,
            propaganda_score,
            text: raw,
        }))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueInfo {
    pub id: TechniqueLabel,
    pub name: String,
    pub description: String,
}

async fn techniques() -> Json<Vec<TechniqueInfo>> {
    Json(
        TechniqueLabel::techniques()
            .map(|t| TechniqueInfo {
                id: t,
                name: t.display_name().to_string(),
                description: t.description().to_string(),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic_id: String,
    pub display_name: String,
    pub keywords: Vec<String>,
    pub article_count: usize,
}

async fn topics(State(state): State<Arc<AppState>>) -> Json<Vec<TopicSummary>> {
    let articles = state.store.articles();
    Json(
        state
            .topics
            .iter()
            .map(|t| TopicSummary {
                topic_id: t.topic_id.clone(),
                display_name: t.display_name.clone(),
                keywords: t.keywords.clone(),
                article_count: articles.iter().filter(|a| a.topics.contains(&t.topic_id)).count(),
            })
            .collect(),
    )
}

/// Query parameters shared by the topic and media routes. Dates accept
/// RFC 3339 or `YYYY-MM-DD`; a bare `to` date includes that whole day.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterParams {
    pub from: Option<String>,
    pub to: Option<String>,
    pub keyword: Option<String>,
    pub orientation: Option<String>,
    pub source: Option<String>,
    pub topic: Option<String>,
    pub bucket: Option<String>,
    pub limit: Option<String>,
    pub offset: Option<String>,
}

fn parse_time(raw: &str, end_of_day: bool) -> Result<DateTime<Utc>, ApiError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Ok(t.with_timezone(&Utc));
    }
    let day = NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|_| ApiError::BadRequest(format!("bad date `{raw}`")))?;
    let t = if end_of_day {
        day.and_hms_opt(23, 59, 59)
    } else {
        day.and_hms_opt(0, 0, 0)
    };
    Ok(t.expect("valid wall time").and_utc())
}

fn parse_num<T: std::str::FromStr>(name: &str, raw: &Option<String>) -> Result<Option<T>, ApiError> {
    raw.as_deref()
        .map(|v| v.parse().map_err(|_| ApiError::BadRequest(format!("bad {name} `{v}`"))))
        .transpose()
}

fn non_empty(v: &Option<String>) -> Option<String> {
    v.as_deref().map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

impl FilterParams {
    pub fn to_spec(&self, topic_id: Option<String>) -> Result<FilterSpec, ApiError> {
        let spec = FilterSpec {
            time_from: non_empty(&self.from).map(|v| parse_time(&v, false)).transpose()?,
            time_to: non_empty(&self.to).map(|v| parse_time(&v, true)).transpose()?,
            keyword: non_empty(&self.keyword),
            orientation: non_empty(&self.orientation)
                .map(|v| v.parse::<Orientation>().map_err(|e| ApiError::BadRequest(e.to_string())))
                .transpose()?,
            source_id: non_empty(&self.source),
            topic_id: topic_id.or_else(|| non_empty(&self.topic)),
        };
        spec.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
        Ok(spec)
    }

    pub fn bucket(&self) -> Result<TimeDelta, ApiError> {
        let secs = parse_num::<i64>("bucket", &self.bucket)?.unwrap_or(DEFAULT_BUCKET_SECONDS);
        if secs < 1 {
            return Err(ApiError::BadRequest("bucket must be at least 1 second".into()));
        }
        Ok(TimeDelta::seconds(secs))
    }

    pub fn page(&self) -> Result<(usize, usize), ApiError> {
        let limit = parse_num::<usize>("limit", &self.limit)?.unwrap_or(DEFAULT_LIMIT);
        if !(1..=MAX_LIMIT).contains(&limit) {
            return Err(ApiError::BadRequest(format!("limit must be in 1..={MAX_LIMIT}")));
        }
        Ok((limit, parse_num::<usize>("offset", &self.offset)?.unwrap_or(0)))
    }
}

fn known_topic(state: &AppState, id: &str) -> Result<(), ApiError> {
    state
        .topic(id)
        .map(|_| ())
        .ok_or_else(|| ApiError::NotFound(format!("unknown topic `{id}`")))
}

fn query(q: Result<Query<FilterParams>, axum::extract::rejection::QueryRejection>) -> Result<FilterParams, ApiError> {
    q.map(|Query(p)| p).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn topic_stats(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<FilterParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<AggregateStats> {
    known_topic(&state, &id)?;
    let params = query(q)?;
    let spec = params.to_spec(Some(id))?;
    let bucket = params.bucket()?;
    blocking(move || {
        let articles = state.store.articles();
        let selected = analytics::filter_articles(articles.iter().map(Arc::as_ref), &state.directory, &spec)
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        analytics::aggregate(selected, bucket)
            .map(Json)
            .map_err(|e| ApiError::BadRequest(e.to_string()))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleSummary {
    pub article_id: String,
    pub source_id: String,
    pub source_name: String,
    pub orientation: Orientation,
    pub url: String,
    pub title: String,
    pub published_at: DateTime<Utc>,
    pub propaganda_score: f64,
    pub fragment_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticlePage {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub articles: Vec<ArticleSummary>,
}

async fn topic_articles(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<FilterParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<ArticlePage> {
    known_topic(&state, &id)?;
    let params = query(q)?;
    let spec = params.to_spec(Some(id))?;
    let (limit, offset) = params.page()?;
    let articles = state.store.articles();
    let selected = analytics::filter_articles(articles.iter().map(Arc::as_ref), &state.directory, &spec)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let ranked = analytics::rank_articles(selected);
    let total = ranked.len();
    let page = ranked
        .into_iter()
        .skip(offset)
        .take(limit)
        .map(|a| {
            let source = state.directory.get(&a.source_id);
            ArticleSummary {
                article_id: a.article_id.clone(),
                source_id: a.source_id.clone(),
                source_name: source.map_or_else(|| a.source_id.clone(), |s| s.name.clone()),
                orientation: source.map_or(Orientation::Unknown, |s| s.orientation),
                url: a.url.clone(),
                title: a.title.clone(),
                published_at: a.published_at,
                propaganda_score: a.propaganda_score,
                fragment_count: a.fragments.len(),
            }
        })
        .collect();
    Ok(Json(ArticlePage {
        total,
        offset,
        limit,
        articles: page,
    }))
}

async fn media(
    State(state): State<Arc<AppState>>,
    q: Result<Query<FilterParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Vec<MediaCount>> {
    let params = query(q)?;
    let spec = params.to_spec(None)?;
    if let Some(id) = &spec.topic_id {
        known_topic(&state, id)?;
    }
    let articles = state.store.articles();
    let selected = analytics::filter_articles(articles.iter().map(Arc::as_ref), &state.directory, &spec)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(Json(analytics::media_counts(selected, &state.directory)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleDetail {
    #[serde(flatten)]
    pub article: AnalyzedArticle,
    pub source_name: String,
    pub orientation: Orientation,
    pub fragment_views: Vec<FragmentView>,
}

async fn article(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ArticleDetail> {
    let a = state
        .store
        .get(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown article `{id}`")))?;
    let source = state.directory.get(&a.source_id);
    Ok(Json(ArticleDetail {
        source_name: source.map_or_else(|| a.source_id.clone(), |s| s.name.clone()),
        orientation: source.map_or(Orientation::Unknown, |s| s.orientation),
        fragment_views: a.fragments.iter().map(|f| fragment_view(&a.text, f)).collect(),
        article: (*a).clone(),
    }))
}
