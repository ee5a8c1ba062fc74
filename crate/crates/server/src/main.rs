use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::TimeDelta;
use clap::{Args, Parser, Subcommand, ValueEnum};

use propscope::analytics::{self, SourceDirectory};
use propscope::detector::{
    evaluate, label_sentences, synthetic, train, GateInput, LabeledSentence, MgnConfig,
};
use propscope::ingest::{
    extract_text, fetch_page, FixtureTransport, HttpTransport, IngestConfig, Ingestor, MatchMode, Transport,
};
use propscope::model::{read_spans, write_spans};
use propscope::store::{load_sources, load_topics, ArticleStore};
use propscope::{tokenize, FilterSpec, Orientation};
use propscope_server::{router, AppState, Detectors};

/// Propaganda technique detection for news articles.
#[derive(Parser)]
#[command(name = "propscope", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Directory holding the article log.
    #[arg(long, env = "PROPSCOPE_DATA_DIR", default_value = "data", global = true)]
    data_dir: PathBuf,
    /// Source registry (TOML, `[[source]]` tables).
    #[arg(long, env = "PROPSCOPE_SOURCES", default_value = "sources.toml", global = true)]
    sources: PathBuf,
    /// Topic registry (TOML, `[[topic]]` tables).
    #[arg(long, env = "PROPSCOPE_TOPICS", default_value = "topics.toml", global = true)]
    topics: PathBuf,
    /// Detector used by default: `lexicon` or `mgn`.
    #[arg(long, env = "PROPSCOPE_DETECTOR", default_value = "lexicon", global = true)]
    detector: String,
    /// Trained network parameters, required for `--detector mgn`.
    #[arg(long, env = "PROPSCOPE_MODEL", global = true)]
    model: Option<PathBuf>,
    /// Replace the built-in lexicon.
    #[arg(long, env = "PROPSCOPE_LEXICON", global = true)]
    lexicon: Option<PathBuf>,
    /// Serve HTTP from recorded responses in this directory instead of the network.
    #[arg(long, env = "PROPSCOPE_FIXTURES", global = true)]
    fixtures: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch every source once and store new articles.
    Crawl(CrawlArgs),
    /// Print the fragments found in a file or URL as TSV spans.
    Analyze(AnalyzeArgs),
    /// Train the network detector and write a model file.
    Train(TrainArgs),
    /// Start the HTTP API.
    Serve(ServeArgs),
    /// Print topic statistics as CSV.
    Stats(StatsArgs),
}

#[derive(Args)]
struct CrawlArgs {
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Pause between requests of one source, in milliseconds.
    #[arg(long, default_value_t = 500)]
    delay_ms: u64,
    /// Drop fragments below this confidence before storing.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Match topic keywords anywhere, not only on word boundaries.
    #[arg(long)]
    substring_topics: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// A text or HTML file, or an http(s) URL.
    input: String,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Article id written in the first column (default: file stem or "input").
    #[arg(long)]
    id: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GateArg {
    Logit,
    Probability,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of `<article_id>.txt` files.
    #[arg(long, requires = "spans", conflicts_with = "synthetic")]
    articles: Option<PathBuf>,
    /// Gold spans, `article_id<TAB>technique<TAB>begin<TAB>end`.
    #[arg(long)]
    spans: Option<PathBuf>,
    /// Train on this many generated sentences instead.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, short, default_value = "model.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long, default_value_t = 16)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Weight of the sentence loss.
    #[arg(long, default_value_t = 1.0)]
    task_weight: f64,
    #[arg(long, value_enum, default_value = "logit")]
    gate_input: GateArg,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PROPSCOPE_LISTEN", default_value = "127.0.0.1:8080")]
    listen: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Techniques,
    Series,
}

#[derive(Args)]
struct StatsArgs {
    topic: String,
    #[arg(long, value_enum, default_value = "techniques")]
    table: Table,
    /// Bucket width in seconds for the series table.
    #[arg(long, default_value_t = 86_400)]
    bucket: i64,
    #[arg(long)]
    from: Option<chrono::DateTime<chrono::Utc>>,
    #[arg(long)]
    to: Option<chrono::DateTime<chrono::Utc>>,
    #[arg(long)]
    keyword: Option<String>,
    #[arg(long)]
    orientation: Option<Orientation>,
    #[arg(long)]
    source: Option<String>,
}

fn transport(common: &Common) -> Arc<dyn Transport> {
    match &common.fixtures {
        Some(dir) => Arc::new(FixtureTransport::new(dir)),
        None => Arc::new(HttpTransport::default()),
    }
}

fn detectors(common: &Common) -> Result<Detectors> {
    Ok(Detectors::load(&common.detector, common.model.as_deref(), common.lexicon.as_deref())?)
}

fn crawl(common: &Common, args: &CrawlArgs) -> Result<()> {
    let sources = load_sources(&common.sources)?;
    let topics = load_topics(&common.topics)?;
    let store = ArticleStore::open(&common.data_dir)?;
    let detectors = detectors(common)?;
    let detector = detectors.get(None).expect("default detector present");
    let ingestor = Ingestor {
        store: &store,
        detector: detector.as_ref(),
        topics: &topics,
        config: IngestConfig {
            workers: args.workers,
            politeness_delay: Duration::from_millis(args.delay_ms),
            topic_mode: if args.substring_topics {
                MatchMode::Substring
            } else {
                MatchMode::WordBoundary
            },
            threshold: args.threshold,
        },
    };
    let report = ingestor.run(&sources, transport(common).as_ref());
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    println!(
        "persisted {} articles ({} url duplicates, {} content duplicates, {} skipped, {} errors); store holds {}",
        report.persisted.len(),
        report.url_duplicates,
        report.content_duplicates,
        report.skipped,
        report.errors.len(),
        store.len()
    );
    Ok(())
}

fn analyze(common: &Common, args: &AnalyzeArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.threshold) {
        bail!("threshold {} outside [0, 1]", args.threshold);
    }
    let is_url = args.input.starts_with("http://") || args.input.starts_with("https://");
    let text = if is_url {
        fetch_page(transport(common).as_ref(), &args.input)?.text
    } else {
        let path = Path::new(&args.input);
        let body = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let html = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("html" | "htm" | "xhtml")
        );
        let content_type = if html { "text/html" } else { "text/plain" };
        extract_text(&body, Some(content_type))?.text
    };
    let id = args.id.clone().unwrap_or_else(|| {
        if is_url {
            "input".to_string()
        } else {
            Path::new(&args.input)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("input")
                .to_string()
        }
    });
    let detectors = detectors(common)?;
    let detection = detectors
        .get(None)
        .expect("default detector present")
        .analyze(&tokenize(&text))
        .with_threshold(args.threshold);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    write_spans(&mut out, &id, &detection.fragments)?;
    out.flush()?;
    Ok(())
}

fn labeled_corpus(articles: &Path, spans: &Path) -> Result<Vec<LabeledSentence>> {
    let records = read_spans(io::BufReader::new(
        fs::File::open(spans).with_context(|| format!("reading {}", spans.display()))?,
    ))?;
    let mut files: Vec<PathBuf> = fs::read_dir(articles)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "txt"));
    files.sort();
    let mut corpus = Vec::new();
    for path in files {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = tokenize(&fs::read_to_string(&path)?);
        let mine: Vec<_> = records.iter().filter(|r| r.article_id == id).cloned().collect();
        for r in &mine {
            if r.char_end > text.char_len() {
                bail!("span {}..{} beyond the end of {}", r.char_begin, r.char_end, path.display());
            }
        }
        corpus.extend(label_sentences(&text, &mine).into_iter().filter(|s| !s.tokens.is_empty()));
    }
    Ok(corpus)
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let config = MgnConfig {
        embed_dim: args.embed_dim,
        hidden_dim: args.hidden_dim,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        seed: args.seed,
        task_weight: args.task_weight,
        gate_input: match args.gate_input {
            GateArg::Logit => GateInput::Logit,
            GateArg::Probability => GateInput::Probability,
        },
        ..MgnConfig::default()
    };
    let (corpus, held_out) = match (&args.articles, &args.spans, args.synthetic) {
        (Some(dir), Some(spans), None) => (labeled_corpus(dir, spans)?, None),
        (None, None, Some(n)) => (
            synthetic::generate(n, args.seed),
            Some(synthetic::generate(n, args.seed.wrapping_add(1))),
        ),
        _ => bail!("give either --articles with --spans, or --synthetic N"),
    };
    let (params, report) = train(&corpus, config)?;
    params.save(&args.out)?;
    let fit = evaluate(&params, &corpus)?;
    println!(
        "trained {} epochs on {} sentences, loss {:.6} -> {:.6}",
        report.epochs,
        corpus.len(),
        report.losses[0],
        report.final_loss()
    );
    println!("training set: token F1 {:.4}, sentence F1 {:.4}", fit.token_f1, fit.sentence_f1);
    if let Some(held) = held_out {
        let e = evaluate(&params, &held)?;
        println!("held-out set: token F1 {:.4}, sentence F1 {:.4}", e.token_f1, e.sentence_f1);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

async fn serve(common: &Common, args: &ServeArgs) -> Result<()> {
    let store = Arc::new(ArticleStore::open(&common.data_dir)?);
    let sources = load_sources(&common.sources)?;
    let topics = load_topics(&common.topics)?;
    let state = AppState::new(store, sources, topics, detectors(common)?, transport(common));
    let listener = tokio::net::TcpListener::bind(&args.listen)
        .await
        .with_context(|| format!("binding {}", args.listen))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn stats(common: &Common, args: &StatsArgs) -> Result<()> {
    let topics = load_topics(&common.topics)?;
    if !topics.iter().any(|t| t.topic_id == args.topic) {
        bail!("unknown topic `{}`", args.topic);
    }
    let sources = load_sources(&common.sources)?;
    let store = ArticleStore::open(&common.data_dir)?;
    let spec = FilterSpec {
        time_from: args.from,
        time_to: args.to,
        keyword: args.keyword.clone(),
        orientation: args.orientation,
        source_id: args.source.clone(),
        topic_id: Some(args.topic.clone()),
    };
    let articles = store.articles();
    let selected = analytics::filter_articles(
        articles.iter().map(Arc::as_ref),
        &SourceDirectory::new(&sources),
        &spec,
    )?;
    let stats = analytics::aggregate(selected, TimeDelta::seconds(args.bucket))?;
    let stdout = io::stdout();
    match args.table {
        Table::Techniques => analytics::write_technique_csv(&stats, stdout.lock())?,
        Table::Series => analytics::write_series_csv(&stats, stdout.lock())?,
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Crawl(args) => crawl(&cli.common, args),
        Command::Analyze(args) => analyze(&cli.common, args),
        Command::Train(args) => train_cmd(args),
        Command::Serve(args) => tokio::runtime::Runtime::new()?.block_on(serve(&cli.common, args)),
        Command::Stats(args) => stats(&cli.common, args),
    }
}
