//! `semsearch` command line: index, train, search, eval, serve.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use semsearch::corpus::{load_interactions, MemberId, Query};
use semsearch::engine::{Engine, EngineConfig, RetrievalMode, SearchOptions, ServiceHandle, ShutdownSignal};
use semsearch::error::Error;
use semsearch::eval::synthetic::{generate, SyntheticConfig};
use semsearch::eval::{alpha_sweep, evaluate, sweep_table, EvalFixtures};

#[derive(Parser)]
#[command(name = "semsearch", version, about = "Hybrid keyword and embedding post search")]
struct Cli {
    /// Engine config file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `data_dir` from the config.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    /// More logging; repeat for trace output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hybrid,
    TbrOnly,
    EbrOnly,
}

impl From<Mode> for RetrievalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Hybrid => RetrievalMode::Hybrid,
            Mode::TbrOnly => RetrievalMode::TbrOnly,
            Mode::EbrOnly => RetrievalMode::EbrOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest posts (and optionally members) and build the indexes.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        members: Option<PathBuf>,
    },
    /// Train the two-tower model and both ranking stages.
    Train {
        #[arg(long)]
        interactions: PathBuf,
    },
    /// Run one query.
    Search {
        #[arg(long)]
        q: String,
        #[arg(long, default_value_t = 0)]
        searcher: u64,
        #[arg(long)]
        job_title: bool,
        #[arg(long)]
        page_size: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum, default_value_t = Mode::Hybrid)]
        mode: Mode,
        /// Print the full response as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Score the engine against judged queries.
    Eval {
        #[arg(long)]
        fixtures: PathBuf,
        /// Report a table over several alphas instead of one run.
        #[arg(long)]
        alpha_sweep: bool,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
        alphas: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Mode::Hybrid)]
        mode: Mode,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Write a synthetic corpus, member file, interaction log and fixtures.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        posts_per_cluster: Option<usize>,
    },
    /// Print the effective config.
    Config,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Lines(lines) = &e {
                for l in lines.iter().skip(1).take(20) {
                    eprintln!("  {l}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::Nearline { .. } => 3,
        _ => 2,
    }
}

fn reader(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(cli: &Cli) -> Result<EngineConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load_config(&cli)?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Index { corpus, members } => {
            let corpus = reader(&corpus)?;
            let members = members.as_deref().map(reader).transpose()?;
            let engine = Engine::open(config)?;
            let report = engine.ingest_posts(corpus)?;
            for e in &report.errors {
                tracing::warn!("skipped corpus {e}");
            }
            if let Some(m) = members {
                let n = engine.load_members(m)?;
                writeln!(out, "members: {n}")?;
            }
            engine.build_tbr()?;
            if engine.is_trained() {
                engine.build_embeddings()?;
            }
            engine.save()?;
            writeln!(
                out,
                "stored {} posts ({} skipped); {} posts indexed",
                report.stored,
                report.errors.len(),
                engine.posts().len()
            )?;
        }
        Command::Train { interactions } => {
            let file = reader(&interactions)?;
            let mut engine = Engine::open(config)?;
            let records = load_interactions(file, engine.posts())?;
            let summary = engine.train(&records)?;
            engine.save()?;
            writeln!(out, "trained on {} interactions", summary.examples)?;
            writeln!(
                out,
                "two-tower loss {:.4} -> {:.4}",
                summary.two_tower.initial_loss, summary.two_tower.final_loss
            )?;
            writeln!(
                out,
                "L1 long-dwell loss {:.4} -> {:.4}",
                summary.l1.long_dwell.initial_loss, summary.l1.long_dwell.final_loss
            )?;
            if let Some(on) = &summary.l2.on_topicness {
                writeln!(out, "L2 on-topicness loss {:.4} -> {:.4}", on.initial_loss, on.final_loss)?;
            }
            writeln!(
                out,
                "L2 long-dwell loss {:.4} -> {:.4}",
                summary.l2.long_dwell.initial_loss, summary.l2.long_dwell.final_loss
            )?;
        }
        Command::Search {
            q,
            searcher,
            job_title,
            page_size,
            alpha,
            mode,
            json,
        } => {
            let engine = Engine::open(config)?;
            let mut query = Query::new(q, MemberId(searcher));
            query.contains_job_title = job_title;
            let options = SearchOptions {
                alpha,
                page_size,
                mode: mode.into(),
            };
            let response = engine.search_with(&query, &options)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&response).expect("response serializes"))?;
            } else {
                writeln!(out, "{:>4}  {:>10}  {:>8}  {:>8}  {:>8}  {:<6}  text", "rank", "post", "fused", "on-topic", "dwell", "source")?;
                for (i, r) in response.results.iter().enumerate() {
                    let text = engine.posts().get_post(r.post_id).map(|p| p.text.clone()).unwrap_or_default();
                    let text: String = text.chars().take(60).collect();
                    let s = serde_json::to_value(r.source).expect("source serializes");
                    writeln!(
                        out,
                        "{:>4}  {:>10}  {:>8.4}  {:>8.4}  {:>8.4}  {:<6}  {}",
                        i + 1,
                        r.post_id.to_string(),
                        r.fused,
                        r.on_topicness.unwrap_or(f64::NAN),
                        r.long_dwell,
                        s.as_str().unwrap_or(""),
                        text
                    )?;
                }
                let t = response.timings;
                writeln!(
                    out,
                    "{} results; candidates tbr {} ebr {}; retrieval {}us, L1 {}us, L2 {}us, total {}us",
                    response.results.len(),
                    response.tbr_candidates,
                    response.ebr_candidates,
                    t.retrieval_us,
                    t.l1_us,
                    t.l2_us,
                    t.total_us
                )?;
            }
        }
        Command::Eval {
            fixtures,
            alpha_sweep: sweep,
            alphas,
            mode,
            seed,
            json,
        } => {
            let file = reader(&fixtures)?;
            let engine = Engine::open(config)?;
            let fixtures = EvalFixtures::load(file)?;
            fixtures.check_against(engine.posts())?;
            if sweep {
                let rows = alpha_sweep(&engine, &fixtures, &alphas, seed)?;
                if json {
                    writeln!(out, "{}", serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
                } else {
                    write!(out, "{}", sweep_table(&rows))?;
                }
            } else {
                let options = SearchOptions {
                    mode: mode.into(),
                    ..SearchOptions::default()
                };
                let report = evaluate(&engine, &fixtures, &options, seed)?;
                if json {
                    writeln!(out, "{}", report.to_json())?;
                } else {
                    write!(out, "{}", report.table())?;
                }
            }
        }
        Command::Serve { listen } => {
            let listen = listen.unwrap_or_else(|| config.listen.clone());
            let mut engine = Engine::open(config)?;
            engine.start_nearline()?;
            let service = ServiceHandle::spawn(Arc::new(engine), &listen, ShutdownSignal::CtrlC)?;
            writeln!(out, "listening on http://{}", service.addr())?;
            out.flush()?;
            drop(out);
            service.wait()?;
        }
        Command::Generate {
            out: dir,
            seed,
            clusters,
            posts_per_cluster,
        } => {
            let mut synthetic = SyntheticConfig::default();
            if let Some(c) = clusters {
                synthetic.clusters = c;
            }
            if let Some(p) = posts_per_cluster {
                synthetic.posts_per_cluster = p;
            }
            let ds = generate(&synthetic, seed)?;
            ds.write_to(&dir)?;
            writeln!(
                out,
                "wrote {} posts, {} members, {} interactions, {} judged queries to {}",
                ds.posts.len(),
                ds.members.len(),
                ds.interactions.len(),
                ds.fixtures.queries.len(),
                dir.display()
            )?;
        }
        Command::Config => write!(out, "{}", config.to_toml())?,
    }
    Ok(())
}
