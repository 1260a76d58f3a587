//! `council`: command-line client of the council service.
//!
//! Every subcommand talks to the service over HTTP. With `--server` that is
//! a running instance; otherwise one is started in-process on a loopback
//! port for the duration of the command.

mod columns;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use futures::StreamExt;
use serde_json::json;

use council_client::CouncilClient;
use council_core::api::*;
use council_core::config::{Backend, Preset, SynthesisMode};
use council_core::stats::{CostParams, LeveneCenter, Pricing};
use council_core::transcript::persist_transcript;
use council_core::triage::LabeledQuery;
use council_core::{CouncilConfig, EventKind};
use council_service::{AppState, ServiceConfig};

use columns::Columns;

#[derive(Parser)]
#[command(name = "council", version, about = "Multi-expert council with claim-level synthesis")]
struct Cli {
    /// Base URL of a running service; without it one is started in-process.
    #[arg(long, global = true)]
    server: Option<String>,
    /// Council configuration file (TOML). Defaults to the built-in roster.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use deterministic offline agents instead of remote providers.
    #[arg(long, global = true)]
    mock: bool,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one query through the council.
    Ask(AskArgs),
    /// Serve the HTTP/SSE interface.
    Serve(ServeArgs),
    /// Simulate correlated expert errors under the shared-failure model.
    Simulate(SimulateArgs),
    /// Evaluation statistics over column files.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Score the triage gate on a labeled dataset.
    TriageEval(TriageEvalArgs),
    /// Re-derive stored transcripts and report mismatches.
    Replay(ReplayArgs),
    /// Print the effective configuration as TOML.
    Config {
        #[arg(long)]
        preset: Option<String>,
    },
}

#[derive(Args)]
struct AskArgs {
    query: String,
    #[arg(long)]
    seed: Option<u64>,
    /// council-noweb, council-web, single-noweb or single-web.
    #[arg(long)]
    preset: Option<String>,
    /// Number of experts taking part.
    #[arg(long)]
    experts: Option<usize>,
    /// Majority vote over final answers instead of structured synthesis.
    #[arg(long)]
    majority_vote: bool,
    /// Write the run transcript here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the full result as JSON instead of the final answer.
    #[arg(long)]
    json: bool,
    /// Suppress progress lines on stderr.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Directory for per-run transcripts.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    /// Comma-separated error rates; a single value applies to every expert.
    #[arg(long, value_delimiter = ',', required = true)]
    marginals: Vec<f64>,
    /// Shared pairwise correlation target.
    #[arg(long, conflicts_with = "pair_rho")]
    target_rho: Option<f64>,
    /// Per-pair targets such as `0-1=0.35,0-2=0.38,1-2=0.32`.
    #[arg(long, value_delimiter = ',')]
    pair_rho: Vec<String>,
    #[arg(long, default_value_t = 1_000_000)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Line-delimited JSON records; the summary is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Pearson correlation of every pair of 0/1 error columns.
    Rho { file: PathBuf },
    /// Bootstrap confidence interval of a column mean.
    Ci {
        file: PathBuf,
        /// Column name or 1-based index.
        #[arg(long, default_value = "1")]
        column: String,
        #[arg(long, default_value_t = council_core::stats::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = council_core::stats::DEFAULT_LEVEL)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Levene test of equal variances, one group per column.
    Levene {
        file: PathBuf,
        /// Center on group medians (Brown-Forsythe).
        #[arg(long)]
        median: bool,
    },
    /// Cohen's kappa of two label columns.
    Kappa {
        file: PathBuf,
        /// The first line names the raters.
        #[arg(long)]
        header: bool,
    },
    /// Paired t-test of the first two columns.
    PairedT { file: PathBuf },
    /// Cost-effectiveness of a council against a single model.
    Cost(CostArgs),
    /// Per-query API cost of one council run.
    QueryCost {
        #[arg(long, default_value_t = 3)]
        experts: usize,
        #[arg(long)]
        tokens_in: u64,
        #[arg(long)]
        tokens_out: u64,
        /// USD per million input tokens; defaults to the study schedule.
        #[arg(long, requires = "price_out")]
        price_in: Option<f64>,
        /// USD per million output tokens.
        #[arg(long, requires = "price_in")]
        price_out: Option<f64>,
    },
}

#[derive(Args)]
struct CostArgs {
    /// Single-model USD per 1,000 queries.
    #[arg(long)]
    single_cost: f64,
    /// Single-model quality score in (0, 1].
    #[arg(long)]
    single_quality: f64,
    #[arg(long, default_value_t = 0.0)]
    single_latency: f64,
    #[arg(long)]
    council_cost: f64,
    #[arg(long)]
    council_quality: f64,
    #[arg(long, default_value_t = 0.0)]
    council_latency: f64,
}

#[derive(Args)]
struct TriageEvalArgs {
    /// One JSON object per line with `query` and `gold` (trivial|nontrivial).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Size of the synthetic set used when no dataset is given.
    #[arg(long, default_value_t = 2000)]
    synthetic: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<CouncilConfig> {
    match path {
        Some(p) => CouncilConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(CouncilConfig::default()),
    }
}

fn service_config(cli: &Cli) -> Result<ServiceConfig> {
    let backend = if cli.mock { Backend::Mock } else { Backend::Remote };
    Ok(ServiceConfig::new(load_config(cli.config.as_deref())?, backend))
}

async fn connect(cli: &Cli) -> Result<CouncilClient> {
    if let Some(url) = &cli.server {
        return Ok(CouncilClient::new(url.clone()));
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.context("binding loopback port")?;
    let addr = listener.local_addr()?;
    let state = AppState::new(service_config(cli)?);
    tokio::spawn(async move {
        if let Err(err) = council_service::serve(listener, state, std::future::pending()).await {
            tracing::error!(error = %err, "embedded service stopped");
        }
    });
    Ok(CouncilClient::new(format!("http://{addr}")))
}

fn kv(key: &str, value: impl std::fmt::Display) {
    println!("{key}: {value}");
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    // An embedded service's warnings duplicate the error the command reports.
    let level = match (cli.verbose, &cli.command) {
        (0, Command::Serve(_)) => "warn",
        (0, _) => "error",
        (1, _) => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(level))
        .with_writer(std::io::stderr)
        .init();

    match run(&cli).await {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

async fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ask(args) => ask(cli, args).await,
        Command::Serve(args) => serve(cli, args).await,
        Command::Simulate(args) => simulate(cli, args).await,
        Command::Stats { command } => stats(cli, command).await,
        Command::TriageEval(args) => triage_eval(cli, args).await,
        Command::Replay(args) => replay(cli, args).await,
        Command::Config { preset } => {
            let mut config = load_config(cli.config.as_deref())?;
            if let Some(p) = preset {
                config.apply_preset(p.parse::<Preset>()?)?;
            }
            print!("{}", config.to_toml_string()?);
            Ok(())
        }
    }
}

async fn ask(cli: &Cli, args: &AskArgs) -> Result<()> {
    let client = connect(cli).await?;
    let req = StartCouncilRequest {
        query: args.query.clone(),
        history: Vec::new(),
        seed: args.seed,
        preset: args.preset.clone(),
        expert_count: args.experts,
        synthesis_mode: args.majority_vote.then_some(SynthesisMode::MajorityVote),
    };
    let id = client.start_council(&req).await?;
    let mut events = Box::pin(client.events(&id).await?);
    while let Some(event) = events.next().await {
        let event = event?;
        if args.quiet {
            continue;
        }
        let expert = event.expert_id.as_deref().unwrap_or("");
        match event.event_type {
            EventKind::TriageDecided => eprintln!("triage: {}", event.payload["outcome"].as_str().unwrap_or("?")),
            EventKind::ExpertCompleted => eprintln!("{expert}: done in {:.2}s", event.payload["latency"].as_f64().unwrap_or(0.0)),
            EventKind::ExpertFailed => eprintln!("{expert}: {} ({})", event.payload["status"].as_str().unwrap_or("failed"), event.payload["error"].as_str().unwrap_or("")),
            EventKind::SynthesisStarted => eprintln!("synthesizing"),
            _ => {}
        }
    }
    let view = client.session(&id).await?;
    if let Some(failure) = view.failure {
        bail!("council failed at {}: {}", failure.stage, failure.message);
    }
    let result = view.result.context("service returned no result")?;
    if let Some(path) = &args.out {
        persist_transcript(&result, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        println!("{}", result.final_answer.as_deref().unwrap_or(""));
    }
    Ok(())
}

async fn serve(cli: &Cli, args: &ServeArgs) -> Result<()> {
    let mut config = service_config(cli)?;
    if let Some(dir) = &args.transcripts {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        config.transcript_dir = Some(dir.clone());
    }
    config.council.validate()?;
    let listener = tokio::net::TcpListener::bind(&args.bind).await.with_context(|| format!("binding {}", args.bind))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    council_service::serve(listener, AppState::new(config), shutdown).await?;
    Ok(())
}

fn parse_pair(spec: &str) -> Result<PairTarget> {
    let (pair, rho) = spec.split_once('=').with_context(|| format!("pair target {spec:?} must look like 0-1=0.35"))?;
    let (i, j) = pair.split_once('-').with_context(|| format!("pair {pair:?} must look like 0-1"))?;
    Ok(PairTarget { i: i.trim().parse()?, j: j.trim().parse()?, rho: rho.trim().parse()? })
}

async fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let marginals = match args.marginals.as_slice() {
        [p] => vec![*p; args.n],
        m if m.len() == args.n => m.to_vec(),
        m => bail!("--n is {} but {} marginals were given", args.n, m.len()),
    };
    let pair_targets = args.pair_rho.iter().map(|s| parse_pair(s)).collect::<Result<Vec<_>>>()?;
    let req = SimulateRequest { marginals, target_rho: args.target_rho, pair_targets, trials: args.trials, seed: args.seed };
    let resp = connect(cli).await?.simulate(&req).await?;
    let (params, result) = (&resp.params, &resp.result);

    let mut records = Vec::new();
    for (i, empirical) in result.empirical_marginals.iter().enumerate() {
        records.push(json!({ "record": "marginal", "expert": i, "empirical": empirical, "target": params.marginal_rates[i] }));
    }
    for i in 0..params.n_experts {
        for j in i + 1..params.n_experts {
            records.push(json!({ "record": "rho", "i": i, "j": j, "empirical": result.pairwise_rho[i][j], "model": params.analytic_rho(i, j) }));
        }
    }
    let summary = json!({
        "record": "summary",
        "trials": result.trials,
        "seed": params.seed,
        "z_probability": params.z_probability,
        "joint_empirical": result.empirical_joint_all,
        "joint_analytic": resp.analytic_joint,
        "joint_standard_error": result.joint_standard_error(),
        "joint_bound": resp.joint_bound,
    });
    records.push(summary);
    if let Some(path) = &args.out {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for r in &records {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
    }

    kv("trials", result.trials);
    kv("z_probability", format!("{:.6}", params.z_probability));
    for (i, m) in result.empirical_marginals.iter().enumerate() {
        kv(&format!("marginal[{i}]"), format!("{m:.6}"));
    }
    for i in 0..params.n_experts {
        let row: Vec<String> = result.pairwise_rho[i].iter().map(|r| r.map_or("nan".to_string(), |r| format!("{r:.4}"))).collect();
        kv(&format!("rho[{i}]"), row.join(" "));
    }
    kv("joint_empirical", format!("{:.6}", result.empirical_joint_all));
    kv("joint_analytic", format!("{:.6}", resp.analytic_joint));
    kv("joint_bound", resp.joint_bound.map_or("undefined".to_string(), |b| format!("{b:.6}")));
    Ok(())
}

fn column_index(cols: &Columns, key: &str) -> Result<usize> {
    if let Some(i) = cols.names.iter().position(|n| n == key) {
        return Ok(i);
    }
    match key.parse::<usize>() {
        Ok(i) if (1..=cols.width()).contains(&i) => Ok(i - 1),
        _ => bail!("no column {key:?}; columns are {:?}", cols.names),
    }
}

async fn stats(cli: &Cli, command: &StatsCommand) -> Result<()> {
    let client = connect(cli).await?;
    match command {
        StatsCommand::Rho { file } => {
            let cols = Columns::read(file, None)?;
            if cols.width() < 2 {
                bail!("need at least two indicator columns");
            }
            for i in 0..cols.width() {
                for j in i + 1..cols.width() {
                    let (a, b) = cols.paired(i, j)?;
                    let to_bits = |v: Vec<f64>| -> Result<Vec<u8>> {
                        v.into_iter()
                            .map(|x| match x {
                                0.0 => Ok(0),
                                1.0 => Ok(1),
                                other => bail!("indicator values must be 0 or 1, got {other}"),
                            })
                            .collect()
                    };
                    let r = client.rho(&RhoRequest { a: to_bits(a)?, b: to_bits(b)? }).await?;
                    kv(&format!("rho[{},{}]", cols.names[i], cols.names[j]), format!("{:.6}", r.rho));
                }
            }
        }
        StatsCommand::Ci { file, column, resamples, level, seed } => {
            let cols = Columns::read(file, None)?;
            let samples = cols.numbers(column_index(&cols, column)?)?;
            let r = client.ci(&CiRequest { samples, resamples: *resamples, level: *level, seed: *seed }).await?;
            kv("mean", format!("{:.6}", r.mean));
            kv("lower", format!("{:.6}", r.lower));
            kv("upper", format!("{:.6}", r.upper));
            kv("level", r.level);
            kv("resamples", r.resamples);
        }
        StatsCommand::Levene { file, median } => {
            let cols = Columns::read(file, None)?;
            let groups = (0..cols.width()).map(|i| Ok((cols.names[i].clone(), cols.numbers(i)?))).collect::<Result<BTreeMap<_, _>>>()?;
            let center = if *median { LeveneCenter::Median } else { LeveneCenter::Mean };
            let r = client.levene(&LeveneRequest { groups, center }).await?;
            kv("statistic", format!("{:.6}", r.statistic));
            kv("p_value", format!("{:.6e}", r.p_value));
            kv("eta_squared", r.eta_squared.map_or("undefined".to_string(), |e| format!("{e:.6}")));
            kv("large_effect", r.large_effect.map_or("undefined".to_string(), |b| b.to_string()));
            kv("bias_variance", format!("{:.6e}", r.bias_variance));
        }
        StatsCommand::Kappa { file, header } => {
            let cols = Columns::read(file, Some(*header))?;
            if cols.width() != 2 {
                bail!("kappa needs exactly two label columns");
            }
            let rows: Vec<_> = cols.cells[0].iter().zip(&cols.cells[1]).filter_map(|(a, b)| Some((a.clone()?, b.clone()?))).collect();
            let (a, b): (Vec<String>, Vec<String>) = rows.into_iter().unzip();
            let r = client.kappa(&KappaRequest { a, b }).await?;
            kv("kappa", format!("{:.6}", r.kappa));
            kv("n", r.n);
        }
        StatsCommand::PairedT { file } => {
            let cols = Columns::read(file, None)?;
            if cols.width() < 2 {
                bail!("paired t-test needs two columns");
            }
            let (a, b) = cols.paired(0, 1)?;
            let r = client.paired_t(&PairedTRequest { a, b }).await?;
            kv("t", format!("{:.6}", r.t));
            kv("p_value", format!("{:.6e}", r.p_value));
            kv("n", r.n);
        }
        StatsCommand::Cost(c) => {
            let single = CostParams::new(c.single_cost, c.single_quality, c.single_latency);
            let council = CostParams::new(c.council_cost, c.council_quality, c.council_latency);
            let r = client.cost(&CostRequest { single, council }).await?;
            kv("cost_per_qaca_single", format!("{:.3}", r.cost_per_qaca_single));
            kv("cost_per_qaca_council", format!("{:.3}", r.cost_per_qaca_council));
            kv("qaca_per_dollar_single", format!("{:.3}", r.qaca_per_dollar_single));
            kv("qaca_per_dollar_council", format!("{:.3}", r.qaca_per_dollar_council));
            kv("cost_ratio", format!("{:.2}", r.cost_ratio));
            kv("latency_ratio", format!("{:.2}", r.latency_ratio));
            kv("quality_ratio", format!("{:.2}", r.quality_ratio));
            kv("cost_per_qaca_ratio", format!("{:.2}", r.cost_per_qaca_ratio));
            kv("qaca_per_dollar_ratio", format!("{:.2}", r.qaca_per_dollar_ratio));
            kv("marginal_cost_per_qaca", r.marginal_cost_per_qaca.map_or("undefined".to_string(), |m| format!("{m:.2}")));
        }
        StatsCommand::QueryCost { experts, tokens_in, tokens_out, price_in, price_out } => {
            let pricing = price_in.zip(*price_out).map(|(i, o)| Pricing { price_in: i / 1e6, price_out: o / 1e6 });
            let r = client.query_cost(&QueryCostRequest { n_experts: *experts, tokens_in: *tokens_in, tokens_out: *tokens_out, pricing }).await?;
            kv("calls", r.calls);
            kv("cost_usd", format!("{:.4}", r.cost));
        }
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Vec<LabeledQuery>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: bad record", path.display(), n + 1)))
        .collect()
}

async fn triage_eval(cli: &Cli, args: &TriageEvalArgs) -> Result<()> {
    let dataset = args.dataset.as_deref().map(read_dataset).transpose()?;
    let req = TriageEvalRequest { dataset, synthetic: Some(args.synthetic), seed: args.seed };
    let m = connect(cli).await?.triage_evaluate(&req).await?;
    kv("accuracy", format!("{:.4}", m.accuracy));
    kv("false_bypass_rate", format!("{:.4}", m.false_bypass_rate));
    kv("trivial_fraction", format!("{:.4}", m.trivial_fraction));
    kv("nontrivial_fraction", format!("{:.4}", m.nontrivial_fraction));
    Ok(())
}

async fn replay(cli: &Cli, args: &ReplayArgs) -> Result<()> {
    let client = connect(cli).await?;
    let mut dirty = 0;
    for path in &args.paths {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report = client.replay(text).await.with_context(|| format!("replaying {}", path.display()))?;
        if report.clean {
            println!("{}: clean", path.display());
        } else {
            dirty += 1;
            println!("{}: {} mismatches", path.display(), report.mismatches.len());
            for m in &report.mismatches {
                println!("  {}: stored {} recomputed {}", m.field, m.stored, m.recomputed);
            }
        }
    }
    if dirty > 0 {
        bail!("{dirty} of {} transcripts have mismatches", args.paths.len());
    }
    Ok(())
}
