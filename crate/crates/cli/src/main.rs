use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use preflab_core::analysis::{
    accuracy_vs_prior_distance, final_accuracy_by_user, info_gain_experiment, noise_sweep,
    read_user_records_csv, read_user_records_json, user_consistency, user_record_from_transcript,
    with_shuffles, InfoGainConfig,
};
use preflab_core::gateway::{Gateway, GatewayConfig};
use preflab_core::harness::{
    aggregate as aggregate_metrics, as_choice_models, evaluate_population, load_transcripts,
    metrics_rows, population, save_transcripts, spec_factory, write_metrics_csv, Environment,
};
use preflab_core::teaching::{
    export_chat_jsonl, export_dpo_jsonl, generate_corpus, TeachingSpec, TeachingVariant,
};
use preflab_core::webshop::{shopping_episode, Catalog, ShoppingUser};
use preflab_core::{
    Domain, EpisodeConfig, FeatureSpace, PolicySpec, PriorSpec, RenderMode, RenderStyle,
    TemplateVariant, Transcript,
};

#[derive(Parser)]
#[command(
    name = "preflab",
    version,
    about = "Preference inference experiments with simulated and human users"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a policy over a population of simulated users.
    Simulate(SimulateArgs),
    /// Generate a fine-tuning corpus.
    GenData(GenDataArgs),
    /// Run shopping episodes over a product catalog.
    Webshop(WebshopArgs),
    /// Analyses over transcripts, human records and simulations.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Serve the annotation session API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Flight,
    Hotel,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Flight => Domain::Flight,
            DomainArg::Hotel => Domain::Hotel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Bayesian,
    Oracle,
    NoisyOracle,
    Random,
    Cheapest,
    RemoteLlm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Textual,
    Numerical,
}

#[derive(Clone, Copy, ValueEnum)]
enum TemplateArg {
    Interactive,
    NonInteractive,
    Cot,
    PosteriorInContext,
}

#[derive(Args, Clone)]
struct EpisodeArgs {
    #[arg(long, value_enum, default_value = "flight")]
    domain: DomainArg,
    /// Number of features (flights: 1..=8).
    #[arg(long)]
    features: Option<usize>,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    heldout: usize,
    /// Probability that the simulated user picks a non-maximal option.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// `uniform` or a JSON file holding a prior spec.
    #[arg(long, default_value = "uniform")]
    prior: String,
    #[arg(long, value_enum, default_value = "textual")]
    render: ModeArg,
    #[arg(long, value_enum, default_value = "interactive")]
    template: TemplateArg,
}

impl EpisodeArgs {
    fn config(&self, policy: PolicySpec) -> Result<EpisodeConfig> {
        let domain: Domain = self.domain.into();
        let mut cfg = EpisodeConfig::new(domain);
        if let Some(d) = self.features {
            cfg.features = d;
        }
        cfg.rounds = self.rounds;
        cfg.k = self.k;
        cfg.heldout_sets = self.heldout;
        cfg.noise = self.noise;
        cfg.prior = read_prior(&self.prior)?;
        cfg.policy = policy;
        let mode = match self.render {
            ModeArg::Textual => RenderMode::Textual,
            ModeArg::Numerical => RenderMode::Numerical,
        };
        let variant = match self.template {
            TemplateArg::Interactive => TemplateVariant::Interactive,
            TemplateArg::NonInteractive => TemplateVariant::NonInteractive,
            TemplateArg::Cot => TemplateVariant::Cot,
            TemplateArg::PosteriorInContext => TemplateVariant::PosteriorInContext,
        };
        cfg.style = RenderStyle::new(domain, mode, variant)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_prior(arg: &str) -> Result<PriorSpec> {
    if arg == "uniform" {
        return Ok(PriorSpec::Uniform);
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("reading prior {arg}"))?;
    serde_json::from_str(&text).with_context(|| format!("parsing prior {arg}"))
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long, value_enum, default_value = "bayesian")]
    policy: PolicyArg,
    #[arg(long, default_value_t = 0.4)]
    wrong_rate: f64,
    /// Gateway configuration (JSON) for `--policy remote-llm`.
    #[arg(long)]
    gateway: Option<PathBuf>,
    /// Number of seeds, 0..n.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Sample this many users instead of the whole reward space.
    #[arg(long)]
    users: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn policy_spec(p: PolicyArg, wrong_rate: f64, gateway: Option<&Path>) -> Result<PolicySpec> {
    Ok(match p {
        PolicyArg::Bayesian => PolicySpec::Bayesian,
        PolicyArg::Oracle => PolicySpec::Oracle,
        PolicyArg::NoisyOracle => PolicySpec::NoisyOracle { wrong_rate },
        PolicyArg::Random => PolicySpec::Random,
        PolicyArg::Cheapest => PolicySpec::Cheapest,
        PolicyArg::RemoteLlm => {
            let path = gateway.context("--policy remote-llm needs --gateway <config.json>")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let cfg: GatewayConfig =
                serde_json::from_str(&text).context("parsing gateway configuration")?;
            PolicySpec::RemoteLlm { gateway: cfg }
        }
    })
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = policy_spec(a.policy, a.wrong_rate, a.gateway.as_deref())?;
    let cfg = a.episode.config(spec.clone())?;
    let space = cfg.space()?;
    let env: Arc<dyn Environment> = Arc::new(space);
    let gateway = match &spec {
        PolicySpec::RemoteLlm { gateway } => Some(Arc::new(Gateway::new(gateway.clone())?)),
        _ => None,
    };
    let users = as_choice_models(population(env.dim(), cfg.noise, a.users, a.sample_seed)?);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    tracing::info!(
        users = users.len(),
        seeds = seeds.len(),
        policy = spec.name(),
        "simulating"
    );
    let factory = spec_factory(&cfg, &env, gateway);
    let res = evaluate_population(&cfg, env.clone(), &users, &seeds, &factory)?;
    std::fs::create_dir_all(&a.out)?;
    save_transcripts(&a.out.join("transcripts.jsonl"), &res.transcripts)?;
    let rows = metrics_rows(spec.name(), cfg.domain, &res.metrics);
    write_metrics_csv(File::create(a.out.join("metrics.csv"))?, &rows)?;
    for r in &rows {
        println!(
            "round {}: accuracy {:.4} ± {:.4} (n={})",
            r.round, r.mean_acc, r.se, r.n
        );
    }
    Ok(())
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    variant: TeachingVariant,
    #[arg(long, default_value_t = 10)]
    per_user: usize,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value_t = 4)]
    features: usize,
    #[arg(long, default_value_t = 0.4)]
    wrong_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long, default_value = "uniform")]
    prior: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write preference pairs to this file.
    #[arg(long)]
    dpo: Option<PathBuf>,
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec = TeachingSpec::new(a.variant);
    spec.interactions_per_user = a.per_user;
    spec.rounds = a.rounds;
    spec.features = a.features;
    spec.wrong_rate = a.wrong_rate;
    spec.seed = a.seed;
    spec.prior = read_prior(&a.prior)?;
    spec.validate()?;
    let users = population(a.features, 0.0, a.users, a.seed)?;
    let corpus = generate_corpus(&spec, &users)?;
    let mut w = BufWriter::new(
        File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?,
    );
    export_chat_jsonl(&mut w, &corpus)?;
    w.flush()?;
    if let Some(p) = &a.dpo {
        let mut w = BufWriter::new(File::create(p)?);
        export_dpo_jsonl(&mut w, &corpus)?;
        w.flush()?;
    }
    println!("wrote {} transcripts to {}", corpus.len(), a.out.display());
    Ok(())
}

#[derive(Args)]
struct WebshopArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// Per-category goal phrases, a JSON object of category to phrase list.
    #[arg(long)]
    goals: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    top_categories: usize,
    #[arg(long, default_value_t = 10)]
    users_per_category: u64,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value_t = 100)]
    heldout: usize,
    #[arg(long, value_enum, default_value = "random")]
    policy: PolicyArg,
    #[arg(long)]
    gateway: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn webshop(a: WebshopArgs) -> Result<()> {
    let mut catalog = Catalog::load(&a.catalog)?;
    if let Some(g) = &a.goals {
        catalog = catalog.with_goals_json(&std::fs::read_to_string(g)?)?;
    }
    let cats = catalog.top_categories(a.top_categories);
    let catalog = Arc::new(catalog.restrict(&cats)?);
    let spec = policy_spec(a.policy, 0.4, a.gateway.as_deref())?;
    if matches!(spec, PolicySpec::Bayesian | PolicySpec::Cheapest) {
        bail!("products have no reward space or price feature; use random, oracle, noisy-oracle or remote-llm");
    }
    let mut cfg = EpisodeConfig::new(Domain::Product);
    cfg.rounds = a.rounds;
    cfg.heldout_sets = a.heldout;
    cfg.seed = a.seed;
    cfg.policy = spec.clone();
    let gateway = match &spec {
        PolicySpec::RemoteLlm { gateway } => Some(Arc::new(Gateway::new(gateway.clone())?)),
        _ => None,
    };
    let mut transcripts = Vec::new();
    for cat in &cats {
        for u in 0..a.users_per_category {
            let user = ShoppingUser::sample(&catalog, cat, u)?;
            let model: Arc<dyn preflab_core::ChoiceModel> =
                Arc::new(preflab_core::webshop::ShoppingModel {
                    user: user.clone(),
                    catalog: catalog.clone(),
                });
            let policy = spec.build(&preflab_core::assistants::BuildContext {
                user: Some(model),
                prior: PriorSpec::Uniform,
                dim: 0,
                price_index: None,
                style: cfg.style,
                kinds: Vec::new(),
                gateway: gateway.clone(),
            })?;
            transcripts.push(shopping_episode(&user, catalog.clone(), &cfg, policy)?);
        }
    }
    std::fs::create_dir_all(&a.out)?;
    save_transcripts(&a.out.join("transcripts.jsonl"), &transcripts)?;
    let metrics = aggregate_metrics(&transcripts);
    let rows = metrics_rows(spec.name(), Domain::Product, &metrics);
    write_metrics_csv(File::create(a.out.join("metrics.csv"))?, &rows)?;
    for r in &rows {
        println!(
            "round {}: accuracy {:.4} ± {:.4} (n={})",
            r.round, r.mean_acc, r.se, r.n
        );
    }
    Ok(())
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-round accuracy of a transcript file.
    Transcripts {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consistency of human users with their stated preferences.
    Consistency {
        /// CSV or JSON user records, or a JSONL file of user-role session transcripts.
        input: PathBuf,
        /// Shuffled copies to add per record.
        #[arg(long, default_value_t = 0)]
        shuffles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regress final accuracy on distance to the prior mean.
    PriorDistance {
        input: PathBuf,
        #[arg(long, default_value = "uniform")]
        prior: String,
        #[arg(long, default_value_t = 4)]
        features: usize,
    },
    /// Final accuracy of the Bayesian assistant across user noise levels.
    NoiseSweep {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2, 0.4, 0.6, 0.8])]
        noises: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long, default_value_t = 100)]
        heldout: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Targeted-information-gain experiment.
    InfoGain {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5])]
        targets: Vec<f64>,
        #[arg(long, default_value_t = 5000)]
        candidates: usize,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        #[arg(long, default_value_t = 100)]
        users: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_csv<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    let out: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn load_user_records(path: &Path) -> Result<Vec<preflab_core::analysis::HumanUserRecord>> {
    let name = path.to_string_lossy();
    if name.ends_with(".csv") {
        return Ok(read_user_records_csv(File::open(path)?)?);
    }
    if name.ends_with(".jsonl") {
        let ts: Vec<Transcript> = load_transcripts(path)?;
        return ts
            .iter()
            .map(|t| user_record_from_transcript(t).map_err(Into::into))
            .collect();
    }
    Ok(read_user_records_json(&std::fs::read_to_string(path)?)?)
}

#[derive(Serialize)]
struct ConsistencyRow {
    participant_id: String,
    shuffle: u32,
    consistency: f64,
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Transcripts { input, out } => {
            let ts = load_transcripts(&input)?;
            for t in &ts {
                t.validate()?;
            }
            let m = aggregate_metrics(&ts);
            let variant = ts.first().map_or("unknown", |t| t.variant.as_str());
            let domain = ts.first().map_or(Domain::Flight, |t| t.domain);
            if m.accuracy_by_round.is_empty() {
                let n = ts.iter().map(|t| t.rounds.len()).sum::<usize>();
                let hits = ts
                    .iter()
                    .flat_map(|t| &t.rounds)
                    .filter(|r| r.correct())
                    .count();
                println!(
                    "{} transcripts, {} rounds, in-episode accuracy {:.4}",
                    ts.len(),
                    n,
                    hits as f64 / n.max(1) as f64
                );
            } else {
                write_csv(out.as_deref(), &metrics_rows(variant, domain, &m))?;
            }
        }
        AnalyzeCommand::Consistency {
            input,
            shuffles,
            seed,
            out,
        } => {
            let recs = with_shuffles(&load_user_records(&input)?, shuffles, seed);
            let mut rows = Vec::new();
            for r in &recs {
                match user_consistency(r) {
                    Ok(c) => rows.push(ConsistencyRow {
                        participant_id: r.participant_id.clone(),
                        shuffle: r.shuffle,
                        consistency: c,
                    }),
                    Err(e) => eprintln!("skipping {}: {e}", r.participant_id),
                }
            }
            write_csv(out.as_deref(), &rows)?;
            let originals: Vec<f64> = rows
                .iter()
                .filter(|r| r.shuffle == 0)
                .map(|r| r.consistency)
                .collect();
            eprintln!(
                "{} records ({} interactions with shuffles), mean consistency {:.4}",
                originals.len(),
                rows.len(),
                originals.iter().sum::<f64>() / originals.len().max(1) as f64
            );
        }
        AnalyzeCommand::PriorDistance {
            input,
            prior,
            features,
        } => {
            let ts = load_transcripts(&input)?;
            let results = final_accuracy_by_user(&ts)?;
            let prior = read_prior(&prior)?.build(features)?;
            let r = accuracy_vs_prior_distance(&results, &prior)?;
            write_csv(None, &[r])?;
        }
        AnalyzeCommand::NoiseSweep {
            noises,
            seeds,
            users,
            heldout,
            out,
        } => {
            let mut cfg = EpisodeConfig::flight();
            cfg.heldout_sets = heldout;
            let env: Arc<dyn Environment> = Arc::new(FeatureSpace::flight());
            let factory = spec_factory(&cfg, &env, None);
            let seeds: Vec<u64> = (0..seeds).collect();
            let pts = noise_sweep(&cfg, env.clone(), &noises, users, &seeds, &factory)?;
            write_csv(out.as_deref(), &pts)?;
        }
        AnalyzeCommand::InfoGain {
            targets,
            candidates,
            rounds,
            users,
            seed,
            out,
        } => {
            let cfg = InfoGainConfig {
                targets,
                rounds,
                candidates,
                heldout_sets: 100,
                seed,
            };
            let users = population(4, 0.0, Some(users), seed)?;
            let prior = PriorSpec::Uniform.build(4)?;
            let pts = info_gain_experiment(&cfg, &FeatureSpace::flight(), &users, &prior)?;
            write_csv(out.as_deref(), &pts)?;
        }
    }
    Ok(())
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory with the built web UI.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Where session logs and finished transcripts are appended.
    #[arg(long, default_value = "sessions")]
    data_dir: PathBuf,
    #[arg(long)]
    cors_origin: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn serve(a: ServeArgs) -> Result<()> {
    let state = preflab_server::AppState::new(Some(a.data_dir.clone()), a.seed)?;
    let opts = preflab_server::ServeOptions {
        static_dir: a.static_dir,
        cors_origin: a.cors_origin,
    };
    let app = preflab_server::app(state, &opts).map_err(anyhow::Error::msg)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        preflab_server::serve(listener, app).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::GenData(a) => gen_data(a),
        Command::Webshop(a) => webshop(a),
        Command::Analyze { command } => analyze(command),
        Command::Serve(a) => serve(a),
    }
}
