use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pdprobe_cli::cohort::{
    famous_from_fixtures, synthetic_from_fixtures, write_cohort, FamousInputs, SyntheticInputs,
};
use pdprobe_cli::validate::{
    format_memorization, format_sweep, summarize_records, summarize_templates, sweep_row,
    verdicts_for,
};
use pdprobe_cli::{
    execute, prepare_backend, read_records, report, write_outputs, BackendKind, Format, Mode,
    RunManifest, RunSettings,
};
use pdprobe_core::datasets::{BuildMeta, FamousConfig, LogBase, SyntheticConfig};
use pdprobe_core::evaluation::{EvalConfig, HashEmbedder, Matcher, MemorizationMode, Stoplist};
use pdprobe_core::gateway::mock::MockBackend;
use pdprobe_core::gateway::openai::OpenAiBackend;
use pdprobe_core::gateway::{Backend, Gateway};
use pdprobe_core::{AuditConfig, BaselineStore, Catalog, Modality};

#[derive(Parser)]
#[command(
    name = "pdprobe",
    version,
    about = "Audit which personal data a language model associates with a name"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the manifest's backend kind.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Fixture path (defaults to the manifest's).
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Audit every cohort subject on every manifest property.
    Run {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_enum, default_value = "live")]
        mode: Mode,
    },
    /// Same as `run --mode replay`.
    Replay {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Summarize a records.jsonl file.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Mem.% and mean strength per property instead of the confidence table.
        #[arg(long)]
        memorization: bool,
    },
    /// One memorization row per counterfactual budget.
    SweepK {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_enum, default_value = "live")]
        mode: Mode,
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40,50")]
        ks: Vec<usize>,
    },
    /// Template-level memorization check with the 0.75 semantic relaxation.
    Validate {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_enum, default_value = "live")]
        mode: Mode,
    },
    /// Build an evaluation cohort from recorded client fixtures.
    BuildCohort {
        #[command(subcommand)]
        which: CohortCommand,
    },
    /// Start the discovery and study-logging HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum CohortCommand {
    Famous {
        #[arg(long)]
        entities: PathBuf,
        #[arg(long)]
        page_stats: PathBuf,
        #[arg(long)]
        live: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        properties: Vec<String>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 350.0)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "natural", value_parser = ["natural", "ten", "two"])]
        log_base: String,
        #[arg(long)]
        out: PathBuf,
    },
    Synthetic {
        #[arg(long)]
        pods: PathBuf,
        #[arg(long)]
        suggestions: PathBuf,
        #[arg(long)]
        rejected_names: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        target: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PDPROBE_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "PDPROBE_RATE_LIMIT", default_value_t = 20)]
    rate_limit: usize,
    #[arg(long, env = "PDPROBE_QUEUE_CAP", default_value_t = 100)]
    queue_cap: usize,
    #[arg(long, env = "PDPROBE_BACKEND", value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Serve answers from a recorded fixture instead of a live backend.
    #[arg(long, env = "PDPROBE_FIXTURE")]
    fixture: Option<PathBuf>,
    #[arg(long, env = "PDPROBE_BASE_URL")]
    base_url: Option<String>,
    #[arg(long, env = "PDPROBE_MODEL")]
    model: Option<String>,
    #[arg(long, env = "PDPROBE_BASELINE_CACHE")]
    baseline_cache: Option<PathBuf>,
    #[arg(long, env = "PDPROBE_STUDY_LOG")]
    study_log: Option<PathBuf>,
}

struct Prepared {
    manifest: RunManifest,
    catalog: Catalog,
    subjects: Vec<pdprobe_core::datasets::SubjectRecord>,
    settings: RunSettings,
    fixture: PathBuf,
    out: PathBuf,
}

fn prepare(args: &RunArgs) -> anyhow::Result<Prepared> {
    let mut manifest = RunManifest::load(&args.manifest)?;
    if let Some(b) = args.backend {
        manifest.backend.kind = b;
    }
    let catalog = manifest.catalog()?;
    manifest.validate(&catalog)?;
    let subjects = manifest.subjects()?;
    let mut settings = RunSettings::from_manifest(&manifest);
    if let Some(j) = args.jobs {
        settings.jobs = j.max(1);
    }
    if let Some(k) = args.k {
        settings.k = k;
    }
    if args.seed.is_some() {
        settings.seed = args.seed;
    }
    let fixture = args
        .fixture
        .clone()
        .unwrap_or_else(|| manifest.resolve(&manifest.fixture));
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| manifest.resolve(&manifest.out));
    Ok(Prepared {
        manifest,
        catalog,
        subjects,
        settings,
        fixture,
        out,
    })
}

fn cmd_run(args: &RunArgs, mode: Mode) -> anyhow::Result<ExitCode> {
    let p = prepare(args)?;
    let backend = prepare_backend(&p.manifest, mode, &p.subjects, &p.fixture)?;
    let embedder = HashEmbedder::default();
    let out = execute(
        &p.manifest,
        &p.catalog,
        &p.subjects,
        backend,
        &p.settings,
        Some(&embedder),
    )?;
    write_outputs(&out, &p.out)?;
    print!("{}", report(&out.records(), args.format)?);
    for f in &out.failures {
        eprintln!("failed: {} / {}: {}", f.subject, f.property_id, f.error);
    }
    Ok(if out.complete() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn require_logprobs(backend: &dyn Backend) -> anyhow::Result<()> {
    if backend.capabilities().modality() != Modality::Logprob {
        bail!(
            "backend {} does not expose log-probabilities; memorization validation needs them",
            backend.capabilities().name
        );
    }
    Ok(())
}

fn cmd_validate(args: &RunArgs, mode: Mode) -> anyhow::Result<ExitCode> {
    let p = prepare(args)?;
    let backend = prepare_backend(&p.manifest, mode, &p.subjects, &p.fixture)?;
    require_logprobs(backend.as_ref())?;
    let embedder = HashEmbedder::default();
    let settings = RunSettings {
        ground_truth_only: true,
        ..p.settings.clone()
    };
    let out = execute(
        &p.manifest,
        &p.catalog,
        &p.subjects,
        backend,
        &settings,
        Some(&embedder),
    )?;
    let cfg = EvalConfig::default();
    let matcher = Matcher::new(Some(&embedder), Stoplist::shipped(), &cfg);
    let verdicts = verdicts_for(&out.pairs, MemorizationMode::Semantic075, &matcher);
    print!("{}", format_memorization(&summarize_templates(&verdicts)));
    Ok(if out.complete() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_sweep(args: &RunArgs, mode: Mode, ks: &[usize]) -> anyhow::Result<ExitCode> {
    let p = prepare(args)?;
    let backend = prepare_backend(&p.manifest, mode, &p.subjects, &p.fixture)?;
    require_logprobs(backend.as_ref())?;
    let embedder = HashEmbedder::default();
    let cfg = EvalConfig::default();
    let matcher = Matcher::new(Some(&embedder), Stoplist::shipped(), &cfg);
    let mut rows = Vec::new();
    let mut complete = true;
    for &k in ks {
        let settings = RunSettings {
            k,
            ground_truth_only: true,
            ..p.settings.clone()
        };
        let out = execute(
            &p.manifest,
            &p.catalog,
            &p.subjects,
            backend.clone(),
            &settings,
            Some(&embedder),
        )?;
        complete &= out.complete();
        let verdicts = verdicts_for(&out.pairs, MemorizationMode::Semantic075, &matcher);
        rows.push(sweep_row(k, &out.pairs, &verdicts));
    }
    print!("{}", format_sweep(&rows));
    Ok(if complete {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn log_base(name: &str) -> LogBase {
    match name {
        "ten" => LogBase::Ten,
        "two" => LogBase::Two,
        _ => LogBase::Natural,
    }
}

fn cmd_cohort(which: &CohortCommand) -> anyhow::Result<ExitCode> {
    match which {
        CohortCommand::Famous {
            entities,
            page_stats,
            live,
            properties,
            n,
            threshold,
            seed,
            log_base: base,
            out,
        } => {
            let config = FamousConfig {
                per_property_n: *n,
                threshold: *threshold,
                seed: *seed,
                log_base: log_base(base),
            };
            let inputs = FamousInputs {
                entities,
                page_stats,
                live,
            };
            let rep = famous_from_fixtures(&inputs, properties, &config)?;
            let meta = BuildMeta {
                seed: *seed,
                threshold: Some(*threshold),
                log_base: Some(config.log_base),
            };
            write_cohort(&rep.records, &meta, out)?;
            for (p, q) in &rep.qualifying {
                println!("{p}: {q} qualifying");
            }
            for (p, e) in &rep.failures {
                eprintln!("{p}: abandoned ({e})");
            }
            println!("wrote {} subjects to {}", rep.records.len(), out.display());
            Ok(if rep.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        CohortCommand::Synthetic {
            pods,
            suggestions,
            rejected_names,
            target,
            seed,
            out,
        } => {
            let config = SyntheticConfig {
                seed: *seed,
                target: *target,
                ..SyntheticConfig::default()
            };
            let inputs = SyntheticInputs {
                pods,
                suggestions,
                rejected_names: rejected_names.as_deref(),
            };
            let records = synthetic_from_fixtures(&inputs, &config)?;
            let meta = BuildMeta {
                seed: *seed,
                threshold: None,
                log_base: None,
            };
            write_cohort(&records, &meta, out)?;
            println!("wrote {} subjects to {}", records.len(), out.display());
            Ok(if records.len() >= *target {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}

fn serve_backend(a: &ServeArgs) -> anyhow::Result<Arc<dyn Backend>> {
    if let Some(f) = &a.fixture {
        return Ok(Arc::new(pdprobe_cli::ReplayBackend::load(f)?));
    }
    Ok(match a.backend {
        BackendKind::Mock => Arc::new(pdprobe_cli::planted::planted_mock(
            MockBackend::logprob("mock"),
            &[],
        )),
        BackendKind::Openai => {
            let (Some(url), Some(model)) = (&a.base_url, &a.model) else {
                bail!("the openai backend needs --base-url and --model");
            };
            Arc::new(OpenAiBackend::new(
                url,
                model,
                std::env::var("OPENAI_API_KEY").ok(),
            ))
        }
    })
}

fn cmd_serve(a: &ServeArgs) -> anyhow::Result<ExitCode> {
    let baselines = match &a.baseline_cache {
        Some(p) => BaselineStore::open(p)?,
        None => BaselineStore::in_memory(),
    };
    let catalog = Arc::new(Catalog::shipped());
    let engine = pdprobe_service::Engine {
        gateway: Gateway::new(serve_backend(a)?),
        catalog: catalog.clone(),
        baselines: Arc::new(baselines),
        config: AuditConfig::default(),
    };
    let store: Arc<dyn pdprobe_service::StudyStore> = match &a.study_log {
        Some(p) => Arc::new(pdprobe_service::JsonlStore::open(p)?),
        None => Arc::new(pdprobe_service::MemoryStore::new()),
    };
    let config = pdprobe_service::ServiceConfig {
        listen: a.listen,
        rate_limit: a.rate_limit,
        queue_cap: a.queue_cap,
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(pdprobe_service::serve(
        Arc::new(engine),
        store,
        catalog,
        config,
    ))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(records: &Path, format: Format, memorization: bool) -> anyhow::Result<ExitCode> {
    let records = read_records(records)?;
    if records.is_empty() {
        bail!("no records to report");
    }
    if memorization {
        print!("{}", format_memorization(&summarize_records(&records)));
    } else {
        print!("{}", report(&records, format)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { args, mode } => cmd_run(args, *mode),
        Command::Replay { args } => cmd_run(args, Mode::Replay),
        Command::Report {
            records,
            format,
            memorization,
        } => cmd_report(records, *format, *memorization),
        Command::SweepK { args, mode, ks } => cmd_sweep(args, *mode, ks),
        Command::Validate { args, mode } => cmd_validate(args, *mode),
        Command::BuildCohort { which } => cmd_cohort(which),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
