use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qrw_cli::{cmd_bench, cmd_build_index, cmd_prepare_evidence, cmd_rewrite, CliError, ProviderKind, RunConfig};
use qrw_core::evidence::EvidenceSources;

#[derive(Parser)]
#[command(name = "qrw", version, about = "Evidence-guided SQL query rewriting")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
    #[arg(long, global = true)]
    reorder_threshold: Option<usize>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    repo: Option<PathBuf>,
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    #[arg(long, global = true)]
    stub_script: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Extract rule specifications and filter Q&A into the repository.
    PrepareEvidence {
        /// Directory with `code/`, `docs/` and `qa.jsonl`.
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long)]
        code: Option<PathBuf>,
        #[arg(long)]
        docs: Option<PathBuf>,
        #[arg(long)]
        qa: Option<PathBuf>,
    },
    /// Embed the Q&A repository and persist the index.
    BuildIndex,
    /// Rewrite one statement and print the result.
    Rewrite {
        #[arg(long, conflicts_with = "file")]
        sql: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Rewrite a directory of `.sql` files and write CSV results.
    Bench {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let a = &mut cfg.arranger;
    if let Some(v) = g.k {
        a.k = v;
    }
    if let Some(v) = g.alpha {
        a.alpha = v;
    }
    if let Some(v) = g.batch_size {
        a.batch_size = v;
    }
    if let Some(v) = g.max_rounds {
        a.max_rounds = v;
    }
    if let Some(v) = g.reorder_threshold {
        a.reorder_threshold = v;
    }
    if let Some(v) = g.provider {
        cfg.provider = v;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    for (slot, flag) in [
        (&mut cfg.catalog, &g.catalog),
        (&mut cfg.fixtures, &g.fixtures),
        (&mut cfg.repo, &g.repo),
        (&mut cfg.index, &g.index),
        (&mut cfg.stub_script, &g.stub_script),
        (&mut cfg.cache_dir, &g.cache_dir),
        (&mut cfg.prompts, &g.prompts),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    if let Some(v) = &g.report_dir {
        cfg.report_dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::PrepareEvidence { sources, code, docs, qa } => {
            let mut s = sources.as_deref().map(EvidenceSources::under).unwrap_or_default();
            if code.is_some() {
                s.code_dir = code;
            }
            if docs.is_some() {
                s.docs_dir = docs;
            }
            if qa.is_some() {
                s.qa_dump = qa;
            }
            let out = cmd_prepare_evidence(&cfg, &s)?;
            println!(
                "{} rule specifications, {} Q&A entries{}",
                out.outcome.specs.len(),
                out.outcome.qas.len(),
                if out.changed { "" } else { " (unchanged)" }
            );
        }
        Command::BuildIndex => {
            let out = cmd_build_index(&cfg)?;
            println!("indexed {} Q&A entries in {} rows", out.qas, out.rows);
        }
        Command::Rewrite { sql, file } => {
            let text = match (sql, file) {
                (Some(s), _) => s,
                (None, Some(p)) => {
                    std::fs::read_to_string(&p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                }
                (None, None) => return Err(CliError::Input("give --sql or --file".to_string())),
            };
            let out = cmd_rewrite(&cfg, &text)?;
            println!("{}", out.sql);
            eprintln!("report: {}", out.report_path.display());
        }
        Command::Bench { workload, out } => {
            let res = cmd_bench(&cfg, &workload, &out)?;
            for s in &res.summary {
                println!("{}: average {:.3} median {:.3} p90 {:.3}", s.metric, s.average, s.median, s.p90);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
