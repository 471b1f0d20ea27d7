//! `atlas`: build, link, reweight, validate and analyse task exposure labels.

mod config;
mod output;
mod pipeline;
mod report;
mod stats_cmd;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{flag_path, Run, RunConfig};
use output::Outputs;
use stats_cmd::Columns;
use table::DataTable;

/// A broken internal identity; exits with status 3.
#[derive(Debug)]
pub struct Invariant(pub String);

impl std::fmt::Display for Invariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invariant violated: {}", self.0)
    }
}

impl std::error::Error for Invariant {}

#[derive(Parser, Debug)]
#[command(name = "atlas", version, about = "Task-level automation exposure atlas")]
struct Cli {
    /// JSON run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true, env = "ATLAS_CONFIG")]
    config: Option<PathBuf>,
    /// Random seed (overrides ATLAS_SEED and the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate, normalize and deduplicate a label file.
    Ingest {
        /// Label file (.jsonl or .csv).
        labels: Option<PathBuf>,
        /// Exit non-zero if any row is rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Country summaries, group means and benchmark deviations.
    Summarize {
        labels: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        grouping: Option<String>,
    },
    /// Occupation and industry linkage.
    #[command(subcommand)]
    Link(LinkCommand),
    /// Employment reweighting and gender gaps.
    Reweight {
        labels: Option<PathBuf>,
        #[arg(long)]
        employment: Option<PathBuf>,
        #[arg(long)]
        isco_digits: Option<usize>,
    },
    /// Internal-validity checks.
    #[command(subcommand)]
    Validate(ValidateCommand),
    /// Statistics over a CSV table.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Run the whole pipeline from the config.
    Report,
}

#[derive(Subcommand, Debug)]
enum LinkCommand {
    /// Embedding-similarity candidate edges between tasks and industry classes.
    Candidates,
    /// Majority-vote pruning of candidate edges.
    Prune {
        /// Candidate CSV from `link candidates`.
        candidates: PathBuf,
    },
    /// Occupation (SOC, ISCO) and industry values per country.
    Apply {
        labels: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        bridge_variant: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum ValidateCommand {
    /// Agreement between two label runs.
    Agreement {
        labels: Option<PathBuf>,
        #[arg(long)]
        other: Option<PathBuf>,
    },
    /// Stability across paraphrased prompts.
    Paraphrase {
        labels: Option<PathBuf>,
        #[arg(long = "variant")]
        variants: Vec<PathBuf>,
    },
    /// Lexical rationale/label consistency screen.
    Screen {
        labels: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Rationale divergence between two income groups.
    Divergence {
        labels: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Marginal label distributions.
    Distribution {
        labels: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TableArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    /// Unit id column.
    #[arg(long)]
    id: Option<String>,
    /// Predictor column(s).
    #[arg(long)]
    x: Vec<String>,
    /// Outcome column.
    #[arg(long)]
    y: Option<String>,
}

#[derive(Subcommand, Debug)]
enum StatsCommand {
    /// Pearson, Spearman, partial and leave-one-out correlations.
    Corr {
        #[command(flatten)]
        t: TableArgs,
        #[arg(long = "control")]
        controls: Vec<String>,
    },
    /// LOESS fit with a bootstrap band.
    Loess {
        #[command(flatten)]
        t: TableArgs,
        #[arg(long)]
        span: Option<f64>,
    },
    /// Two-way variance decomposition of `--y` over `--row` x `--col`.
    Vardecomp {
        #[command(flatten)]
        t: TableArgs,
        #[arg(long)]
        row: String,
        #[arg(long)]
        col: String,
    },
    /// Two-way fixed-effects regression with clustered errors.
    Fe {
        #[command(flatten)]
        t: TableArgs,
        #[arg(long)]
        row: String,
        #[arg(long)]
        col: String,
        #[arg(long)]
        cluster: Option<String>,
    },
    /// Regression forest with permutation importance.
    Forest {
        #[command(flatten)]
        t: TableArgs,
    },
    /// Mean absolute TreeSHAP over seeded forests.
    Shap {
        #[command(flatten)]
        t: TableArgs,
    },
    /// Accumulated local effects.
    Ale {
        #[command(flatten)]
        t: TableArgs,
        #[arg(long)]
        feature: Option<String>,
    },
    /// Shapley decomposition of R².
    Dominance {
        #[command(flatten)]
        t: TableArgs,
    },
}

fn set(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if let Some(p) = flag {
        *slot = Some(flag_path(p));
    }
}

fn command_name(c: &Command) -> String {
    let sub = |s: &str, d: &dyn std::fmt::Debug| {
        let name = format!("{d:?}");
        let head = name.split([' ', '{', '(']).next().unwrap_or_default().to_ascii_lowercase();
        format!("{s} {head}")
    };
    match c {
        Command::Ingest { .. } => "ingest".into(),
        Command::Summarize { .. } => "summarize".into(),
        Command::Link(l) => sub("link", l),
        Command::Reweight { .. } => "reweight".into(),
        Command::Validate(v) => sub("validate", v),
        Command::Stats(s) => sub("stats", s),
        Command::Report => "report".into(),
    }
}

/// Writes per-command flags into the config before it is digested.
fn apply_flags(cmd: &Command, c: &mut RunConfig) {
    match cmd {
        Command::Ingest { labels, .. } => set(&mut c.labels, labels),
        Command::Summarize { labels, registry, grouping } => {
            set(&mut c.labels, labels);
            set(&mut c.registry, registry);
            if let Some(g) = grouping {
                c.grouping = g.clone();
            }
        }
        Command::Link(LinkCommand::Apply { labels, graph, bridge_variant }) => {
            set(&mut c.labels, labels);
            set(&mut c.graph, graph);
            if let Some(v) = bridge_variant {
                c.bridge_variant = v.clone();
            }
        }
        Command::Link(_) | Command::Report | Command::Stats(_) => {}
        Command::Reweight { labels, employment, isco_digits } => {
            set(&mut c.labels, labels);
            set(&mut c.employment, employment);
            if let Some(d) = isco_digits {
                c.isco_digits = *d;
            }
        }
        Command::Validate(v) => match v {
            ValidateCommand::Agreement { labels, other } => {
                set(&mut c.labels, labels);
                set(&mut c.comparison_labels, other);
            }
            ValidateCommand::Paraphrase { labels, variants } => {
                set(&mut c.labels, labels);
                if !variants.is_empty() {
                    c.paraphrase_variants = variants.iter().map(|p| flag_path(p)).collect();
                }
            }
            ValidateCommand::Screen { labels, lexicon } => {
                set(&mut c.labels, labels);
                set(&mut c.lexicon, lexicon);
            }
            ValidateCommand::Divergence { labels, registry } | ValidateCommand::Distribution { labels, registry } => {
                set(&mut c.labels, labels);
                set(&mut c.registry, registry);
            }
        },
    }
}

fn columns(t: &TableArgs) -> Columns {
    Columns { id: t.id.clone(), x: t.x.clone(), y: t.y.clone(), ..Columns::default() }
}

fn run_stats(run: &Run, out: &mut Outputs, cmd: &StatsCommand) -> Result<()> {
    let read = |p: &Path| DataTable::read(p);
    let mut cfg = run.config.stats.clone();
    match cmd {
        StatsCommand::Corr { t, controls } => {
            let c = Columns { controls: controls.clone(), ..columns(t) };
            stats_cmd::corr(out, "corr", &read(&t.data)?, &c).map(drop)
        }
        StatsCommand::Loess { t, span } => {
            if let Some(s) = span {
                cfg.span = *s;
            }
            stats_cmd::loess_band(out, "loess", &read(&t.data)?, &columns(t), &cfg, run.seed)
        }
        StatsCommand::Vardecomp { t, row, col } => {
            let c = Columns { row: Some(row.clone()), col: Some(col.clone()), ..columns(t) };
            stats_cmd::vardecomp(out, "vardecomp", &read(&t.data)?, &c)
        }
        StatsCommand::Fe { t, row, col, cluster } => {
            let c = Columns { row: Some(row.clone()), col: Some(col.clone()), cluster: cluster.clone(), ..columns(t) };
            stats_cmd::fe(out, "fe", &read(&t.data)?, &c)
        }
        StatsCommand::Forest { t } => stats_cmd::forest(out, "forest", &read(&t.data)?, &columns(t), &cfg, run.seed),
        StatsCommand::Shap { t } => stats_cmd::shap(out, "shap", &read(&t.data)?, &columns(t), &cfg),
        StatsCommand::Ale { t, feature } => {
            let c = Columns { feature: feature.clone(), ..columns(t) };
            stats_cmd::ale(out, "ale", &read(&t.data)?, &c, &cfg, run.seed)
        }
        StatsCommand::Dominance { t } => stats_cmd::dominance(out, "dominance", &read(&t.data)?, &columns(t)),
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    if let Command::Stats(s) = &cli.command {
        let data = match s {
            StatsCommand::Corr { t, .. }
            | StatsCommand::Loess { t, .. }
            | StatsCommand::Vardecomp { t, .. }
            | StatsCommand::Fe { t, .. }
            | StatsCommand::Forest { t }
            | StatsCommand::Shap { t }
            | StatsCommand::Ale { t, .. }
            | StatsCommand::Dominance { t } => &t.data,
        };
        if !data.exists() {
            anyhow::bail!("{}: no such file", data.display());
        }
    }
    let name = command_name(&cli.command);
    let run = Run::resolve(cli.config.as_deref(), cli.seed, cli.out.as_deref(), &name, |c| apply_flags(&cli.command, c))?;

    if let Command::Report = cli.command {
        return report::report(&run);
    }
    let mut out = Outputs::new(&run)?;
    match &cli.command {
        Command::Ingest { strict, .. } => pipeline::ingest(&run, &mut out, *strict).map(drop),
        Command::Summarize { .. } => {
            let ds = pipeline::labels(&run)?;
            let reg = pipeline::registry(&run)?;
            pipeline::summarize(&run, &mut out, &ds, reg.as_ref()).map(drop)
        }
        Command::Link(LinkCommand::Candidates) => pipeline::link_candidates(&run, &mut out).map(drop),
        Command::Link(LinkCommand::Prune { candidates }) => {
            let cands = pipeline::read_candidates(candidates)?;
            pipeline::link_prune(&run, &mut out, &cands).map(drop)
        }
        Command::Link(LinkCommand::Apply { .. }) => {
            let ds = pipeline::labels(&run)?;
            let graph = pipeline::read_graph(&run)?;
            pipeline::link_apply(&run, &mut out, &ds, graph.as_ref()).map(drop)
        }
        Command::Reweight { .. } => {
            let ds = pipeline::labels(&run)?;
            pipeline::reweight(&run, &mut out, &ds).map(drop)
        }
        Command::Validate(v) => {
            let ds = pipeline::labels(&run)?;
            let reg = || pipeline::registry(&run);
            match v {
                ValidateCommand::Agreement { .. } => pipeline::validate_agreement(&run, &mut out, &ds),
                ValidateCommand::Paraphrase { .. } => pipeline::validate_paraphrase(&run, &mut out, &ds),
                ValidateCommand::Screen { .. } => pipeline::validate_screen(&run, &mut out, &ds),
                ValidateCommand::Divergence { .. } => pipeline::validate_divergence(&run, &mut out, &ds, reg()?.as_ref()),
                ValidateCommand::Distribution { .. } => pipeline::validate_distribution(&run, &mut out, &ds, reg()?.as_ref()),
            }
        }
        Command::Stats(s) => run_stats(&run, &mut out, s),
        Command::Report => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match std::panic::catch_unwind(|| execute(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invariant>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
        Err(_) => ExitCode::from(3),
    }
}
