//! memctx: command-line surface of the retrieval-and-compression engine.
//!
//! One subcommand per pipeline stage; human-readable tables on stdout,
//! machine JSON behind `--json`, errors (one line, naming the failing
//! module) on stderr. Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

/// Invalid command-line usage beyond what clap validates (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "memctx", version, about = "Deterministic retrieval and compression engine for multi-turn video editing")]
struct Cli {
    /// TOML config file; falls back to $MEMCTX_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manage a cache directory of prior edits.
    Cache(CacheCmd),
    /// Rank cached videos by spherical FOV overlap against a target trajectory.
    RetrieveFov(RetrieveFovCmd),
    /// Rank cached segments by cosine similarity of embedding descriptors.
    RetrieveFeat(RetrieveFeatCmd),
    /// Assign tokenizer tiers by relevance rank and model the attention cost.
    PlanTokens(PlanTokensCmd),
    /// Plan adaptive token merging from responsiveness slabs.
    PlanMerge(PlanMergeCmd),
    /// Per-frame responsiveness scores of one attention slab.
    Score(ScoreCmd),
    /// Cross-block stability report of responsiveness scores.
    AnalyzeBlocks(AnalyzeBlocksCmd),
    /// Temporal RoPE index layout for a conditioning sequence.
    Rope(RopeCmd),
    /// Print the version.
    Version,
}

#[derive(Args)]
struct CacheCmd {
    #[command(subcommand)]
    action: CacheAction,
}

#[derive(Subcommand)]
enum CacheAction {
    /// Insert one entry (key + shape + optional payload).
    Add {
        /// Cache directory (created if absent).
        #[arg(long)]
        cache: PathBuf,
        /// Task of the entry: novel_view or text_edit.
        #[arg(long)]
        task: String,
        /// Latent shape FxHxWxC, e.g. 21x60x104x16.
        #[arg(long)]
        shape: String,
        /// Camera trajectory key file (novel_view).
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Embedding key file (text_edit).
        #[arg(long)]
        emb: Option<PathBuf>,
        /// Opaque latent payload to store alongside the entry.
        #[arg(long)]
        payload: Option<PathBuf>,
    },
    /// List entries.
    List {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Remove key/payload files not referenced by the manifest.
    Gc {
        #[arg(long)]
        cache: PathBuf,
    },
}

#[derive(Args)]
struct RetrieveFovCmd {
    #[arg(long)]
    cache: PathBuf,
    /// Target camera trajectory file.
    #[arg(long)]
    target: PathBuf,
    /// Number of entries to return.
    #[arg(long)]
    k: usize,
    /// Overlap/containment weight; defaults to the configured value (0.5).
    #[arg(long)]
    lambda: Option<f64>,
    /// Sphere grid as THETAxPHI, e.g. 180x360; defaults to the config.
    #[arg(long)]
    grid: Option<String>,
    /// Sphere radius; defaults to the config.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RetrieveFeatCmd {
    #[arg(long)]
    cache: PathBuf,
    /// Target embedding file.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    k: usize,
    /// Always place the most recent segment first.
    #[arg(long)]
    recent_first: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PlanTokensCmd {
    /// Target latent shape FxHxWxC.
    #[arg(long)]
    target: String,
    /// User-input latent shape FxHxWxC.
    #[arg(long)]
    user: String,
    /// Comma-separated memory latent shapes in relevance order.
    #[arg(long)]
    memory: Option<String>,
    /// Tier set: "default" or a TOML config file overriding [tokenizer].
    #[arg(long, default_value = "default")]
    tiers: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PlanMergeCmd {
    /// Token allocation JSON (the output of plan-tokens --json).
    #[arg(long)]
    alloc: PathBuf,
    /// Directory of .slab files, one per conditioning video, in allocation
    /// order when sorted by filename.
    #[arg(long)]
    slabs: PathBuf,
    /// Merge policy TOML; defaults to the configured [merge] section.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Drop selected tokens instead of merging them (comparison baseline).
    #[arg(long)]
    discard: bool,
    /// How policy reduction values are read: divisor or kept-fraction.
    #[arg(long)]
    r_convention: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ScoreCmd {
    /// Attention slab file.
    #[arg(long)]
    slab: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AnalyzeBlocksCmd {
    /// Directory of .slab files, one per transformer block, block order by
    /// filename.
    #[arg(long)]
    slabs: PathBuf,
    /// Anchor block, 1-based.
    #[arg(long)]
    anchor: usize,
    /// Bottom-k fraction.
    #[arg(long, default_value_t = 0.5)]
    k: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RopeCmd {
    /// Task: nvs or edit.
    #[arg(long)]
    task: String,
    /// Segment length T.
    #[arg(long)]
    frames: u64,
    /// Reverse the per-frame order of the previous/memory ranges
    /// (edit-task inference).
    #[arg(long)]
    reverse_memory: bool,
    /// Memory videos to lay out (stacked memory layout only).
    #[arg(long, default_value_t = 1)]
    mem_videos: u32,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    // Die quietly on SIGPIPE like other pipeline tools instead of panicking
    // when a downstream consumer (head, grep -m) closes stdout early.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("memctx: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = commands::load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Cache(cmd) => match cmd.action {
            CacheAction::Add { cache, task, shape, traj, emb, payload } => {
                commands::cache_add(&config, &cache, &task, &shape, traj.as_deref(), emb.as_deref(), payload.as_deref())
            }
            CacheAction::List { cache, json } => commands::cache_list(&cache, json),
            CacheAction::Gc { cache } => commands::cache_gc(&cache),
        },
        Command::RetrieveFov(cmd) => commands::retrieve_fov(
            &config,
            &cmd.cache,
            &cmd.target,
            cmd.k,
            cmd.lambda,
            cmd.grid.as_deref(),
            cmd.radius,
            cmd.json,
        ),
        Command::RetrieveFeat(cmd) => {
            commands::retrieve_feat(&cmd.cache, &cmd.target, cmd.k, cmd.recent_first, cmd.json)
        }
        Command::PlanTokens(cmd) => commands::plan_tokens(
            &config,
            &cmd.target,
            &cmd.user,
            cmd.memory.as_deref(),
            &cmd.tiers,
            cmd.json,
        ),
        Command::PlanMerge(cmd) => commands::plan_merge(
            &config,
            &cmd.alloc,
            &cmd.slabs,
            cmd.policy.as_deref(),
            cmd.discard,
            cmd.r_convention.as_deref(),
            cmd.json,
        ),
        Command::Score(cmd) => commands::score(&cmd.slab, cmd.json),
        Command::AnalyzeBlocks(cmd) => commands::analyze_blocks(&cmd.slabs, cmd.anchor, cmd.k, cmd.json),
        Command::Rope(cmd) => commands::rope(
            &config,
            &cmd.task,
            cmd.frames,
            cmd.reverse_memory,
            cmd.mem_videos,
            cmd.json,
        ),
        Command::Version => {
            println!("memctx {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}
