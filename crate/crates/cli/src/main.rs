use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use staygraph_cli::commands::{self, ablate, build_graph, evaluate, report, search, synth, train};
use staygraph_cli::exit_code;
use staygraph_core::graph::GraphBuildConfig;
use staygraph_core::train::TrainOptions;
use staygraph_core::Result;

/// Dual-path (state-space + multi-view graph) ICU length-of-stay model.
#[derive(Parser)]
#[command(name = "staygraph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config preset: `desk` (CPU-sized) or `full` (tuned full-scale).
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Flat key=value config file (overrides the preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides, e.g. `--set lr=3e-4 --set d_model=64`.
    #[arg(long = "set")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        n_stays: usize,
        #[arg(long, default_value_t = 16)]
        d_ts: usize,
        #[arg(long, default_value_t = 8)]
        d_flat: usize,
        #[arg(long, default_value_t = 64)]
        d_codes: usize,
        #[arg(long, default_value_t = 16)]
        emb_dim: usize,
        #[arg(long, default_value_t = 48)]
        t_bins: usize,
    },
    /// Build the multi-view patient similarity graph.
    BuildGraph {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Diagnosis similarity: tfidf | ip | cooc.
        #[arg(long, default_value = "ip")]
        diag_method: String,
        #[arg(long, default_value_t = 3)]
        k_diag: usize,
        #[arg(long, default_value_t = 1)]
        k_bert: usize,
        /// Rewiring: none | mst | gdc.
        #[arg(long, default_value = "mst")]
        rewire: String,
        /// Weight normalization: log1p | zscore.
        #[arg(long, default_value = "log1p")]
        norm: String,
        #[arg(long, default_value_t = 0.30)]
        prune_frac: f64,
        #[arg(long, default_value_t = 15)]
        max_out_degree: usize,
        #[arg(long, default_value_t = 0.15)]
        gdc_teleport: f64,
        #[arg(long, default_value_t = 2)]
        gdc_top_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train with mini-batch neighborhood sampling and early stopping.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fusion branches: full | no-static | static-only.
        #[arg(long, default_value = "full")]
        modality: String,
        /// Stop once validation R2 reaches this value (optional budget cap).
        #[arg(long)]
        stop_at_val_r2: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Split: train | val | test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Seed that generated the split during training.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "full")]
        modality: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ablation sweeps: input window, feature groups, modalities, edge dropout.
    Ablate {
        /// window | features | modality | edges.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training seeds, e.g. `1,2,3`.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        /// Window lengths in hours (window kind).
        #[arg(long, default_value = "6,24,48")]
        windows: String,
        /// Feature groups to zero (features kind).
        #[arg(long, default_value = "physiology,vitals,ethnicity")]
        groups: String,
        /// Modality variants (modality kind).
        #[arg(long, default_value = "full,static-only,no-static")]
        modes: String,
        /// Edge dropout fractions (edges kind).
        #[arg(long, default_value = "0.3,0.5,0.7")]
        drop_fracs: String,
        /// Re-evaluate the baseline instead of retraining (edges kind).
        #[arg(long)]
        no_retrain: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Seeded random hyperparameter search over the tuned space.
    Search {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        n_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shrink sampled widths for CPU-sized runs.
        #[arg(long)]
        desk_scale: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summaries and SVG plots from one or more run directories.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, seed, n_stays, d_ts, d_flat, d_codes, emb_dim, t_bins } => {
            synth::run(&out, seed, n_stays, d_ts, d_flat, d_codes, emb_dim, t_bins)
        }
        Command::BuildGraph {
            cohort,
            out,
            diag_method,
            k_diag,
            k_bert,
            rewire,
            norm,
            prune_frac,
            max_out_degree,
            gdc_teleport,
            gdc_top_k,
            seed,
        } => {
            let cfg = GraphBuildConfig {
                diag_method: diag_method.parse()?,
                k_diag,
                k_bert,
                rewire: rewire.parse()?,
                norm: norm.parse()?,
                prune_frac,
                max_out_degree,
                gdc_teleport,
                gdc_top_k,
            };
            build_graph::run(&cohort, &out, &cfg, seed)
        }
        Command::Train { cohort, graph, out, seed, modality, stop_at_val_r2, config } => {
            let cfg = commands::resolve_config(
                &config.preset,
                config.config.as_deref(),
                &config.sets,
            )?;
            let (cohort, edges) = commands::load_inputs(&cohort, &graph)?;
            let mut opts = TrainOptions::new(seed);
            opts.modality = train::parse_modality(&modality)?;
            opts.stop_at_val_r2 = stop_at_val_r2;
            train::run(&cohort, &edges, &cfg, &opts, &out).map(|_| ())
        }
        Command::Evaluate { checkpoint, cohort, graph, split, seed, modality, out } => {
            evaluate::run(
                &checkpoint,
                &cohort,
                &graph,
                split.parse()?,
                seed,
                train::parse_modality(&modality)?,
                out.as_deref(),
            )
            .map(|_| ())
        }
        Command::Ablate {
            kind,
            cohort,
            graph,
            out,
            seeds,
            windows,
            groups,
            modes,
            drop_fracs,
            no_retrain,
            config,
        } => {
            let cfg = commands::resolve_config(
                &config.preset,
                config.config.as_deref(),
                &config.sets,
            )?;
            let (cohort, edges) = commands::load_inputs(&cohort, &graph)?;
            let args = ablate::AblateArgs {
                kind: kind.parse()?,
                seeds: commands::parse_list(&seeds, "seed")?,
                windows: commands::parse_list(&windows, "window")?,
                groups: commands::parse_list(&groups, "group")?,
                modes: commands::parse_list(&modes, "mode")?,
                drop_fracs: commands::parse_list(&drop_fracs, "drop fraction")?,
                retrain: !no_retrain,
            };
            ablate::run(&cohort, &edges, &cfg, &args, &out).map(|_| ())
        }
        Command::Search { cohort, graph, out, n_trials, seed, desk_scale, config } => {
            let base = commands::resolve_config(
                &config.preset,
                config.config.as_deref(),
                &config.sets,
            )?;
            let (cohort, edges) = commands::load_inputs(&cohort, &graph)?;
            search::run(&cohort, &edges, &base, n_trials, seed, desk_scale, &out).map(|_| ())
        }
        Command::Report { run_dir, out } => report::run(&run_dir, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
