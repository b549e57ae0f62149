use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kernsne_cli::{cmd_embed, cmd_eval, cmd_featurize, cmd_ingest, cmd_plot, cmd_sweep, RunConfig, Stage, StageError};
use kernsne_core::init::InitKind;
use kernsne_core::{Error, KernelKind};

#[derive(Parser, Debug)]
#[command(name = "kernsne", version, about = "Kernel- and initialization-pluggable t-SNE with AUC_RNX scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a dataset and write it back in canonical form
    Ingest(RunArgs),
    /// Write the k-mer feature matrix as a point CSV
    Featurize(RunArgs),
    /// Run the full pipeline into an output directory
    Embed(RunArgs),
    /// Run every kernel x initialization cell and rank them
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated kernels (default: all four)
        #[arg(long, value_delimiter = ',')]
        kernels: Vec<String>,
        /// Comma-separated initializations (default: all four)
        #[arg(long, value_delimiter = ',')]
        inits: Vec<String>,
    },
    /// Score an existing id,x,y embedding against a dataset
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Embedding CSV with header id,x,y[,label]
        #[arg(long)]
        embedding: PathBuf,
    },
    /// Render SVG plots of a finished run directory
    Plot {
        /// Run directory written by `embed`
        run_dir: PathBuf,
        /// Comma-separated checkpoint iterations (default: all)
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<usize>,
    },
}

/// Configuration flags. Each overrides the matching key of `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Flat key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset path, or circle:N for a synthetic noisy circle
    #[arg(long)]
    data: Option<String>,
    /// fasta | csv | points (default: inferred)
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    kmer_k: Option<String>,
    /// gaussian | isolation | laplacian | approximate
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    perplexity: Option<String>,
    /// Laplacian bandwidth, or `auto`
    #[arg(long)]
    sigma: Option<String>,
    /// Isolation kernel sample size
    #[arg(long)]
    psi: Option<String>,
    /// Isolation kernel rounds
    #[arg(long)]
    trees: Option<String>,
    /// random | pca | ica | ensemble
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum_early: Option<String>,
    #[arg(long)]
    momentum_late: Option<String>,
    /// Early exaggeration factor (1 disables it)
    #[arg(long)]
    exaggeration: Option<String>,
    #[arg(long)]
    kmax: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory (embed, sweep) or file (ingest, featurize, eval)
    #[arg(long)]
    out: Option<String>,
    /// row-normalize | global-normalize
    #[arg(long)]
    joint_mode: Option<String>,
    /// features | kernel
    #[arg(long)]
    hd_space: Option<String>,
    /// aligned | raw
    #[arg(long)]
    ensemble_mode: Option<String>,
    /// Worker threads (0: all cores)
    #[arg(long)]
    jobs: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, StageError> {
        let at_config = |e| StageError::new(Stage::Config, e);
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(at_config)?;
        }
        let flags = [
            ("data", &self.data),
            ("format", &self.format),
            ("kmer-k", &self.kmer_k),
            ("kernel", &self.kernel),
            ("perplexity", &self.perplexity),
            ("sigma", &self.sigma),
            ("psi", &self.psi),
            ("trees", &self.trees),
            ("init", &self.init),
            ("iters", &self.iters),
            ("checkpoint-every", &self.checkpoint_every),
            ("lr", &self.lr),
            ("momentum-early", &self.momentum_early),
            ("momentum-late", &self.momentum_late),
            ("exaggeration", &self.exaggeration),
            ("kmax", &self.kmax),
            ("seed", &self.seed),
            ("out", &self.out),
            ("joint-mode", &self.joint_mode),
            ("hd-space", &self.hd_space),
            ("ensemble-mode", &self.ensemble_mode),
            ("jobs", &self.jobs),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v).map_err(at_config)?;
            }
        }
        Ok(cfg)
    }

    /// `--out` as a file for the single-file commands; stdout otherwise.
    fn sink(&self) -> Result<Box<dyn Write>, StageError> {
        match &self.out {
            Some(path) => {
                let f = File::create(path).map_err(|e| StageError::new(Stage::Report, Error::Io(e)))?;
                Ok(Box::new(BufWriter::new(f)))
            }
            None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        }
    }
}

fn parse_list<T: std::str::FromStr<Err = Error> + Copy>(items: &[String], all: &[T]) -> Result<Vec<T>, StageError> {
    if items.is_empty() {
        return Ok(all.to_vec());
    }
    items
        .iter()
        .map(|s| s.trim().parse().map_err(|e| StageError::new(Stage::Config, e)))
        .collect()
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Ingest(args) => {
            let cfg = args.resolve()?;
            let summary = cmd_ingest(&cfg, args.sink()?)?;
            eprintln!("{summary}");
        }
        Command::Featurize(args) => {
            let cfg = args.resolve()?;
            let (n, d) = cmd_featurize(&cfg, args.sink()?)?;
            eprintln!("{n} rows, {d} features");
        }
        Command::Embed(args) => {
            let cfg = args.resolve()?;
            let run = cmd_embed(&cfg)?;
            for c in &run.checkpoints {
                println!("iteration {:>5}  kl {:.6}  auc_rnx {:.6}", c.iteration, c.kl, c.auc_rnx);
            }
            println!("wrote {}", run.dir.display());
        }
        Command::Sweep { run, kernels, inits } => {
            let cfg = run.resolve()?;
            let kernels = parse_list(&kernels, &KernelKind::ALL)?;
            let inits = parse_list(&inits, &InitKind::ALL)?;
            let report = cmd_sweep(&cfg, &kernels, &inits)?;
            print!("{}", report.to_table());
            if report.rows.iter().all(|r| r.outcome.is_err()) {
                return Err(StageError::new(
                    Stage::Report,
                    Error::Degenerate("every sweep cell failed".into()),
                ));
            }
        }
        Command::Eval { run, embedding } => {
            let cfg = run.resolve()?;
            let curve = cmd_eval(&cfg, &embedding)?;
            match &run.out {
                Some(_) => curve
                    .write_csv(run.sink()?)
                    .map_err(|e| StageError::new(Stage::Report, e))?,
                None => println!("auc_rnx,{}", curve.auc_rnx),
            }
        }
        Command::Plot { run_dir, checkpoints } => {
            for path in cmd_plot(&run_dir, &checkpoints)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {}", e.stage, e.source);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
