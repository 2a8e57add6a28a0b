use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lda_core::data::{ImbalanceProfile, SynthConfig};
use lda_core::trainer::{AblationGrid, Strategy};
use lda_forge::commands;
use lda_forge::{ExperimentConfig, Overrides, Result};

#[derive(Parser)]
#[command(name = "lda-forge", version, about = "Long-tailed distribution adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a long-tailed Gaussian mixture and write it as CSV.
    Synth(SynthArgs),
    /// Train one run into a content-addressed run directory.
    Train(RunArgs),
    /// Score a run's checkpoint on its test split.
    Eval {
        run_dir: PathBuf,
        /// Checkpoint to score instead of the run's own.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep strategies and LDA hyperparameters over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        fixed_alphas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Compare finished runs; the first one is the baseline.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    max_count: usize,
    #[arg(long, default_value_t = 100.0)]
    ir: f64,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 3.0)]
    center_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 32)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    fixed_alpha: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let o = Overrides {
            out_dir: self.out_dir.clone(),
            data: self.data.clone(),
            strategy: self.strategy,
            epochs: self.epochs,
            seed: self.seed,
            lr: self.lr,
            gamma: self.gamma,
            beta: self.beta,
            fixed_alpha: self.fixed_alpha,
        };
        ExperimentConfig::resolve(self.config.as_deref(), &o)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                profile: ImbalanceProfile {
                    num_classes: a.classes,
                    max_count: a.max_count,
                    imbalance_ratio: a.ir,
                },
                dim: a.dim,
                center_scale: a.center_scale,
                noise_sigma: a.noise,
                seed: a.seed,
                test_per_class: a.test_per_class,
            };
            let m = commands::synth(&cfg, &a.out)?;
            println!(
                "wrote {} ({} classes, dim {}, {} train rows, {} test rows)",
                a.out.display(),
                m.classes,
                m.dim,
                m.counts.iter().sum::<usize>(),
                m.classes * m.test_per_class
            );
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let r = commands::train(&cfg)?;
            let f = &r.summary.final_record;
            println!("run {}", r.dir.display());
            println!(
                "epochs {}  acc {:.4}  many {}  medium {}  few {}",
                r.summary.epochs,
                f.acc_overall,
                fmt_opt(f.acc_many),
                fmt_opt(f.acc_medium),
                fmt_opt(f.acc_few)
            );
        }
        Command::Eval { run_dir, checkpoint } => {
            let d = commands::eval(&run_dir, checkpoint.as_deref())?;
            let a = &d.accuracy;
            println!("overall {:.4}", a.overall);
            println!("many    {}", fmt_opt(a.many));
            println!("medium  {}", fmt_opt(a.medium));
            println!("few     {}", fmt_opt(a.few));
        }
        Command::Ablate {
            run,
            strategies,
            gammas,
            fixed_alphas,
            betas,
            seeds,
        } => {
            let cfg = run.resolve()?;
            let d = AblationGrid::default();
            let grid = AblationGrid {
                strategies: strategies.unwrap_or(d.strategies),
                gammas: gammas.unwrap_or(d.gammas),
                fixed_alphas: fixed_alphas.unwrap_or(d.fixed_alphas),
                betas: betas.unwrap_or(d.betas),
            };
            let (dir, rows) = commands::ablate(&cfg, &grid, &seeds, commands::thread_cap()?)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            for r in rows.iter().filter(|r| r.result.is_err()) {
                eprintln!("{} seed {}: {}", r.label, r.seed, r.result.as_ref().unwrap_err());
            }
            println!(
                "{} runs, {} failed, table {}",
                rows.len(),
                failed,
                dir.join(commands::GRID_FILE).display()
            );
        }
        Command::Report { run_dirs, csv } => {
            print!("{}", commands::report(&run_dirs, csv.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
