use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mflab::autodiff::gradcheck::op_suite;
use mflab::config::ExperimentConfig;
use mflab::data::SynthMode;
use mflab::experiment::{self, AblateSpec};
use mflab::metrics::{render_table, TableFormat};
use mflab::model::architecture_suite;
use mflab::{Architecture, Error};

#[derive(Parser)]
#[command(name = "mflab", version, about = "Image-and-caption troll meme classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        arch: Option<Architecture>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a saved model on a manifest's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        mode: SynthMode,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check reverse-mode gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Tabulate the test metrics of finished runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "md")]
        format: TableFormat,
    },
    /// Train every architecture on every synthetic mode and compare.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "text_signal,image_signal,noise")]
        modes: Vec<SynthMode>,
        #[arg(long, value_delimiter = ',', default_value = "text_only,concat,crossmodal")]
        archs: Vec<Architecture>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = experiment::ABLATION_EPOCHS)]
        epochs: usize,
    },
}

fn run(command: Command) -> Result<(), Error> {
    let threads = experiment::threads_from_env();
    match command {
        Command::Train { config, arch, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(arch) = arch {
                cfg.set("arch", arch.as_str())?;
            }
            if let Some(seed) = seed {
                cfg.set("seed", &seed.to_string())?;
            }
            let summary = experiment::run_train(&cfg, threads, |line| eprintln!("{line}"))?;
            println!("run directory: {}", summary.dir.display());
            println!("best epoch: {}", summary.best_epoch);
            if let Some(report) = &summary.test {
                print!("{}", render_table(&[(summary.arch.to_string(), report.clone())], TableFormat::Markdown)?);
            }
        }
        Command::Eval { checkpoint, manifest, out } => {
            let report = experiment::run_eval(&checkpoint, &manifest, &out)?;
            print!("{}", render_table(&[("eval".to_string(), report)], TableFormat::Markdown)?);
        }
        Command::Synth { mode, n, seed, out } => {
            let manifest = experiment::run_synth(mode, n, seed, &out)?;
            println!("{}", manifest.display());
        }
        Command::Gradcheck { tol } => {
            if !(tol > 0.0) {
                return Err(Error::Usage("--tol must be positive".into()));
            }
            let mut reports = op_suite(0, tol)?;
            reports.extend(architecture_suite(0, tol)?);
            let mut failed = 0;
            for r in &reports {
                let verdict = if r.pass { "ok" } else { "FAIL" };
                println!("{verdict:<4} {:<18} max rel err {:.3e} over {} coordinates", r.name, r.max_rel_err, r.coordinates);
                if let Some(d) = &r.diagnostic {
                    println!("     {d}");
                }
                failed += usize::from(!r.pass);
            }
            if failed > 0 {
                return Err(Error::Failed(format!("{failed} gradient checks failed")));
            }
            println!("all ops pass ({} checks at tol {tol:e})", reports.len());
        }
        Command::Report { runs, format } => {
            print!("{}", experiment::run_report(&runs, format)?);
        }
        Command::Ablate { modes, archs, seed, out, n, epochs } => {
            let spec = AblateSpec {
                modes,
                archs,
                n,
                epochs,
                threads,
                ..AblateSpec::new(out, seed)
            };
            let result = experiment::run_ablate(&spec, |line| eprintln!("{line}"))?;
            print!("{}\n{}", result.table, result.grid);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
