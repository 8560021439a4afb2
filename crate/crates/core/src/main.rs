use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcigle::harness::{
    compare, compute_metrics, generate_stream, run_mcigle, self_check, AccuracyMatrix, HarnessError, ProtocolConfig,
};

#[derive(Parser)]
#[command(name = "mcigle", version, about = "Exemplar-free multimodal class-incremental graph learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic stream of a config as graph text files.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full protocol and write metrics.csv, accuracy_matrix.csv and curve.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also run the naive baseline and the joint-training oracle.
        #[arg(long)]
        compare: bool,
    },
    /// Recompute metrics from a saved accuracy matrix.
    Eval {
        #[arg(long)]
        matrix: PathBuf,
        /// Directory for metrics.csv; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle and invariant checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Path) -> Result<ProtocolConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    ProtocolConfig::parse(&text)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = load_config(&config)?;
            let stream = generate_stream(&cfg)?;
            fs::create_dir_all(&out)?;
            for p in &stream.phases {
                for (kind, g) in [("train", &p.train), ("test", &p.test)] {
                    let file = fs::File::create(out.join(format!("phase_{}_{kind}.graph", p.phase)))?;
                    g.write_text(std::io::BufWriter::new(file))?;
                }
            }
            eprintln!("wrote {} phases to {}", stream.phases.len(), out.display());
        }
        Command::Run { config, out, compare: with_baselines } => {
            let cfg = load_config(&config)?;
            let (run, extra) = if with_baselines {
                let c = compare(&cfg)?;
                let extra = format!(
                    "naive_acc,{}\nnaive_forgetting,{}\nnaive_bwf,{}\njoint_acc,{}\n",
                    c.naive.metrics.acc, c.naive.metrics.forgetting, c.naive.metrics.bwf, c.joint_acc
                );
                (c.mcigle, extra)
            } else {
                (run_mcigle(&cfg)?, String::new())
            };
            write(&out, "metrics.csv", &(run.metrics.to_csv() + &extra))?;
            write(&out, "accuracy_matrix.csv", &run.accuracy.to_csv())?;
            write(&out, "curve.csv", &run.metrics.curve_csv(&run.classes_seen))?;
            println!("acc {:.4} forgetting {:.4} bwf {:.4}", run.metrics.acc, run.metrics.forgetting, run.metrics.bwf);
        }
        Command::Eval { matrix, out } => {
            let text = fs::read_to_string(&matrix).map_err(|e| HarnessError::Config(format!("{}: {e}", matrix.display())))?;
            let report = compute_metrics(&AccuracyMatrix::from_csv(&text)?)?;
            match out {
                Some(dir) => write(&dir, "metrics.csv", &report.to_csv())?,
                None => print!("{}", report.to_csv()),
            }
        }
        Command::Check { seed } => {
            let results = self_check(seed);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(HarnessError::Numerical { phase, message }) => {
            eprintln!("error: numerical failure in phase {phase}: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
