use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use guitarflow_cli::{CliError, CliResult, Condition, Pipeline, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "guitarflow", version, about = "Tablature-to-guitar style transfer pipeline")]
struct Cli {
    /// Config file; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root for all relative paths.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate random scores with paired synthetic and pseudo-real renders.
    Synthdata {
        #[arg(long)]
        n_scores: Option<usize>,
    },
    /// Render one score file to WAV.
    Render {
        #[arg(long)]
        score: PathBuf,
        #[arg(long, default_value = "synthetic")]
        style: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the velocity network on the training split.
    Train,
    /// Transfer a WAV, a score or a directory of WAVs.
    Transfer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare rendered and transferred audio against the real corpus.
    Eval {
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long)]
        guitarflow: Option<PathBuf>,
        /// Comma-separated subset of di,amp.
        #[arg(long, default_value = "di,amp")]
        conditions: String,
    },
    /// Friedman and pairwise Wilcoxon tests over a ratings CSV.
    Stats {
        #[arg(long)]
        ratings: PathBuf,
        /// Bonferroni comparison count.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(CliError::Usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if !cli.workdir.is_dir() {
        return Err(CliError::data(format!("workdir {} is not a directory", cli.workdir.display())));
    }
    let p = Pipeline::new(cfg, cli.workdir);
    match cli.command {
        Command::Synthdata { n_scores } => {
            let s = p.synthdata(n_scores)?;
            println!("synthdata: {} train and {} test scores, config_hash={}", s.train.len(), s.test.len(), p.config_hash());
        }
        Command::Render { score, style, output } => {
            p.render(&score, &style, &output)?;
            println!("render: wrote {}", output.display());
        }
        Command::Train => {
            let s = p.train()?;
            println!(
                "train: {} pairs, {} steps in {:.2} s ({:.3} steps/s), final loss {:.6}",
                s.pairs,
                s.steps,
                s.wall_seconds,
                s.steps_per_second(),
                s.final_loss
            );
            println!("train: wrote {} and {}", s.checkpoint.display(), s.loss_csv.display());
        }
        Command::Transfer { checkpoint, input, output } => {
            let written = p.transfer(checkpoint.as_deref(), input.as_deref(), output.as_deref())?;
            println!("transfer: wrote {} file(s)", written.len());
        }
        Command::Eval { real, render, guitarflow, conditions } => {
            let conds = conditions
                .split(',')
                .map(|c| Condition::by_name(c.trim()).ok_or_else(|| CliError::Usage(format!("unknown condition {c:?}"))))
                .collect::<CliResult<Vec<_>>>()?;
            let report = p.eval(real.as_deref(), render.as_deref(), guitarflow.as_deref(), &conds)?;
            print!("{}", report.to_table());
        }
        Command::Stats { ratings, m, alpha, out } => {
            let s = p.stats(&ratings, m, alpha, out.as_deref())?;
            println!("bonferroni threshold: alpha/m = {}/{} = {:.4}", s.alpha, s.m, s.threshold);
            for (cond, results) in &s.results {
                for r in results {
                    let t = &r.result;
                    let verdict = t.alpha_corrected.map_or("", |a| if t.p_value < a { "significant" } else { "n.s." });
                    let label = if cond.is_empty() { String::new() } else { format!("[{cond}] ") };
                    println!("{label}{} {}: statistic {:.4}, p = {:.4} {verdict}", r.test, r.comparison, t.statistic, t.p_value);
                }
            }
            println!("stats: wrote {} and {}", s.results_csv.display(), s.mos_csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
