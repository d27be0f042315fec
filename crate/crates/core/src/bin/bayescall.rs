use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bayescall::commands::{cmd_eval, cmd_mask_eval, cmd_simulate, cmd_train, log_path};
use bayescall::config::{parse_row_range, RunConfig};
use bayescall::layers::HeadKind;
use bayescall::Result;
use clap::{Args, Parser, Subcommand};

/// Bayesian BiLSTM somatic variant calling on simulated pileups.
#[derive(Parser)]
#[command(name = "bayescall", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled pair-matrix dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Undersample the majority class.
        #[arg(long)]
        balance: bool,
    },
    /// Train a standard or Bayesian model on the training partition.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// `standard` or `bayes`; defaults to the config's `head`.
        #[arg(long)]
        head: Option<HeadKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test partition.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predictions on clean and row-masked test inputs.
    MaskEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// 1-based inclusive rows to black out, `LO..HI`.
        #[arg(long)]
        mask_rows: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            out,
            n,
            seed,
            balance,
        } => {
            let mut cfg = common.load()?;
            if let Some(n) = n {
                cfg.n_examples = n;
            }
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            cfg.balance |= balance;
            let s = cmd_simulate(&cfg, &out)?;
            println!("simulated: germline {} somatic {}", s.before.0, s.before.1);
            if cfg.balance {
                println!("balanced:  germline {} somatic {}", s.after.0, s.after.1);
            }
            println!("wrote {}", out.display());
        }
        Command::Train {
            common,
            data,
            head,
            out,
        } => {
            let cfg = common.load()?;
            let head = head.unwrap_or(cfg.head);
            cmd_train(&cfg, &data, head, &out, |e| {
                println!(
                    "epoch {:>3}  nll {:.4}  kl {:.2}  total {:.4}  train_acc {:.4}",
                    e.epoch, e.nll, e.kl, e.total, e.train_accuracy
                )
            })?;
            println!("wrote {} and {}", out.display(), log_path(&out).display());
        }
        Command::Eval {
            common,
            model,
            data,
            out,
        } => {
            let cfg = common.load()?;
            let r = cmd_eval(&cfg, &model, &data, &out)?;
            println!(
                "accuracy {:.4}  mean_entropy {:.4}  uncertain {:.4}  (n={}, n_mc={})",
                r.accuracy, r.mean_entropy, r.uncertain_fraction, r.count, r.n_mc
            );
            report_dir(&out);
        }
        Command::MaskEval {
            common,
            model,
            data,
            mask_rows,
            out,
        } => {
            let mut cfg = common.load()?;
            if let Some(r) = mask_rows {
                cfg.eval.mask_rows = parse_row_range("mask-rows", &r)?;
            }
            let o = cmd_mask_eval(&cfg, &model, &data, &out)?;
            let s = &o.summary;
            println!(
                "entropy in {:.4} masked {:.4} (delta {:+.4})",
                s.mean_entropy_in, s.mean_entropy_masked, s.entropy_delta
            );
            println!(
                "mid-bin mass in {:.4} masked {:.4}",
                s.mid_mass_in, s.mid_mass_masked
            );
            report_dir(&out);
        }
    }
    Ok(())
}

fn report_dir(dir: &Path) {
    println!("wrote reports to {}", dir.display());
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bayescall: {e}");
            ExitCode::FAILURE
        }
    }
}
