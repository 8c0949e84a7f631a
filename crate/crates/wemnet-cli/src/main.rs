//! `wemnet` — train, ablate, and inspect weight-mask domain adaptation
//! models from JSON run configurations.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Print to stdout, exiting quietly if the consumer closed the pipe
/// (`wemnet ... | head` must not panic).
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        if writeln!(std::io::stdout(), $($t)*).is_err() {
            std::process::exit(0);
        }
    }};
}

/// Same without the trailing newline, for preformatted blocks.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        if write!(std::io::stdout(), $($t)*).is_err() {
            std::process::exit(0);
        }
    }};
}

use wemnet_core::config::RunConfig;
use wemnet_core::error::Error;
use wemnet_core::masks::ThresholdMode;
use wemnet_core::scalar::sigmoid;
use wemnet_core::train::{
    ablate_to_dir, domain_error_probe, full_model_gradcheck, run_to_dir, train,
};
use wemnet_core::WemnetModel;

#[derive(Parser)]
#[command(
    name = "wemnet",
    version,
    about = "Weight-mask domain adaptation experiments",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.jsonl / summary.csv / model.json
    Train(RunArgs),
    /// Train the four ablation variants (baseline, dim, sem, full)
    Ablate(RunArgs),
    /// Train, then report mean domain error with and without domain purging
    ProbeDomainError(RunArgs),
    /// Finite-difference check of the full model's gradients
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Largest acceptable relative error
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write the weight-derived masks of both heads as CSV
    DumpMasks(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's epoch count
    #[arg(long)]
    epochs: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, Option<PathBuf>), Error> {
        let mut config = match &self.config {
            Some(path) => {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "config file not found: {}",
                        path.display()
                    )));
                }
                RunConfig::load(path)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        let out = self
            .out
            .clone()
            .or_else(|| config.out_dir.as_ref().map(PathBuf::from));
        Ok((config, out))
    }

    fn resolve_with_out(&self) -> Result<(RunConfig, PathBuf), Error> {
        let (config, out) = self.resolve()?;
        let out = out.ok_or_else(|| {
            Error::Config("no output directory: pass --out or set out_dir".to_string())
        })?;
        Ok((config, out))
    }
}

fn cmd_train(args: &RunArgs) -> Result<(), Error> {
    let (config, out) = args.resolve_with_out()?;
    let output = run_to_dir(&config, &out)?;
    let last = output.history.last().expect("history never empty");
    outln!(
        "trained {} epochs: source accuracy {:.2}%, target accuracy {}",
        last.epoch,
        last.source_accuracy,
        last.target_accuracy
            .map(|v| format!("{v:.2}%"))
            .unwrap_or_else(|| "n/a (unlabeled target)".to_string())
    );
    outln!("metrics written to {}", out.display());
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> Result<(), Error> {
    let (config, out) = args.resolve_with_out()?;
    let outcomes = ablate_to_dir(&config, &out)?;
    outln!("variant    dim    sem    final target accuracy");
    for o in &outcomes {
        outln!(
            "{:<10} {:<6} {:<6} {}",
            o.name,
            o.dim_enabled,
            o.sem_enabled,
            o.final_target_accuracy()
                .map(|v| format!("{v:.2}%"))
                .unwrap_or_else(|| "n/a".to_string())
        );
    }
    outln!("per-variant metrics written to {}", out.display());
    Ok(())
}

fn cmd_probe(args: &RunArgs) -> Result<(), Error> {
    let (config, out) = args.resolve()?;
    if !config.dim_enabled {
        return Err(Error::Config(
            "probe-domain-error needs dim_enabled = true".to_string(),
        ));
    }
    let output = train::<f64>(&config)?;
    let (mut source, mut target) = config.dataset.build::<f64>(config.seed)?;
    if config.standardize {
        wemnet_core::data::standardize_by_source(&mut source, &mut target)?;
    }
    let table = domain_error_probe(&output.model, &source, &target)?;
    outln!("domain  with_f_d  without_f_d");
    outln!("source  {:.4}    {:.4}", table.with_source, table.without_source);
    outln!("target  {:.4}    {:.4}", table.with_target, table.without_target);
    if let Some(out) = out {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
        let path = out.join("probe.csv");
        let csv = format!(
            "domain,mean_err_d_with,mean_err_d_without\nsource,{},{}\ntarget,{},{}\n",
            table.with_source, table.without_source, table.with_target, table.without_target
        );
        std::fs::write(&path, csv).map_err(|e| Error::io(path.display().to_string(), e))?;
        outln!("probe table written to {}", path.display());
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, tolerance: f64) -> Result<ExitCode, Error> {
    let report = full_model_gradcheck(seed)?;
    outln!(
        "max relative error {:.3e} over {} entries (worst: {}{:?}, analytic {:.6e}, numeric {:.6e})",
        report.max_rel_err,
        report.entries_checked,
        report.worst_param,
        report.worst_index,
        report.analytic_at_worst,
        report.numeric_at_worst
    );
    if report.passes(tolerance) {
        outln!("PASS (tolerance {tolerance:.0e})");
        Ok(ExitCode::SUCCESS)
    } else {
        outln!("FAIL (tolerance {tolerance:.0e})");
        Ok(ExitCode::from(1))
    }
}

/// CSV of both heads' mask computations, one row per weight entry.
fn mask_csv(model: &WemnetModel) -> Result<String, Error> {
    let mut out = String::from("head,row,col,weight,sigmoid_abs,threshold,mask_bit\n");
    let domain = model.domain_mask()?;
    let w_d = model.discriminator_weight().value_clone();
    for ((i, j), &w) in w_d.indexed_iter() {
        out.push_str(&format!(
            "domain,{i},{j},{w},{},{},{}\n",
            sigmoid(w.abs()),
            domain.threshold,
            domain.mask[(i, j)]
        ));
    }
    let class = model.class_mask()?;
    let w_c = model.classifier_weight().value_clone();
    for ((i, j), &w) in w_c.indexed_iter() {
        let threshold = match class.mode {
            ThresholdMode::Global => class.thresholds[0],
            ThresholdMode::PerRow => class.thresholds[i],
        };
        out.push_str(&format!(
            "class,{i},{j},{w},{},{},{}\n",
            sigmoid(w.abs()),
            threshold,
            class.mask[(i, j)]
        ));
    }
    Ok(out)
}

fn cmd_dump_masks(args: &RunArgs) -> Result<(), Error> {
    let (config, out) = args.resolve()?;
    let output = train::<f64>(&config)?;
    let csv = mask_csv(&output.model)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)
                .map_err(|e| Error::io(dir.display().to_string(), e))?;
            let path = dir.join("masks.csv");
            std::fs::write(&path, &csv).map_err(|e| Error::io(path.display().to_string(), e))?;
            outln!("masks written to {}", path.display());
        }
        None => out!("{csv}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    match &cli.command {
        Command::Train(args) => cmd_train(args).map(|()| ExitCode::SUCCESS),
        Command::Ablate(args) => cmd_ablate(args).map(|()| ExitCode::SUCCESS),
        Command::ProbeDomainError(args) => cmd_probe(args).map(|()| ExitCode::SUCCESS),
        Command::Gradcheck { seed, tolerance } => cmd_gradcheck(*seed, *tolerance),
        Command::DumpMasks(args) => cmd_dump_masks(args).map(|()| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
