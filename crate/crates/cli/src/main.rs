use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use qipf::pipeline::{self, ExperimentConfig, RunReport};

#[derive(Parser)]
#[command(name = "qipf", version, about = "QIPF pixel uncertainty experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment and write metrics, report and heatmaps.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the master seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time the QIPF and MC-dropout uncertainty phases.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Train the classifier and store the logits of every generated frame.
    ExportFeatures {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to store the label maps [default: <out>.labels.ften]
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Score QIPF and softmax uncertainty on externally computed features.
    Eval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also write metrics, report and heatmaps here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

fn print_summary(report: &RunReport) {
    println!("silverman factor {}", report.silverman_factor);
    println!("{:<12} {:>8} {:>8} {:>8}", "method", "PA", "PU", "PAvPU");
    for m in &report.methods {
        println!(
            "{:<12} {:>8} {:>8} {:>8}",
            m.method.name(),
            fmt(m.average.pa),
            fmt(m.average.pu),
            fmt(m.average.pavpu)
        );
    }
}

fn default_labels_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".labels.ften");
    out.with_file_name(name)
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let output = pipeline::run_experiment(&cfg)?;
            pipeline::export(&output, &out)?;
            print_summary(&output.report);
            println!("wrote {}", out.display());
        }
        Command::Bench { config, reps } => {
            let cfg = load_config(&config, None)?;
            let report = pipeline::bench(&cfg, reps)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!(
                "n ratio {:.3}, m ratio {:.3}",
                report.n_ratio(),
                report.m_ratio()
            );
        }
        Command::ExportFeatures {
            config,
            out,
            labels,
        } => {
            let cfg = load_config(&config, None)?;
            let (features, label_maps) = pipeline::export_dataset_features(&cfg)?;
            let labels = labels.unwrap_or_else(|| default_labels_path(&out));
            pipeline::write_tensor(&features, &out)?;
            pipeline::write_tensor(&label_maps, &labels)?;
            println!("wrote {} and {}", out.display(), labels.display());
        }
        Command::Eval {
            features,
            labels,
            config,
            out,
        } => {
            let cfg = load_config(&config, None)?;
            let features = pipeline::read_tensor(&features)
                .with_context(|| format!("reading {}", features.display()))?;
            let labels = pipeline::read_tensor(&labels)
                .with_context(|| format!("reading {}", labels.display()))?;
            let output = pipeline::evaluate_external(features, labels, &cfg)?;
            if let Some(out) = &out {
                pipeline::export(&output, out)?;
            }
            print_summary(&output.report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors count as configuration errors; --help and --version exit 0.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .downcast_ref::<qipf::Error>()
                .is_some_and(qipf::Error::is_config_error);
            ExitCode::from(if config_error { 1 } else { 2 })
        }
    }
}
