//! `xbar` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use xbar_core::encoding::variance_curve;
use xbar_core::network::{evaluate, ForwardMode};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::{HarnessError, Result};
use crate::experiment::{
    adapt_network, obtain_network, optimize_encoding, plan_document, pretrain_network,
    run_on_network, run_sensitivity, save_network,
};
use crate::report::{emit_report, ReportFormat, ReportMeta};

#[derive(Debug, Parser)]
#[command(
    name = "xbar",
    version,
    about = "Pulse-encoded binary crossbar inference experiments"
)]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Latency weight for encoding optimization.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Noise levels replacing `sigma_list` (repeat or comma-separate).
    #[arg(long, global = true, value_delimiter = ',')]
    pub sigma: Vec<f64>,
    /// Output directory [config `output_dir`, then $XBAR_OUTPUT_DIR].
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form noise variance of thermometer and bit-slicing codes.
    AnalyzeEncoding {
        #[arg(long, default_value_t = 8)]
        max_bits: u32,
    },
    /// Train the binary-weight network and write its checkpoint.
    Pretrain,
    /// Single-layer noise sweeps on the pre-trained network.
    Sensitivity,
    /// Learn a per-layer pulse plan for every configured σ.
    GboTrain,
    /// Noise-injection fine-tuning for every configured σ.
    NiaFinetune,
    /// Evaluate the configured methods on an existing checkpoint.
    Eval {
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Full pipeline, pre-training when no checkpoint exists.
    Report {
        #[arg(long, value_enum, default_value_t = FormatArg::Both)]
        format: FormatArg,
    },
}

/// Parses `args` and runs the command. Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli, command: &str) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config(format!("`{command}` needs --config <file>")))?;
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        gamma: cli.gamma,
        sigma: cli.sigma.clone(),
        output_dir: cli.output_dir.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn sigma_tag(sigma: f64) -> String {
    format!("sigma_{sigma}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn formats(f: FormatArg) -> Vec<ReportFormat> {
    match f {
        FormatArg::Csv => vec![ReportFormat::Csv],
        FormatArg::Json => vec![ReportFormat::Json],
        FormatArg::Both => vec![ReportFormat::Csv, ReportFormat::Json],
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::AnalyzeEncoding { max_bits } => {
            let dir = match &cli.config {
                Some(_) => load_config(cli, "analyze-encoding")?.output_dir(),
                None => ExperimentConfig::default_output_dir(cli.output_dir.clone()),
            };
            let mut text =
                String::from("bits,thermometer_pulses,thermometer_variance,bitslice_variance\n");
            for pt in variance_curve(*max_bits)? {
                text.push_str(&format!(
                    "{},{},{:.9},{:.9}\n",
                    pt.bits, pt.thermometer_pulses, pt.thermometer_variance, pt.bitslice_variance
                ));
            }
            write_text(&dir.join("encoding_variance.csv"), &text)
        }
        Command::Pretrain => {
            let cfg = load_config(cli, "pretrain")?;
            let split = cfg.dataset.load()?;
            let net = pretrain_network(&cfg, &split)?;
            let path = cfg.checkpoint_path();
            save_network(&net, &cfg, &path)?;
            let acc = evaluate(&net, &split.test, &ForwardMode::Clean)?;
            println!("wrote {} (clean test accuracy {acc:.4})", path.display());
            Ok(())
        }
        Command::Sensitivity => {
            let mut cfg = load_config(cli, "sensitivity")?;
            cfg.pretrain = false;
            let split = cfg.dataset.load()?;
            let net = obtain_network(&cfg, &split)?;
            for report in run_sensitivity(&cfg, &split, &net)? {
                let name = format!("sensitivity_{}.csv", sigma_tag(report.sigma));
                write_text(&cfg.output_dir().join(name), &report.to_csv())?;
            }
            Ok(())
        }
        Command::GboTrain => {
            let mut cfg = load_config(cli, "gbo-train")?;
            cfg.pretrain = false;
            let split = cfg.dataset.load()?;
            let net = obtain_network(&cfg, &split)?;
            for &sigma in &cfg.sigma_list {
                let state = optimize_encoding(&cfg, &net, &split.train, sigma, cfg.gbo.gamma)?;
                let doc = plan_document(&state);
                let plan = doc.plan()?;
                println!("sigma {sigma}: plan {plan} (avg {})", plan.avg_label());
                let name = format!("gbo_plan_{}.json", sigma_tag(sigma));
                write_text(&cfg.output_dir().join(name), &doc.to_json())?;
            }
            Ok(())
        }
        Command::NiaFinetune => {
            let mut cfg = load_config(cli, "nia-finetune")?;
            cfg.pretrain = false;
            let split = cfg.dataset.load()?;
            let net = obtain_network(&cfg, &split)?;
            for &sigma in &cfg.sigma_list {
                let adapted = adapt_network(&cfg, &net, &split.train, sigma)?;
                let path = cfg
                    .output_dir()
                    .join(format!("nia_{}.json", sigma_tag(sigma)));
                save_network(&adapted, &cfg, &path)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Eval { format } => {
            let mut cfg = load_config(cli, "eval")?;
            cfg.pretrain = false;
            report(&cfg, *format, "eval")
        }
        Command::Report { format } => {
            let cfg = load_config(cli, "report")?;
            report(&cfg, *format, "report")
        }
    }
}

fn report(cfg: &ExperimentConfig, format: FormatArg, stem: &str) -> Result<()> {
    let split = cfg.dataset.load()?;
    let net = obtain_network(cfg, &split)?;
    let rows = run_on_network(cfg, &split, &net)?;
    let meta = ReportMeta::new(cfg.hash());
    for f in formats(format) {
        for path in emit_report(&rows, f, &cfg.output_dir(), stem, &meta)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
