use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use nxm_admm::experiment::{
    analyze_run, apply_overrides, export_compressed, run_experiment, sweep, sweep_csv, RunConfig,
    SweepSpec, PRETRAINED_CHECKPOINT,
};
use nxm_admm::model::{build_policy, load_checkpoint, pretrain_dense, save_checkpoint, Network};

/// NxM semi-structured sparsification with ADMM.
#[derive(Parser)]
#[command(name = "nxm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense starting checkpoint.
    Pretrain(ConfigArgs),
    /// Run one fine-tuning configuration.
    Finetune(ConfigArgs),
    /// Run a grid of configurations.
    Sweep(ConfigArgs),
    /// Summarize a finished run directory.
    Analyze { dir: PathBuf },
    /// Write the packed form of every constrained layer of a checkpoint.
    Export {
        /// Checkpoint to pack.
        #[arg(long)]
        weights: PathBuf,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON document whose keys mirror the configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field overrides as `--key=value`; dotted keys reach nested fields.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY=VALUE"
    )]
    overrides: Vec<String>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            bail!("expected `--key=value`, found `{arg}`");
        };
        match body.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .with_context(|| format!("`--{body}` needs a value"))?;
                out.push((body.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

impl ConfigArgs {
    fn document(&self, default: Value) -> Result<Value> {
        let mut doc = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => default,
        };
        apply_overrides(&mut doc, &parse_overrides(&self.overrides)?)?;
        Ok(doc)
    }

    fn run_config(&self) -> Result<RunConfig> {
        let doc = self.document(serde_json::to_value(RunConfig::default())?)?;
        let cfg: RunConfig = serde_json::from_value(doc).context("invalid run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn sweep_spec(&self) -> Result<SweepSpec> {
        let doc = self.document(serde_json::to_value(SweepSpec::default())?)?;
        Ok(serde_json::from_value(doc).context("invalid sweep configuration")?)
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Pretrain(args) => {
            let cfg = args.run_config()?;
            let pre = pretrain_dense(&cfg.task, &cfg.model, &cfg.pretrain)?;
            fs::create_dir_all(&cfg.output_dir)
                .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
            let path = cfg.output_dir.join(PRETRAINED_CHECKPOINT);
            save_checkpoint(&path, pre.network.params())?;
            print_json(&serde_json::json!({
                "checkpoint": path,
                "final_train_loss": pre.final_train_loss,
                "val_loss": pre.val_loss,
            }))
        }
        Command::Finetune(args) => {
            let cfg = args.run_config()?;
            let artifacts = run_experiment(&cfg)?;
            print_json(&artifacts.summary)
        }
        Command::Sweep(args) => {
            let spec = args.sweep_spec()?;
            let report = sweep(&spec)?;
            print!("{}", sweep_csv(&report));
            Ok(())
        }
        Command::Analyze { dir } => print_json(&analyze_run(&dir)?),
        Command::Export {
            weights,
            out,
            config,
        } => {
            let cfg = config.run_config()?;
            let net = Network::from_params(cfg.model.clone(), load_checkpoint(&weights)?)?;
            let policy = build_policy(&net, &cfg.layers)?;
            let written = export_compressed(&net, &policy, cfg.pattern, &out)?;
            print_json(&written)
        }
    }
}
