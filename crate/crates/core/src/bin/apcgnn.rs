use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use apcgnn::data::{
    generate_synthetic_cohort, load_cohort_csv, write_cohort_csv, RawTable, Schema, SyntheticConfig,
};
use apcgnn::explain::predict_new;
use apcgnn::service::{port_from_env, serve, AppState};
use apcgnn::trainer::{evaluate, run_ablations, train_table, TrainConfig, TrainedModel};

#[derive(Parser)]
#[command(name = "apcgnn", version, about = "Patient-graph diabetes type classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataArgs {
    /// Cohort CSV with header age,bmi,fpg,hba1c,sbp,dbp,pregnancies,label
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic cohort as `n,seed`
    #[arg(long, value_parser = parse_synthetic)]
    synthetic: Option<(usize, u64)>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it as JSON
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// JSON training config; missing fields take defaults
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        /// Also write the held-out evaluation report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a saved model on a cohort (its stored held-out rows by default)
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        /// Confusion matrix as CSV
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Run the five ablation configurations over several seeds
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed range `a..b` (inclusive) or comma list
        #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(long, default_value = "ablation.json")]
        out: PathBuf,
    },
    /// One-vs-rest ROC points of a saved model's report as CSV
    Roc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "roc.csv")]
        out: PathBuf,
    },
    /// Predict one patient from a JSON feature object (nulls allowed)
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Path to the patient JSON, or `-` for stdin
        #[arg(long)]
        patient: PathBuf,
    },
    /// Write a synthetic cohort as CSV
    Generate {
        #[arg(long, default_value_t = 540)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "cohort.csv")]
        out: PathBuf,
    },
    /// Start the HTTP service
    Serve {
        #[arg(long, default_value = "registry")]
        registry: PathBuf,
        /// Directory with the web console bundle
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Overrides APC_PORT
        #[arg(long)]
        port: Option<u16>,
    },
}

fn parse_synthetic(s: &str) -> Result<(usize, u64), String> {
    let (n, seed) = s.split_once(',').ok_or("expected n,seed")?;
    Ok((
        n.trim().parse().map_err(|e| format!("n: {e}"))?,
        seed.trim().parse().map_err(|e| format!("seed: {e}"))?,
    ))
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|e| format!("{e}"))?;
        if b < a {
            return Err("empty seed range".into());
        }
        return Ok(Seeds((a..=b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{e}")))
        .collect::<Result<_, _>>()
        .map(Seeds)
}

fn load_table(args: &DataArgs) -> Result<RawTable> {
    let schema = Schema::diabetes();
    match (&args.data, args.synthetic) {
        (Some(path), _) => read_csv(path),
        (None, Some((n, seed))) => {
            Ok(generate_synthetic_cohort(n, seed, &SyntheticConfig::default())?.to_raw(&schema))
        }
        (None, None) => bail!("give --data <csv> or --synthetic n,seed"),
    }
}

fn read_csv(path: &Path) -> Result<RawTable> {
    let load = load_cohort_csv(path, &Schema::diabetes())
        .with_context(|| format!("reading {}", path.display()))?;
    for d in &load.rejected {
        tracing::warn!(line = d.line, reason = ?d.reason, "{}", d.detail);
    }
    if load.malformed_rows().next().is_some() {
        bail!("{} has malformed rows (see warnings)", path.display());
    }
    Ok(load.table)
}

fn load_config(path: Option<&PathBuf>) -> Result<TrainConfig> {
    let cfg = match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn report_for(model: &TrainedModel, data: Option<&PathBuf>) -> Result<apcgnn::trainer::EvalReport> {
    let table = match data {
        Some(p) => read_csv(p)?,
        None => model
            .holdout
            .clone()
            .context("model has no stored held-out rows; pass --data")?,
    };
    Ok(evaluate(model, &table)?)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Train {
            data,
            config,
            out,
            report,
        } => {
            let table = load_table(&data)?;
            let cfg = load_config(config.as_ref())?;
            let outcome = train_table(&table, &cfg, |p| {
                if p.epoch % 25 == 0 || p.epoch == p.epochs {
                    tracing::info!(epoch = p.epoch, loss = p.loss.total, "training");
                }
            })?;
            outcome.model.save(&out)?;
            if let Some(path) = report {
                write_json(&path, &outcome.report)?;
            }
            println!(
                "accuracy {:.4}  macro F1 {:.4}  -> {}",
                outcome.report.accuracy,
                outcome.report.macro_f1,
                out.display()
            );
        }
        Command::Evaluate {
            model,
            data,
            report,
            confusion,
        } => {
            let m = TrainedModel::load(&model)?;
            let rep = report_for(&m, data.as_ref())?;
            write_json(&report, &rep)?;
            if let Some(path) = confusion {
                fs::write(path, rep.confusion_csv())?;
            }
            println!("accuracy {:.4}  macro F1 {:.4}", rep.accuracy, rep.macro_f1);
        }
        Command::Ablate {
            data,
            config,
            seeds,
            out,
        } => {
            let table = match (&data.data, data.synthetic) {
                (None, None) => generate_synthetic_cohort(540, 7, &SyntheticConfig::default())?
                    .to_raw(&Schema::diabetes()),
                _ => load_table(&data)?,
            };
            let cfg = load_config(config.as_ref())?;
            let rep = run_ablations(&table, &cfg, &seeds.0)?;
            write_json(&out, &rep)?;
            for row in &rep.rows {
                match (row.mean_accuracy, row.std_accuracy, row.mean_macro_f1) {
                    (Some(a), Some(s), Some(f)) => {
                        println!("{:<15} acc {:.4} ± {:.4}  macro F1 {:.4}", row.name, a, s, f)
                    }
                    _ => println!("{:<15} failed", row.name),
                }
            }
        }
        Command::Roc { model, data, out } => {
            let m = TrainedModel::load(&model)?;
            fs::write(&out, report_for(&m, data.as_ref())?.roc_csv())?;
        }
        Command::Predict { model, patient } => {
            let m = TrainedModel::load(&model)?;
            let text = if patient.as_os_str() == "-" {
                std::io::read_to_string(std::io::stdin())?
            } else {
                fs::read_to_string(&patient)?
            };
            let body: serde_json::Value = serde_json::from_str(&text)?;
            let row = apcgnn::service::parse_patient(&body, &m.feature_names).map_err(|errs| {
                let list: Vec<String> = errs.iter().map(|e| format!("{}: {}", e.field, e.reason)).collect();
                anyhow::anyhow!("invalid patient: {}", list.join("; "))
            })?;
            println!("{}", serde_json::to_string_pretty(&predict_new(&row, &m)?)?);
        }
        Command::Generate { n, seed, out } => {
            let cohort = generate_synthetic_cohort(n, seed, &SyntheticConfig::default())?;
            write_cohort_csv(fs::File::create(&out)?, &cohort, &Schema::diabetes())?;
        }
        Command::Serve {
            registry,
            static_dir,
            host,
            port,
        } => {
            let state = AppState::open(&registry)?;
            let addr = SocketAddr::new(host, port.unwrap_or_else(port_from_env));
            tokio::runtime::Runtime::new()?.block_on(serve(state, addr, static_dir))?;
        }
    }
    Ok(())
}
