use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use thzgen::commands::{self, Metric, DEFAULT_MAX_PAIR_DISTANCE};
use thzgen::{RunConfig, THREADS_ENV};
use thzgen_core::math::Vec3;

#[derive(Parser)]
#[command(name = "thzgen", version, about = "Conditional THz beamspace channel generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize, normalize and split a dataset into <out>/train.thzc and <out>/test.thzc.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train the denoiser on <data>/train.thzc, scoring <data>/test.thzc each epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Loss curve CSV (default: <out-ckpt> with extension .loss.csv).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Draw channels at one Rx position with the EMA weights.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Absolute Rx position `x,y,z` in metres.
        #[arg(long, allow_hyphen_values = true)]
        pos: String,
        #[arg(long)]
        num: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated channels with a reference set.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "ssim,angular,nmse")]
        metrics: String,
        #[arg(long)]
        out_csv: PathBuf,
        /// Largest Rx-position distance (m) at which two samples are paired.
        #[arg(long, default_value_t = DEFAULT_MAX_PAIR_DISTANCE)]
        max_pair_distance: f64,
    },
}

fn parse_pos(s: &str) -> Result<Vec3> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--pos `{s}` is not a list of numbers"))?;
    match v[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => bail!("--pos needs exactly three values x,y,z, got {}", v.len()),
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    match cli.command {
        Command::GenData { config, out, count, seed } => {
            let cfg = RunConfig::load(&config)?;
            let summary = commands::gen_data(&cfg, &out, count, seed)?;
            println!("{summary}");
        }
        Command::Train {
            config,
            data,
            out_ckpt,
            loss_csv,
        } => {
            let cfg = RunConfig::load(&config)?;
            let summary = commands::train(&cfg, &data, &out_ckpt, loss_csv.as_deref(), |s| {
                eprintln!("epoch {:>4}  train {:.6}  test {:.6}", s.epoch, s.train_loss, s.test_loss);
            })?;
            println!(
                "trained {} parameters for {} epochs; checkpoint {}, losses {}",
                summary.param_count,
                summary.history.len(),
                out_ckpt.display(),
                summary.loss_csv.display()
            );
        }
        Command::Sample {
            ckpt,
            pos,
            num,
            seed,
            out,
        } => {
            let ds = commands::sample(&ckpt, parse_pos(&pos)?, num, seed, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Eval {
            gen,
            reference,
            metrics,
            out_csv,
            max_pair_distance,
        } => {
            let metrics = Metric::parse_list(&metrics)?;
            let (report, written) = commands::eval(&gen, &reference, &metrics, max_pair_distance, &out_csv)?;
            println!("{} pairs", report.pairs.len());
            if let Some((_, cdf)) = &report.ssim {
                println!("mean SSIM {:.4}", cdf.mean);
            }
            if let Some(a) = &report.angular {
                println!(
                    "angular TV tx {:.4} rx {:.4}",
                    a.comparison.tx.tv_distance, a.comparison.rx.tv_distance
                );
            }
            if let Some((_, s)) = &report.nmse {
                println!("NMSE mean {:.4e} median {:.4e}", s.mean, s.median);
            }
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}
