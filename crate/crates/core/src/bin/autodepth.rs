use std::path::PathBuf;
use std::process::ExitCode;

use autodepth::flow::FlowConfig;
use autodepth::pipeline::{
    cmd_ablate, cmd_bench, cmd_eval, cmd_gen, cmd_infer, cmd_train, load_dataset_spec, RunConfig, MIN_TIMED_FRAMES,
};
use autodepth::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "autodepth", about = "Depth upsampling from a slow depth stream and a fast color stream")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    Gen {
        /// Dataset spec (JSON); built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seconds per sequence.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
    },
    /// Train with one sequence held out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        held_out: Option<String>,
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
    /// Evaluate the baselines and the network on a held-out sequence.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        held_out: String,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        deltas: Vec<usize>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Predict a depth frame for every color frame of a sequence.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        half: bool,
        #[arg(long)]
        pipelined: bool,
    },
    /// Time the model and the streaming pipeline.
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, default_value_t = MIN_TIMED_FRAMES)]
        frames: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train cascade-count and skip-removal variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn write_json(path: Option<PathBuf>, json: String) -> Result<()> {
    match path {
        Some(p) => std::fs::write(&p, json).map_err(|e| Error::Io { path: p, source: e }),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen {
            spec,
            out,
            seed,
            duration,
        } => {
            let spec = load_dataset_spec(spec.as_deref())?;
            let s = cmd_gen(&spec, &out, seed, duration)?;
            println!(
                "wrote {} sequences to {} ({} rgb + {} depth frames)",
                s.sequences.len(),
                out.display(),
                s.rgb_frames,
                s.depth_frames
            );
        }
        Cmd::Train {
            config,
            epochs,
            seed,
            held_out,
            weights_out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            if let Some(h) = held_out {
                cfg.data.held_out = h;
            }
            if let Some(w) = weights_out {
                cfg.output.weights = w;
            }
            let s = cmd_train(&cfg, |e| {
                println!(
                    "epoch {:>3}  train {:.5}  held-out {:.5}  ({:.1}s)",
                    e.epoch,
                    e.train_loss,
                    e.held_out_rmse.unwrap_or(f64::NAN),
                    e.seconds
                )
            })?;
            if s.epochs.is_empty() {
                println!("zero epochs: initial weights written");
            }
            println!(
                "held-out {} naive {:.5}; {} params; weights {}",
                s.held_out,
                s.held_out_naive_rmse,
                s.params,
                s.weights.display()
            );
        }
        Cmd::Eval {
            weights,
            data,
            held_out,
            deltas,
            json,
        } => {
            let r = cmd_eval(&weights, &data, &held_out, &deltas, &FlowConfig::default())?;
            print!("{}", r.to_text());
            write_json(json, r.to_json())?;
        }
        Cmd::Infer {
            weights,
            seq,
            out,
            half,
            pipelined,
        } => {
            let s = cmd_infer(&weights, &seq, &out, half, pipelined)?;
            println!(
                "{} frames at {}x{} to {} ({:.1} fps)",
                s.frames,
                s.width,
                s.height,
                out.display(),
                s.fps
            );
        }
        Cmd::Bench {
            weights,
            seq,
            frames,
            json,
        } => {
            let r = cmd_bench(&weights, &seq, frames)?;
            print!("{}", r.to_text());
            write_json(json, serde_json::to_string_pretty(&r).expect("report serializes"))?;
        }
        Cmd::Ablate { config, json } => {
            let cfg = RunConfig::load(&config)?;
            let r = cmd_ablate(&cfg, |row| println!("{}: rmse {:.5} ({} params)", row.variant, row.rmse, row.params))?;
            print!("{}", r.to_text());
            write_json(json, serde_json::to_string_pretty(&r).expect("report serializes"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
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
