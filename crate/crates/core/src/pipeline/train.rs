use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_sequence, Method};
use crate::flow::FlowConfig;
use crate::model::{NetworkConfig, NetworkGraph};
use crate::synth::Keyframes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub held_out_rmse: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest training loss.
    pub net: NetworkGraph<f32>,
    pub log: Vec<EpochLog>,
    /// `None` when no epoch ran and the initial weights are returned.
    pub best_epoch: Option<usize>,
}

/// Every `(sequence, frame)` pair that yields a sample at `delta`.
fn sample_index(sets: &[Keyframes], delta: usize) -> Vec<(usize, usize)> {
    sets.iter()
        .enumerate()
        .flat_map(|(s, kf)| (0..kf.sample_count(delta)).map(move |t| (s, t)))
        .collect()
}

fn check_dims(cfg: &NetworkConfig, kf: &Keyframes) -> Result<()> {
    if (kf.info.height, kf.info.width) != (cfg.input_h, cfg.input_w) {
        return Err(Error::config(format!(
            "network input is {}x{} but {} frames are {}x{} after preprocessing",
            cfg.input_w,
            cfg.input_h,
            kf.name(),
            kf.info.width,
            kf.info.height
        )));
    }
    Ok(())
}

/// Trains a fresh network on preprocessed keyframes. `on_epoch` sees each
/// epoch's log as soon as it is complete.
pub fn train(
    cfg: &NetworkConfig,
    train_sets: &[Keyframes],
    held_out: Option<&Keyframes>,
    tc: &TrainingConfig,
    delta_frames: usize,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    tc.validate()?;
    for kf in train_sets.iter().chain(held_out) {
        check_dims(cfg, kf)?;
    }
    let mut net = NetworkGraph::<f32>::build(cfg, tc.seed)?;
    let index = sample_index(train_sets, delta_frames);
    if index.is_empty() && tc.epochs > 0 {
        return Err(Error::config(format!("no training samples at delta {delta_frames}")));
    }
    let adam = tc.adam();
    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, NetworkGraph<f32>)> = None;
    for epoch in 0..tc.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order = index.clone();
        order.shuffle(&mut rng);
        order.truncate(tc.samples_per_epoch.unwrap_or(order.len()));
        let mut losses = Vec::new();
        for chunk in order.chunks(tc.batch_size) {
            let batch = chunk
                .iter()
                .map(|&(s, t)| train_sets[s].sample(t, delta_frames))
                .collect::<Result<Vec<_>>>()?;
            match net.train_step(&batch, &adam) {
                Ok(l) => losses.push(l),
                // A batch of frames with no valid ground truth at all.
                Err(Error::Training(m)) if m.contains("no valid") => continue,
                Err(e) => return Err(e.context(format!("epoch {epoch}"))),
            }
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let held_out_rmse = match held_out {
            Some(kf) => Some(
                evaluate_sequence(kf, Some(&net), &[Method::Network], delta_frames, &FlowConfig::default())?.rows[0]
                    .rmse,
            ),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            held_out_rmse,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        if best.as_ref().is_none_or(|b| train_loss < b.0) {
            best = Some((train_loss, epoch, net.clone()));
        }
        log.push(entry);
    }
    Ok(match best {
        Some((_, e, net)) => TrainOutcome {
            net,
            log,
            best_epoch: Some(e),
        },
        None => TrainOutcome {
            net,
            log,
            best_epoch: None,
        },
    })
}
