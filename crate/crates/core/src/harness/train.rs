//! The training loop: sample window positions, run the full forward pass,
//! combine the three loss terms, and take adaptive-moment steps.

use super::model::{window_at, SsmModel};
use super::stream::stream_episode;
use super::RunConfig;
use crate::error::{Result, SsmError};
use crate::metrics::{calibrated_map, class_mean_top5_recall, per_frame_map, ScoredFrames};
use crate::numerics::{Tape, Var};
use crate::objective::{
    adam_update, anticipation_loss, consistency_loss, detection_loss, total_loss, AdamConfig,
    LossWeights, OptimState,
};
use crate::synthdata::Episode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One evaluation-log entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub loss_total: f64,
    pub loss_detection: f64,
    pub loss_anticipation: f64,
    pub loss_consistency: f64,
    pub detection_accuracy: f64,
    pub anticipation_accuracy: f64,
    pub detection_map: Option<f64>,
}

/// Trained model, optimizer state, and the periodic metric log.
pub struct TrainOutput {
    pub model: SsmModel,
    pub optim: OptimState<f64>,
    pub log: Vec<EvalRecord>,
}

struct LossTerms {
    total: Var<f64>,
    detection: f64,
    anticipation: f64,
    consistency: f64,
}

fn window_losses(
    model: &SsmModel,
    tape: &Tape<f64>,
    vars: &super::model::ModelVars,
    episode: &Episode,
    t: usize,
    em_seed: u64,
) -> Result<LossTerms> {
    let window = window_at(&episode.features, t, model.config.memory_len)?;
    let out = model.forward_on(tape, vars, &window, em_seed, None, None)?;
    let y_d = episode
        .y_d(t)
        .ok_or_else(|| SsmError::Argument(format!("frame {t} has no detection label")))?;
    let y_a = episode
        .y_a(t)
        .ok_or_else(|| SsmError::Argument(format!("frame {t} has no anticipation label")))?;
    let l_d = detection_loss(&out.p_d, y_d)?;
    let l_a = anticipation_loss(&out.p_a, y_a)?;
    let p_st = if model.config.detach_consistency_target {
        out.p_st.detach()
    } else {
        out.p_st.clone()
    };
    let l_st = consistency_loss(&p_st, &out.p_a)?;
    let weights = LossWeights::new(
        model.config.lambda_anticipation,
        model.config.lambda_consistency,
    )?;
    Ok(LossTerms {
        total: total_loss(&l_d, &l_a, &l_st, &weights),
        detection: l_d.value().item(),
        anticipation: l_a.value().item(),
        consistency: l_st.value().item(),
    })
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
fn clip_gradients(grads: &mut BTreeMap<String, crate::numerics::Tensor<f64>>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let total: f64 = grads
        .values()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

fn mix_seed(seed: u64, step: u64, slot: u64) -> u64 {
    let mut x = seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ slot.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x
}

/// Trains a model on labeled episodes. Window positions are sampled
/// uniformly over frames that carry an anticipation label; every reported
/// number is fixed by `config.seed`.
pub fn train(config: &RunConfig, episodes: &[Episode]) -> Result<TrainOutput> {
    config.validate()?;
    if episodes.is_empty() {
        return Err(SsmError::Argument("no training episodes".into()));
    }
    for (i, ep) in episodes.iter().enumerate() {
        if ep.len() <= config.memory_len + config.horizon {
            return Err(SsmError::Argument(format!(
                "episode {i} has {} frames; training needs more than memory_len + horizon = {}",
                ep.len(),
                config.memory_len + config.horizon
            )));
        }
        if ep.labels.is_none() {
            return Err(SsmError::Argument(format!("episode {i} is unlabeled")));
        }
        if ep.feature_dim() != config.feature_dim {
            return Err(SsmError::Dimension(format!(
                "episode {i} feature width {} vs configured {}",
                ep.feature_dim(),
                config.feature_dim
            )));
        }
    }

    let model = SsmModel::new(config.clone())?;
    let mut model = model;
    let mut optim = OptimState::new(AdamConfig {
        learning_rate: config.learning_rate,
        warmup_steps: config.warmup_steps,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7452_4149_4e45_5221);
    let mut log = Vec::new();

    for step in 0..config.steps {
        let tape = Tape::new();
        let vars = model.bind(&tape)?;
        let mut batch_total: Option<Var<f64>> = None;
        let mut sums = (0.0, 0.0, 0.0);
        for slot in 0..config.batch_size {
            let ep_idx = rng.gen_range(0..episodes.len());
            let episode = &episodes[ep_idx];
            let t = rng.gen_range(0..episode.len() - config.horizon);
            let terms = window_losses(
                &model,
                &tape,
                &vars,
                episode,
                t,
                mix_seed(config.seed, step, slot as u64),
            )?;
            sums.0 += terms.detection;
            sums.1 += terms.anticipation;
            sums.2 += terms.consistency;
            batch_total = Some(match batch_total {
                Some(acc) => acc.add(&terms.total),
                None => terms.total,
            });
        }
        let batch = batch_total
            .expect("batch_size >= 1")
            .scale(1.0 / config.batch_size as f64);
        let loss_value = batch.value().item();
        if !loss_value.is_finite() {
            return Err(SsmError::Numeric(format!(
                "training diverged at step {step}: loss {loss_value} \
                 (detection {:.4}, anticipation {:.4}, consistency {:.4})",
                sums.0, sums.1, sums.2
            )));
        }
        tape.backward(&batch)?;
        let mut grads: BTreeMap<String, crate::numerics::Tensor<f64>> = BTreeMap::new();
        for (name, var) in &vars.leaves {
            grads.insert(name.clone(), var.grad()?);
        }
        clip_gradients(&mut grads, config.grad_clip);
        adam_update(&mut model.params, &grads, &mut optim)?;

        let last = step + 1 == config.steps;
        if config.eval_every > 0 && (step % config.eval_every == 0 || last) {
            let b = config.batch_size as f64;
            let quick = quick_eval(&model, &episodes[0], 64, mix_seed(config.seed, step, 999))?;
            log.push(EvalRecord {
                step,
                loss_total: loss_value,
                loss_detection: sums.0 / b,
                loss_anticipation: sums.1 / b,
                loss_consistency: sums.2 / b,
                detection_accuracy: quick.0,
                anticipation_accuracy: quick.1,
                detection_map: quick.2,
            });
        }
    }

    Ok(TrainOutput { model, optim, log })
}

/// Cheap in-training evaluation on sampled window positions.
fn quick_eval(
    model: &SsmModel,
    episode: &Episode,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64, Option<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut det_hits = 0usize;
    let mut ant_hits = 0usize;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..samples {
        let t = rng.gen_range(0..episode.len() - episode.horizon);
        let window = window_at(&episode.features, t, model.config.memory_len)?;
        let (_tape, _vars, out) = model.forward_window(&window, seed ^ i as u64, None, None)?;
        let y_d = episode.y_d(t).expect("labeled");
        let y_a = episode.y_a(t).expect("in range");
        if argmax(out.p_d.value().data()) == y_d {
            det_hits += 1;
        }
        if argmax(out.p_a.value().data()) == y_a {
            ant_hits += 1;
        }
        rows.push(out.p_d.value().data().to_vec());
        labels.push(y_d);
    }
    let map = ScoredFrames::new(rows, labels)
        .ok()
        .and_then(|data| per_frame_map(&data).ok());
    Ok((
        det_hits as f64 / samples as f64,
        ant_hits as f64 / samples as f64,
        map,
    ))
}

/// Accuracy and ranking metrics for one episode, computed by streaming it
/// (strictly causal) through the model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeEvaluation {
    pub frames: usize,
    pub detection_accuracy: f64,
    pub anticipation_accuracy: f64,
    pub detection_map: Option<f64>,
    pub detection_mcap: Option<f64>,
    pub detection_top5_recall: Option<f64>,
    pub anticipation_map: Option<f64>,
    pub anticipation_mcap: Option<f64>,
    pub anticipation_top5_recall: Option<f64>,
}

/// Streams an episode and scores the per-frame outputs against its labels.
pub fn evaluate_episode(model: &SsmModel, episode: &Episode) -> Result<EpisodeEvaluation> {
    if episode.labels.is_none() {
        return Err(SsmError::Argument("evaluation needs a labeled episode".into()));
    }
    let preds = stream_episode(model, &episode.features)?;
    let mut det_rows = Vec::new();
    let mut det_labels = Vec::new();
    let mut det_hits = 0usize;
    let mut ant_rows = Vec::new();
    let mut ant_labels = Vec::new();
    let mut ant_hits = 0usize;
    for (t, pred) in preds.iter().enumerate() {
        if let Some(y) = episode.y_d(t) {
            if argmax(&pred.p_d) == y {
                det_hits += 1;
            }
            det_rows.push(pred.p_d.clone());
            det_labels.push(y);
        }
        if let Some(y) = episode.y_a(t) {
            if argmax(&pred.p_a) == y {
                ant_hits += 1;
            }
            ant_rows.push(pred.p_a.clone());
            ant_labels.push(y);
        }
    }
    let rank_metrics = |rows: Vec<Vec<f64>>, labels: Vec<usize>| {
        ScoredFrames::new(rows, labels).ok().map(|data| {
            (
                per_frame_map(&data).ok(),
                calibrated_map(&data).ok(),
                class_mean_top5_recall(&data).ok(),
            )
        })
    };
    let det_n = det_labels.len();
    let ant_n = ant_labels.len();
    let det = rank_metrics(det_rows, det_labels);
    let ant = rank_metrics(ant_rows, ant_labels);
    Ok(EpisodeEvaluation {
        frames: preds.len(),
        detection_accuracy: det_hits as f64 / det_n.max(1) as f64,
        anticipation_accuracy: ant_hits as f64 / ant_n.max(1) as f64,
        detection_map: det.as_ref().and_then(|m| m.0),
        detection_mcap: det.as_ref().and_then(|m| m.1),
        detection_top5_recall: det.as_ref().and_then(|m| m.2),
        anticipation_map: ant.as_ref().and_then(|m| m.0),
        anticipation_mcap: ant.as_ref().and_then(|m| m.1),
        anticipation_top5_recall: ant.as_ref().and_then(|m| m.2),
    })
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
