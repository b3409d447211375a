//! Streaming inference: a rolling window over an ordered frame feed, with
//! warm-started clustering per stream. Only frames at or before the current
//! position ever enter a window, so causality is structural.

use super::model::{SsmModel, WindowForward};
use crate::csmc::{FeatureFrame, GmmParams, MemoryWindow};
use crate::error::{Result, SsmError};
use crate::numerics::Tensor;
use std::collections::VecDeque;

/// Per-frame output distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionPair {
    pub p_d: Vec<f64>,
    pub p_a: Vec<f64>,
}

/// One live stream's state: the rolling feature buffer and the clustering
/// warm start. Each stream owns its state; sessions never share.
pub struct StreamSession<'m> {
    model: &'m SsmModel,
    buffer: VecDeque<Vec<f64>>,
    warm: Option<GmmParams<f64>>,
    position: u64,
}

impl<'m> StreamSession<'m> {
    pub fn new(model: &'m SsmModel) -> Self {
        Self {
            model,
            buffer: VecDeque::with_capacity(model.config.memory_len + 1),
            warm: None,
            position: 0,
        }
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// Feeds the next frame and emits detection and anticipation
    /// distributions computed from this frame and its memory only.
    pub fn push(&mut self, feature: &[f64]) -> Result<PredictionPair> {
        let (out, _) = self.push_full(feature)?;
        Ok(out)
    }

    /// As [`push`](Self::push), also returning the full forward output
    /// (attention weights, critical set) for inspection.
    pub fn push_full(&mut self, feature: &[f64]) -> Result<(PredictionPair, WindowForward)> {
        if feature.len() != self.model.config.feature_dim {
            return Err(SsmError::Dimension(format!(
                "stream frame width {} vs checkpoint feature_dim {}",
                feature.len(),
                self.model.config.feature_dim
            )));
        }
        if !feature.iter().all(|v| v.is_finite()) {
            return Err(SsmError::Numeric("non-finite stream frame".into()));
        }
        self.buffer.push_back(feature.to_vec());
        while self.buffer.len() > self.model.config.memory_len + 1 {
            self.buffer.pop_front();
        }
        let mem_len = self.buffer.len() - 1;
        let memory: Vec<FeatureFrame<f64>> = self
            .buffer
            .iter()
            .take(mem_len)
            .enumerate()
            .map(|(i, f)| FeatureFrame::new(i as i64 - mem_len as i64, f.clone()))
            .collect();
        let current = FeatureFrame::new(0, self.buffer[mem_len].clone());
        let window = MemoryWindow::new(memory, current)?;

        let em_seed = self.model.config.seed ^ self.position.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let (_tape, _vars, out) =
            self.model
                .forward_window(&window, em_seed, self.warm.as_ref(), None)?;
        if let Some(gmm) = &out.gmm {
            self.warm = Some(gmm.clone());
        }
        self.position += 1;
        Ok((distributions(&out), out))
    }
}

fn distributions(out: &WindowForward) -> PredictionPair {
    let row = |t: &Tensor<f64>| t.data().to_vec();
    PredictionPair {
        p_d: row(&out.p_d.value()),
        p_a: row(&out.p_a.value()),
    }
}

/// Runs a whole pre-recorded feature sequence through a fresh session.
pub fn stream_episode(model: &SsmModel, features: &[Vec<f64>]) -> Result<Vec<PredictionPair>> {
    let mut session = StreamSession::new(model);
    features.iter().map(|f| session.push(f)).collect()
}
