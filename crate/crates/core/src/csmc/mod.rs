//! Critical-state memory compression: project raw frame features, cluster
//! the memory window with a GMM, anchor one critical frame per cluster plus
//! the current frame, and compress the whole window into critical states
//! with temporally weighted attention.

pub mod gmm;

pub use gmm::{fit_gmm, posteriors, GmmFit, GmmParams, VARIANCE_FLOOR, WEIGHT_FLOOR};

use crate::error::{Result, SsmError};
use crate::numerics::{affine_rows, AttentionVars, Scalar, Tape, Tensor, Var};

/// One timestamped feature vector. Index 0 is the current frame; memory
/// frames carry negative indices.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFrame<T> {
    pub index: i64,
    pub feature: Vec<T>,
}

impl<T: Scalar> FeatureFrame<T> {
    pub fn new(index: i64, feature: Vec<T>) -> Self {
        Self { index, feature }
    }
}

/// The memory sequence plus the current frame. Memory indices are
/// contiguous `-L..-1`; the current frame sits at index 0.
#[derive(Clone, Debug)]
pub struct MemoryWindow<T> {
    memory: Vec<FeatureFrame<T>>,
    current: FeatureFrame<T>,
}

impl<T: Scalar> MemoryWindow<T> {
    pub fn new(memory: Vec<FeatureFrame<T>>, current: FeatureFrame<T>) -> Result<Self> {
        if current.index != 0 {
            return Err(SsmError::Argument(format!(
                "current frame must have index 0, got {}",
                current.index
            )));
        }
        let len = memory.len() as i64;
        for (i, frame) in memory.iter().enumerate() {
            let expect = -len + i as i64;
            if frame.index != expect {
                return Err(SsmError::Argument(format!(
                    "memory indices must be contiguous {}..-1, slot {i} holds {}",
                    -len, frame.index
                )));
            }
            if frame.feature.len() != current.feature.len() {
                return Err(SsmError::Dimension(
                    "frame feature widths differ within a window".into(),
                ));
            }
        }
        Ok(Self { memory, current })
    }

    pub fn memory(&self) -> &[FeatureFrame<T>] {
        &self.memory
    }

    pub fn current(&self) -> &FeatureFrame<T> {
        &self.current
    }

    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.current.feature.len()
    }

    /// All frames, memory first then current, as an `(L+1)×D` matrix.
    pub fn stacked_features(&self) -> Tensor<T> {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity((self.memory.len() + 1) * d);
        for f in &self.memory {
            data.extend_from_slice(&f.feature);
        }
        data.extend_from_slice(&self.current.feature);
        Tensor::from_parts(vec![self.memory.len() + 1, d], data)
    }

    /// Row of the stacked feature matrix that holds `frame_index`.
    pub fn row_of(&self, frame_index: i64) -> Result<usize> {
        let len = self.memory.len() as i64;
        if frame_index < -len || frame_index > 0 {
            return Err(SsmError::Argument(format!(
                "frame index {frame_index} outside window [{}, 0]",
                -len
            )));
        }
        Ok((frame_index + len) as usize)
    }
}

/// Learnable linear embedding applied to every raw frame feature.
pub struct ProjectionVars<T: Scalar> {
    /// `d_model×D` weight.
    pub weight: Var<T>,
    /// `1×d_model` bias.
    pub bias: Var<T>,
}

/// Projects a single frame: `weight·feature + bias`. Differentiable in the
/// projection parameters.
pub fn project<T: Scalar>(
    tape: &Tape<T>,
    frame: &FeatureFrame<T>,
    params: &ProjectionVars<T>,
) -> Result<Var<T>> {
    let (_, d_in) = params.weight.dims();
    if frame.feature.len() != d_in {
        return Err(SsmError::Dimension(format!(
            "feature width {} vs projection input width {d_in}",
            frame.feature.len()
        )));
    }
    let x = tape.constant(Tensor::row_vector(&frame.feature)?);
    Ok(affine_rows(&x, &params.weight, &params.bias))
}

/// Projects every frame of a window at once: `(L+1)×d_model`, memory rows
/// first, current frame last.
pub fn embed_window<T: Scalar>(
    tape: &Tape<T>,
    window: &MemoryWindow<T>,
    params: &ProjectionVars<T>,
) -> Result<Var<T>> {
    let (_, d_in) = params.weight.dims();
    if window.feature_dim() != d_in {
        return Err(SsmError::Dimension(format!(
            "feature width {} vs projection input width {d_in}",
            window.feature_dim()
        )));
    }
    let x = tape.constant(window.stacked_features());
    Ok(affine_rows(&x, &params.weight, &params.bias))
}

/// One selected anchor frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CriticalFrame {
    pub frame_index: i64,
    /// The GMM component this frame represents; `None` for the current frame.
    pub cluster: Option<usize>,
}

/// The K cluster representatives plus the current frame, sorted by frame
/// index ascending (the current frame is always last).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CriticalFrameSet {
    entries: Vec<CriticalFrame>,
}

impl CriticalFrameSet {
    pub fn entries(&self) -> &[CriticalFrame] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<i64> {
        self.entries.iter().map(|e| e.frame_index).collect()
    }

    /// Builds a set directly from indices (used when selection is frozen
    /// externally, e.g. by the gradient checker). The current frame index 0
    /// must be last after sorting.
    pub fn from_entries(mut entries: Vec<CriticalFrame>) -> Result<Self> {
        entries.sort_by_key(|e| e.frame_index);
        for pair in entries.windows(2) {
            if pair[0].frame_index == pair[1].frame_index {
                return Err(SsmError::Argument("duplicate critical frame index".into()));
            }
        }
        match entries.last() {
            Some(last) if last.frame_index == 0 => Ok(Self { entries }),
            _ => Err(SsmError::Argument(
                "critical frame set must contain the current frame (index 0) as its last entry"
                    .into(),
            )),
        }
    }
}

/// Picks, per mixture component, the memory frame nearest that component's
/// mean (ties go to the most recent frame, and a frame already claimed by an
/// earlier component is skipped so the set stays unique), then appends the
/// current frame.
pub fn select_critical_frames<T: Scalar>(
    embeddings: &Tensor<T>,
    gmm: &GmmParams<T>,
    memory_indices: &[i64],
    current_index: i64,
) -> Result<CriticalFrameSet> {
    let n = embeddings.rows();
    if memory_indices.len() != n {
        return Err(SsmError::Dimension(
            "one frame index per embedding row required".into(),
        ));
    }
    if embeddings.cols() != gmm.dim() {
        return Err(SsmError::Dimension("embedding width vs mixture width".into()));
    }
    if gmm.components() > n {
        return Err(SsmError::Argument(
            "more components than candidate frames".into(),
        ));
    }
    let mut taken = vec![false; n];
    let mut entries = Vec::with_capacity(gmm.components() + 1);
    for c in 0..gmm.components() {
        let mu = gmm.means.row(c);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d2: f64 = embeddings
                .row(i)
                .iter()
                .zip(mu)
                .map(|(&a, &b)| (a - b).as_f64().powi(2))
                .sum();
            let better = match best {
                None => true,
                Some((bi, bd)) => {
                    d2 < bd || (d2 == bd && memory_indices[i] > memory_indices[bi])
                }
            };
            if better {
                best = Some((i, d2));
            }
        }
        let (i, _) = best.expect("components <= candidates");
        taken[i] = true;
        entries.push(CriticalFrame {
            frame_index: memory_indices[i],
            cluster: Some(c),
        });
    }
    entries.push(CriticalFrame {
        frame_index: current_index,
        cluster: None,
    });
    entries.sort_by_key(|e| e.frame_index);
    Ok(CriticalFrameSet { entries })
}

/// Gaussian-kernel logit bias: `-(Δt)²/(2δ²)`. Added to attention logits,
/// which multiplies the exp-scores by `exp(-(Δt)²/(2δ²))`.
pub fn temporal_logit_bias<T: Scalar>(anchor_index: i64, frame_index: i64, delta: T) -> Result<T> {
    if delta <= T::zero() {
        return Err(SsmError::Argument("temporal scale must be positive".into()));
    }
    let dt = T::of((anchor_index - frame_index).abs() as f64);
    Ok(-(dt * dt) / (T::of(2.0) * delta * delta))
}

/// A contextualized representation anchored at one critical frame.
pub struct CriticalState<T: Scalar> {
    pub anchor_index: i64,
    /// `1×d_model` vector.
    pub vector: Var<T>,
}

/// Output of [`compress_to_states`].
pub struct CompressedStates<T: Scalar> {
    /// K+1 states, in critical-frame order (current frame last).
    pub states: Vec<CriticalState<T>>,
    /// Head-averaged attention weights, `(K+1)×(L+1)`; rows sum to 1.
    pub attention_weights: Tensor<T>,
}

/// Temporal weighted attention: queries are the projected critical frames,
/// keys and values are all projected frames of the window, and logits carry
/// the Gaussian temporal bias. Gradients flow through the projection and the
/// attention; clustering and frame selection are fixed inputs here.
pub fn compress_to_states<T: Scalar>(
    tape: &Tape<T>,
    window: &MemoryWindow<T>,
    critical: &CriticalFrameSet,
    proj: &ProjectionVars<T>,
    attn: &AttentionVars<T>,
    delta: T,
) -> Result<CompressedStates<T>> {
    if delta <= T::zero() {
        return Err(SsmError::Argument("temporal scale must be positive".into()));
    }
    if critical.is_empty() {
        return Err(SsmError::Argument("no critical frames".into()));
    }
    let embedded = embed_window(tape, window, proj)?;
    compress_embedded(tape, &embedded, window, critical, attn, delta)
}

/// As [`compress_to_states`] but reusing an already-embedded window so the
/// caller can share the projection between clustering and compression.
pub fn compress_embedded<T: Scalar>(
    tape: &Tape<T>,
    embedded: &Var<T>,
    window: &MemoryWindow<T>,
    critical: &CriticalFrameSet,
    attn: &AttentionVars<T>,
    delta: T,
) -> Result<CompressedStates<T>> {
    let total = window.memory_len() + 1;
    let (rows, _) = embedded.dims();
    if rows != total {
        return Err(SsmError::Dimension(format!(
            "embedded rows {rows} vs window size {total}"
        )));
    }

    let query_rows: Vec<Var<T>> = critical
        .entries()
        .iter()
        .map(|e| Ok(embedded.slice_rows(window.row_of(e.frame_index)?, 1)))
        .collect::<Result<_>>()?;
    let queries = Var::concat_rows(&query_rows);

    let mut bias = Tensor::zeros(critical.len(), total);
    for (a, entry) in critical.entries().iter().enumerate() {
        for j in 0..total {
            let frame_index = j as i64 - window.memory_len() as i64;
            bias.set(a, j, temporal_logit_bias(entry.frame_index, frame_index, delta)?);
        }
    }
    let bias = tape.constant(bias);

    let (out, weights) = attn.apply_with_weights(&queries, embedded, Some(&bias))?;
    let states = critical
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| CriticalState {
            anchor_index: e.frame_index,
            vector: out.slice_rows(i, 1),
        })
        .collect();
    Ok(CompressedStates {
        states,
        attention_weights: weights,
    })
}
