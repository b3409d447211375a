//! Training loop, streaming inference, checkpointing, and the ablation
//! runner.

pub mod ablation;
pub mod checkpoint;
pub mod model;
pub mod stream;
pub mod train;

pub use ablation::{run_ablation, table_cases, AblationRow, AblationTable};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{ModelVars, SsmModel, WindowForward};
pub use stream::{stream_episode, PredictionPair, StreamSession};
pub use train::{evaluate_episode, train, EpisodeEvaluation, EvalRecord, TrainOutput};

use crate::apl::ReadoutMode;
use crate::error::{Result, SsmError};
use serde::{Deserialize, Serialize};

/// Which cross-temporal interactions are active. All three on is the full
/// model; the ablation grid toggles them per the five-case layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSwitches {
    pub past: bool,
    pub present: bool,
    pub future: bool,
}

impl Default for InteractionSwitches {
    fn default() -> Self {
        Self {
            past: true,
            present: true,
            future: true,
        }
    }
}

impl InteractionSwitches {
    /// The five-case ablation layout: 1 none, 2 past+present, 3 past+future,
    /// 4 present+future, 5 all.
    pub fn case(case_no: u8) -> Result<Self> {
        let (past, present, future) = match case_no {
            1 => (false, false, false),
            2 => (true, true, false),
            3 => (true, false, true),
            4 => (false, true, true),
            5 => (true, true, true),
            _ => {
                return Err(SsmError::Argument(format!(
                    "interaction case {case_no} outside 1..=5"
                )))
            }
        };
        Ok(Self {
            past,
            present,
            future,
        })
    }
}

/// Classifier sharing between the detection and anticipation heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierSharing {
    /// One head serves detection, anticipation, and the graph cue.
    #[default]
    Shared,
    /// Separate detection and anticipation heads.
    Separate,
}

/// Everything a run needs: model dimensions, loss weights, training
/// schedule, seed, and the ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Memory sequence length L.
    pub memory_len: usize,
    /// GMM component count K.
    pub clusters: usize,
    /// Raw feature width D.
    pub feature_dim: usize,
    /// Action classes C; the label space is C+1 with background 0.
    pub num_classes: usize,
    pub d_model: usize,
    pub d_edge: usize,
    pub heads: usize,
    pub gcn_layers: usize,
    /// Temporal kernel scale δ, in frames.
    pub temporal_scale: f64,
    pub lambda_anticipation: f64,
    pub lambda_consistency: f64,
    /// Anticipation horizon Δ in frames.
    pub horizon: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    /// Global L2 gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: u64,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub positional_encoding: bool,
    pub detach_consistency_target: bool,
    pub interactions: InteractionSwitches,
    pub classifier_sharing: ClassifierSharing,
    pub readout: ReadoutMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            memory_len: 511,
            clusters: 4,
            feature_dim: 16,
            num_classes: 6,
            d_model: 32,
            d_edge: 16,
            heads: 4,
            gcn_layers: 2,
            temporal_scale: 8.0,
            lambda_anticipation: 1.0,
            lambda_consistency: 0.1,
            horizon: 4,
            learning_rate: 1e-3,
            warmup_steps: 0,
            grad_clip: 5.0,
            steps: 2000,
            batch_size: 2,
            seed: 0,
            eval_every: 200,
            em_max_iters: 10,
            em_tol: 1e-2,
            positional_encoding: true,
            detach_consistency_target: false,
            interactions: InteractionSwitches::default(),
            classifier_sharing: ClassifierSharing::Shared,
            readout: ReadoutMode::Mean,
        }
    }
}

impl RunConfig {
    pub fn total_classes(&self) -> usize {
        self.num_classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.memory_len < self.clusters {
            return Err(SsmError::Config(format!(
                "need memory_len >= clusters >= 1, got {} and {}",
                self.memory_len, self.clusters
            )));
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(SsmError::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_edge == 0 || self.gcn_layers == 0 || self.feature_dim == 0 {
            return Err(SsmError::Config("widths and layer counts must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(SsmError::Config("need at least one action class".into()));
        }
        if self.temporal_scale <= 0.0 {
            return Err(SsmError::Config("temporal_scale must be positive".into()));
        }
        if self.lambda_anticipation < 0.0 || self.lambda_consistency < 0.0 {
            return Err(SsmError::Config("loss weights must be non-negative".into()));
        }
        if self.horizon == 0 {
            return Err(SsmError::Config("horizon must be at least one frame".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(SsmError::Config("learning rate must be positive".into()));
        }
        if self.grad_clip < 0.0 {
            return Err(SsmError::Config("grad_clip must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(SsmError::Config("batch size must be positive".into()));
        }
        if self.em_max_iters == 0 || self.em_tol <= 0.0 {
            return Err(SsmError::Config("EM settings must be positive".into()));
        }
        Ok(())
    }
}
