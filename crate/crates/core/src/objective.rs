//! The joint training objective — detection and anticipation cross-entropy
//! plus the KL consistency term — and the adaptive-moment parameter update.

use crate::error::{Result, SsmError};
use crate::numerics::{ParamStore, Scalar, Tensor, Var};
use std::collections::BTreeMap;

/// Floor applied inside every `log` so zero probabilities stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weights on the anticipation and consistency terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub anticipation: T,
    pub consistency: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(anticipation: T, consistency: T) -> Result<Self> {
        if anticipation < T::zero() || consistency < T::zero() {
            return Err(SsmError::Argument("loss weights must be non-negative".into()));
        }
        Ok(Self {
            anticipation,
            consistency,
        })
    }
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            anticipation: T::one(),
            consistency: T::of(0.1),
        }
    }
}

fn cross_entropy<T: Scalar>(p: &Var<T>, label: usize, what: &str) -> Result<Var<T>> {
    let (rows, classes) = p.dims();
    if rows != 1 {
        return Err(SsmError::Dimension(format!(
            "{what} distribution must be a single row"
        )));
    }
    if label >= classes {
        return Err(SsmError::Argument(format!(
            "{what} label {label} outside [0, {})",
            classes - 1
        )));
    }
    Ok(p.pick(0, label).clamp_min(T::of(PROB_FLOOR)).ln().neg())
}

/// `-log p_d[y_d]`, floored at [`PROB_FLOOR`].
pub fn detection_loss<T: Scalar>(p_d: &Var<T>, y_d: usize) -> Result<Var<T>> {
    cross_entropy(p_d, y_d, "detection")
}

/// `-log p_a[y_a]` for the label at the anticipation horizon.
pub fn anticipation_loss<T: Scalar>(p_a: &Var<T>, y_a: usize) -> Result<Var<T>> {
    cross_entropy(p_a, y_a, "anticipation")
}

/// `D_KL(p_st ‖ p_a) = Σ_c p_st[c]·(log p_st[c] − log p_a[c])` with floors.
/// Gradients flow through both arguments; detach `p_st` at the call site to
/// stop the target side.
pub fn consistency_loss<T: Scalar>(p_st: &Var<T>, p_a: &Var<T>) -> Result<Var<T>> {
    let (r1, c1) = p_st.dims();
    let (r2, c2) = p_a.dims();
    if (r1, c1) != (r2, c2) {
        return Err(SsmError::Dimension(format!(
            "distribution supports differ: {r1}×{c1} vs {r2}×{c2}"
        )));
    }
    let floor = T::of(PROB_FLOOR);
    let log_ratio = p_st
        .clamp_min(floor)
        .ln()
        .sub(&p_a.clamp_min(floor).ln());
    Ok(p_st.mul(&log_ratio).sum())
}

/// `L = L_d + λ_a·L_a + λ_st·L_st`.
pub fn total_loss<T: Scalar>(
    detection: &Var<T>,
    anticipation: &Var<T>,
    consistency: &Var<T>,
    weights: &LossWeights<T>,
) -> Var<T> {
    detection
        .add(&anticipation.scale(weights.anticipation))
        .add(&consistency.scale(weights.consistency))
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    /// Steps of linear learning-rate warmup; 0 disables it.
    pub warmup_steps: u64,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_learning_rate(learning_rate: T) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::of(1e-3),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            warmup_steps: 0,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimState<T: Scalar> {
    pub config: AdamConfig<T>,
    pub step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: AdamConfig<T>) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Moment tensors in deterministic order, for checkpointing.
    pub fn moments(&self) -> impl Iterator<Item = (&String, &Tensor<T>, &Tensor<T>)> {
        self.first
            .iter()
            .map(move |(name, m)| (name, m, &self.second[name]))
    }

    pub fn restore_moments(
        &mut self,
        name: &str,
        first: Tensor<T>,
        second: Tensor<T>,
    ) -> Result<()> {
        if first.shape() != second.shape() {
            return Err(SsmError::Dimension("moment shapes differ".into()));
        }
        self.first.insert(name.to_string(), first);
        self.second.insert(name.to_string(), second);
        Ok(())
    }
}

/// One bias-corrected adaptive-moment step over all gradients. Parameters
/// without a gradient entry are left untouched.
pub fn adam_update<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimState<T>,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let cfg = state.config;
    let lr = if cfg.warmup_steps > 0 && t < cfg.warmup_steps {
        cfg.learning_rate * T::of(t as f64 / cfg.warmup_steps as f64)
    } else {
        cfg.learning_rate
    };
    let bias1 = T::one() - cfg.beta1.powi(t as i32);
    let bias2 = T::one() - cfg.beta2.powi(t as i32);

    for (name, grad) in grads {
        let param = params.get_mut(name)?;
        if param.shape() != grad.shape() {
            return Err(SsmError::Dimension(format!(
                "gradient shape {:?} vs parameter {:?} for {name:?}",
                grad.shape(),
                param.shape()
            )));
        }
        if !grad.is_finite() {
            return Err(SsmError::Numeric(format!("non-finite gradient for {name:?}")));
        }
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()[0], grad.shape()[1]));
        for (mv, gv) in m.data_mut().iter_mut().zip(grad.data()) {
            *mv = cfg.beta1 * *mv + (T::one() - cfg.beta1) * *gv;
        }
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()[0], grad.shape()[1]));
        for (vv, gv) in v.data_mut().iter_mut().zip(grad.data()) {
            *vv = cfg.beta2 * *vv + (T::one() - cfg.beta2) * *gv * *gv;
        }
        let m = &state.first[name];
        let v = &state.second[name];
        for ((pv, mv), vv) in param.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
