//! Scaled dot-product cross-attention, the primitive every later stage is
//! built from, plus the multi-head block that wraps it.

use super::scalar::Scalar;
use super::tape::{softmax_rows_tensor, Var};
use super::tensor::Tensor;
use crate::error::{Result, SsmError};

/// Row-wise softmax on a plain matrix. Stabilized by max subtraction.
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    if m.shape().len() != 2 || m.cols() == 0 {
        return Err(SsmError::Dimension("softmax needs non-empty rows".into()));
    }
    if !m.is_finite() {
        return Err(SsmError::Numeric("softmax input not finite".into()));
    }
    Ok(softmax_rows_tensor(m))
}

/// Single-head cross-attention: `softmax(Q·Kᵀ/√d_k + bias)·V`.
///
/// Differentiable in `q`, `k`, `v`, and `bias`.
pub fn cross_attention<T: Scalar>(
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
    logit_bias: Option<&Var<T>>,
) -> Result<Var<T>> {
    cross_attention_with_weights(q, k, v, logit_bias).map(|(out, _)| out)
}

/// As [`cross_attention`] but also returns the attention weight matrix
/// (`n_q × n_k`, rows summing to 1).
pub fn cross_attention_with_weights<T: Scalar>(
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
    logit_bias: Option<&Var<T>>,
) -> Result<(Var<T>, Var<T>)> {
    let (n_q, d_k) = q.dims();
    let (n_k, d_k2) = k.dims();
    let (n_v, _) = v.dims();
    if d_k == 0 || d_k != d_k2 {
        return Err(SsmError::Dimension(format!(
            "query width {d_k} vs key width {d_k2}"
        )));
    }
    if n_k == 0 || n_k != n_v {
        return Err(SsmError::Dimension(format!(
            "key count {n_k} vs value count {n_v}"
        )));
    }
    if let Some(b) = logit_bias {
        let (br, bc) = b.dims();
        if (br, bc) != (n_q, n_k) {
            return Err(SsmError::Dimension(format!(
                "bias shape {br}×{bc}, expected {n_q}×{n_k}"
            )));
        }
        if !b.with_value(Tensor::is_finite) {
            return Err(SsmError::Numeric("attention bias not finite".into()));
        }
    }
    for (name, m) in [("query", q), ("key", k), ("value", v)] {
        if !m.with_value(Tensor::is_finite) {
            return Err(SsmError::Numeric(format!("attention {name} not finite")));
        }
    }

    let scale = T::of(1.0 / (d_k as f64).sqrt());
    let mut logits = q.matmul(&k.t()).scale(scale);
    if let Some(b) = logit_bias {
        logits = logits.add(b);
    }
    let weights = logits.softmax_rows();
    let out = weights.matmul(v);
    Ok((out, weights))
}

/// Multi-head attention parameters for one attention site. `d_model` is
/// split into `heads` slices; each slice runs single-head attention and the
/// results are concatenated.
pub struct AttentionVars<T: Scalar> {
    pub wq: Var<T>,
    pub wk: Var<T>,
    pub wv: Var<T>,
    pub heads: usize,
}

impl<T: Scalar> AttentionVars<T> {
    pub fn apply(
        &self,
        query: &Var<T>,
        keys: &Var<T>,
        logit_bias: Option<&Var<T>>,
    ) -> Result<Var<T>> {
        self.apply_with_weights(query, keys, logit_bias)
            .map(|(out, _)| out)
    }

    /// Returns the attended output and the head-averaged weight matrix.
    pub fn apply_with_weights(
        &self,
        query: &Var<T>,
        keys: &Var<T>,
        logit_bias: Option<&Var<T>>,
    ) -> Result<(Var<T>, Tensor<T>)> {
        let (_, d_model) = query.dims();
        if d_model % self.heads != 0 {
            return Err(SsmError::Dimension(format!(
                "width {d_model} not divisible by {} heads",
                self.heads
            )));
        }
        let dh = d_model / self.heads;
        let q = query.matmul(&self.wq.t());
        let k = keys.matmul(&self.wk.t());
        let v = keys.matmul(&self.wv.t());
        let mut outs = Vec::with_capacity(self.heads);
        let mut weight_sum: Option<Tensor<T>> = None;
        for h in 0..self.heads {
            let (o, w) = cross_attention_with_weights(
                &q.slice_cols(h * dh, dh),
                &k.slice_cols(h * dh, dh),
                &v.slice_cols(h * dh, dh),
                logit_bias,
            )?;
            let wv = w.value();
            weight_sum = Some(match weight_sum {
                Some(acc) => acc.add(&wv),
                None => wv,
            });
            outs.push(o);
        }
        let out = Var::concat_cols(&outs);
        let weights = weight_sum
            .expect("at least one head")
            .scale(T::of(1.0 / self.heads as f64));
        Ok((out, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;

    fn rows(r: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn softmax_symmetry_and_ratios() {
        let s = softmax_rows(&rows(&[vec![0.0, 0.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let s = softmax_rows(&rows(&[vec![1.0_f64.ln(), 3.0_f64.ln()]])).unwrap();
        assert!((s.at(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.at(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = softmax_rows(&rows(&[vec![1000.0, 1000.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = softmax_rows(&rows(&[vec![0.3, -2.0, 7.5], vec![1.0, 1.0, 1.0]])).unwrap();
        for i in 0..2 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_key_returns_value_row() {
        let tape = Tape::new();
        let q = tape.leaf(rows(&[vec![9.0, -3.0]]));
        let k = tape.leaf(rows(&[vec![0.5, 0.5]]));
        let v = tape.leaf(rows(&[vec![1.0, 2.0, 3.0]]));
        let out = cross_attention(&q, &k, &v, None).unwrap();
        assert_eq!(out.value().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_query_averages_values() {
        let tape = Tape::new();
        let q = tape.leaf(rows(&[vec![0.0, 0.0]]));
        let k = tape.leaf(rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let v = tape.leaf(rows(&[vec![2.0], vec![4.0]]));
        let out = cross_attention(&q, &k, &v, None).unwrap();
        assert!((out.value().item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_key_weights_match_direct_softmax() {
        // Direct evaluation: logit_1 = 1/√2, logit_2 = 0.
        let w1 = (1.0 / 2.0_f64.sqrt()).exp() / ((1.0 / 2.0_f64.sqrt()).exp() + 1.0);
        let tape = Tape::new();
        let q = tape.leaf(rows(&[vec![1.0, 0.0]]));
        let k = tape.leaf(rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let v = tape.leaf(rows(&[vec![1.0], vec![0.0]]));
        let out = cross_attention(&q, &k, &v, None).unwrap();
        assert!((out.value().item() - w1).abs() < 1e-12);
        assert!((w1 - 0.6698).abs() < 1e-4);
    }

    #[test]
    fn bias_shape_is_checked() {
        let tape = Tape::new();
        let q = tape.leaf(rows(&[vec![1.0, 0.0]]));
        let k = tape.leaf(rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let v = tape.leaf(rows(&[vec![1.0], vec![0.0]]));
        let bad = tape.constant(rows(&[vec![0.0]]));
        assert!(cross_attention(&q, &k, &v, Some(&bad)).is_err());
    }

    #[test]
    fn output_rows_are_convex_combinations() {
        let tape = Tape::new();
        let q = tape.leaf(rows(&[vec![0.3, -1.0], vec![2.0, 0.1]]));
        let k = tape.leaf(rows(&[vec![1.0, 0.2], vec![-0.4, 1.0], vec![0.0, 0.0]]));
        let v = tape.leaf(rows(&[vec![1.0, -5.0], vec![2.0, 3.0], vec![-1.0, 0.0]]));
        let out = cross_attention(&q, &k, &v, None).unwrap().value();
        let vv = v.value();
        for j in 0..2 {
            let lo = (0..3).map(|i| vv.at(i, j)).fold(f64::INFINITY, f64::min);
            let hi = (0..3).map(|i| vv.at(i, j)).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..2 {
                assert!(out.at(i, j) >= lo - 1e-12 && out.at(i, j) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn row_constant_bias_is_a_no_op() {
        let tape = Tape::new();
        let q = tape.leaf(rows(&[vec![0.3, -1.0], vec![2.0, 0.1]]));
        let k = tape.leaf(rows(&[vec![1.0, 0.2], vec![-0.4, 1.0]]));
        let v = tape.leaf(rows(&[vec![1.0, -5.0], vec![2.0, 3.0]]));
        let plain = cross_attention(&q, &k, &v, None).unwrap().value();
        let bias = tape.constant(rows(&[vec![3.5, 3.5], vec![-2.0, -2.0]]));
        let shifted = cross_attention(&q, &k, &v, Some(&bias)).unwrap().value();
        for (a, b) in plain.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_head_identity_projection_with_equal_tokens() {
        let tape = Tape::new();
        let eye = tape.leaf(Tensor::eye(4));
        let block = AttentionVars {
            wq: eye.clone(),
            wk: eye.clone(),
            wv: eye,
            heads: 2,
        };
        let tok = rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]]);
        let q = tape.leaf(rows(&[vec![0.0, 0.0, 0.0, 0.0]]));
        let kv = tape.leaf(tok);
        let out = block.apply(&q, &kv, None).unwrap().value();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
