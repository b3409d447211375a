//! Cross-temporal interaction: the present feature is refined against the
//! past/present/future bundle, then the future cue is refined against the
//! updated context, and one shared head classifies both.

use crate::error::{Result, SsmError};
use crate::numerics::{affine_rows, AttentionVars, Scalar, Var};

/// The temporal feature bundle: K past critical states in anchor order, the
/// present critical state, and the potential future cue. Refinement results
/// are attached in order; reading them out of order is a state error.
pub struct TemporalBundle<T: Scalar> {
    past: Vec<Var<T>>,
    present: Var<T>,
    future: Var<T>,
    refined_present: Option<Var<T>>,
    refined_future: Option<Var<T>>,
}

impl<T: Scalar> TemporalBundle<T> {
    pub fn new(past: Vec<Var<T>>, present: Var<T>, future: Var<T>) -> Result<Self> {
        let (_, d) = present.dims();
        for p in past.iter().chain([&future]) {
            let (rows, cols) = p.dims();
            if rows != 1 || cols != d {
                return Err(SsmError::Dimension(
                    "bundle vectors must all be 1×d_model".into(),
                ));
            }
        }
        Ok(Self {
            past,
            present,
            future,
            refined_present: None,
            refined_future: None,
        })
    }

    pub fn past(&self) -> &[Var<T>] {
        &self.past
    }

    pub fn present(&self) -> &Var<T> {
        &self.present
    }

    pub fn future(&self) -> &Var<T> {
        &self.future
    }

    pub fn refined_present(&self) -> Result<&Var<T>> {
        self.refined_present
            .as_ref()
            .ok_or_else(|| SsmError::State("present feature has not been refined".into()))
    }

    pub fn refined_future(&self) -> Result<&Var<T>> {
        self.refined_future
            .as_ref()
            .ok_or_else(|| SsmError::State("future feature has not been refined".into()))
    }
}

/// Learned additive positional encoding over bundle slots. Row layout:
/// `K` past slots (most recent past is the last of them), then the present
/// slot, then the future slot.
pub struct PositionalVars<T: Scalar> {
    /// `(K+2)×d_model` slot table.
    pub table: Var<T>,
}

impl<T: Scalar> PositionalVars<T> {
    fn past_slots(&self) -> usize {
        let (rows, _) = self.table.dims();
        rows - 2
    }

    fn slot(&self, slot: usize) -> Var<T> {
        self.table.slice_rows(slot, 1)
    }
}

/// A token with its bundle slot, used to assemble attention contexts.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// i-th past token out of `count` currently present.
    Past { index: usize, count: usize },
    Present,
    Future,
}

fn slot_row<T: Scalar>(pos: &PositionalVars<T>, slot: Slot) -> Result<usize> {
    let k = pos.past_slots();
    match slot {
        Slot::Past { index, count } => {
            if count > k || index >= count {
                return Err(SsmError::Dimension(format!(
                    "past slot {index}/{count} does not fit a table with {k} past rows"
                )));
            }
            // Align to recency so the most recent past keeps its embedding
            // even when fewer than K past states exist.
            Ok(k - count + index)
        }
        Slot::Present => Ok(k),
        Slot::Future => Ok(k + 1),
    }
}

/// One residual cross-attention refinement: the query attends over the token
/// set (optionally slot-encoded) and the raw query is added back.
pub fn refine_against<T: Scalar>(
    query: &Var<T>,
    query_slot: Slot,
    tokens: &[(Var<T>, Slot)],
    attn: &AttentionVars<T>,
    positional: Option<&PositionalVars<T>>,
) -> Result<Var<T>> {
    if tokens.is_empty() {
        return Err(SsmError::Argument("refinement needs at least one token".into()));
    }
    let encode = |v: &Var<T>, slot: Slot| -> Result<Var<T>> {
        match positional {
            Some(pos) => Ok(v.add(&pos.slot(slot_row(pos, slot)?))),
            None => Ok(v.clone()),
        }
    };
    let q = encode(query, query_slot)?;
    let encoded: Vec<Var<T>> = tokens
        .iter()
        .map(|(v, slot)| encode(v, *slot))
        .collect::<Result<_>>()?;
    let context = Var::concat_rows(&encoded);
    let attended = attn.apply(&q, &context, None)?;
    Ok(attended.add(query))
}

fn bundle_tokens<T: Scalar>(past: &[Var<T>], rest: &[(Var<T>, Slot)]) -> Vec<(Var<T>, Slot)> {
    let count = past.len();
    let mut tokens: Vec<(Var<T>, Slot)> = past
        .iter()
        .enumerate()
        .map(|(index, v)| (v.clone(), Slot::Past { index, count }))
        .collect();
    tokens.extend_from_slice(rest);
    tokens
}

/// Refines the present feature against the full bundle
/// `[past…, present, future]` and records it on the bundle.
pub fn refine_present<T: Scalar>(
    bundle: &mut TemporalBundle<T>,
    attn: &AttentionVars<T>,
    positional: Option<&PositionalVars<T>>,
) -> Result<Var<T>> {
    let tokens = bundle_tokens(
        &bundle.past,
        &[
            (bundle.present.clone(), Slot::Present),
            (bundle.future.clone(), Slot::Future),
        ],
    );
    let refined = refine_against(&bundle.present, Slot::Present, &tokens, attn, positional)?;
    bundle.refined_present = Some(refined.clone());
    Ok(refined)
}

/// Refines the future cue against `[past…, refined present, future]`.
/// Requires [`refine_present`] to have run first.
pub fn refine_future<T: Scalar>(
    bundle: &mut TemporalBundle<T>,
    attn: &AttentionVars<T>,
    positional: Option<&PositionalVars<T>>,
) -> Result<Var<T>> {
    let refined_present = bundle.refined_present()?.clone();
    let tokens = bundle_tokens(
        &bundle.past,
        &[
            (refined_present, Slot::Present),
            (bundle.future.clone(), Slot::Future),
        ],
    );
    let refined = refine_against(&bundle.future, Slot::Future, &tokens, attn, positional)?;
    bundle.refined_future = Some(refined.clone());
    Ok(refined)
}

/// The shared classification head over C action classes plus background
/// (class 0).
pub struct ClassifierVars<T: Scalar> {
    /// `(C+1)×d_model` weight.
    pub weight: Var<T>,
    /// `1×(C+1)` bias.
    pub bias: Var<T>,
}

/// `softmax(weight·feature + bias)` as a `1×(C+1)` distribution.
pub fn classify<T: Scalar>(feature: &Var<T>, params: &ClassifierVars<T>) -> Result<Var<T>> {
    let (rows, d) = feature.dims();
    let (_, d_in) = params.weight.dims();
    if rows != 1 || d != d_in {
        return Err(SsmError::Dimension(format!(
            "feature {rows}×{d} vs classifier input width {d_in}"
        )));
    }
    Ok(affine_rows(feature, &params.weight, &params.bias).softmax_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    fn identity_attention(tape: &Tape<f64>, d: usize) -> AttentionVars<f64> {
        AttentionVars {
            wq: tape.leaf(Tensor::eye(d)),
            wk: tape.leaf(Tensor::eye(d)),
            wv: tape.leaf(Tensor::eye(d)),
            heads: 1,
        }
    }

    fn leaf(tape: &Tape<f64>, v: &[f64]) -> Var<f64> {
        tape.leaf(Tensor::row_vector(v).unwrap())
    }

    #[test]
    fn equal_tokens_identity_projection_doubles_the_query() {
        let tape = Tape::new();
        let v = [0.4, -0.7];
        let mut bundle = TemporalBundle::new(
            vec![leaf(&tape, &v)],
            leaf(&tape, &v),
            leaf(&tape, &v),
        )
        .unwrap();
        let attn = identity_attention(&tape, 2);
        let fc = refine_present(&mut bundle, &attn, None).unwrap().value();
        assert!((fc.at(0, 0) - 2.0 * v[0]).abs() < 1e-12);
        assert!((fc.at(0, 1) - 2.0 * v[1]).abs() < 1e-12);
        let fa = refine_future(&mut bundle, &attn, None).unwrap();
        // Context now holds F_c' = 2v alongside v tokens, so the attended
        // mix is still a convex combination of {v, 2v} plus the residual.
        let fav = fa.value();
        for j in 0..2 {
            let lo = v[j].min(2.0 * v[j]) + v[j];
            let hi = v[j].max(2.0 * v[j]) + v[j];
            assert!(fav.at(0, j) >= lo - 1e-12 && fav.at(0, j) <= hi + 1e-12);
        }
    }

    #[test]
    fn empty_past_mixes_exactly_two_tokens() {
        let tape = Tape::new();
        let mut bundle =
            TemporalBundle::new(vec![], leaf(&tape, &[1.0, 0.0]), leaf(&tape, &[0.0, 1.0]))
                .unwrap();
        let attn = identity_attention(&tape, 2);
        let fc = refine_present(&mut bundle, &attn, None).unwrap().value();
        assert_eq!(fc.shape(), &[1, 2]);
        // Attended output is a convex mix of the two tokens; residual adds F_c.
        let w = fc.at(0, 0) - 1.0;
        assert!(w > 0.0 && w < 1.0);
        assert!((fc.at(0, 0) - 1.0 + fc.at(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refine_future_before_present_is_a_state_error() {
        let tape = Tape::new();
        let mut bundle =
            TemporalBundle::new(vec![], leaf(&tape, &[1.0, 0.0]), leaf(&tape, &[0.0, 1.0]))
                .unwrap();
        let attn = identity_attention(&tape, 2);
        assert!(matches!(
            refine_future(&mut bundle, &attn, None),
            Err(SsmError::State(_))
        ));
    }

    #[test]
    fn zero_value_projection_leaves_only_the_residual() {
        let tape = Tape::new();
        let mut bundle = TemporalBundle::new(
            vec![leaf(&tape, &[0.3, 0.9])],
            leaf(&tape, &[1.0, -1.0]),
            leaf(&tape, &[0.5, 0.25]),
        )
        .unwrap();
        let attn = AttentionVars {
            wq: tape.leaf(Tensor::eye(2)),
            wk: tape.leaf(Tensor::eye(2)),
            wv: tape.leaf(Tensor::zeros(2, 2)),
            heads: 1,
        };
        refine_present(&mut bundle, &attn, None).unwrap();
        let fa = refine_future(&mut bundle, &attn, None).unwrap().value();
        assert_eq!(fa.data(), &[0.5, 0.25]);
    }

    #[test]
    fn three_token_refinement_matches_direct_evaluation() {
        // Plain-scalar evaluation of CA(F_c, F_t, F_t) + F_c with identity
        // projections, d_model = 2, single head.
        let past = [0.2f64, 0.1];
        let present = [0.7f64, -0.3];
        let future = [-0.4f64, 0.5];
        let toks = [past, present, future];
        let scale = 1.0 / 2.0f64.sqrt();
        let logits: Vec<f64> = toks
            .iter()
            .map(|t| (present[0] * t[0] + present[1] * t[1]) * scale)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut expected = [present[0], present[1]];
        for (w, t) in exps.iter().zip(&toks) {
            expected[0] += w / z * t[0];
            expected[1] += w / z * t[1];
        }

        let tape = Tape::new();
        let mut bundle = TemporalBundle::new(
            vec![leaf(&tape, &past)],
            leaf(&tape, &present),
            leaf(&tape, &future),
        )
        .unwrap();
        let attn = identity_attention(&tape, 2);
        let fc = refine_present(&mut bundle, &attn, None).unwrap().value();
        assert!((fc.at(0, 0) - expected[0]).abs() < 1e-9);
        assert!((fc.at(0, 1) - expected[1]).abs() < 1e-9);
    }

    #[test]
    fn past_permutation_matters_only_with_positional_encoding() {
        let tape = Tape::new();
        let a = [0.9f64, 0.0];
        let b = [-0.2f64, 0.4];
        let attn = identity_attention(&tape, 2);

        let run = |order: [&[f64]; 2], pos: bool| {
            let mut bundle = TemporalBundle::new(
                vec![leaf(&tape, order[0]), leaf(&tape, order[1])],
                leaf(&tape, &[0.5, 0.5]),
                leaf(&tape, &[0.1, -0.1]),
            )
            .unwrap();
            let positional = pos.then(|| PositionalVars {
                table: tape.leaf(
                    Tensor::from_rows(&[
                        vec![0.3, -0.3],
                        vec![-0.6, 0.2],
                        vec![0.05, 0.4],
                        vec![0.2, 0.2],
                    ])
                    .unwrap(),
                ),
            });
            refine_present(&mut bundle, &attn, positional.as_ref())
                .unwrap()
                .value()
        };

        let plain_ab = run([&a, &b], false);
        let plain_ba = run([&b, &a], false);
        for j in 0..2 {
            assert!((plain_ab.at(0, j) - plain_ba.at(0, j)).abs() < 1e-12);
        }

        let pos_ab = run([&a, &b], true);
        let pos_ba = run([&b, &a], true);
        let diff: f64 = (0..2)
            .map(|j| (pos_ab.at(0, j) - pos_ba.at(0, j)).abs())
            .sum();
        assert!(diff > 1e-9, "positional encoding should break symmetry");
    }

    #[test]
    fn classify_uniform_bias_and_hand_instances() {
        let tape = Tape::new();
        let zero = ClassifierVars {
            weight: tape.leaf(Tensor::zeros(4, 2)),
            bias: tape.leaf(Tensor::zeros(1, 4)),
        };
        let f = leaf(&tape, &[3.0, -1.0]);
        let p = classify(&f, &zero).unwrap().value();
        for j in 0..4 {
            assert!((p.at(0, j) - 0.25).abs() < 1e-12);
        }

        let biased = ClassifierVars {
            weight: tape.leaf(Tensor::zeros(2, 2)),
            bias: tape.leaf(Tensor::row_vector(&[1.0f64.ln(), 3.0f64.ln()]).unwrap()),
        };
        let p = classify(&f, &biased).unwrap().value();
        assert!((p.at(0, 0) - 0.25).abs() < 1e-12);
        assert!((p.at(0, 1) - 0.75).abs() < 1e-12);

        // Hand-set 2×2 weight against a direct softmax evaluation.
        let w = [[0.5f64, -1.0], [2.0, 0.25]];
        let x = [0.8f64, 0.6];
        let logits = [
            w[0][0] * x[0] + w[0][1] * x[1],
            w[1][0] * x[0] + w[1][1] * x[1],
        ];
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let z = e[0] + e[1];
        let custom = ClassifierVars {
            weight: tape.leaf(Tensor::from_rows(&[w[0].to_vec(), w[1].to_vec()]).unwrap()),
            bias: tape.leaf(Tensor::zeros(1, 2)),
        };
        let p = classify(&leaf(&tape, &x), &custom).unwrap().value();
        assert!((p.at(0, 0) - e[0] / z).abs() < 1e-12);
        assert!((p.at(0, 1) - e[1] / z).abs() < 1e-12);
        let sum: f64 = p.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.data().iter().all(|&v| v >= 0.0));
    }
}
