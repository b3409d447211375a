//! Dense tensors, reverse-mode autodiff, the attention primitive, parameter
//! storage, and the finite-difference gradient checker.

pub mod attention;
pub mod gradcheck;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use attention::{cross_attention, cross_attention_with_weights, softmax_rows, AttentionVars};
pub use gradcheck::grad_check;
pub use params::{glorot_uniform, ParamStore};
pub use scalar::Scalar;
pub use tape::{affine_rows, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod fd_property_tests {
    //! Every registered tape op must agree with central finite differences.

    use super::gradcheck::grad_check;
    use super::params::ParamStore;
    use super::tape::{Tape, Var};
    use super::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn random_params(seed: u64, entries: &[(&str, usize, usize)]) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, r, c) in entries {
            let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect();
            store
                .insert(name, Tensor::new(vec![*r, *c], data).unwrap())
                .unwrap();
        }
        store
    }

    type Build = fn(&Tape<f64>, &BTreeMap<String, Var<f64>>) -> Var<f64>;

    fn check_many(ops: &[(&str, Build, &[(&str, usize, usize)])]) {
        for seed in 0..100u64 {
            for (name, build, shapes) in ops {
                let params = random_params(seed.wrapping_mul(31).wrapping_add(7), shapes);
                let err = grad_check(&|t, l| Ok(build(t, l)), &params, 1e-4).unwrap();
                assert!(err < 1e-4, "{name} failed at seed {seed}: rel err {err}");
            }
        }
    }

    #[test]
    fn all_ops_match_finite_differences() {
        let a23: &[(&str, usize, usize)] = &[("a", 2, 3), ("b", 2, 3)];
        let mm: &[(&str, usize, usize)] = &[("a", 2, 3), ("b", 3, 2)];
        let one: &[(&str, usize, usize)] = &[("a", 2, 3)];
        let ln_shapes: &[(&str, usize, usize)] = &[("a", 2, 4), ("g", 1, 4), ("o", 1, 4)];
        let ops: Vec<(&str, Build, &[(&str, usize, usize)])> = vec![
            ("add", |_t, l| l["a"].add(&l["b"]).sum(), a23),
            ("sub", |_t, l| l["a"].sub(&l["b"]).sum(), a23),
            ("mul", |_t, l| l["a"].mul(&l["b"]).sum(), a23),
            (
                "div",
                |_t, l| l["a"].div(&l["b"].mul(&l["b"]).add_scalar(1.0)).sum(),
                a23,
            ),
            ("neg", |_t, l| l["a"].neg().sum(), one),
            ("matmul", |_t, l| l["a"].matmul(&l["b"]).sum(), mm),
            (
                "transpose",
                |_t, l| l["a"].t().matmul(&l["a"]).sum(),
                one,
            ),
            ("scale", |_t, l| l["a"].scale(-2.5).sum(), one),
            ("add_scalar", |_t, l| l["a"].add_scalar(3.0).sum(), one),
            (
                "clamp_min",
                // offset keeps samples away from the clamp kink
                |_t, l| l["a"].add_scalar(5.0).clamp_min(1e-2).ln().sum(),
                one,
            ),
            (
                "ln",
                |_t, l| l["a"].mul(&l["a"]).add_scalar(0.5).ln().sum(),
                one,
            ),
            ("sigmoid", |_t, l| l["a"].sigmoid().sum(), one),
            ("tanh", |_t, l| l["a"].tanh().sum(), one),
            (
                "softmax",
                |_t, l| {
                    let p = l["a"].softmax_rows();
                    p.mul(&p).sum()
                },
                one,
            ),
            (
                "layer_norm",
                |_t, l| {
                    l["a"]
                        .layer_norm_rows(&l["g"], &l["o"], 1e-6)
                        .tanh()
                        .sum()
                },
                ln_shapes,
            ),
            (
                "mean_rows",
                |_t, l| l["a"].mean_rows().mul(&l["a"].mean_rows()).sum(),
                one,
            ),
            ("pick", |_t, l| l["a"].pick(1, 2), one),
            (
                "concat_slice",
                |_t, l| {
                    let cat = Var::concat_rows(&[l["a"].clone(), l["b"].clone()]);
                    let wide = Var::concat_cols(&[l["a"].clone(), l["b"].clone()]);
                    cat.slice_rows(1, 2)
                        .sum()
                        .add(&wide.slice_cols(2, 3).mul(&wide.slice_cols(1, 3)).sum())
                },
                a23,
            ),
        ];
        check_many(&ops);
    }

    #[test]
    fn attention_matches_finite_differences() {
        for seed in 0..20u64 {
            let params = random_params(
                seed * 11 + 3,
                &[("q", 2, 4), ("k", 3, 4), ("v", 3, 2), ("bias", 2, 3)],
            );
            let err = grad_check(
                &|_t, l| {
                    let out = super::attention::cross_attention(
                        &l["q"],
                        &l["k"],
                        &l["v"],
                        Some(&l["bias"]),
                    )?;
                    Ok(out.mul(&out).sum())
                },
                &params,
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-4, "attention seed {seed}: rel err {err}");
        }
    }
}
