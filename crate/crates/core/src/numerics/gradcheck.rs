//! Finite-difference validation of the reverse-mode gradients.

use super::params::ParamStore;
use super::scalar::Scalar;
use super::tape::{Tape, Var};
use crate::error::{Result, SsmError};
use std::collections::BTreeMap;

/// A loss defined over named parameters: given a fresh tape and one leaf per
/// parameter, build the scalar loss. The same closure serves the autodiff
/// pass and every finite-difference evaluation, so the two routes see an
/// identical computation.
pub type LossFn<'a, T> = dyn Fn(&Tape<T>, &BTreeMap<String, Var<T>>) -> Result<Var<T>> + 'a;

/// Compares reverse-mode gradients against central finite differences.
///
/// Returns the maximum over all parameter entries of
/// `|g_ad − g_fd| / max(1, |g_fd|)`.
pub fn grad_check<T: Scalar>(loss_fn: &LossFn<'_, T>, params: &ParamStore<T>, eps: T) -> Result<T> {
    if eps < T::of(1e-6) || eps > T::of(1e-3) {
        return Err(SsmError::Argument(format!(
            "step {eps} outside [1e-6, 1e-3]"
        )));
    }

    // Reverse-mode gradients.
    let tape = Tape::new();
    let leaves = params.leaves(&tape);
    let loss = loss_fn(&tape, &leaves)?;
    if loss.value().numel() != 1 {
        return Err(SsmError::Argument("loss must be scalar".into()));
    }
    tape.backward(&loss)?;
    let auto_grads: BTreeMap<String, Vec<T>> = leaves
        .iter()
        .map(|(name, var)| Ok((name.clone(), var.grad()?.data().to_vec())))
        .collect::<Result<_>>()?;

    let eval = |params: &ParamStore<T>| -> Result<T> {
        let tape = Tape::new();
        let leaves = params.leaves(&tape);
        let loss = loss_fn(&tape, &leaves)?;
        tape.check_finite()?;
        let v = loss.value().item();
        if !v.is_finite() {
            return Err(SsmError::Numeric("loss is not finite".into()));
        }
        Ok(v)
    };

    let mut max_rel = T::zero();
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let n = params.get(name)?.numel();
        for i in 0..n {
            let base = params.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = base + eps;
            let plus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = base - eps;
            let minus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = base;

            let fd = (plus - minus) / (T::of(2.0) * eps);
            let ad = auto_grads[name][i];
            let rel = (ad - fd).abs() / T::one().max(fd.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let mut params = ParamStore::new();
        params
            .insert("p", Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap())
            .unwrap();
        let err = grad_check(
            &|_tape, leaves| Ok(leaves["p"].mul(&leaves["p"]).sum()),
            &params,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn constant_loss_has_exactly_zero_gradient() {
        let mut params = ParamStore::new();
        params.insert("p", Tensor::scalar(3.0)).unwrap();
        let tape = Tape::new();
        let leaves = params.leaves(&tape);
        let loss = tape.constant(Tensor::scalar(7.0)).add(
            // multiply by zero so the parameter participates but contributes nothing
            &leaves["p"].scale(0.0),
        );
        tape.backward(&loss).unwrap();
        assert_eq!(leaves["p"].grad().unwrap().item(), 0.0);
    }

    #[test]
    fn rejects_out_of_range_step() {
        let mut params = ParamStore::new();
        params.insert("p", Tensor::scalar(1.0)).unwrap();
        let f: &LossFn<'_, f64> = &|_t, l| Ok(l["p"].sum());
        assert!(grad_check(f, &params, 1e-2).is_err());
        assert!(grad_check(f, &params, 1e-7).is_err());
    }

    #[test]
    fn transcendental_chain_passes() {
        let mut params = ParamStore::new();
        params
            .insert("w", Tensor::from_rows(&[vec![0.3, -0.7], vec![0.2, 0.9]]).unwrap())
            .unwrap();
        params
            .insert("x", Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap())
            .unwrap();
        let err = grad_check(
            &|_tape, l| {
                let h = l["x"].matmul(&l["w"].t()).tanh();
                let p = h.softmax_rows();
                Ok(p.pick(0, 0).clamp_min(1e-12).ln().neg())
            },
            &params,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
