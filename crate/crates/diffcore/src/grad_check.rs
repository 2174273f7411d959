use crate::error::{DiffError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares the tape gradient of a scalar function with central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`, or NaN as
/// soon as any coordinate is not finite.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Result<Var<'t, T>>,
{
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.leaf(point.clone().with_grad());
        let xid = x.id();
        let y = f(x)?;
        let yid = y.id();
        let grads = tape.backward(yid)?;
        grads
            .wrt(xid)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); point.numel()])
    };
    let eval = |p: Tensor<T>| -> Result<T> {
        let tape = Tape::new();
        let y = f(tape.constant(p))?;
        let v = y.value();
        if v.numel() != 1 {
            return Err(DiffError::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };
    let two = T::lit(2.0);
    let floor = T::lit(1e-8);
    let mut worst = T::zero();
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (two * eps);
        let err = (*a - numeric).abs() / floor.max(a.abs() + numeric.abs());
        // `max` would silently drop a NaN error
        if err.is_nan() || err > worst {
            worst = err;
        }
        if worst.is_nan() {
            break;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let p = Tensor::new([1], vec![3.0_f64]).unwrap();
        let err = grad_check(|x| Ok(x.mul(&x)?.sum()), &p, 1e-4).unwrap();
        assert!(err < 1e-9, "{err}");
        // the analytic gradient itself
        let mut tape = Tape::new();
        let x = tape.leaf(p.with_grad());
        let id = x.id();
        let y = x.mul(&x).unwrap().sum().id();
        assert!((tape.backward(y).unwrap().wrt(id).unwrap()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_gradient_is_softmax() {
        let p = Tensor::new([1, 5], vec![0.3, -1.2, 2.0, 0.0, 0.7_f64]).unwrap();
        fn lse(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
            Ok(x.exp().sum().ln())
        }
        assert!(grad_check(lse, &p, 1e-4).unwrap() < 1e-8);

        let mut tape = Tape::new();
        let x = tape.leaf(p.clone().with_grad());
        let soft = x.softmax().to_tensor();
        let id = x.id();
        let y = lse(x).unwrap().id();
        let g = tape.backward(y).unwrap();
        for (a, b) in g.wrt(id).unwrap().iter().zip(soft.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_tapes_work() {
        let p = Tensor::new([3], vec![0.5_f32, -1.0, 2.0]).unwrap();
        let err = grad_check(|x| Ok(x.tanh().sum()), &p, 1e-2).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn non_finite_gradients_are_reported_as_nan() {
        // ln is undefined just left of 0
        let p = Tensor::new([2], vec![1.0_f64, 0.0]).unwrap();
        assert!(grad_check(|x| Ok(x.ln().sum()), &p, 1e-4).unwrap().is_nan());
    }
}
