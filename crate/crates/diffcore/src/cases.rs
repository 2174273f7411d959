//! One differentiable scalar function per tape primitive, used to check
//! every backward rule against finite differences.
//!
//! Each case folds the primitive's output into a scalar through a fixed,
//! non-uniform weighting so that no gradient component vanishes by symmetry
//! (e.g. `sum(softmax(x))` is constant and would hide mistakes).

use crate::error::Result;
use crate::tape::Var;
use crate::tensor::Tensor;

pub type CaseFn = for<'t> fn(Var<'t, f64>) -> Result<Var<'t, f64>>;

/// Input domain a case must be evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Any,
    /// Strictly positive inputs (logarithm).
    Positive,
    /// Bounded away from zero (relu kink).
    AwayFromZero,
}

#[derive(Clone, Copy)]
pub struct PrimitiveCase {
    pub name: &'static str,
    pub shape: &'static [usize],
    pub domain: Domain,
    pub f: CaseFn,
}

impl std::fmt::Debug for PrimitiveCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PrimitiveCase({})", self.name)
    }
}

impl PrimitiveCase {
    /// Maps a raw sample in `[-1, 1]` into the case's domain.
    pub fn shape_input(&self, u: f64) -> f64 {
        match self.domain {
            Domain::Any => u * 1.5,
            Domain::Positive => 0.5 + (u + 1.0),
            Domain::AwayFromZero => u.signum() * (0.1 + u.abs()),
        }
    }
}

/// Deterministic weights in roughly `[-1.3, 1.3]`, never near zero.
pub fn weights(shape: &[usize], salt: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| {
        let v = (1.7 * i as f64 + salt).sin();
        v + 0.3 * v.signum()
    })
}

fn fold(y: Var<'_, f64>, salt: f64) -> Result<Var<'_, f64>> {
    let w = y.tape().constant(weights(&y.shape(), salt));
    Ok(y.mul(&w)?.sum())
}

fn c<'t>(x: &Var<'t, f64>, shape: &[usize], salt: f64) -> Var<'t, f64> {
    x.tape().constant(weights(shape, salt))
}

fn matmul_left(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let b = c(&x, &[4, 2], 0.1);
    fold(x.matmul(&b)?, 0.2)
}

fn matmul_right(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let a = c(&x, &[2, 3], 0.3);
    fold(a.matmul(&x)?, 0.4)
}

fn matmul_square(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.matmul(&x)?, 0.5)
}

fn transpose(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.transpose()?, 0.6)
}

fn reshape(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.reshape(&[2, 6])?, 0.7)
}

fn add_broadcast(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let a = c(&x, &[3, 4], 0.8);
    // x is the broadcast row here
    fold(a.add(&x)?.mul(&a)?, 0.9)
}

fn sub(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let a = c(&x, &[3, 4], 1.0);
    fold(a.sub(&x)?.mul(&x)?, 1.1)
}

fn mul_broadcast(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let a = c(&x, &[3, 1], 1.2);
    fold(x.mul(&a)?.mul(&x)?, 1.3)
}

fn add_scalar(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.add_scalar(0.7).mul(&x)?, 1.4)
}

fn mul_scalar(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.mul_scalar(-2.5), 1.5)
}

fn exp(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.exp(), 1.6)
}

fn ln(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.ln(), 1.7)
}

fn tanh(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.tanh(), 1.8)
}

fn relu(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.relu().mul(&x)?, 1.9)
}

fn softmax(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.softmax(), 2.0)
}

fn log_softmax(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.log_softmax(), 2.1)
}

fn masked_softmax(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let mask = [false, true, false, false, false, false, true, false, false, false, false, true];
    fold(x.masked_fill(&mask, &[3, 4], -1e9)?.softmax(), 2.2)
}

fn gather(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.gather(&[3, 0, 3, 7, 11, 5], &[2, 3])?, 2.3)
}

fn index_rows(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.index_rows(&[2, 0, 2])?, 2.4)
}

fn pick(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let p = x.pick(1, 2)?;
    fold(p.mul(&x.pick(2, 3)?)?, 2.5)
}

fn slice_cols(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.slice_cols(1, 3)?, 2.6)
}

fn concat_cols(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let a = c(&x, &[3, 2], 2.7);
    fold(Var::concat_cols(&[x, a, x])?, 2.8)
}

fn concat_rows(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let a = c(&x, &[1, 4], 2.9);
    fold(Var::concat_rows(&[a, x, x])?, 3.0)
}

fn sum(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    Ok(x.mul(&x)?.sum())
}

fn mean(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    Ok(x.tanh().mean())
}

fn sum_rows(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.sum_rows()?, 3.1)
}

fn mean_rows(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    fold(x.mean_rows(&[0, 2])?, 3.2)
}

fn bn_train_x(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let g = c(&x, &[4], 3.3);
    let b = c(&x, &[4], 3.4);
    fold(x.batch_norm_train(&g, &b, None, 1e-5)?.0, 3.5)
}

fn bn_train_masked(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let g = c(&x, &[4], 3.6);
    let b = c(&x, &[4], 3.7);
    let active = [true, false, true, true, false];
    fold(x.batch_norm_train(&g, &b, Some(&active), 1e-5)?.0, 3.8)
}

fn bn_train_gamma(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let input = c(&x, &[3, 4], 3.9);
    let b = c(&x, &[4], 4.0);
    fold(input.batch_norm_train(&x, &b, None, 1e-5)?.0.mul(&input)?, 4.1)
}

fn bn_train_beta(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let input = c(&x, &[3, 4], 4.2);
    let g = c(&x, &[4], 4.3);
    let y = input.batch_norm_train(&g, &x, None, 1e-5)?.0;
    fold(y.mul(&y)?, 4.4)
}

fn bn_eval(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let g = c(&x, &[4], 4.5);
    let b = c(&x, &[4], 4.6);
    let y = x.batch_norm_eval(&g, &b, &[0.1, -0.2, 0.3, 0.0], &[1.5, 0.7, 2.0, 1.0], 1e-5)?;
    fold(y.mul(&x)?, 4.7)
}

pub fn primitive_cases() -> Vec<PrimitiveCase> {
    use Domain::*;
    let case = |name, shape, domain, f: CaseFn| PrimitiveCase { name, shape, domain, f };
    vec![
        case("matmul/left", &[3, 4], Any, matmul_left),
        case("matmul/right", &[3, 2], Any, matmul_right),
        case("matmul/both", &[3, 3], Any, matmul_square),
        case("transpose", &[3, 4], Any, transpose),
        case("reshape", &[3, 4], Any, reshape),
        case("add/broadcast", &[4], Any, add_broadcast),
        case("sub", &[3, 4], Any, sub),
        case("mul/broadcast", &[3, 4], Any, mul_broadcast),
        case("add_scalar", &[3, 4], Any, add_scalar),
        case("mul_scalar", &[3, 4], Any, mul_scalar),
        case("exp", &[3, 4], Any, exp),
        case("ln", &[3, 4], Positive, ln),
        case("tanh", &[3, 4], Any, tanh),
        case("relu", &[3, 4], AwayFromZero, relu),
        case("softmax", &[3, 4], Any, softmax),
        case("log_softmax", &[3, 4], Any, log_softmax),
        case("masked_fill+softmax", &[3, 4], Any, masked_softmax),
        case("gather", &[3, 4], Any, gather),
        case("index_rows", &[3, 4], Any, index_rows),
        case("pick", &[3, 4], Any, pick),
        case("slice_cols", &[3, 4], Any, slice_cols),
        case("concat_cols", &[3, 2], Any, concat_cols),
        case("concat_rows", &[2, 4], Any, concat_rows),
        case("sum", &[3, 4], Any, sum),
        case("mean", &[3, 4], Any, mean),
        case("sum_rows", &[3, 4], Any, sum_rows),
        case("mean_rows", &[3, 4], Any, mean_rows),
        case("batch_norm/x", &[5, 4], Any, bn_train_x),
        case("batch_norm/masked", &[5, 4], Any, bn_train_masked),
        case("batch_norm/gamma", &[4], Any, bn_train_gamma),
        case("batch_norm/beta", &[4], Any, bn_train_beta),
        case("batch_norm/eval", &[3, 4], Any, bn_eval),
    ]
}
