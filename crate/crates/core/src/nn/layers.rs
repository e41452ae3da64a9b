use super::params::{init_linear, Bound, ParamStore};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Var;
use rand::Rng;

/// `x·W + b` with `W` stored as `[in×out]`.
pub fn linear<'t, T: Scalar>(x: Var<'t, T>, p: &Bound<'t, T>, prefix: &str) -> Result<Var<'t, T>> {
    x.matmul(p.get(&format!("{prefix}.weight"))?)?
        .add_row(p.get(&format!("{prefix}.bias"))?)
}

/// Linear → ReLU → Linear, parameters under `{prefix}.0` and `{prefix}.1`.
pub fn mlp2<'t, T: Scalar>(x: Var<'t, T>, p: &Bound<'t, T>, prefix: &str) -> Result<Var<'t, T>> {
    let h = linear(x, p, &format!("{prefix}.0"))?.relu();
    linear(h, p, &format!("{prefix}.1"))
}

pub fn init_mlp2<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input: usize,
    hidden: usize,
    output: usize,
    rng: &mut impl Rng,
) {
    init_linear(store, &format!("{prefix}.0"), input, hidden, rng);
    init_linear(store, &format!("{prefix}.1"), hidden, output, rng);
}
