use rand::Rng;

use super::{Activation, Matrix, ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};

pub fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l{layer}.w")
}

pub fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l{layer}.b")
}

/// Registers weights `(in, out)` and biases `(1, out)` for every layer of
/// `arch`, drawn uniformly from `±1/sqrt(fan_in)`.
pub fn init_mlp<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, arch: &[usize], rng: &mut R) -> Result<()> {
    if arch.len() < 2 {
        return Err(Error::InvalidArgument(format!("mlp `{prefix}` needs at least two layer sizes")));
    }
    for (l, pair) in arch.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = Matrix::from_vec(fan_in, fan_out, draw(fan_in * fan_out))?;
        let b = Matrix::from_vec(1, fan_out, draw(fan_out))?;
        store.insert(weight_name(prefix, l), w);
        store.insert(bias_name(prefix, l), b);
    }
    Ok(())
}

/// Number of scalars an MLP with this architecture owns.
pub fn mlp_param_count(arch: &[usize]) -> usize {
    arch.windows(2).map(|p| (p[0] + 1) * p[1]).sum()
}

/// Records a fully connected network on `tape`. `activation` is applied
/// after every hidden layer; the output layer is linear.
pub fn mlp(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    input: Var,
    arch: &[usize],
    activation: Activation,
    track: bool,
) -> Result<Var> {
    if arch.len() < 2 {
        return Err(Error::InvalidArgument(format!("mlp `{prefix}` needs at least two layer sizes")));
    }
    let in_cols = tape.value(input).cols();
    if in_cols != arch[0] {
        return Err(shape_err(format!("input of `{prefix}` layer 0"), arch[0], in_cols));
    }
    let layers = arch.len() - 1;
    let mut h = input;
    for l in 0..layers {
        let wn = weight_name(prefix, l);
        let bn = bias_name(prefix, l);
        let expected = (arch[l], arch[l + 1]);
        let got = store.value(&wn)?.shape();
        if got != expected {
            return Err(shape_err(format!("weights of `{prefix}` layer {l}"), format!("{expected:?}"), format!("{got:?}")));
        }
        let got_b = store.value(&bn)?.shape();
        if got_b != (1, arch[l + 1]) {
            return Err(shape_err(format!("bias of `{prefix}` layer {l}"), format!("(1, {})", arch[l + 1]), format!("{got_b:?}")));
        }
        let w = tape.leaf(store, &wn, track)?;
        let b = tape.leaf(store, &bn, track)?;
        let xw = tape.matmul(h, w)?;
        h = tape.add_row_bias(xw, b)?;
        if l + 1 < layers {
            h = tape.activate(h, activation);
        }
    }
    Ok(h)
}

/// Output of [`forward_mlp`]: value plus the tape that produced it.
#[derive(Debug)]
pub struct MlpOutput {
    pub output: Vec<f64>,
    pub tape: Tape,
    pub input: Var,
    pub output_var: Var,
}

/// Single-input forward pass through the MLP stored under `prefix`.
pub fn forward_mlp(
    params: &ParamStore,
    prefix: &str,
    input: &[f64],
    arch: &[usize],
    activation: Activation,
) -> Result<MlpOutput> {
    let mut tape = Tape::new();
    let x = tape.input(Matrix::row_vector(input));
    let y = mlp(&mut tape, params, prefix, x, arch, activation, true)?;
    Ok(MlpOutput {
        output: tape.value(y).as_slice().to_vec(),
        tape,
        input: x,
        output_var: y,
    })
}
