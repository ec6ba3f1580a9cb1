//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass together
//! with its output value. [`Tape::backward`] walks the record in reverse,
//! accumulating adjoints, and adds the adjoints of parameter leaves into the
//! owning [`ParamStore`].

use super::{Matrix, ParamStore};
use crate::error::{shape_err, Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Elu,
    Relu,
    None,
}

impl Activation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "elu" => Ok(Self::Elu),
            "relu" => Ok(Self::Relu),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Elu(Var),
    Relu(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    RowMix { q: Var, w: Var, hidden: usize },
    RowDot(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    GaussianLogpdf { z: Var, mu: Var, sigma: Var },
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Adjoints produced by one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the differentiated output w.r.t. `var`; `None` when `var`
    /// did not influence the output.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but returns zeros of the right shape.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Matrix {
        self.get(var).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

/// Ordered record of primitive operations with cached values.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives an adjoint but never touches a store.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    /// Parameter leaf whose adjoint is accumulated into `store` on backward.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    /// Parameter leaf, or a constant copy of it when `track` is false.
    pub fn leaf(&mut self, store: &ParamStore, name: &str, track: bool) -> Result<Var> {
        if track {
            self.param(store, name)
        } else {
            Ok(self.input(store.value(name)?.clone()))
        }
    }

    /// Re-records the value of `v` as a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err(
                "matmul",
                format!("{} rows on the right operand", va.cols()),
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + bias` where `bias` is `1 x cols`, broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(shape_err("add_row_bias", format!("1x{}", vx.cols()), format!("{:?}", vb.shape())));
        }
        let mut out = vx.clone();
        let cols = out.cols();
        for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
            *o += vb.as_slice()[i % cols];
        }
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    fn same_shape(&self, ctx: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(ctx, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(va.rows(), va.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Elu => self.elu(a),
            Activation::Relu => self.relu(a),
            Activation::None => a,
        }
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// `out.flat[k] = x.flat[indices[k]]`, shaped `rows x cols`.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>, rows: usize, cols: usize) -> Result<Var> {
        if indices.len() != rows * cols {
            return Err(shape_err("gather", rows * cols, indices.len()));
        }
        let src = self.value(x).as_slice();
        let mut data = Vec::with_capacity(indices.len());
        for &i in &indices {
            match src.get(i) {
                Some(&v) => data.push(v),
                None => return Err(shape_err("gather index", format!("< {}", src.len()), i)),
            }
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::Gather(x, indices)))
    }

    /// Columns `[start, start + width)` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).shape();
        if start + width > cols {
            return Err(shape_err("slice_cols", format!("at most {cols} columns"), start + width));
        }
        let indices = (0..rows).flat_map(|r| (start..start + width).map(move |c| r * cols + c)).collect();
        self.gather(x, indices, rows, width)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).ok_or(Error::Empty("concat_cols input"))?;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat_cols", format!("{rows} rows"), self.value(p).rows()));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Per-row weighted mixing: `q` is `N x n`, `w` is `N x (n*hidden)` laid
    /// out agent-major; `out[r, h] = sum_i q[r, i] * w[r, i*hidden + h]`.
    pub fn row_mix(&mut self, q: Var, w: Var, hidden: usize) -> Result<Var> {
        let (vq, vw) = (self.value(q), self.value(w));
        let (rows, n) = vq.shape();
        if vw.rows() != rows || vw.cols() != n * hidden {
            return Err(shape_err(
                "row_mix weights",
                format!("{rows}x{}", n * hidden),
                format!("{:?}", vw.shape()),
            ));
        }
        let mut out = Matrix::zeros(rows, hidden);
        for r in 0..rows {
            let qr = vq.row(r);
            let wr = vw.row(r);
            let o = &mut out.as_mut_slice()[r * hidden..(r + 1) * hidden];
            for (i, &qi) in qr.iter().enumerate() {
                for (h, oh) in o.iter_mut().enumerate() {
                    *oh += qi * wr[i * hidden + h];
                }
            }
        }
        Ok(self.push(out, Op::RowMix { q, w, hidden }))
    }

    /// Row-wise dot product, `N x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = (0..va.rows())
            .map(|r| va.row(r).iter().zip(vb.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let out = Matrix::from_vec(va.rows(), 1, data)?;
        Ok(self.push(out, Op::RowDot(a, b)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().sum();
        self.push(Matrix::filled(1, 1, s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Empty("mean_all input"));
        }
        let m = v.as_slice().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Matrix::filled(1, 1, m), Op::MeanAll(a)))
    }

    /// Diagonal Gaussian log-density, one value per row (`N x 1`).
    pub fn gaussian_logpdf(&mut self, z: Var, mu: Var, sigma: Var) -> Result<Var> {
        self.same_shape("gaussian_logpdf mu", z, mu)?;
        self.same_shape("gaussian_logpdf sigma", z, sigma)?;
        let (vz, vm, vs) = (self.value(z), self.value(mu), self.value(sigma));
        if let Some(&bad) = vs.as_slice().iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::NonPositiveSigma(bad));
        }
        let k = vz.cols();
        let data = (0..vz.rows())
            .map(|r| {
                (0..k)
                    .map(|c| {
                        let s = vs.get(r, c);
                        let d = vz.get(r, c) - vm.get(r, c);
                        -HALF_LN_2PI - s.ln() - d * d / (2.0 * s * s)
                    })
                    .sum()
            })
            .collect();
        let out = Matrix::from_vec(vz.rows(), 1, data)?;
        Ok(self.push(out, Op::GaussianLogpdf { z, mu, sigma }))
    }

    /// Backpropagates `upstream` (flattened adjoint of `output`) and adds the
    /// adjoints of parameter leaves into `store`. Consumes the tape.
    pub fn backward(&mut self, output: Var, upstream: &[f64], store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.propagate(output, upstream)?;
        for (i, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let (Op::Param(name), Some(g)) = (&node.op, &grads.grads[i]) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(grads)
    }

    /// Backpropagates without touching any parameter store. Consumes the tape.
    pub fn backward_inputs(&mut self, output: Var, upstream: &[f64]) -> Result<Gradients> {
        self.propagate(output, upstream)
    }

    fn propagate(&mut self, output: Var, upstream: &[f64]) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out_shape = self.nodes[output.0].value.shape();
        if upstream.len() != out_shape.0 * out_shape.1 {
            return Err(shape_err("backward upstream", out_shape.0 * out_shape.1, upstream.len()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::from_vec(out_shape.0, out_shape.1, upstream.to_vec())?);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_transpose_rhs(val(*b));
                    let gb = val(*a).transpose_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRowBias(x, b) => {
                    let cols = g.cols();
                    let mut gb = Matrix::zeros(1, cols);
                    for (i, &v) in g.as_slice().iter().enumerate() {
                        gb.as_mut_slice()[i % cols] += v;
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = zip(&g, val(*b), |gi, y| gi * y);
                    let gb = zip(&g, val(*a), |gi, x| gi * x);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.map(|x| x * k)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::Elu(a) => {
                    let ga = zip(&g, val(*a), |gi, x| if x > 0.0 { gi } else { gi * x.exp() });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip(&g, val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = zip(&g, val(*a), |gi, x| gi * sigmoid(x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let ga = zip(&g, val(*a), |gi, x| {
                        if x > 0.0 {
                            gi
                        } else if x < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = zip(&g, val(*a), |gi, x| 2.0 * gi * x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather(x, indices) => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    for (k, &i) in indices.iter().enumerate() {
                        gx.as_mut_slice()[i] += g.as_slice()[k];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        let mut gp = Matrix::zeros(rows, w);
                        for r in 0..rows {
                            gp.as_mut_slice()[r * w..(r + 1) * w]
                                .copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::RowMix { q, w, hidden } => {
                    let (vq, vw) = (val(*q), val(*w));
                    let (rows, n) = vq.shape();
                    let h = *hidden;
                    let mut gq = Matrix::zeros(rows, n);
                    let mut gw = Matrix::zeros(rows, n * h);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let wr = vw.row(r);
                        let qr = vq.row(r);
                        for i in 0..n {
                            let mut acc = 0.0;
                            for (hh, &gv) in gr.iter().enumerate() {
                                acc += gv * wr[i * h + hh];
                                gw.as_mut_slice()[r * n * h + i * h + hh] = gv * qr[i];
                            }
                            gq.as_mut_slice()[r * n + i] = acc;
                        }
                    }
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *w, gw);
                }
                Op::RowDot(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let cols = va.cols();
                    let mut ga = Matrix::zeros(va.rows(), cols);
                    let mut gb = Matrix::zeros(va.rows(), cols);
                    for r in 0..va.rows() {
                        let gr = g.as_slice()[r];
                        for c in 0..cols {
                            ga.as_mut_slice()[r * cols + c] = gr * vb.get(r, c);
                            gb.as_mut_slice()[r * cols + c] = gr * va.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SumAll(a) => {
                    let (r, c) = val(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.as_slice()[0]));
                }
                Op::MeanAll(a) => {
                    let (r, c) = val(*a).shape();
                    let v = g.as_slice()[0] / (r * c) as f64;
                    accumulate(&mut grads, *a, Matrix::filled(r, c, v));
                }
                Op::GaussianLogpdf { z, mu, sigma } => {
                    let (vz, vm, vs) = (val(*z), val(*mu), val(*sigma));
                    let (rows, k) = vz.shape();
                    let mut gz = Matrix::zeros(rows, k);
                    let mut gm = Matrix::zeros(rows, k);
                    let mut gs = Matrix::zeros(rows, k);
                    for r in 0..rows {
                        let gr = g.as_slice()[r];
                        for c in 0..k {
                            let s = vs.get(r, c);
                            let d = vz.get(r, c) - vm.get(r, c);
                            let s2 = s * s;
                            gz.set(r, c, -gr * d / s2);
                            gm.set(r, c, gr * d / s2);
                            gs.set(r, c, gr * (-1.0 / s + d * d / (s2 * s)));
                        }
                    }
                    accumulate(&mut grads, *z, gz);
                    accumulate(&mut grads, *mu, gm);
                    accumulate(&mut grads, *sigma, gs);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_backward_at_three() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::filled(1, 1, 3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward_inputs(y, &[1.0]).unwrap();
        assert_eq!(g.get(x).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn linear_weight_grad_is_outer_product() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap());
        let mut tape = Tape::new();
        let x = tape.input(Matrix::row_vector(&[2.0, -1.0]));
        let w = tape.param(&store, "w").unwrap();
        let y = tape.matmul(x, w).unwrap();
        let upstream = [1.0, 0.5, -2.0];
        tape.backward(y, &upstream, &mut store).unwrap();
        let expected: Vec<f64> = [2.0, -1.0]
            .iter()
            .flat_map(|xi| upstream.iter().map(move |u| xi * u))
            .collect();
        assert_eq!(store.grad("w").unwrap().as_slice(), expected.as_slice());
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::filled(1, 1, 1.0));
        let y = tape.square(x);
        tape.backward_inputs(y, &[1.0]).unwrap();
        assert!(matches!(tape.backward_inputs(y, &[1.0]), Err(Error::TapeConsumed)));
    }

    #[test]
    fn backward_accumulates_into_store() {
        let mut store = ParamStore::new();
        store.insert("p", Matrix::filled(1, 1, 2.0));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let p = tape.param(&store, "p").unwrap();
            let y = tape.square(p);
            tape.backward(y, &[1.0], &mut store).unwrap();
        }
        assert_eq!(store.grad("p").unwrap().as_slice(), &[8.0]);
    }

    #[test]
    fn untouched_params_get_exact_zero() {
        let mut store = ParamStore::new();
        store.insert("used", Matrix::filled(1, 1, 1.5));
        store.insert("unused", Matrix::filled(1, 1, -0.5));
        let mut tape = Tape::new();
        let p = tape.param(&store, "used").unwrap();
        let _dangling = tape.param(&store, "unused").unwrap();
        let y = tape.square(p);
        tape.backward(y, &[1.0], &mut store).unwrap();
        assert_eq!(store.grad("unused").unwrap().as_slice(), &[0.0]);
        assert_eq!(store.grad("used").unwrap().as_slice(), &[3.0]);
    }

    #[test]
    fn logpdf_rejects_nonpositive_sigma() {
        let mut tape = Tape::new();
        let z = tape.input(Matrix::row_vector(&[0.0]));
        let m = tape.input(Matrix::row_vector(&[0.0]));
        let s = tape.input(Matrix::row_vector(&[0.0]));
        assert!(matches!(tape.gaussian_logpdf(z, m, s), Err(Error::NonPositiveSigma(_))));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }
}
