use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Added inside the square root of the LayerNorm variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Lower clamp on the Gaussian head's log standard deviation.
pub const LOG_STD_MIN: f64 = -20.0;
/// Upper clamp on the Gaussian head's log standard deviation.
pub const LOG_STD_MAX: f64 = 2.0;
/// Offset added to the softplus head so outputs are strictly positive.
pub const SOFTPLUS_FLOOR: f64 = 1e-6;

/// What the last linear layer feeds into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    /// First half of the outputs is a mean, second half a clamped log-std.
    Gaussian,
    /// `softplus(z) + SOFTPLUS_FLOOR`, used for density ratios.
    Softplus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub layer_norm: bool,
    pub head: Head,
}

impl NetShape {
    /// `input -> hidden -> hidden -> output` with ReLU hidden units.
    pub fn mlp(input: usize, hidden: usize, output: usize, layer_norm: bool, head: Head) -> Self {
        Self {
            widths: vec![input, hidden, hidden, output],
            layer_norm,
            head,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated shape")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::invalid(format!(
                "network widths must list at least input and output, all nonzero: {:?}",
                self.widths
            )));
        }
        if self.head == Head::Gaussian && !self.output_dim().is_multiple_of(2) {
            return Err(Error::invalid("gaussian head needs an even output width"));
        }
        Ok(())
    }

    fn slots(&self) -> (Vec<LayerSlots>, usize) {
        let n_layers = self.widths.len() - 1;
        let mut offset = 0;
        let mut slots = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let hidden = l + 1 < n_layers;
            let w = offset;
            let b = w + n_in * n_out;
            offset = b + n_out;
            let ln = if hidden && self.layer_norm {
                let g = offset;
                offset += 2 * n_out;
                Some(g)
            } else {
                None
            };
            slots.push(LayerSlots {
                n_in,
                n_out,
                w,
                b,
                ln,
                hidden,
            });
        }
        (slots, offset)
    }

    pub fn num_params(&self) -> usize {
        self.slots().1
    }
}

/// Parameter offsets of one linear layer inside the flat parameter vector.
///
/// Weights are stored input-major (`n_in x n_out`), followed by the bias and,
/// for normalized hidden layers, the LayerNorm gain and shift.
#[derive(Clone, Debug)]
struct LayerSlots {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
    ln: Option<usize>,
    hidden: bool,
}

/// Flat per-parameter gradient, laid out exactly like [`DenseNet::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer<T>(pub Vec<T>);

impl<T: Scalar> GradBuffer<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn zero(&mut self) {
        self.0.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn scale(&mut self, k: T) {
        self.0.iter_mut().for_each(|g| *g *= k);
    }
}

/// Multilayer perceptron with optional LayerNorm before each hidden ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<T> {
    shape: NetShape,
    params: Vec<T>,
}

/// Intermediate values kept by [`DenseNet::forward_tape`] for the backward pass.
pub struct Tape<T> {
    inputs: Vec<Matrix<T>>,
    normalized: Vec<Option<(Matrix<T>, Vec<T>)>>,
    pre_relu: Vec<Option<Matrix<T>>>,
    raw_out: Matrix<T>,
}

impl<T> Tape<T> {
    /// Final linear-layer output before the head.
    pub fn raw_output(&self) -> &Matrix<T> {
        &self.raw_out
    }
}

impl<T: Scalar> DenseNet<T> {
    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let (slots, n) = shape.slots();
        let mut params = vec![T::zero(); n];
        for s in &slots {
            if let Some(g) = s.ln {
                params[g..g + s.n_out].iter_mut().for_each(|p| *p = T::one());
            }
        }
        Ok(Self { shape, params })
    }

    /// Glorot-uniform weights, zero biases, unit LayerNorm gain.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        let (slots, _) = net.shape.slots();
        for s in &slots {
            let limit = (6.0 / (s.n_in + s.n_out) as f64).sqrt();
            for p in &mut net.params[s.w..s.b] {
                *p = T::of(rng.random_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn from_params(shape: NetShape, params: Vec<T>) -> Result<Self> {
        shape.validate()?;
        let n = shape.num_params();
        if params.len() != n {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: n,
                got: params.len(),
            });
        }
        if !all_finite(&params) {
            return Err(Error::non_finite("network parameters"));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.shape.output_dim()
    }

    pub fn zero_grads(&self) -> GradBuffer<T> {
        GradBuffer::zeros(self.params.len())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_batch(&Matrix::row_vector(x))?.into_vec())
    }

    pub fn forward_batch(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.run(x, false).map(|(out, _)| out)
    }

    pub fn forward_tape(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Tape<T>)> {
        self.run(x, true)
            .map(|(out, tape)| (out, tape.expect("tape requested")))
    }

    fn run(&self, x: &Matrix<T>, record: bool) -> Result<(Matrix<T>, Option<Tape<T>>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        if !all_finite(x.as_slice()) {
            return Err(Error::non_finite("network input"));
        }
        let (slots, _) = self.shape.slots();
        let mut tape = record.then(|| Tape {
            inputs: Vec::with_capacity(slots.len()),
            normalized: Vec::with_capacity(slots.len()),
            pre_relu: Vec::with_capacity(slots.len()),
            raw_out: Matrix::zeros(0, 0),
        });
        let mut h = x.clone();
        for s in &slots {
            let mut z = self.linear(s, &h);
            if let Some(t) = tape.as_mut() {
                t.inputs.push(h);
            }
            if !s.hidden {
                let out = self.head(&z);
                if let Some(t) = tape.as_mut() {
                    t.raw_out = z;
                }
                return Ok((out, tape));
            }
            let norm = s.ln.map(|g| {
                let gain = &self.params[g..g + s.n_out];
                let shift = &self.params[g + s.n_out..g + 2 * s.n_out];
                let mut xhat = Matrix::zeros(z.rows(), s.n_out);
                let mut inv_std = Vec::with_capacity(z.rows());
                for r in 0..z.rows() {
                    let row = z.row_mut(r);
                    let inv = normalize_into(row, xhat.row_mut(r));
                    for ((y, &xh), (&gk, &sk)) in
                        row.iter_mut().zip(xhat.row(r)).zip(gain.iter().zip(shift))
                    {
                        *y = gk * xh + sk;
                    }
                    inv_std.push(inv);
                }
                (xhat, inv_std)
            });
            let pre = record.then(|| z.clone());
            z.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = v.max(T::zero()));
            if let Some(t) = tape.as_mut() {
                t.normalized.push(norm);
                t.pre_relu.push(pre);
            }
            h = z;
        }
        unreachable!("validated shape ends with an output layer")
    }

    fn linear(&self, s: &LayerSlots, h: &Matrix<T>) -> Matrix<T> {
        let w = &self.params[s.w..s.b];
        let b = &self.params[s.b..s.b + s.n_out];
        let mut z = Matrix::zeros(h.rows(), s.n_out);
        for r in 0..h.rows() {
            let out = z.row_mut(r);
            out.copy_from_slice(b);
            for (&xi, wi) in h.row(r).iter().zip(w.chunks_exact(s.n_out)) {
                if xi != T::zero() {
                    for (o, &wk) in out.iter_mut().zip(wi) {
                        *o += xi * wk;
                    }
                }
            }
        }
        z
    }

    fn head(&self, z: &Matrix<T>) -> Matrix<T> {
        let mut out = z.clone();
        match self.shape.head {
            Head::Linear => {}
            Head::Softplus => {
                let floor = T::of(SOFTPLUS_FLOOR);
                out.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = softplus(*v) + floor);
            }
            Head::Gaussian => {
                let d = self.output_dim() / 2;
                let (lo, hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
                for r in 0..out.rows() {
                    out.row_mut(r)[d..]
                        .iter_mut()
                        .for_each(|v| *v = v.max(lo).min(hi));
                }
            }
        }
        out
    }

    /// Reverse pass for `sum(upstream .* forward(x))`.
    ///
    /// Parameter gradients are accumulated into `grads` when given; the
    /// gradient with respect to the input batch is returned.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        upstream: &Matrix<T>,
        mut grads: Option<&mut GradBuffer<T>>,
    ) -> Result<Matrix<T>> {
        let raw = &tape.raw_out;
        if upstream.rows() != raw.rows() || upstream.cols() != raw.cols() {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient",
                expected: raw.rows() * raw.cols(),
                got: upstream.rows() * upstream.cols(),
            });
        }
        if !all_finite(upstream.as_slice()) {
            return Err(Error::non_finite("upstream gradient"));
        }
        if let Some(g) = grads.as_deref() {
            if g.0.len() != self.params.len() {
                return Err(Error::DimensionMismatch {
                    context: "gradient buffer",
                    expected: self.params.len(),
                    got: g.0.len(),
                });
            }
        }
        let (slots, _) = self.shape.slots();
        let mut dz = self.head_backward(raw, upstream);
        for (l, s) in slots.iter().enumerate().rev() {
            if s.hidden {
                let pre = tape.pre_relu[l]
                    .as_ref()
                    .expect("tape records every hidden layer");
                for (d, &p) in dz.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if p <= T::zero() {
                        *d = T::zero();
                    }
                }
                if let (Some(g), Some((xhat, inv_std))) = (s.ln, tape.normalized[l].as_ref()) {
                    dz = self.layer_norm_backward(s, g, xhat, inv_std, dz, grads.as_deref_mut());
                }
            }
            let input = &tape.inputs[l];
            if let Some(gb) = grads.as_deref_mut() {
                let gw = &mut gb.0[s.w..s.b];
                for r in 0..dz.rows() {
                    let dr = dz.row(r);
                    for (&xi, gwi) in input.row(r).iter().zip(gw.chunks_exact_mut(s.n_out)) {
                        if xi != T::zero() {
                            for (g, &d) in gwi.iter_mut().zip(dr) {
                                *g += xi * d;
                            }
                        }
                    }
                }
                let gbias = &mut gb.0[s.b..s.b + s.n_out];
                for r in 0..dz.rows() {
                    for (g, &d) in gbias.iter_mut().zip(dz.row(r)) {
                        *g += d;
                    }
                }
            }
            let w = &self.params[s.w..s.b];
            let mut dx = Matrix::zeros(dz.rows(), s.n_in);
            for r in 0..dz.rows() {
                let dr = dz.row(r);
                for (o, wi) in dx.row_mut(r).iter_mut().zip(w.chunks_exact(s.n_out)) {
                    *o = wi.iter().zip(dr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                }
            }
            dz = dx;
        }
        Ok(dz)
    }

    fn head_backward(&self, raw: &Matrix<T>, upstream: &Matrix<T>) -> Matrix<T> {
        let mut dz = upstream.clone();
        match self.shape.head {
            Head::Linear => {}
            Head::Softplus => {
                for (d, &z) in dz.as_mut_slice().iter_mut().zip(raw.as_slice()) {
                    *d *= sigmoid(z);
                }
            }
            Head::Gaussian => {
                let d = self.output_dim() / 2;
                let (lo, hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
                for r in 0..dz.rows() {
                    let zr = &raw.row(r)[d..];
                    for (g, &z) in dz.row_mut(r)[d..].iter_mut().zip(zr) {
                        if z < lo || z > hi {
                            *g = T::zero();
                        }
                    }
                }
            }
        }
        dz
    }

    fn layer_norm_backward(
        &self,
        s: &LayerSlots,
        g: usize,
        xhat: &Matrix<T>,
        inv_std: &[T],
        dy: Matrix<T>,
        grads: Option<&mut GradBuffer<T>>,
    ) -> Matrix<T> {
        let n = s.n_out;
        if let Some(gb) = grads {
            for r in 0..dy.rows() {
                for (k, (&d, &xh)) in dy.row(r).iter().zip(xhat.row(r)).enumerate() {
                    gb.0[g + k] += d * xh;
                    gb.0[g + n + k] += d;
                }
            }
        }
        let gain = &self.params[g..g + n];
        let inv_n = T::one() / T::from_usize(n).expect("width fits a float");
        let mut dz = Matrix::zeros(dy.rows(), n);
        for r in 0..dy.rows() {
            let xr = xhat.row(r);
            let dxhat: Vec<T> = dy.row(r).iter().zip(gain).map(|(&d, &gk)| d * gk).collect();
            let mean_d = dxhat.iter().copied().sum::<T>() * inv_n;
            let mean_dx = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
            for ((o, &dh), &xh) in dz.row_mut(r).iter_mut().zip(&dxhat).zip(xr) {
                *o = inv_std[r] * (dh - mean_d - xh * mean_dx);
            }
        }
        dz
    }
}

/// Writes the zero-mean, unit-variance version of `x` into `out` and returns
/// `1 / sqrt(var + eps)`.
fn normalize_into<T: Scalar>(x: &[T], out: &mut [T]) -> T {
    let n = T::from_usize(x.len()).expect("width fits a float");
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + T::of(LAYER_NORM_EPS)).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv;
    }
    inv
}

/// LayerNorm with unit gain and zero shift: population variance, `eps = 1e-5`.
pub fn layer_norm<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    if x.len() < 2 {
        return Err(Error::invalid("layer_norm needs at least two entries"));
    }
    if !all_finite(x) {
        return Err(Error::non_finite("layer_norm input"));
    }
    let mut out = vec![T::zero(); x.len()];
    normalize_into(x, &mut out);
    Ok(out)
}

/// Parameter gradient of `upstream . forward(net, x)` for a single input.
pub fn backward<T: Scalar>(net: &DenseNet<T>, x: &[T], upstream: &[T]) -> Result<GradBuffer<T>> {
    let (_, tape) = net.forward_tape(&Matrix::row_vector(x))?;
    let mut grads = net.zero_grads();
    net.backward(&tape, &Matrix::row_vector(upstream), Some(&mut grads))?;
    Ok(grads)
}

pub fn softplus<T: Scalar>(z: T) -> T {
    // log(1 + e^z) = max(z, 0) + log(1 + e^{-|z|})
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
