//! Fully connected surrogate network with second-order input jets.
//!
//! Every hidden unit carries the 4-tuple `(value, d/dt, d/dx, d²/dx²)` through
//! the layers. Single points go through a generic path (usable on the
//! [`crate::autodiff`] tape); batches go through [`JetEvaluator`], which stacks
//! the four components as row blocks and does each layer as one matrix product,
//! then runs the matching hand-written reverse pass for parameter gradients.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 2;

/// Row blocks of a jet batch.
pub const VAL: usize = 0;
pub const DT: usize = 1;
pub const DX: usize = 2;
pub const DXX: usize = 3;
pub const JET_BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub t: f64,
}

impl Point {
    pub fn new(x: f64, t: f64) -> Self {
        Self { x, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// First two derivatives at the point whose activation output is `a`.
    #[inline]
    fn derivatives(self, a: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let s1 = 1.0 - a * a;
                (s1, -2.0 * a * s1)
            }
            Activation::Identity => (1.0, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "identity" | "linear" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fixed affine map applied to (x, t) before the first layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputMap {
    pub x_scale: f64,
    pub x_shift: f64,
    pub t_scale: f64,
    pub t_shift: f64,
}

impl Default for InputMap {
    fn default() -> Self {
        Self::identity()
    }
}

impl InputMap {
    pub const fn identity() -> Self {
        Self { x_scale: 1.0, x_shift: 0.0, t_scale: 1.0, t_shift: 0.0 }
    }

    /// Maps [x_lo, x_hi] x [t_lo, t_hi] onto [-1, 1]^2.
    pub fn unit_box(x_lo: f64, x_hi: f64, t_lo: f64, t_hi: f64) -> Self {
        let sx = 2.0 / (x_hi - x_lo);
        let st = 2.0 / (t_hi - t_lo);
        Self { x_scale: sx, x_shift: -1.0 - sx * x_lo, t_scale: st, t_shift: -1.0 - st * t_lo }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> [f64; 2] {
        [self.x_scale * p.x + self.x_shift, self.t_scale * p.t + self.t_shift]
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.x_scale, self.x_shift, self.t_scale, self.t_shift];
        if v.iter().all(|c| c.is_finite()) && self.x_scale != 0.0 && self.t_scale != 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate input map {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkShape {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub input_map: InputMap,
}

/// Where one layer's weights and biases sit in the flat parameter vector.
/// Weights are row-major `fan_in x fan_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub bias: usize,
}

impl NetworkShape {
    pub fn new(hidden_layers: usize, hidden_width: usize, output_dim: usize) -> Result<Self> {
        let shape = Self {
            hidden_layers,
            hidden_width,
            output_dim,
            activation: Activation::Tanh,
            input_map: InputMap::identity(),
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_input_map(mut self, input_map: InputMap) -> Self {
        self.input_map = input_map;
        self
    }

    pub fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    pub fn validate(&self) -> Result<()> {
        self.input_map.validate()?;
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::Config(format!(
                "network needs at least one hidden layer of width >= 1 (got {} x {})",
                self.hidden_layers, self.hidden_width
            )));
        }
        if self.output_dim < 2 || !self.output_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("output dimension must be even and >= 2 (got {})", self.output_dim)));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_layers + 2);
        sizes.push(INPUT_DIM);
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        sizes.push(self.output_dim);
        sizes
    }

    pub fn layout(&self) -> Vec<LayerSlot> {
        let sizes = self.layer_sizes();
        let mut offset = 0;
        sizes
            .windows(2)
            .map(|w| {
                let slot = LayerSlot { fan_in: w[0], fan_out: w[1], weights: offset, bias: offset + w[0] * w[1] };
                offset = slot.bias + w[1];
                slot
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map(|s| s.bias + s.fan_out).unwrap_or(0)
    }
}

/// Flat trainable weights and biases, laid out per [`NetworkShape::layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn from_values(shape: &NetworkShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.param_count() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, shape needs {}",
                values.len(),
                shape.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("parameter vector has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(shape: &NetworkShape, seed: u64) -> Result<ParameterVector> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; shape.param_count()];
    for slot in shape.layout() {
        let bound = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
        for w in &mut values[slot.weights..slot.bias] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(ParameterVector { values })
}

/// Value and the input derivatives used by the residuals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub value: f64,
    pub d_t: f64,
    pub d_x: f64,
    pub d_xx: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GenericJet<S> {
    pub value: S,
    pub d_t: S,
    pub d_x: S,
    pub d_xx: S,
}

fn check_params(params: &[f64], shape: &NetworkShape) -> Result<()> {
    shape.validate()?;
    if params.len() < shape.param_count() {
        return Err(Error::Config(format!(
            "parameter vector has {} entries, shape needs {}",
            params.len(),
            shape.param_count()
        )));
    }
    Ok(())
}

/// Jets of every output at one point, over any [`Scalar`].
pub fn forward_jet_generic<S: Scalar>(params: &[S], shape: &NetworkShape, p: Point) -> Vec<GenericJet<S>> {
    let layout = shape.layout();
    let last = layout.len() - 1;
    let m = shape.input_map;
    let [xi, ti] = m.apply(p);
    let mut current: Vec<GenericJet<S>> = Vec::new();
    for (l, slot) in layout.iter().enumerate() {
        let w = &params[slot.weights..slot.bias];
        let b = &params[slot.bias..slot.bias + slot.fan_out];
        let mut next = Vec::with_capacity(slot.fan_out);
        for j in 0..slot.fan_out {
            let jet = if l == 0 {
                let wx = w[j];
                let wt = w[slot.fan_out + j];
                GenericJet {
                    value: wx.scale(xi) + wt.scale(ti) + b[j],
                    d_t: wt.scale(m.t_scale),
                    d_x: wx.scale(m.x_scale),
                    d_xx: wx.zero_like(),
                }
            } else {
                let mut value = current[0].value * w[j];
                let mut d_t = current[0].d_t * w[j];
                let mut d_x = current[0].d_x * w[j];
                let mut d_xx = current[0].d_xx * w[j];
                for (i, a) in current.iter().enumerate().skip(1) {
                    let wij = w[i * slot.fan_out + j];
                    value = value + a.value * wij;
                    d_t = d_t + a.d_t * wij;
                    d_x = d_x + a.d_x * wij;
                    d_xx = d_xx + a.d_xx * wij;
                }
                GenericJet { value: value + b[j], d_t, d_x, d_xx }
            };
            next.push(if l == last { jet } else { activate_jet(shape.activation, jet) });
        }
        current = next;
    }
    current
}

fn activate_jet<S: Scalar>(act: Activation, z: GenericJet<S>) -> GenericJet<S> {
    match act {
        Activation::Identity => z,
        Activation::Tanh => {
            let a = act.apply(z.value);
            // s1 = 1 - a^2, s2 = -2 a s1
            let s1 = (a * a).scale(-1.0).offset(1.0);
            let s2 = (a * s1).scale(-2.0);
            GenericJet { value: a, d_t: s1 * z.d_t, d_x: s1 * z.d_x, d_xx: s2 * z.d_x * z.d_x + s1 * z.d_xx }
        }
    }
}

/// Value, d/dt, d/dx and d²/dx² of every output at `p`.
pub fn forward_jet(params: &ParameterVector, shape: &NetworkShape, p: Point) -> Result<Vec<Jet2>> {
    check_params(&params.values, shape)?;
    let jets = forward_jet_generic(&params.values, shape, p);
    let out: Vec<Jet2> =
        jets.into_iter().map(|j| Jet2 { value: j.value, d_t: j.d_t, d_x: j.d_x, d_xx: j.d_xx }).collect();
    if out.iter().any(|j| !(j.value.is_finite() && j.d_t.is_finite() && j.d_x.is_finite() && j.d_xx.is_finite())) {
        return Err(Error::NonFiniteLayer { layer: first_non_finite_layer(&params.values, shape, p) });
    }
    Ok(out)
}

fn first_non_finite_layer(params: &[f64], shape: &NetworkShape, p: Point) -> usize {
    let mut current = shape.input_map.apply(p).to_vec();
    for (l, slot) in shape.layout().iter().enumerate() {
        current = dense_values(params, slot, &current, l + 1 < shape.hidden_layers + 1, shape.activation);
        if current.iter().any(|v| !v.is_finite()) {
            return l;
        }
    }
    shape.hidden_layers
}

fn dense_values(params: &[f64], slot: &LayerSlot, input: &[f64], activate: bool, act: Activation) -> Vec<f64> {
    let w = &params[slot.weights..slot.bias];
    let b = &params[slot.bias..slot.bias + slot.fan_out];
    (0..slot.fan_out)
        .map(|j| {
            // Same association order as forward_jet_generic.
            let z = if slot.fan_in == INPUT_DIM && slot.weights == 0 {
                w[j] * input[0] + w[slot.fan_out + j] * input[1] + b[j]
            } else {
                let mut acc = input[0] * w[j];
                for (i, a) in input.iter().enumerate().skip(1) {
                    acc += a * w[i * slot.fan_out + j];
                }
                acc + b[j]
            };
            if activate {
                act.apply(z)
            } else {
                z
            }
        })
        .collect()
}

/// Plain forward pass at one point, no derivatives.
pub fn forward_value(params: &ParameterVector, shape: &NetworkShape, p: Point) -> Result<Vec<f64>> {
    check_params(&params.values, shape)?;
    let mut current = shape.input_map.apply(p).to_vec();
    let layers = shape.layout();
    for (l, slot) in layers.iter().enumerate() {
        current = dense_values(&params.values, slot, &current, l + 1 < layers.len(), shape.activation);
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLayer { layer: l });
        }
    }
    Ok(current)
}

/// Outputs of a batch evaluation: `JET_BLOCKS * n` rows of `output_dim`.
#[derive(Debug, Clone, Default)]
pub struct JetBatch {
    pub n: usize,
    pub output_dim: usize,
    pub data: Vec<f64>,
}

impl JetBatch {
    #[inline]
    pub fn get(&self, block: usize, point: usize, output: usize) -> f64 {
        self.data[(block * self.n + point) * self.output_dim + output]
    }

    pub fn jet(&self, point: usize, output: usize) -> Jet2 {
        Jet2 {
            value: self.get(VAL, point, output),
            d_t: self.get(DT, point, output),
            d_x: self.get(DX, point, output),
            d_xx: self.get(DXX, point, output),
        }
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    /// Index into `data` (and adjoint buffers of the same shape).
    #[inline]
    pub fn index(&self, block: usize, point: usize, output: usize) -> usize {
        (block * self.n + point) * self.output_dim + output
    }
}

/// C = alpha * op(A) * op(B) + beta * C, all row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides and extents describe sub-ranges of the given slices,
    // checked by the callers' buffer sizing.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Reusable buffers for batched jet evaluation and its reverse pass.
#[derive(Debug, Clone)]
pub struct JetEvaluator {
    shape: NetworkShape,
    layout: Vec<LayerSlot>,
    n: usize,
    /// Layer inputs; `inputs[0]` is the jet of (x, t).
    inputs: Vec<Vec<f64>>,
    output: JetBatch,
    grad_a: Vec<f64>,
    grad_z: Vec<f64>,
}

impl JetEvaluator {
    pub fn new(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            layout: shape.layout(),
            shape,
            n: 0,
            inputs: Vec::new(),
            output: JetBatch::default(),
            grad_a: Vec::new(),
            grad_z: Vec::new(),
        })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn output(&self) -> &JetBatch {
        &self.output
    }

    /// Jets of all outputs at all `points`. Intermediate activations are kept
    /// for a following [`JetEvaluator::backward`].
    pub fn forward(&mut self, params: &[f64], points: &[Point]) -> Result<&JetBatch> {
        check_params(params, &self.shape)?;
        let n = points.len();
        self.n = n;
        let rows = JET_BLOCKS * n;
        let layers = self.layout.len();
        self.inputs.resize_with(layers, Vec::new);

        let x0 = &mut self.inputs[0];
        x0.clear();
        x0.resize(rows * INPUT_DIM, 0.0);
        let m = self.shape.input_map;
        for (i, &p) in points.iter().enumerate() {
            let [xi, ti] = m.apply(p);
            x0[(VAL * n + i) * 2] = xi;
            x0[(VAL * n + i) * 2 + 1] = ti;
            x0[(DT * n + i) * 2 + 1] = m.t_scale;
            x0[(DX * n + i) * 2] = m.x_scale;
        }

        for l in 0..layers {
            let slot = self.layout[l];
            let w = &params[slot.weights..slot.bias];
            let b = &params[slot.bias..slot.bias + slot.fan_out];
            let fo = slot.fan_out;
            let mut z = if l + 1 < layers {
                std::mem::take(&mut self.inputs[l + 1])
            } else {
                std::mem::take(&mut self.output.data)
            };
            z.clear();
            z.resize(rows * fo, 0.0);
            gemm(rows, slot.fan_in, fo, &self.inputs[l], slot.fan_in as isize, 1, w, fo as isize, 1, 0.0, &mut z);
            for i in 0..n {
                let row = &mut z[i * fo..(i + 1) * fo];
                for (v, bj) in row.iter_mut().zip(b) {
                    *v += bj;
                }
            }
            if l + 1 < layers {
                activate_batch(self.shape.activation, &mut z, n, fo);
                if z[..n * fo].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLayer { layer: l });
                }
                self.inputs[l + 1] = z;
            } else {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLayer { layer: l });
                }
                self.output = JetBatch { n, output_dim: fo, data: z };
            }
        }
        Ok(&self.output)
    }

    /// Parameter gradient of a scalar loss given its adjoint with respect to
    /// every entry of the last [`JetEvaluator::forward`] output. Accumulates
    /// into `grad` (which must cover the network parameters).
    pub fn backward(&mut self, params: &[f64], seed: &[f64], grad: &mut [f64]) {
        let n = self.n;
        let rows = JET_BLOCKS * n;
        assert_eq!(seed.len(), self.output.data.len(), "adjoint shape mismatch");
        self.grad_z.clear();
        self.grad_z.extend_from_slice(seed);
        for l in (0..self.layout.len()).rev() {
            let slot = self.layout[l];
            let fi = slot.fan_in;
            let fo = slot.fan_out;
            // dW = A^T G (fan_in x fan_out), accumulated.
            gemm(
                fi,
                rows,
                fo,
                &self.inputs[l],
                1,
                fi as isize,
                &self.grad_z,
                fo as isize,
                1,
                1.0,
                &mut grad[slot.weights..slot.bias],
            );
            let gb = &mut grad[slot.bias..slot.bias + fo];
            for i in 0..n {
                for (g, v) in gb.iter_mut().zip(&self.grad_z[i * fo..(i + 1) * fo]) {
                    *g += v;
                }
            }
            if l == 0 {
                break;
            }
            // dA = G W^T (rows x fan_in)
            self.grad_a.clear();
            self.grad_a.resize(rows * fi, 0.0);
            let w = &params[slot.weights..slot.bias];
            gemm(rows, fo, fi, &self.grad_z, fo as isize, 1, w, 1, fo as isize, 0.0, &mut self.grad_a);
            // Through the activation of layer l-1, whose outputs are inputs[l].
            self.grad_z.clear();
            self.grad_z.resize(rows * fi, 0.0);
            activation_backward(self.shape.activation, &self.inputs[l], &self.grad_a, &mut self.grad_z, n, fi);
        }
    }
}

/// In place: pre-activation jets become activation jets.
fn activate_batch(act: Activation, z: &mut [f64], n: usize, width: usize) {
    if act == Activation::Identity {
        return;
    }
    let block = n * width;
    let (val, rest) = z.split_at_mut(block);
    let (dt, rest) = rest.split_at_mut(block);
    let (dx, dxx) = rest.split_at_mut(block);
    for k in 0..block {
        let a = act.apply(val[k]);
        let (s1, s2) = act.derivatives(a);
        let zx = dx[k];
        val[k] = a;
        dt[k] *= s1;
        dx[k] = s1 * zx;
        dxx[k] = s2 * zx * zx + s1 * dxx[k];
    }
}

/// Adjoint of [`activate_batch`], from the stored activation jets only.
///
/// With r = s2/s1 = -2a for tanh, every pre-activation term the chain rule
/// needs can be written without dividing by s1:
///   s2 z_t = r a_t,  s2 z_x = r a_x,  s3 z_x^2 + s2 z_xx = r a_xx - 2 a_x^2.
fn activation_backward(act: Activation, a: &[f64], ga: &[f64], gz: &mut [f64], n: usize, width: usize) {
    let block = n * width;
    match act {
        Activation::Identity => gz.copy_from_slice(ga),
        Activation::Tanh => {
            for k in 0..block {
                let av = a[k];
                let s1 = 1.0 - av * av;
                let r = -2.0 * av;
                let at = a[block + k];
                let ax = a[2 * block + k];
                let axx = a[3 * block + k];
                let g_v = ga[k];
                let g_t = ga[block + k];
                let g_x = ga[2 * block + k];
                let g_xx = ga[3 * block + k];
                gz[k] = g_v * s1 + r * (g_t * at + g_x * ax) + g_xx * (r * axx - 2.0 * ax * ax);
                gz[block + k] = g_t * s1;
                gz[2 * block + k] = g_x * s1 + 2.0 * r * ax * g_xx;
                gz[3 * block + k] = g_xx * s1;
            }
        }
    }
}

/// Values of all outputs at `points` (`n x output_dim`, row-major), without
/// derivatives. Used for evaluation grids.
pub fn forward_values_batch(params: &[f64], shape: &NetworkShape, points: &[Point]) -> Result<Vec<f64>> {
    check_params(params, shape)?;
    let n = points.len();
    let layout = shape.layout();
    let mut current: Vec<f64> = points.iter().flat_map(|&p| shape.input_map.apply(p)).collect();
    for (l, slot) in layout.iter().enumerate() {
        let fo = slot.fan_out;
        let mut z = vec![0.0; n * fo];
        gemm(
            n,
            slot.fan_in,
            fo,
            &current,
            slot.fan_in as isize,
            1,
            &params[slot.weights..slot.bias],
            fo as isize,
            1,
            0.0,
            &mut z,
        );
        let b = &params[slot.bias..slot.bias + fo];
        let hidden = l + 1 < layout.len();
        for row in z.chunks_mut(fo) {
            for (v, bj) in row.iter_mut().zip(b) {
                *v += bj;
                if hidden {
                    *v = shape.activation.apply(*v);
                }
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLayer { layer: l });
        }
        current = z;
    }
    Ok(current)
}
