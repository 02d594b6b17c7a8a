//! Dense ReLU networks with hand-written reverse mode, Adam, and Polyak averaging.
//!
//! Networks are evaluated on row-major batches: one sample per row. Hidden
//! layers are always ReLU; the output activation is chosen per network
//! (identity for critics, tanh for actors, softplus for multiplier heads,
//! sigmoid for the bounded risk critic).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softplus,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Softplus => softplus(z),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`, given the already computed output `y`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            // subgradient 0 at the kink
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// `ln(1 + e^z)`, floored at the smallest positive normal so the result stays
/// strictly positive where `e^z` underflows.
pub fn softplus(z: f64) -> f64 {
    let v = z.max(0.0) + (-z.abs()).exp().ln_1p();
    v.max(f64::MIN_POSITIVE)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer. `weights` is `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    output: Activation,
}

impl Mlp {
    /// Builds a network with layer widths `sizes = [input, hidden.., output]`,
    /// initialized uniformly in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
                let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..bound));
                Layer { weights, bias }
            })
            .collect();
        Ok(Mlp { layers, output })
    }

    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Mlp { layers, output })
    }

    pub fn from_layers(layers: Vec<Layer>, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for layer in &layers {
            ensure_len("layer bias", layer.fan_out(), layer.bias.len())?;
        }
        for pair in layers.windows(2) {
            ensure_len("layer inner dimension", pair[0].fan_out(), pair[1].fan_in())?;
        }
        Ok(Mlp { layers, output })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Overwrites every bias of the final layer.
    pub fn set_output_bias(&mut self, value: f64) {
        let last = self.layers.len() - 1;
        self.layers[last].bias.fill(value);
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    /// All parameters in layer order, weights (row-major) before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        ensure_len("flat parameters", self.param_count(), values.len())?;
        let mut it = values.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    fn activation_of(&self, index: usize) -> Activation {
        if index + 1 == self.layers.len() {
            self.output
        } else {
            Activation::Relu
        }
    }

    /// Batched forward pass keeping the intermediates needed by [`Mlp::backward`].
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardPass> {
        ensure_len("network input", self.input_width(), input.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights) + &layer.bias;
            let act = self.activation_of(i);
            let y = z.mapv(|v| act.apply(v));
            inputs.push(a);
            pre.push(z);
            a = y;
        }
        Ok(ForwardPass {
            inputs,
            pre,
            output: a,
        })
    }

    /// Batched forward pass without intermediates.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_len("network input", self.input_width(), input.ncols())?;
        let mut a = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(i);
            a = (a.dot(&layer.weights) + &layer.bias).mapv_into(|v| act.apply(v));
        }
        Ok(a)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    fn output_delta(&self, pass: &ForwardPass, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
        if upstream.dim() != pass.output.dim() {
            return Err(Error::Shape {
                context: "upstream gradient",
                expected: pass.output.len(),
                actual: upstream.len(),
            });
        }
        if !upstream.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("upstream gradient"));
        }
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_owned();
        let act = self.output;
        if act != Activation::Identity {
            Zip::from(&mut delta)
                .and(&pass.pre[last])
                .and(&pass.output)
                .for_each(|d, &z, &y| *d *= act.derivative(z, y));
        }
        Ok(delta)
    }

    /// Reverse pass for the loss whose gradient w.r.t. the batch output is
    /// `upstream`. Returns the parameter gradient (summed over rows) and the
    /// gradient w.r.t. the network input.
    pub fn backward(&self, pass: &ForwardPass, upstream: ArrayView2<f64>) -> Result<(Gradient, Array2<f64>)> {
        let mut delta = self.output_delta(pass, upstream)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let weights = pass.inputs[l].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Layer { weights, bias });
            let mut down = delta.dot(&layer.weights.t());
            if l > 0 {
                relu_mask(&mut down, &pass.pre[l - 1]);
            }
            delta = down;
        }
        grads.reverse();
        Ok((Gradient { layers: grads }, delta))
    }

    /// Gradient w.r.t. the network input only; skips the parameter gradient.
    pub fn input_gradient(&self, pass: &ForwardPass, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut delta = self.output_delta(pass, upstream)?;
        for l in (0..self.layers.len()).rev() {
            let mut down = delta.dot(&self.layers[l].weights.t());
            if l > 0 {
                relu_mask(&mut down, &pass.pre[l - 1]);
            }
            delta = down;
        }
        Ok(delta)
    }
}

fn relu_mask(delta: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(delta).and(pre).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must list at least input and output widths, all nonzero: {sizes:?}"
        )));
    }
    Ok(())
}

/// Intermediates of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// First output column, the usual scalar head.
    pub fn scalar_output(&self) -> ArrayView1<'_, f64> {
        self.output.column(0)
    }
}

/// Parameter-shaped gradient, one entry per weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradient {
            layers: net.layers.iter().map(|l| Layer::zeros(l.fan_in(), l.fan_out())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, p)| g.same_shape(p))
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Gradient,
    v: Gradient,
    t: u64,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(net: &Mlp) -> Self {
        Adam {
            m: Gradient::zeros_like(net),
            v: Gradient::zeros_like(net),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grad`. Non-finite or misshapen gradients leave the
    /// network and the moments untouched.
    pub fn step(&mut self, net: &mut Mlp, grad: &Gradient, lr: f64) -> Result<()> {
        if !grad.matches(net) || !self.m.matches(net) {
            return Err(Error::Shape {
                context: "adam gradient",
                expected: net.param_count(),
                actual: grad.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("adam gradient"));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - Self::BETA1.powi(t);
        let c2 = 1.0 - Self::BETA2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + Self::EPSILON);
        };
        for (((p, m), v), g) in net
            .layers
            .iter_mut()
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
            .zip(&grad.layers)
        {
            Zip::from(&mut p.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
        Ok(())
    }
}

/// Polyak averaging: `target <- (1 - tau) * target + tau * online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
    }
    if !target.same_shape(online) {
        return Err(Error::Shape {
            context: "soft update",
            expected: target.param_count(),
            actual: online.param_count(),
        });
    }
    let keep = 1.0 - tau;
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weights)
            .and(&o.weights)
            .for_each(|t, &o| *t = keep * *t + tau * o);
        Zip::from(&mut t.bias).and(&o.bias).for_each(|t, &o| *t = keep * *t + tau * o);
    }
    Ok(())
}

/// An online network with its optimizer state and a slowly tracking target copy.
#[derive(Debug, Clone)]
pub struct TrackedNet {
    pub online: Mlp,
    pub target: Mlp,
    pub optimizer: Adam,
}

impl TrackedNet {
    pub fn new(online: Mlp) -> Self {
        TrackedNet {
            target: online.clone(),
            optimizer: Adam::new(&online),
            online,
        }
    }

    pub fn apply(&mut self, grad: &Gradient, lr: f64) -> Result<()> {
        self.optimizer.step(&mut self.online, grad, lr)
    }

    pub fn track(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.target, &self.online, tau)
    }
}
