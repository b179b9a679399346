//! Fully connected networks with ReLU hidden layers, batched backprop and
//! Adam.

mod dealias;

pub use dealias::{train_dealiaser, Dealiaser, DealiaserConfig};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KQN1";

/// One affine layer; `weights` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    fn params(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Multilayer perceptron: ReLU between layers, identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

/// Parameter-shaped gradient (or moment) buffers.
pub type Gradients<T> = Mlp<T>;

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(sizes: &[usize], rng: &mut dyn RngCore) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = T::of(rng.random_range(-limit..=limit));
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes {sizes:?} need at least two positive entries"
            )));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::shape(
                    format!("bias of length {} in layer {i}", l.fan_out()),
                    l.bias.len(),
                ));
            }
        }
        for p in layers.windows(2) {
            if p[0].fan_out() != p[1].fan_in() {
                return Err(Error::shape(p[0].fan_out(), p[1].fan_in()));
            }
        }
        Ok(Self { layers })
    }

    /// Same shapes, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].fan_in())
            .chain(self.layers.iter().map(|l| l.fan_out()))
            .collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.params_mut())
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.sizes() != other.sizes() {
            return Err(Error::shape(
                format!("{:?}", self.sizes()),
                format!("{:?}", other.sizes()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        if input.len() != self.input_size() {
            return Err(Error::shape(self.input_size(), input.len()));
        }
        let mut a = Array1::from(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            a = l.weights.dot(&a) + &l.bias;
            if i < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a.to_vec())
    }

    /// Row-wise forward pass over a `batch x in` matrix.
    pub fn forward_batch(&self, inputs: &Array2<T>) -> Result<Array2<T>> {
        Ok(self.activations(inputs)?.pop().expect("non-empty"))
    }

    /// Inputs followed by the output of every layer (post-ReLU for hidden ones).
    fn activations(&self, inputs: &Array2<T>) -> Result<Vec<Array2<T>>> {
        if inputs.ncols() != self.input_size() {
            return Err(Error::shape(self.input_size(), inputs.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.weights.t());
            z.rows_mut()
                .into_iter()
                .for_each(|mut r| r.zip_mut_with(&l.bias, |a, &b| *a = *a + b));
            if i < last {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Gradient of `sum_i <output_grad_i, f(input_i)>` with respect to every
    /// parameter.
    pub fn backward_batch(
        &self,
        inputs: &Array2<T>,
        output_grads: &Array2<T>,
    ) -> Result<Gradients<T>> {
        let acts = self.activations(inputs)?;
        if output_grads.dim() != (inputs.nrows(), self.output_size()) {
            return Err(Error::shape(
                format!("{}x{}", inputs.nrows(), self.output_size()),
                format!("{}x{}", output_grads.nrows(), output_grads.ncols()),
            ));
        }
        Ok(self.backprop(&acts, output_grads.to_owned()))
    }

    /// Forward pass, then backpropagation of `grad_fn(outputs)`.
    pub fn forward_backward(
        &self,
        inputs: &Array2<T>,
        grad_fn: impl FnOnce(&Array2<T>) -> Array2<T>,
    ) -> Result<(Array2<T>, Gradients<T>)> {
        let acts = self.activations(inputs)?;
        let outputs = acts.last().expect("non-empty");
        let grads = grad_fn(outputs);
        if grads.dim() != outputs.dim() {
            return Err(Error::shape(
                format!("{:?}", outputs.dim()),
                format!("{:?}", grads.dim()),
            ));
        }
        let gradients = self.backprop(&acts, grads);
        Ok((acts.last().expect("non-empty").clone(), gradients))
    }

    fn backprop(&self, acts: &[Array2<T>], mut delta: Array2<T>) -> Gradients<T> {
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let prev = &acts[i];
            let weights = delta.t().dot(prev);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut d = delta.dot(&l.weights);
                // ReLU output is zero exactly where the subgradient is taken as zero.
                ndarray::Zip::from(&mut d).and(prev).for_each(|g, &a| {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                });
                delta = d;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    /// Single-sample version of [`Mlp::backward_batch`].
    pub fn backward(&self, input: &[T], output_grad: &[T]) -> Result<Gradients<T>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::shape(self.input_size(), e))?;
        let g = Array2::from_shape_vec((1, output_grad.len()), output_grad.to_vec())
            .map_err(|e| Error::shape(self.output_size(), e))?;
        self.backward_batch(&x, &g)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        self.same_shape(other)?;
        for (p, &g) in self.params_mut().zip(other.params()) {
            *p = *p + scale * g;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Copies parameters into another precision.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: l.weights.mapv(|v| U::of(v.as_f64())),
                    bias: l.bias.mapv(|v| U::of(v.as_f64())),
                })
                .collect(),
        }
    }

    /// Writes the `KQN1` checkpoint: magic, `u32` count of layer sizes, the
    /// `u32` sizes, then every layer's row-major weights followed by its
    /// biases as little-endian `f64`.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let sizes = self.sizes();
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for s in sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for p in self.params() {
            w.write_all(&p.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut offset = 0u64;
        let mut take = |r: &mut dyn Read, buf: &mut [u8], what: &str| -> Result<()> {
            r.read_exact(buf).map_err(|_| Error::Format {
                offset,
                message: format!("truncated {what}"),
            })?;
            offset += buf.len() as u64;
            Ok(())
        };
        let mut magic = [0u8; 4];
        take(&mut r, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        }
        let mut word = [0u8; 4];
        take(&mut r, &mut word, "layer count")?;
        let count = u32::from_le_bytes(word) as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format {
                offset: 4,
                message: format!("implausible layer count {count}"),
            });
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            take(&mut r, &mut word, "layer size")?;
            sizes.push(u32::from_le_bytes(word) as usize);
        }
        let mut net = Self::zeros(&sizes).map_err(|e| Error::Format {
            offset: 8,
            message: e.to_string(),
        })?;
        let mut dword = [0u8; 8];
        for p in net.params_mut() {
            take(&mut r, &mut dword, "parameters")?;
            *p = T::of(f64::from_le_bytes(dword));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one network.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Mlp<T>,
    second: Mlp<T>,
    steps: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Mlp<T>, config: AdamConfig) -> Self {
        Self {
            config,
            first: net.zeros_like(),
            second: net.zeros_like(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

fn contiguous<T, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> &[T] {
    a.as_slice_memory_order()
        .expect("owned arrays are contiguous")
}

fn contiguous_mut<T, D: ndarray::Dimension>(a: &mut ndarray::Array<T, D>) -> &mut [T] {
    a.as_slice_memory_order_mut()
        .expect("owned arrays are contiguous")
}

/// One bias-corrected Adam update of `net` along `grads`.
pub fn adam_step<T: Scalar>(
    net: &mut Mlp<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    net.same_shape(grads)?;
    net.same_shape(&state.first)?;
    state.steps += 1;
    let c = state.config;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let one = T::one();
    let correct1 = one - T::of(c.beta1.powi(state.steps as i32));
    let correct2 = one - T::of(c.beta2.powi(state.steps as i32));
    let (lr, eps) = (T::of(c.learning_rate), T::of(c.eps));
    let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p = *p - lr * (*m / correct1) / ((*v / correct2).sqrt() + eps);
        }
    };
    let layers = net.layers.iter_mut().zip(&grads.layers);
    let moments = state
        .first
        .layers
        .iter_mut()
        .zip(state.second.layers.iter_mut());
    for ((l, g), (m, v)) in layers.zip(moments) {
        update(
            contiguous_mut(&mut l.weights),
            contiguous(&g.weights),
            contiguous_mut(&mut m.weights),
            contiguous_mut(&mut v.weights),
        );
        update(
            contiguous_mut(&mut l.bias),
            contiguous(&g.bias),
            contiguous_mut(&mut m.bias),
            contiguous_mut(&mut v.bias),
        );
    }
    Ok(())
}
