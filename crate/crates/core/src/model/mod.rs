//! Two-headed MLP encoder.
//!
//! A shared ReLU trunk feeds a representation head (L2-normalized to `z`) and
//! an assignment head (softmax to `p`). Backpropagation is written out by
//! hand, including the Jacobian of the normalization
//! `∂z/∂u = (I − z zᵀ) / ‖u‖` and of the softmax.

mod checkpoint;
pub mod gradcheck;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, CheckpointFormat};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{l2_normalize, softmax, ProbVector, UnitVector, ZERO_NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer `y = act(W x + b)` with `W` stored row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            activation,
        }
    }

    /// Pre-activation `W x + b`.
    fn affine(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    fn activate(&self, pre: &[T]) -> Vec<T> {
        match self.activation {
            Activation::Relu => pre.iter().map(|&v| v.max(T::zero())).collect(),
            Activation::Identity => pre.to_vec(),
        }
    }

    /// Accumulates `∂W += g xᵀ`, `∂b += g` into `grad` and returns `Wᵀ g`.
    fn backprop(&self, grad: &mut Dense<T>, input: &[T], g: &[T]) -> Vec<T> {
        let mut dx = vec![T::zero(); self.in_dim];
        for (o, &go) in g.iter().enumerate() {
            if go == T::zero() {
                continue;
            }
            grad.bias[o] = grad.bias[o] + go;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] = grow[i] + go * input[i];
                dx[i] = dx[i] + go * row[i];
            }
        }
        dx
    }
}

/// Layer widths of an encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub input_dim: usize,
    /// Hidden widths of the shared ReLU trunk, possibly empty.
    pub hidden: Vec<usize>,
    /// Representation dimension `d`.
    pub rep_dim: usize,
    /// Number of clusters `K`.
    pub clusters: usize,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain([self.rep_dim, self.clusters]);
        if dims.into_iter().any(|d| d == 0) {
            return Err(Error::InvalidSpec(format!(
                "layer widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Parameters of the shared trunk and both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub trunk: Vec<Dense<T>>,
    pub rep_head: Dense<T>,
    pub assign_head: Dense<T>,
}

impl<T: Scalar> EncoderParams<T> {
    /// Builds parameters from explicit layers, checking that shapes chain.
    pub fn new(trunk: Vec<Dense<T>>, rep_head: Dense<T>, assign_head: Dense<T>) -> Result<Self> {
        let params = Self {
            trunk,
            rep_head,
            assign_head,
        };
        params.check_shapes()?;
        Ok(params)
    }

    fn check_shapes(&self) -> Result<()> {
        let mut width = self.input_dim();
        for (l, layer) in self.layers().enumerate() {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::shape(format!(
                    "layer {l} payload does not match {}x{}",
                    layer.out_dim, layer.in_dim
                )));
            }
            if layer.in_dim != width {
                return Err(Error::shape(format!(
                    "layer {l} expects {} inputs, gets {width}",
                    layer.in_dim
                )));
            }
            if l < self.trunk.len() {
                width = layer.out_dim;
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.first().unwrap_or(&self.rep_head).in_dim
    }

    pub fn rep_dim(&self) -> usize {
        self.rep_head.out_dim
    }

    pub fn clusters(&self) -> usize {
        self.assign_head.out_dim
    }

    /// Trunk layers in order, then the representation head, then the assignment head.
    pub fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.trunk.iter().chain([&self.rep_head, &self.assign_head])
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.trunk
            .iter_mut()
            .chain([&mut self.rep_head, &mut self.assign_head])
    }

    /// Same shapes, every entry zero. Used for gradient and velocity buffers.
    pub fn zeros_like(&self) -> Self {
        Self {
            trunk: self
                .trunk
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
            rep_head: Dense::zeros(
                self.rep_head.in_dim,
                self.rep_head.out_dim,
                self.rep_head.activation,
            ),
            assign_head: Dense::zeros(
                self.assign_head.in_dim,
                self.assign_head.out_dim,
                self.assign_head.activation,
            ),
        }
    }

    /// Flat parameter slices in a fixed order (weights then bias, per layer).
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }
}

/// Xavier-uniform weights, zero biases, deterministic in `seed`.
pub fn init_params<T: Scalar>(spec: &LayerSpec, seed: u64) -> Result<EncoderParams<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = |in_dim: usize, out_dim: usize, activation: Activation| {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut dense = Dense::zeros(in_dim, out_dim, activation);
        for w in &mut dense.weights {
            *w = T::lit(rng.random_range(-bound..=bound));
        }
        dense
    };
    let mut trunk = Vec::with_capacity(spec.hidden.len());
    let mut width = spec.input_dim;
    for &h in &spec.hidden {
        trunk.push(layer(width, h, Activation::Relu));
        width = h;
    }
    let rep_head = layer(width, spec.rep_dim, Activation::Identity);
    let assign_head = layer(width, spec.clusters, Activation::Identity);
    EncoderParams::new(trunk, rep_head, assign_head)
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// `inputs[l]` is the input to trunk layer `l`; the last entry feeds both heads.
    inputs: Vec<Vec<T>>,
    /// Trunk pre-activations.
    pre: Vec<Vec<T>>,
    rep_norm: T,
    pub z: UnitVector<T>,
    pub logits: Vec<T>,
    pub p: ProbVector<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Output of the shared trunk.
    pub fn features(&self) -> &[T] {
        self.inputs.last().expect("trace always holds the input")
    }

    /// Trunk pre-activations, one vector per layer.
    pub fn pre_activations(&self) -> &[Vec<T>] {
        &self.pre
    }
}

pub fn forward<T: Scalar>(params: &EncoderParams<T>, x: &[T]) -> Result<ForwardTrace<T>> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "input has dim {}, encoder expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(params.trunk.len() + 1);
    let mut pre = Vec::with_capacity(params.trunk.len());
    inputs.push(x.to_vec());
    for layer in &params.trunk {
        let a = layer.affine(inputs.last().unwrap());
        inputs.push(layer.activate(&a));
        pre.push(a);
    }
    let h = inputs.last().unwrap();
    let u = params.rep_head.affine(h);
    let rep_norm = u.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
    let z = match l2_normalize(&u) {
        Ok(z) => z,
        // A dead trunk can zero the representation; fall back to a fixed
        // direction that carries no gradient.
        Err(_) if rep_norm.is_finite() => {
            let mut e = vec![T::zero(); u.len()];
            e[0] = T::one();
            UnitVector::new(e)?
        }
        Err(e) => return Err(e),
    };
    let logits = params.assign_head.affine(h);
    let p = softmax(&logits);
    Ok(ForwardTrace {
        inputs,
        pre,
        rep_norm,
        z,
        logits,
        p,
    })
}

/// Reverse-mode gradients of a loss whose upstream gradients with respect to
/// each trace's `z` and `p` are `dz` and `dp`, summed over the batch in order.
pub fn backward<T: Scalar>(
    params: &EncoderParams<T>,
    traces: &[ForwardTrace<T>],
    dz: &[Vec<T>],
    dp: &[Vec<T>],
) -> Result<EncoderParams<T>> {
    if traces.len() != dz.len() || traces.len() != dp.len() {
        return Err(Error::shape(format!(
            "{} traces, {} dz rows, {} dp rows",
            traces.len(),
            dz.len(),
            dp.len()
        )));
    }
    let mut grads = params.zeros_like();
    for ((trace, dz), dp) in traces.iter().zip(dz).zip(dp) {
        if dz.len() != params.rep_dim() || dp.len() != params.clusters() {
            return Err(Error::shape(
                "upstream gradient width does not match the heads",
            ));
        }
        backward_one(params, &mut grads, trace, dz, dp);
    }
    Ok(grads)
}

fn backward_one<T: Scalar>(
    params: &EncoderParams<T>,
    grads: &mut EncoderParams<T>,
    trace: &ForwardTrace<T>,
    dz: &[T],
    dp: &[T],
) {
    let z = trace.z.as_slice();
    let z_dot = z
        .iter()
        .zip(dz)
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    let du: Vec<T> = if trace.rep_norm > T::lit(ZERO_NORM_EPS) {
        dz.iter()
            .zip(z)
            .map(|(&g, &zi)| (g - zi * z_dot) / trace.rep_norm)
            .collect()
    } else {
        vec![T::zero(); z.len()]
    };

    let p = trace.p.as_slice();
    let p_dot = p
        .iter()
        .zip(dp)
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    let dlogits: Vec<T> = p.iter().zip(dp).map(|(&pi, &g)| pi * (g - p_dot)).collect();

    let h = trace.features();
    let mut dh = params.rep_head.backprop(&mut grads.rep_head, h, &du);
    let dh_assign = params
        .assign_head
        .backprop(&mut grads.assign_head, h, &dlogits);
    for (a, b) in dh.iter_mut().zip(dh_assign) {
        *a = *a + b;
    }

    for (l, layer) in params.trunk.iter().enumerate().rev() {
        if layer.activation == Activation::Relu {
            for (g, &a) in dh.iter_mut().zip(&trace.pre[l]) {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        dh = layer.backprop(&mut grads.trunk[l], &trace.inputs[l], &dh);
    }
}
