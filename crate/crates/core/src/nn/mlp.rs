use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Identity,
}

impl Activation {
    /// Applies the activation row-wise, in place.
    pub fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|x| x.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    row.mapv_inplace(|x| (x - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|x| x / sum);
                }
            }
        }
    }

    /// Maps `dL/d(output)` to `dL/d(pre-activation)`.
    fn backprop(self, pre: &Array2<f64>, out: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => grad_out.clone(),
            Activation::Relu => {
                let mut g = grad_out.clone();
                Zip::from(&mut g).and(pre).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                g
            }
            Activation::Sigmoid => {
                let mut g = grad_out.clone();
                Zip::from(&mut g).and(out).for_each(|g, &s| *g *= s * (1.0 - s));
                g
            }
            Activation::Tanh => {
                let mut g = grad_out.clone();
                Zip::from(&mut g).and(out).for_each(|g, &t| *g *= 1.0 - t * t);
                g
            }
            Activation::Softmax => {
                // J = diag(s) - s s^T, so J^T g = s * (g - <g, s>)
                let mut g = grad_out.clone();
                for (mut g_row, s_row) in g.rows_mut().into_iter().zip(out.rows()) {
                    let dot = g_row.dot(&s_row);
                    Zip::from(&mut g_row).and(&s_row).for_each(|g, &s| *g = s * (*g - dot));
                }
                g
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Architecture of a dense network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Hidden layers share one activation, the output layer gets its own.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(output_act);
        Self::new(sizes, acts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(NnError::InvalidSpec(
                "need at least an input and an output width".into(),
            ));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&w| w == 0) {
            return Err(NnError::InvalidSpec(format!("layer {pos} has zero width")));
        }
        if self.activations.len() != self.layer_sizes.len() - 1 {
            return Err(NnError::InvalidSpec(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.layer_sizes.len() - 1
            )));
        }
        let last = self.activations.len() - 1;
        if self.activations[..last].contains(&Activation::Softmax) {
            return Err(NnError::InvalidSpec(
                "softmax is only allowed on the output layer".into(),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn output_activation(&self) -> Activation {
        *self.activations.last().unwrap()
    }
}

/// Per-layer weights (`in x out`) and biases. Also used for gradients and
/// optimizer moments, which share the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamSet {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let weights = spec
            .layer_sizes
            .windows(2)
            .map(|w| Array2::zeros((w[0], w[1])))
            .collect();
        let biases = spec.layer_sizes[1..]
            .iter()
            .map(|&n| Array1::zeros(n))
            .collect();
        Self { weights, biases }
    }

    pub fn zeros_like(other: &ParamSet) -> Self {
        Self {
            weights: other.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: other.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.dim() == b.dim())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.dim() == b.dim())
    }

    pub fn matches_spec(&self, spec: &MlpSpec) -> bool {
        let n = spec.num_layers();
        self.weights.len() == n
            && self.biases.len() == n
            && spec.layer_sizes.windows(2).enumerate().all(|(l, w)| {
                self.weights[l].dim() == (w[0], w[1]) && self.biases[l].len() == w[1]
            })
    }

    /// Visits every scalar in a fixed order: layer by layer, weights
    /// (row-major) then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &ParamSet, alpha: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(alpha, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(alpha, b);
        }
    }
}

static NEXT_PARAMS_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_PARAMS_ID.fetch_add(1, Ordering::Relaxed)
}

/// Trainable parameters of one network.
///
/// Each mutation stamps a new identity so that a [`ForwardCache`] taken before
/// the change is rejected by [`backward`].
#[derive(Debug)]
pub struct MlpParams {
    set: ParamSet,
    id: u64,
}

impl Clone for MlpParams {
    fn clone(&self) -> Self {
        Self {
            set: self.set.clone(),
            id: fresh_id(),
        }
    }
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.set == other.set
    }
}

impl MlpParams {
    pub fn from_set(set: ParamSet) -> Self {
        Self { set, id: fresh_id() }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        Self::from_set(ParamSet::zeros(spec))
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases alike.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let mut set = ParamSet::zeros(spec);
        for (w, b) in set.weights.iter_mut().zip(set.biases.iter_mut()) {
            let bound = 1.0 / (w.nrows() as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
            b.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Self::from_set(set)
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn set_mut(&mut self) -> &mut ParamSet {
        self.id = fresh_id();
        &mut self.set
    }

    pub fn into_set(self) -> ParamSet {
        self.set
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Serialize for ParamSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let layers: Vec<LayerRepr> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| LayerRepr {
                rows: w.nrows(),
                cols: w.ncols(),
                weights: w.iter().copied().collect(),
                bias: b.to_vec(),
            })
            .collect();
        layers.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParamSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let layers = Vec::<LayerRepr>::deserialize(deserializer)?;
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for (i, l) in layers.into_iter().enumerate() {
            if l.bias.len() != l.cols {
                return Err(D::Error::custom(format!(
                    "layer {i}: bias length {} != {} columns",
                    l.bias.len(),
                    l.cols
                )));
            }
            let w = Array2::from_shape_vec((l.rows, l.cols), l.weights)
                .map_err(|e| D::Error::custom(format!("layer {i}: {e}")))?;
            weights.push(w);
            biases.push(Array1::from(l.bias));
        }
        Ok(ParamSet { weights, biases })
    }
}

impl Serialize for MlpParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.set.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MlpParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        ParamSet::deserialize(deserializer).map(MlpParams::from_set)
    }
}

/// Activation trace of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    params_id: u64,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.acts[0]
    }

    /// Pre-activation of layer `l`.
    pub fn pre_activation(&self, layer: usize) -> &Array2<f64> {
        &self.pre[layer]
    }

    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.acts[0].nrows()
    }
}

fn check_params(spec: &MlpSpec, params: &MlpParams) -> Result<()> {
    if !params.set.matches_spec(spec) {
        return Err(NnError::InvalidSpec(
            "parameter shapes do not match the spec".into(),
        ));
    }
    Ok(())
}

/// Batched forward pass; rows of `input` are samples.
pub fn forward_batch(
    spec: &MlpSpec,
    params: &MlpParams,
    input: ArrayView2<f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    check_params(spec, params)?;
    if input.ncols() != spec.input_width() {
        return Err(NnError::DimensionMismatch {
            what: "forward input",
            expected: spec.input_width(),
            got: input.ncols(),
        });
    }
    let n = spec.num_layers();
    let mut acts = Vec::with_capacity(n + 1);
    let mut pre = Vec::with_capacity(n);
    acts.push(input.to_owned());
    for l in 0..n {
        let mut z = acts[l].dot(&params.set.weights[l]);
        z += &params.set.biases[l];
        let mut a = z.clone();
        spec.activations[l].apply(&mut a);
        pre.push(z);
        acts.push(a);
    }
    let out = acts[n].clone();
    Ok((
        out,
        ForwardCache {
            params_id: params.id,
            acts,
            pre,
        },
    ))
}

/// Single-sample forward pass.
pub fn forward(spec: &MlpSpec, params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let view = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
    let (out, cache) = forward_batch(spec, params, view)?;
    Ok((out.into_raw_vec_and_offset().0, cache))
}

/// Backpropagates `output_grad` (one row per sample) through the cached pass.
///
/// Parameter gradients are summed over the batch; scale `output_grad` for a
/// mean loss. Returns `(param_grads, input_grad)`.
pub fn backward(
    spec: &MlpSpec,
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: ArrayView2<f64>,
) -> Result<(ParamSet, Array2<f64>)> {
    backward_inner(spec, params, cache, output_grad, None)
}

/// Like [`backward`], with an extra gradient entering directly at the
/// output layer's pre-activation (for penalties on logits).
pub fn backward_with_logit_grad(
    spec: &MlpSpec,
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: ArrayView2<f64>,
    logit_grad: ArrayView2<f64>,
) -> Result<(ParamSet, Array2<f64>)> {
    if logit_grad.dim() != cache.output().dim() {
        return Err(NnError::DimensionMismatch {
            what: "logit gradient",
            expected: cache.output().len(),
            got: logit_grad.len(),
        });
    }
    backward_inner(spec, params, cache, output_grad, Some(logit_grad))
}

fn backward_inner(
    spec: &MlpSpec,
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: ArrayView2<f64>,
    logit_grad: Option<ArrayView2<f64>>,
) -> Result<(ParamSet, Array2<f64>)> {
    if cache.params_id != params.id || cache.pre.len() != spec.num_layers() {
        return Err(NnError::StaleCache);
    }
    if output_grad.dim() != cache.output().dim() {
        return Err(NnError::DimensionMismatch {
            what: "output gradient",
            expected: cache.output().len(),
            got: output_grad.len(),
        });
    }
    let n = spec.num_layers();
    let mut grads = ParamSet::zeros(spec);
    let mut delta = output_grad.to_owned();
    for l in (0..n).rev() {
        let mut dz = spec.activations[l].backprop(&cache.pre[l], &cache.acts[l + 1], &delta);
        if let (Some(extra), true) = (logit_grad, l == n - 1) {
            dz += &extra;
        }
        grads.weights[l] = cache.acts[l].t().dot(&dz);
        grads.biases[l] = dz.sum_axis(Axis(0));
        delta = dz.dot(&params.set.weights[l].t());
    }
    Ok((grads, delta))
}

/// A network: architecture plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let params = MlpParams::init(&spec, rng);
        Self { spec, params }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let params = MlpParams::zeros(&spec);
        Self { spec, params }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_params(&self.spec, &self.params)
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        forward_batch(&self.spec, &self.params, input)
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        forward(&self.spec, &self.params, input).map(|(out, _)| out)
    }

    /// Forward pass without keeping a trace.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_params(&self.spec, &self.params)?;
        if input.ncols() != self.spec.input_width() {
            return Err(NnError::DimensionMismatch {
                what: "forward input",
                expected: self.spec.input_width(),
                got: input.ncols(),
            });
        }
        let mut a = input.to_owned();
        for l in 0..self.spec.num_layers() {
            let mut z = a.dot(&self.params.set.weights[l]);
            z += &self.params.set.biases[l];
            self.spec.activations[l].apply(&mut z);
            a = z;
        }
        Ok(a)
    }

    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(ParamSet, Array2<f64>)> {
        backward(&self.spec, &self.params, cache, output_grad)
    }

    pub fn backward_with_logit_grad(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
        logit_grad: ArrayView2<f64>,
    ) -> Result<(ParamSet, Array2<f64>)> {
        backward_with_logit_grad(&self.spec, &self.params, cache, output_grad, logit_grad)
    }
}
