//! Architecture builders for the reconstruction networks and the CGAN
//! discriminator.
//!
//! Every reconstruction network maps the measured-statistics vector to `2 4^N`
//! raw reals, reads them as a complex `T`, and ends with the density-matrix
//! and statistics layers. Widths scale with `N` so that at `N = 6` the layer
//! table of each architecture is reproduced parameter for parameter.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use qst_core::seed::rng_for;
use qst_core::{BasisSet, Method};
use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::graph::{ConvGeometry, Graph, ParamId, Tensor, Var};
use crate::params::ParamStore;
use crate::physical::{self, StatisticsPlan};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const MAX_NETWORK_QUBITS: usize = 6;
const CONV_KERNEL: usize = 4;
/// Transpose-conv channel widths at `N = 6`; scaled by `2^N / 64` below.
const CONV_CHANNELS: [usize; 3] = [64, 64, 32];
const RNN_UNITS: usize = 50;
const DISCRIMINATOR_WIDTHS: [usize; 4] = [128, 128, 64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "FCN")]
    Fcn,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "CGAN")]
    Cgan,
    #[serde(rename = "RNN")]
    Rnn,
    #[serde(rename = "RBM")]
    Rbm,
    #[serde(rename = "Transformer")]
    Transformer,
    #[serde(rename = "SVAE")]
    Svae,
}

impl Architecture {
    pub const SUPPORTED: [Architecture; 4] = [Self::Fcn, Self::Cnn, Self::Cgan, Self::Rnn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fcn => "FCN",
            Self::Cnn => "CNN",
            Self::Cgan => "CGAN",
            Self::Rnn => "RNN",
            Self::Rbm => "RBM",
            Self::Transformer => "Transformer",
            Self::Svae => "SVAE",
        }
    }

    pub fn is_supported(self) -> bool {
        Self::SUPPORTED.contains(&self)
    }

    pub fn ensure_supported(self) -> Result<()> {
        if self.is_supported() {
            Ok(())
        } else {
            Err(NeuralError::OutOfScope(self.name().to_string()))
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = NeuralError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FCN" => Ok(Self::Fcn),
            "CNN" => Ok(Self::Cnn),
            "CGAN" => Ok(Self::Cgan),
            "RNN" => Ok(Self::Rnn),
            "RBM" => Ok(Self::Rbm),
            "TRANSFORMER" => Ok(Self::Transformer),
            "SVAE" => Ok(Self::Svae),
            other => Err(NeuralError::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// One row of a network's layer table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    LeakyRelu {
        slope: f64,
    },
    Reshape {
        shape: Vec<usize>,
    },
    ConvTranspose2d {
        geometry: ConvGeometry,
    },
    InstanceNorm {
        channels: usize,
    },
    /// Runs over the sequence; only the last layer of a stack drops the
    /// intermediate states.
    SimpleRnn {
        input_features: usize,
        units: usize,
        return_sequences: bool,
    },
    /// `[C, H, W] -> [H, W, C]`, so the two channels end up interleaved as
    /// real/imaginary pairs.
    ChannelsLast,
    DensityMatrix {
        dim: usize,
    },
    Statistics {
        method: Method,
        outputs: usize,
    },
}

impl LayerSpec {
    pub fn parameter_count(&self) -> usize {
        match self {
            Self::Dense {
                in_features,
                out_features,
                bias,
            } => in_features * out_features + if *bias { *out_features } else { 0 },
            Self::ConvTranspose2d { geometry: g } => g.c_in * g.c_out * g.kernel * g.kernel,
            Self::InstanceNorm { channels } => 2 * channels,
            Self::SimpleRnn {
                input_features, units, ..
            } => input_features * units + units * units + units,
            _ => 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Dense { .. } => "Dense",
            Self::LeakyRelu { .. } => "LeakyReLU",
            Self::Reshape { .. } => "Reshape",
            Self::ConvTranspose2d { .. } => "Conv2DTranspose",
            Self::InstanceNorm { .. } => "InstanceNormalization",
            Self::SimpleRnn { .. } => "SimpleRNN",
            Self::ChannelsLast => "ChannelsLast",
            Self::DensityMatrix { .. } => "DensityMatrix",
            Self::Statistics { .. } => "Statistics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Measured statistics in, reconstructed state and statistics out.
    Reconstruction,
    /// `[condition, candidate]` statistics in, one logit out.
    Discriminator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub role: Role,
    pub n_qubits: usize,
    pub method: Method,
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub parameter_count: usize,
    pub init_seed: u64,
    pub options: BuildOptions,
}

/// Architectural switches beyond the defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildOptions {
    /// Forces every Dense layer to carry (true) or omit (false) a bias;
    /// `None` uses the per-layer defaults of the layer tables.
    #[serde(default)]
    pub use_bias: Option<bool>,
}

/// Layer table plus trained or freshly initialized parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub bases: Option<BasisSet>,
    pub params: ParamStore,
    layer_params: Vec<Vec<ParamId>>,
    #[serde(skip)]
    plan: Option<Arc<StatisticsPlan>>,
}

/// Handles into a forward graph.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Pre-physicality raw output (reconstruction) or the logit (discriminator).
    pub raw: Var,
    pub rho: Option<Var>,
    pub stats: Option<Var>,
}

/// Every matrix product of inference goes through this hook; `w` is the
/// `[n_in, n_out]` row-major weight and the result is `x w`.
pub trait LinearBackend {
    fn matvec(&mut self, key: &str, w: &[f64], n_in: usize, n_out: usize, x: &[f64]) -> Result<Vec<f64>>;
}

/// Exact floating-point products.
#[derive(Debug, Default, Clone, Copy)]
pub struct FloatBackend;

impl LinearBackend for FloatBackend {
    fn matvec(&mut self, _key: &str, w: &[f64], n_in: usize, n_out: usize, x: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(w.len(), n_in * n_out);
        let mut y = vec![0.0; n_out];
        for (p, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, wv) in y.iter_mut().zip(&w[p * n_out..(p + 1) * n_out]) {
                *o += xv * wv;
            }
        }
        Ok(y)
    }
}

/// Result of a gradient-free forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub raw: Vec<f64>,
    pub rho: Option<Vec<f64>>,
    pub stats: Option<Vec<f64>>,
}

fn input_dim_for(n_qubits: usize, method: Method, n_bases: usize) -> usize {
    match method {
        Method::M1 => n_bases,
        Method::M2 => n_bases << n_qubits,
    }
}

struct Builder {
    layers: Vec<LayerSpec>,
    layer_params: Vec<Vec<ParamId>>,
    params: ParamStore,
    rng: rand_chacha::ChaCha8Rng,
    use_bias: Option<bool>,
    attempt: u64,
}

/// Half-width of the uniform draw for additive offsets after a reset.
const REINIT_OFFSET: f64 = 0.1;

impl Builder {
    fn new(seed: u64, attempt: u64, use_bias: Option<bool>) -> Self {
        Self {
            layers: Vec::new(),
            layer_params: Vec::new(),
            params: ParamStore::new(),
            rng: rng_for(seed, "init", attempt),
            use_bias,
            attempt,
        }
    }

    /// Biases and norm shifts start at zero. A re-initialization draws them
    /// instead: with an all-zero input, zero offsets would reproduce the
    /// same vanishing output on every attempt.
    fn offset(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        if self.attempt == 0 {
            return self.params.zeros(name, shape);
        }
        let n = shape.iter().product();
        let data = Uniform::new_inclusive(-REINIT_OFFSET, REINIT_OFFSET).sample_iter(&mut self.rng).take(n).collect();
        self.params.push(name, shape, data)
    }

    fn tag(&self) -> String {
        format!("layer{}", self.layers.len())
    }

    fn push(&mut self, spec: LayerSpec, ids: Vec<ParamId>) {
        self.layers.push(spec);
        self.layer_params.push(ids);
    }

    fn dense(&mut self, n_in: usize, n_out: usize, default_bias: bool) {
        let bias = self.use_bias.unwrap_or(default_bias);
        let tag = self.tag();
        let mut ids = vec![self.params.glorot(format!("{tag}.kernel"), vec![n_in, n_out], n_in, n_out, &mut self.rng)];
        if bias {
            ids.push(self.offset(format!("{tag}.bias"), vec![n_out]));
        }
        self.push(
            LayerSpec::Dense {
                in_features: n_in,
                out_features: n_out,
                bias,
            },
            ids,
        );
    }

    fn leaky(&mut self) {
        self.push(LayerSpec::LeakyRelu { slope: LEAKY_SLOPE }, vec![]);
    }

    fn conv(&mut self, geometry: ConvGeometry) {
        let tag = self.tag();
        let kk = geometry.kernel * geometry.kernel;
        let id = self.params.glorot(
            format!("{tag}.kernel"),
            geometry.kernel_shape().to_vec(),
            geometry.c_in * kk,
            geometry.c_out * kk,
            &mut self.rng,
        );
        self.push(LayerSpec::ConvTranspose2d { geometry }, vec![id]);
    }

    fn instance_norm(&mut self, channels: usize) {
        let tag = self.tag();
        let gamma = self.params.filled(format!("{tag}.gamma"), vec![channels], 1.0);
        let beta = self.offset(format!("{tag}.beta"), vec![channels]);
        self.push(LayerSpec::InstanceNorm { channels }, vec![gamma, beta]);
    }

    fn rnn(&mut self, n_in: usize, units: usize, return_sequences: bool) {
        let tag = self.tag();
        let wx = self.params.glorot(format!("{tag}.kernel"), vec![n_in, units], n_in, units, &mut self.rng);
        let wh = self.params.glorot(format!("{tag}.recurrent_kernel"), vec![units, units], units, units, &mut self.rng);
        let b = self.offset(format!("{tag}.bias"), vec![units]);
        self.push(
            LayerSpec::SimpleRnn {
                input_features: n_in,
                units,
                return_sequences,
            },
            vec![wx, wh, b],
        );
    }

    /// Final head shared by every reconstruction network.
    fn physical(&mut self, n_qubits: usize, method: Method, outputs: usize) {
        let d = 1 << n_qubits;
        self.push(LayerSpec::DensityMatrix { dim: d }, vec![]);
        self.push(LayerSpec::Statistics { method, outputs }, vec![]);
    }
}

/// Scaled transpose-conv width, at least 4 channels.
fn conv_width(base: usize, n_qubits: usize) -> usize {
    (base << n_qubits).div_euclid(64).max(4)
}

/// Builds a reconstruction network for one basis set. `CGAN` builds its
/// generator, which has the CNN layout.
pub fn build_network(
    architecture: Architecture,
    n_qubits: usize,
    method: Method,
    bases: &BasisSet,
    seed: u64,
    options: BuildOptions,
) -> Result<Network> {
    build_attempt(architecture, n_qubits, method, bases, seed, 0, options)
}

pub(crate) fn build_attempt(
    architecture: Architecture,
    n_qubits: usize,
    method: Method,
    bases: &BasisSet,
    seed: u64,
    attempt: u64,
    options: BuildOptions,
) -> Result<Network> {
    architecture.ensure_supported()?;
    if n_qubits == 0 || n_qubits > MAX_NETWORK_QUBITS {
        return Err(NeuralError::Config(format!(
            "networks support 1..={MAX_NETWORK_QUBITS} qubits, got {n_qubits}"
        )));
    }
    if bases.n_qubits() != n_qubits {
        return Err(NeuralError::Config(format!(
            "basis set is on {} qubits, network on {n_qubits}",
            bases.n_qubits()
        )));
    }
    if bases.is_empty() {
        return Err(NeuralError::Config("empty basis set".into()));
    }
    let d = 1usize << n_qubits;
    let dd = d * d;
    let input_dim = input_dim_for(n_qubits, method, bases.len());
    let plan = StatisticsPlan::new(bases, method);
    let mut b = Builder::new(seed, attempt, options.use_bias);

    match architecture {
        Architecture::Fcn => {
            let widths = [dd / 2, dd / 2, dd, dd, 2 * dd];
            let mut n_in = input_dim;
            for (k, &w) in widths.iter().enumerate() {
                b.dense(n_in, w, k > 0);
                if k + 1 < widths.len() {
                    b.leaky();
                }
                n_in = w;
            }
            b.push(LayerSpec::Reshape { shape: vec![d, d, 2] }, vec![]);
        }
        Architecture::Cnn | Architecture::Cgan => {
            let h = (d / 2).max(1);
            let stride = d / h;
            b.dense(input_dim, 2 * h * h, false);
            b.leaky();
            b.push(LayerSpec::Reshape { shape: vec![2, h, h] }, vec![]);
            let [c1, c2, c3] = CONV_CHANNELS.map(|c| conv_width(c, n_qubits));
            let geom = |c_in, c_out, stride, size| ConvGeometry {
                c_in,
                c_out,
                kernel: CONV_KERNEL,
                stride,
                h_in: size,
                w_in: size,
            };
            b.conv(geom(2, c1, stride, h));
            b.instance_norm(c1);
            b.leaky();
            b.conv(geom(c1, c2, 1, d));
            b.instance_norm(c2);
            b.leaky();
            b.conv(geom(c2, c3, 1, d));
            b.conv(geom(c3, 2, 1, d));
            b.push(LayerSpec::ChannelsLast, vec![]);
        }
        Architecture::Rnn => {
            b.push(LayerSpec::Reshape { shape: vec![input_dim, 1] }, vec![]);
            b.rnn(1, RNN_UNITS, true);
            b.rnn(RNN_UNITS, RNN_UNITS, false);
            b.dense(RNN_UNITS, 2 * dd, true);
            b.push(LayerSpec::Reshape { shape: vec![d, d, 2] }, vec![]);
        }
        _ => unreachable!("checked by ensure_supported"),
    }
    b.physical(n_qubits, method, plan.output_len());

    let parameter_count = b.layers.iter().map(LayerSpec::parameter_count).sum();
    debug_assert_eq!(parameter_count, b.params.count());
    Ok(Network {
        spec: NetworkSpec {
            architecture,
            role: Role::Reconstruction,
            n_qubits,
            method,
            input_dim,
            layers: b.layers,
            parameter_count,
            init_seed: seed,
            options,
        },
        bases: Some(bases.clone()),
        params: b.params,
        layer_params: b.layer_params,
        plan: Some(Arc::new(plan)),
    })
}

/// CGAN discriminator over `[condition, candidate]` statistics. The head is
/// a single zero-initialized unit, so an untrained discriminator outputs
/// exactly 0.5.
pub fn build_discriminator(generator: &NetworkSpec, seed: u64, options: BuildOptions) -> Result<Network> {
    let input_dim = 2 * generator.input_dim;
    let mut b = Builder::new(seed, 0, options.use_bias);
    let mut n_in = input_dim;
    for &w in &DISCRIMINATOR_WIDTHS {
        b.dense(n_in, w, true);
        b.leaky();
        n_in = w;
    }
    let tag = b.tag();
    let w = b.params.zeros(format!("{tag}.kernel"), vec![n_in, 1]);
    let bias = b.params.zeros(format!("{tag}.bias"), vec![1]);
    b.push(
        LayerSpec::Dense {
            in_features: n_in,
            out_features: 1,
            bias: true,
        },
        vec![w, bias],
    );
    let parameter_count = b.layers.iter().map(LayerSpec::parameter_count).sum();
    Ok(Network {
        spec: NetworkSpec {
            architecture: Architecture::Cgan,
            role: Role::Discriminator,
            n_qubits: generator.n_qubits,
            method: generator.method,
            input_dim,
            layers: b.layers,
            parameter_count,
            init_seed: seed,
            options,
        },
        bases: None,
        params: b.params,
        layer_params: b.layer_params,
        plan: None,
    })
}

impl Network {
    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count
    }

    pub fn plan(&self) -> Result<&Arc<StatisticsPlan>> {
        self.plan
            .as_ref()
            .ok_or_else(|| NeuralError::Config("network has no statistics layer".into()))
    }

    /// Rebuilds derived state after deserialization and checks the
    /// parameter tensors against the layer table.
    pub fn restore(mut self) -> Result<Self> {
        if self.layer_params.len() != self.spec.layers.len() {
            return Err(NeuralError::Config("layer/parameter table length mismatch".into()));
        }
        let mut expected = 0;
        for (spec, ids) in self.spec.layers.iter().zip(&self.layer_params) {
            let have: usize = ids
                .iter()
                .map(|id| self.params.iter().nth(id.0).map(|t| t.data.len()).unwrap_or(usize::MAX / 4))
                .sum();
            if have != spec.parameter_count() {
                return Err(NeuralError::Config(format!("parameters of {} layer do not match its shape", spec.kind())));
            }
            expected += have;
        }
        if expected != self.spec.parameter_count {
            return Err(NeuralError::Config("parameter count mismatch".into()));
        }
        if let Some(bases) = &self.bases {
            let bases = BasisSet::new(bases.n_qubits(), bases.strings().to_vec())?;
            self.plan = Some(Arc::new(StatisticsPlan::new(&bases, self.spec.method)));
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Network =
            serde_json::from_str(text).map_err(|e| NeuralError::Config(format!("network file: {e}")))?;
        net.restore()
    }

    fn leaf<'p>(&'p self, g: &mut Graph<'p>, id: ParamId, trainable: bool) -> Var {
        let t = self.params.get(id);
        if trainable {
            g.param(id, &t.shape, &t.data)
        } else {
            g.frozen(&t.shape, &t.data)
        }
    }

    /// Records the forward pass on `g`. With `trainable = false` the
    /// parameters are constants, so gradients stop at this network.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, input: Var, trainable: bool) -> Result<ForwardVars> {
        if g.value(input).len() != self.spec.input_dim {
            return Err(crate::error::shape_err("network input", g.shape(input), &[1, self.spec.input_dim]));
        }
        let mut x = input;
        let mut rho = None;
        let mut stats = None;
        let mut raw = None;
        for (spec, ids) in self.spec.layers.iter().zip(&self.layer_params) {
            x = match spec {
                LayerSpec::Dense { in_features, .. } => {
                    let w = self.leaf(g, ids[0], trainable);
                    let row = g.reshape(x, &[1, *in_features])?;
                    let y = g.matmul(row, w)?;
                    match ids.get(1) {
                        Some(&bid) => {
                            let bv = self.leaf(g, bid, trainable);
                            g.add_bias(y, bv)?
                        }
                        None => y,
                    }
                }
                LayerSpec::LeakyRelu { slope } => g.leaky_relu(x, *slope),
                LayerSpec::Reshape { shape } => g.reshape(x, shape)?,
                LayerSpec::ConvTranspose2d { geometry } => {
                    let w = self.leaf(g, ids[0], trainable);
                    g.conv2d_transpose(x, w, *geometry)?
                }
                LayerSpec::InstanceNorm { .. } => {
                    let gamma = self.leaf(g, ids[0], trainable);
                    let beta = self.leaf(g, ids[1], trainable);
                    g.instance_norm(x, gamma, beta)?
                }
                LayerSpec::SimpleRnn {
                    input_features,
                    units,
                    return_sequences,
                } => {
                    let wx = self.leaf(g, ids[0], trainable);
                    let wh = self.leaf(g, ids[1], trainable);
                    let b = self.leaf(g, ids[2], trainable);
                    let steps = g.value(x).len() / input_features;
                    let seq = g.reshape(x, &[steps, *input_features])?;
                    let mut h = g.constant(Tensor::zeros(vec![1, *units]));
                    let mut outs = Vec::with_capacity(steps);
                    for t in 0..steps {
                        let xt = g.slice_row(seq, t)?;
                        h = g.rnn_cell(xt, h, wx, wh, b)?;
                        if *return_sequences {
                            outs.push(h);
                        }
                    }
                    if *return_sequences {
                        let cat = g.concat(&outs);
                        g.reshape(cat, &[steps, *units])?
                    } else {
                        h
                    }
                }
                LayerSpec::ChannelsLast => g.channels_last(x)?,
                LayerSpec::DensityMatrix { .. } => {
                    raw = Some(x);
                    let r = g.density_matrix(x)?;
                    rho = Some(r);
                    r
                }
                LayerSpec::Statistics { .. } => {
                    let s = g.statistics(x, Arc::clone(self.plan()?))?;
                    stats = Some(s);
                    s
                }
            };
        }
        Ok(ForwardVars {
            raw: raw.unwrap_or(x),
            rho,
            stats,
        })
    }

    /// Gradient-free forward pass with every matrix product routed through
    /// `backend`. Transpose convolutions are lowered to dense matrices.
    pub fn infer(&self, input: &[f64], backend: &mut dyn LinearBackend) -> Result<Inference> {
        if input.len() != self.spec.input_dim {
            return Err(crate::error::shape_err("network input", &[input.len()], &[self.spec.input_dim]));
        }
        let mut x = input.to_vec();
        let mut shape = vec![1, input.len()];
        let mut raw = None;
        let mut rho = None;
        let mut stats = None;
        for (k, (spec, ids)) in self.spec.layers.iter().zip(&self.layer_params).enumerate() {
            match spec {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                    ..
                } => {
                    let w = &self.params.get(ids[0]).data;
                    let mut y = backend.matvec(&format!("layer{k}.kernel"), w, *in_features, *out_features, &x)?;
                    if let Some(&bid) = ids.get(1) {
                        y.iter_mut().zip(&self.params.get(bid).data).for_each(|(a, b)| *a += b);
                    }
                    x = y;
                    shape = vec![1, *out_features];
                }
                LayerSpec::LeakyRelu { slope } => {
                    x.iter_mut().for_each(|v| {
                        if *v < 0.0 {
                            *v *= slope
                        }
                    });
                }
                LayerSpec::Reshape { shape: s } => shape = s.clone(),
                LayerSpec::ConvTranspose2d { geometry } => {
                    let lowered = geometry.lower(&self.params.get(ids[0]).data);
                    let n_in = x.len();
                    let n_out = geometry.output_shape().iter().product();
                    x = backend.matvec(&format!("layer{k}.kernel"), &lowered, n_in, n_out, &x)?;
                    shape = geometry.output_shape().to_vec();
                }
                LayerSpec::InstanceNorm { channels } => {
                    let gamma = &self.params.get(ids[0]).data;
                    let beta = &self.params.get(ids[1]).data;
                    instance_norm_inplace(&mut x, *channels, gamma, beta);
                }
                LayerSpec::SimpleRnn {
                    input_features,
                    units,
                    return_sequences,
                } => {
                    let wx = &self.params.get(ids[0]).data;
                    let wh = &self.params.get(ids[1]).data;
                    let b = &self.params.get(ids[2]).data;
                    let steps = x.len() / input_features;
                    let mut h = vec![0.0; *units];
                    let mut seq = Vec::new();
                    for t in 0..steps {
                        let xt = &x[t * input_features..(t + 1) * input_features];
                        let a = backend.matvec(&format!("layer{k}.kernel"), wx, *input_features, *units, xt)?;
                        let r = backend.matvec(&format!("layer{k}.recurrent_kernel"), wh, *units, *units, &h)?;
                        h = (0..*units).map(|u| (a[u] + r[u] + b[u]).tanh()).collect();
                        if *return_sequences {
                            seq.extend_from_slice(&h);
                        }
                    }
                    if *return_sequences {
                        x = seq;
                        shape = vec![steps, *units];
                    } else {
                        x = h;
                        shape = vec![1, *units];
                    }
                }
                LayerSpec::ChannelsLast => {
                    let (c, hw) = (shape[0], shape[1] * shape[2]);
                    let mut out = vec![0.0; x.len()];
                    for ch in 0..c {
                        for p in 0..hw {
                            out[p * c + ch] = x[ch * hw + p];
                        }
                    }
                    x = out;
                    shape = vec![shape[1], shape[2], c];
                }
                LayerSpec::DensityMatrix { dim } => {
                    raw = Some(x.clone());
                    x = physical::density_forward(&x, *dim)?.0;
                    rho = Some(x.clone());
                }
                LayerSpec::Statistics { .. } => {
                    x = self.plan()?.forward(&x);
                    stats = Some(x.clone());
                }
            }
        }
        Ok(Inference {
            raw: raw.unwrap_or(x),
            rho,
            stats,
        })
    }

    pub fn layer_param_ids(&self) -> &[Vec<ParamId>] {
        &self.layer_params
    }
}

fn instance_norm_inplace(x: &mut [f64], channels: usize, gamma: &[f64], beta: &[f64]) {
    let hw = x.len() / channels;
    for ch in 0..channels {
        let xs = &mut x[ch * hw..(ch + 1) * hw];
        let mean = xs.iter().sum::<f64>() / hw as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
        let is = 1.0 / (var + crate::graph::INSTANCE_NORM_EPS).sqrt();
        for v in xs.iter_mut() {
            *v = gamma[ch] * (*v - mean) * is + beta[ch];
        }
    }
}
