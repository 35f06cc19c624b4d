//! The network: 3D-conv stem, parallel spectral/spatial mixers, depthwise
//! attention, global pooling and a linear head.
//!
//! Parameters live in a [`Model`] as named tensors in a fixed order decided by
//! the [`ModelConfig`]. A forward pass binds them onto a [`Graph`] (as
//! trainable leaves or as constants) and runs the stages on the bound
//! [`ModelVars`].

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{MixerActivation, ModelConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Element = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Shape and Glorot fans of one parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `(fan_in, fan_out)` for weights, `None` for zero-initialised biases.
    pub fans: Option<(usize, usize)>,
}

impl ParamSpec {
    fn weight(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name,
            shape,
            fans: Some((fan_in, fan_out)),
        }
    }

    fn bias(name: String, len: usize) -> Self {
        Self {
            name,
            shape: vec![len],
            fans: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered parameter list implied by a configuration.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (f1, d, h, p, t) = (cfg.stem_filters, cfg.channels, cfg.hidden, cfg.pca_dims, cfg.tokens());
    let mut specs = vec![
        ParamSpec::weight("stem.conv1.kernel".into(), vec![3, 3, 3, 1, f1], 27, 27 * f1),
        ParamSpec::bias("stem.conv1.bias".into(), f1),
        ParamSpec::weight("stem.conv2.kernel".into(), vec![3, 3, 3, f1, d], 27 * f1, 27 * d),
        ParamSpec::bias("stem.conv2.bias".into(), d),
    ];
    let mut mixer = |branch: &str, width: usize| {
        for i in 0..cfg.blocks {
            specs.push(ParamSpec::weight(format!("{branch}.{i}.fc1.weight"), vec![width, h], width, h));
            specs.push(ParamSpec::bias(format!("{branch}.{i}.fc1.bias"), h));
            specs.push(ParamSpec::weight(format!("{branch}.{i}.fc2.weight"), vec![h, width], h, width));
            specs.push(ParamSpec::bias(format!("{branch}.{i}.fc2.bias"), width));
        }
    };
    if cfg.use_spectral {
        mixer("spectral", p);
    }
    if cfg.use_spatial {
        mixer("spatial", t);
    }
    let c = cfg.feature_channels();
    if cfg.use_attention {
        // depthwise kernel seen as (3, 3, C, 1): fans follow that 4-D shape
        specs.push(ParamSpec::weight("attention.kernel".into(), vec![3, 3, c], 9 * c, 9));
        specs.push(ParamSpec::bias("attention.bias".into(), c));
    }
    specs.push(ParamSpec::weight("head.weight".into(), vec![c, cfg.classes], c, cfg.classes));
    specs.push(ParamSpec::bias("head.bias".into(), cfg.classes));
    specs
}

/// The network's configuration and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element = f32> {
    config: ModelConfig,
    params: Vec<Param<T>>,
}

/// One residual MLP block: `x + fc2(σ(fc1(x)))` on the last axis.
#[derive(Clone, Debug)]
pub struct MixerBlockVars<T: Element> {
    pub fc1_weight: Var<T>,
    pub fc1_bias: Var<T>,
    pub fc2_weight: Var<T>,
    pub fc2_bias: Var<T>,
}

/// Model parameters bound onto a graph.
#[derive(Clone, Debug)]
pub struct ModelVars<T: Element> {
    pub conv1: (Var<T>, Var<T>),
    pub conv2: (Var<T>, Var<T>),
    pub spectral: Vec<MixerBlockVars<T>>,
    pub spatial: Vec<MixerBlockVars<T>>,
    pub attention: Option<(Var<T>, Var<T>)>,
    pub head: (Var<T>, Var<T>),
    /// Every bound parameter, in layout order.
    pub all: Vec<Var<T>>,
}

impl<T: Element> Model<T> {
    /// Builds a model with Glorot-uniform weights and zero biases, seeded by `init_seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let params = param_layout(&config)
            .into_iter()
            .map(|spec| {
                let value = match spec.fans {
                    Some((fan_in, fan_out)) => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        Tensor::from_fn(&spec.shape, |_| T::from_f64(rng.gen_range(-limit..limit)))
                    }
                    None => Tensor::zeros(&spec.shape),
                };
                Param { name: spec.name, value }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Assembles a model from explicit parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Data(format!(
                "configuration needs {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (spec, p) in layout.iter().zip(&params) {
            if spec.name != p.name || spec.shape != p.value.shape() {
                return Err(Error::Data(format!(
                    "expected parameter {} {:?}, got {} {:?}",
                    spec.name,
                    spec.shape,
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Binds every parameter onto `g`, as trainable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ModelVars<T> {
        let all: Vec<Var<T>> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        let mut it = all.iter().cloned();
        let mut next = || it.next().expect("layout matches config");
        let conv1 = (next(), next());
        let conv2 = (next(), next());
        let mut blocks = |on: bool| -> Vec<MixerBlockVars<T>> {
            if !on {
                return Vec::new();
            }
            (0..self.config.blocks)
                .map(|_| MixerBlockVars {
                    fc1_weight: next(),
                    fc1_bias: next(),
                    fc2_weight: next(),
                    fc2_bias: next(),
                })
                .collect()
        };
        let spectral = blocks(self.config.use_spectral);
        let spatial = blocks(self.config.use_spatial);
        let attention = self.config.use_attention.then(|| (next(), next()));
        let head = (next(), next());
        ModelVars {
            conv1,
            conv2,
            spectral,
            spatial,
            attention,
            head,
            all,
        }
    }

    fn expect_shape(&self, op: &'static str, x: &Var<T>, channels: usize) -> Result<usize> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 5 || s[1] != c.patch_size || s[2] != c.patch_size || s[3] != c.pca_dims || s[4] != channels {
            return Err(Error::dim(
                op,
                format!(
                    "expected [B, {m}, {m}, {p}, {channels}], got {s:?}",
                    m = c.patch_size,
                    p = c.pca_dims
                ),
            ));
        }
        Ok(s[0])
    }

    /// Two same-padded 3×3×3 convolutions with ReLU: `[B,M,M,P,1] → [B,M,M,P,D]`.
    pub fn stem(&self, g: &mut Graph<T>, vars: &ModelVars<T>, x: &Var<T>) -> Result<Var<T>> {
        self.expect_shape("stem", x, 1)?;
        let y = g.conv3d(x, &vars.conv1.0, &vars.conv1.1)?;
        let y = g.relu(&y)?;
        let y = g.conv3d(&y, &vars.conv2.0, &vars.conv2.1)?;
        g.relu(&y)
    }

    fn mixer_block(&self, g: &mut Graph<T>, block: &MixerBlockVars<T>, x: &Var<T>) -> Result<Var<T>> {
        let hidden = g.dense(x, &block.fc1_weight, &block.fc1_bias)?;
        let hidden = match self.config.mixer_activation {
            MixerActivation::Gelu => g.gelu(&hidden)?,
            MixerActivation::Relu => g.relu(&hidden)?,
        };
        let out = g.dense(&hidden, &block.fc2_weight, &block.fc2_bias)?;
        g.add(x, &out)
    }

    /// Mixes along the band axis independently at every pixel and channel.
    ///
    /// `[B,M,M,P,D]` is permuted to `[B,M,M,D,P]`, viewed as `[B, M·M, D, P]`,
    /// passed through the residual blocks, and restored.
    pub fn spectral_mixer(&self, g: &mut Graph<T>, vars: &ModelVars<T>, x: &Var<T>) -> Result<Var<T>> {
        let b = self.expect_shape("spectral_mixer", x, self.config.channels)?;
        let (m, p, d) = (self.config.patch_size, self.config.pca_dims, self.config.channels);
        let y = g.permute(x, &[0, 1, 2, 4, 3])?;
        let mut y = g.reshape(&y, &[b, m * m, d, p])?;
        for block in &vars.spectral {
            y = self.mixer_block(g, block, &y)?;
        }
        let y = g.reshape(&y, &[b, m, m, d, p])?;
        g.permute(&y, &[0, 1, 2, 4, 3])
    }

    /// Mixes across the `M·M` pixel positions independently for every band and channel.
    ///
    /// `[B,M,M,P,D]` is permuted to `[B,P,D,M,M]`, viewed as `[B, P, D, M·M]`,
    /// passed through the residual blocks, and restored.
    pub fn spatial_mixer(&self, g: &mut Graph<T>, vars: &ModelVars<T>, x: &Var<T>) -> Result<Var<T>> {
        let b = self.expect_shape("spatial_mixer", x, self.config.channels)?;
        let (m, p, d) = (self.config.patch_size, self.config.pca_dims, self.config.channels);
        let y = g.permute(x, &[0, 3, 4, 1, 2])?;
        let mut y = g.reshape(&y, &[b, p, d, m * m])?;
        for block in &vars.spatial {
            y = self.mixer_block(g, block, &y)?;
        }
        let y = g.reshape(&y, &[b, p, d, m, m])?;
        g.permute(&y, &[0, 3, 4, 1, 2])
    }

    /// `x ⊙ sigmoid(depthwise_conv(x))` on a `[B, M, M, C]` map.
    pub fn attention(&self, g: &mut Graph<T>, vars: &ModelVars<T>, x: &Var<T>) -> Result<Var<T>> {
        let (k, b) = vars
            .attention
            .as_ref()
            .ok_or_else(|| Error::Usage("attention is disabled in this configuration".into()))?;
        let c = &self.config;
        let s = x.shape();
        if s.len() != 4 || s[1] != c.patch_size || s[2] != c.patch_size || s[3] != c.feature_channels() {
            return Err(Error::dim(
                "attention",
                format!(
                    "expected [B, {m}, {m}, {}], got {s:?}",
                    c.feature_channels(),
                    m = c.patch_size
                ),
            ));
        }
        let logits = g.depthwise_conv2d(x, k, b)?;
        let mask = g.sigmoid(&logits)?;
        g.mul(x, &mask)
    }

    /// Pooled `[B, P·fused]` features ahead of the classifier head.
    pub fn features(&self, g: &mut Graph<T>, vars: &ModelVars<T>, x: &Var<T>) -> Result<Var<T>> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 4 || s[1] != c.patch_size || s[2] != c.patch_size || s[3] != c.pca_dims {
            return Err(Error::dim(
                "forward",
                format!("expected [B, {m}, {m}, {}], got {s:?}", c.pca_dims, m = c.patch_size),
            ));
        }
        let (b, m, p) = (s[0], c.patch_size, c.pca_dims);
        let x5 = g.reshape(x, &[b, m, m, p, 1])?;
        let stem = self.stem(g, vars, &x5)?;
        let mut branches = Vec::with_capacity(2);
        if c.use_spectral && c.blocks > 0 {
            branches.push(self.spectral_mixer(g, vars, &stem)?);
        }
        if c.use_spatial && c.blocks > 0 {
            branches.push(self.spatial_mixer(g, vars, &stem)?);
        }
        let fused = match branches.len() {
            0 => stem,
            1 => branches.pop().unwrap(),
            _ => g.concat(&branches, 4)?,
        };
        let mut map = g.reshape(&fused, &[b, m, m, c.feature_channels()])?;
        if c.use_attention {
            map = self.attention(g, vars, &map)?;
        }
        g.global_avg_pool(&map)
    }

    /// Logits `[B, K]` for a batch of patches `[B, M, M, P]`.
    pub fn forward(&self, g: &mut Graph<T>, vars: &ModelVars<T>, x: &Var<T>) -> Result<Var<T>> {
        let pooled = self.features(g, vars, x)?;
        g.dense(&pooled, &vars.head.0, &vars.head.1)
    }

    /// Gradient-free forward pass.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(x.clone());
        let out = self.forward(&mut g, &vars, &x)?;
        Ok(out.value().clone())
    }

    /// Class ids (argmax of the softmax, ties toward the lower id) and probabilities.
    pub fn predict(&self, x: &Tensor<T>) -> Result<(Vec<usize>, Tensor<T>)> {
        let logits = self.logits(x)?;
        let probs = crate::tensor::softmax(&logits);
        Ok((argmax_rows(&probs), probs))
    }
}

/// Row-wise argmax of a `[B, K]` tensor, first index on ties.
pub fn argmax_rows<T: Element>(scores: &Tensor<T>) -> Vec<usize> {
    let k = *scores.shape().last().unwrap_or(&1);
    scores
        .data()
        .chunks_exact(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
