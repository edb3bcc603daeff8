//! Declarative model configs, presets, and the sequential model they build.
//!
//! A [`ModelConfig`] lists [`LayerSpec`] nodes with explicit dimensions.
//! [`Model::build`] walks the list once, checking that each node accepts
//! what its predecessor produces, and registers parameters under the node's
//! path (`layers.3.weight`, `layers.5.branch.0.weight`).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{gradcheck_many, GradcheckOptions, GradcheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    feature_clip, hcat_rows, lorentz_residual, Activation, BatchNorm, Conv2d, ConvSpec, Ctx, Layer, Linear,
    LorentzBatchNorm, LorentzConv2d, LorentzFc, LorentzMlr, LorentzRelu, ParamId, ParamStore, Relu, Traced,
};
use crate::manifold::{Curvature, Lorentz};
use crate::real::Real;
use crate::tensor::Tensor;

/// How Euclidean inputs become points on the hyperboloid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// The input vector is the space component; time is derived.
    #[default]
    SpaceLift,
    /// The input vector is a tangent vector at the origin.
    ExpLift,
}

impl std::str::FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space-lift" => Ok(Self::SpaceLift),
            "exp-lift" => Ok(Self::ExpLift),
            _ => Err(Error::Config(format!("unknown projection `{s}` (space-lift | exp-lift)"))),
        }
    }
}

fn one() -> usize {
    1
}

/// One node of a model. Dimensions of hyperbolic layers are manifold
/// dimensions (space components); hyperbolic tensors carry one more entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Lifts Euclidean inputs onto the hyperboloid. `mode` defaults to the
    /// config's projection.
    InputProjection {
        #[serde(default)]
        mode: Option<Projection>,
    },
    /// Max-norm clipping of Euclidean features to the config's radius.
    Clip,
    LorentzConv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        transposed: bool,
    },
    LorentzBn {
        dim: usize,
    },
    LorentzRelu,
    LorentzFc {
        in_dim: usize,
        out_dim: usize,
        #[serde(default)]
        activation: Activation,
    },
    LorentzMlr {
        dim: usize,
        classes: usize,
    },
    /// Collapses a feature map into one vector: Lorentz direct concatenation
    /// of all positions for hyperbolic maps, reshape for Euclidean ones.
    Flatten,
    /// `x (+) branch(x)`: Lorentzian residual on hyperbolic inputs, plain
    /// addition on Euclidean ones.
    Residual {
        branch: Vec<LayerSpec>,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        transposed: bool,
    },
    Bn {
        channels: usize,
    },
    Relu,
    Linear {
        in_dim: usize,
        out_dim: usize,
        #[serde(default)]
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::InputProjection { .. } => "input_projection",
            LayerSpec::Clip => "clip",
            LayerSpec::LorentzConv { .. } => "lorentz_conv",
            LayerSpec::LorentzBn { .. } => "lorentz_bn",
            LayerSpec::LorentzRelu => "lorentz_relu",
            LayerSpec::LorentzFc { .. } => "lorentz_fc",
            LayerSpec::LorentzMlr { .. } => "lorentz_mlr",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Residual { .. } => "residual",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Bn { .. } => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    fn conv_spec(&self) -> Option<ConvSpec> {
        match *self {
            LayerSpec::LorentzConv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                transposed,
            }
            | LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                transposed,
            } => {
                let s = ConvSpec::new(in_channels, out_channels, kernel, stride, padding);
                Some(if transposed { s.transposed() } else { s })
            }
            _ => None,
        }
    }

    /// The Euclidean counterpart with identical shapes. Projections vanish
    /// and the MLR head becomes a linear classifier.
    fn euclidean(&self) -> Option<LayerSpec> {
        Some(match self.clone() {
            LayerSpec::InputProjection { .. } => return None,
            LayerSpec::LorentzConv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                transposed,
            } => LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                transposed,
            },
            LayerSpec::LorentzBn { dim } => LayerSpec::Bn { channels: dim },
            LayerSpec::LorentzRelu => LayerSpec::Relu,
            LayerSpec::LorentzFc {
                in_dim,
                out_dim,
                activation,
            } => LayerSpec::Linear {
                in_dim,
                out_dim,
                activation,
            },
            LayerSpec::LorentzMlr { dim, classes } => LayerSpec::Linear {
                in_dim: dim,
                out_dim: classes,
                activation: Activation::Identity,
            },
            LayerSpec::Residual { branch } => LayerSpec::Residual {
                branch: branch.iter().filter_map(LayerSpec::euclidean).collect(),
            },
            other => other,
        })
    }
}

/// A full model description, serializable to and from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: String,
    /// Per-example input shape: `[H, W, C]` images or `[n]` vectors.
    pub input: Vec<usize>,
    pub classes: usize,
    pub curvature: Curvature<f64>,
    #[serde(default)]
    pub projection: Projection,
    /// Radius of `clip` nodes.
    #[serde(default)]
    pub clip_radius: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &["lenet-hcnn", "resnet-mini", "hybrid", "mlr-only"];

/// A named reference architecture for the given input shape and class
/// count. `euclidean` swaps every hyperbolic node for its Euclidean twin.
pub fn preset(name: &str, input: &[usize], classes: usize, euclidean: bool) -> Result<ModelConfig> {
    let image = |what: &str| -> Result<(usize, usize, usize)> {
        match *input {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Config(format!("preset `{what}` needs an [H, W, C] input, got {input:?}"))),
        }
    };
    let conv = |i, o, k, s, p| LayerSpec::LorentzConv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
        transposed: false,
    };
    let out_hw = |h, w, k, s, p| ConvSpec::new(1, 1, k, s, p).output_hw(h, w);
    let mut cfg = ModelConfig {
        architecture: name.to_string(),
        input: input.to_vec(),
        classes,
        curvature: Curvature::default(),
        projection: Projection::SpaceLift,
        clip_radius: None,
        seed: 0,
        layers: Vec::new(),
    };
    cfg.layers = match name {
        "lenet-hcnn" => {
            let (h, w, c) = image(name)?;
            let (h1, w1) = out_hw(h, w, 5, 2, 0)?;
            let (h2, w2) = out_hw(h1, w1, 5, 2, 0)?;
            let flat = h2 * w2 * 16;
            vec![
                LayerSpec::InputProjection { mode: None },
                conv(c, 8, 5, 2, 0),
                LayerSpec::LorentzBn { dim: 8 },
                LayerSpec::LorentzRelu,
                conv(8, 16, 5, 2, 0),
                LayerSpec::LorentzBn { dim: 16 },
                LayerSpec::LorentzRelu,
                LayerSpec::Flatten,
                LayerSpec::LorentzFc {
                    in_dim: flat,
                    out_dim: 64,
                    activation: Activation::Identity,
                },
                LayerSpec::LorentzRelu,
                LayerSpec::LorentzMlr { dim: 64, classes },
            ]
        }
        "resnet-mini" => {
            let (h, w, c) = image(name)?;
            let (h1, w1) = out_hw(h, w, 3, 2, 1)?;
            let (h2, w2) = out_hw(h1, w1, 3, 2, 1)?;
            let block = |ch| LayerSpec::Residual {
                branch: vec![
                    conv(ch, ch, 3, 1, 1),
                    LayerSpec::LorentzBn { dim: ch },
                    LayerSpec::LorentzRelu,
                    conv(ch, ch, 3, 1, 1),
                    LayerSpec::LorentzBn { dim: ch },
                ],
            };
            vec![
                LayerSpec::InputProjection { mode: None },
                conv(c, 8, 3, 2, 1),
                LayerSpec::LorentzBn { dim: 8 },
                LayerSpec::LorentzRelu,
                block(8),
                LayerSpec::LorentzRelu,
                conv(8, 16, 3, 2, 1),
                LayerSpec::LorentzBn { dim: 16 },
                LayerSpec::LorentzRelu,
                block(16),
                LayerSpec::LorentzRelu,
                LayerSpec::Flatten,
                LayerSpec::LorentzMlr {
                    dim: h2 * w2 * 16,
                    classes,
                },
            ]
        }
        "hybrid" => {
            let (h, w, c) = image(name)?;
            let (h1, w1) = out_hw(h, w, 5, 2, 0)?;
            let (h2, w2) = out_hw(h1, w1, 5, 2, 0)?;
            cfg.clip_radius = Some(1.0);
            let econv = |i, o| LayerSpec::Conv {
                in_channels: i,
                out_channels: o,
                kernel: 5,
                stride: 2,
                padding: 0,
                transposed: false,
            };
            vec![
                econv(c, 8),
                LayerSpec::Bn { channels: 8 },
                LayerSpec::Relu,
                econv(8, 16),
                LayerSpec::Bn { channels: 16 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    in_dim: h2 * w2 * 16,
                    out_dim: 64,
                    activation: Activation::Identity,
                },
                LayerSpec::Clip,
                LayerSpec::InputProjection {
                    mode: Some(Projection::ExpLift),
                },
                LayerSpec::LorentzMlr { dim: 64, classes },
            ]
        }
        "mlr-only" => {
            let [n] = *input else {
                return Err(Error::Config(format!("preset `mlr-only` needs an [n] input, got {input:?}")));
            };
            vec![
                LayerSpec::InputProjection { mode: None },
                LayerSpec::LorentzMlr { dim: n, classes },
            ]
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}` (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    if euclidean {
        cfg = euclidean_twin(&cfg);
    }
    Ok(cfg)
}

/// Replaces every hyperbolic node with its Euclidean counterpart.
pub fn euclidean_twin(cfg: &ModelConfig) -> ModelConfig {
    let mut out = cfg.clone();
    out.architecture = format!("{}-euclidean", cfg.architecture);
    out.layers = cfg.layers.iter().filter_map(LayerSpec::euclidean).collect();
    out
}

/// What flows between nodes, for build-time checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Image { h: usize, w: usize, c: usize },
    Vector(usize),
    /// Hyperbolic map with `n` space channels per position.
    LMap { h: usize, w: usize, n: usize },
    LVec(usize),
}

impl Flow {
    fn hyperbolic(self) -> bool {
        matches!(self, Flow::LMap { .. } | Flow::LVec(_))
    }

    fn describe(self) -> String {
        match self {
            Flow::Image { h, w, c } => format!("euclidean map {h}x{w}x{c}"),
            Flow::Vector(n) => format!("euclidean vector R^{n}"),
            Flow::LMap { h, w, n } => format!("hyperbolic map {h}x{w} of L^{n}"),
            Flow::LVec(n) => format!("hyperbolic vector L^{n}"),
        }
    }
}

#[derive(Debug, Clone)]
enum Node<T: Real> {
    Project { name: String, mode: Projection },
    Clip { name: String, radius: f64 },
    LConv(LorentzConv2d<T>),
    LBn(LorentzBatchNorm<T>),
    LRelu(LorentzRelu<T>),
    LFc(LorentzFc<T>),
    LMlr(LorentzMlr<T>),
    Flatten { name: String, hyperbolic: bool },
    Residual { name: String, branch: Vec<Node<T>>, hyperbolic: bool },
    Conv(Conv2d),
    Bn(BatchNorm<T>),
    Relu(Relu),
    Linear(Linear),
}

struct Builder<'a, T: Real> {
    cfg: &'a ModelConfig,
    manifold: Lorentz<T>,
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn mismatch(path: &str, spec: &LayerSpec, expected: String, got: Flow, prev: &str) -> Error {
        Error::Model(format!(
            "{path} ({}): expects {expected}, got {} from {prev}",
            spec.kind(),
            got.describe()
        ))
    }

    fn build_seq(&mut self, specs: &[LayerSpec], prefix: &str, mut flow: Flow) -> Result<(Vec<Node<T>>, Flow)> {
        let mut nodes = Vec::with_capacity(specs.len());
        let mut prev = if prefix == "layers" {
            "the input".to_string()
        } else {
            format!("the input of {}", prefix.trim_end_matches(".branch"))
        };
        for (i, spec) in specs.iter().enumerate() {
            let path = format!("{prefix}.{i}");
            let (node, next) = self.build_one(spec, &path, flow, &prev)?;
            nodes.push(node);
            flow = next;
            prev = format!("{path} ({})", spec.kind());
        }
        Ok((nodes, flow))
    }

    fn build_one(&mut self, spec: &LayerSpec, path: &str, flow: Flow, prev: &str) -> Result<(Node<T>, Flow)> {
        let m = self.manifold;
        let name = path.to_string();
        let bad = |expected: String| Self::mismatch(path, spec, expected, flow, prev);
        Ok(match spec {
            LayerSpec::InputProjection { mode } => {
                let mode = mode.unwrap_or(self.cfg.projection);
                let next = match flow {
                    Flow::Image { h, w, c } => Flow::LMap { h, w, n: c },
                    Flow::Vector(n) => Flow::LVec(n),
                    _ => return Err(bad("euclidean features".into())),
                };
                (Node::Project { name, mode }, next)
            }
            LayerSpec::Clip => {
                let radius = self
                    .cfg
                    .clip_radius
                    .ok_or_else(|| Error::Config(format!("{path} (clip): clip_radius is not set")))?;
                if !(radius > 0.0) {
                    return Err(Error::Config(format!("clip_radius must be positive, got {radius}")));
                }
                match flow {
                    Flow::Vector(_) => (Node::Clip { name, radius }, flow),
                    _ => return Err(bad("a euclidean vector".into())),
                }
            }
            LayerSpec::LorentzConv { .. } | LayerSpec::Conv { .. } => {
                let cs = spec.conv_spec().expect("conv spec");
                let hyperbolic = matches!(spec, LayerSpec::LorentzConv { .. });
                let (h, w, c) = match (flow, hyperbolic) {
                    (Flow::LMap { h, w, n }, true) => (h, w, n),
                    (Flow::Image { h, w, c }, false) => (h, w, c),
                    _ => {
                        let what = if hyperbolic { "hyperbolic" } else { "euclidean" };
                        return Err(bad(format!("a {what} map with {} channels", cs.in_channels)));
                    }
                };
                if c != cs.in_channels {
                    return Err(bad(format!("{} input channels", cs.in_channels)));
                }
                let (oh, ow) = cs
                    .output_hw(h, w)
                    .map_err(|e| Error::Model(format!("{path} ({}): {e}", spec.kind())))?;
                if hyperbolic {
                    let layer = LorentzConv2d::new(&mut self.store, &name, cs, m, &mut self.rng)?;
                    (Node::LConv(layer), Flow::LMap { h: oh, w: ow, n: cs.out_channels })
                } else {
                    let layer = Conv2d::new(&mut self.store, &name, cs, &mut self.rng)?;
                    (Node::Conv(layer), Flow::Image { h: oh, w: ow, c: cs.out_channels })
                }
            }
            &LayerSpec::LorentzBn { dim } => match flow {
                Flow::LMap { n, .. } | Flow::LVec(n) if n == dim => {
                    (Node::LBn(LorentzBatchNorm::new(&mut self.store, &name, dim, m)?), flow)
                }
                _ => return Err(bad(format!("hyperbolic features of dimension {dim}"))),
            },
            LayerSpec::LorentzRelu => {
                if !flow.hyperbolic() {
                    return Err(bad("hyperbolic features".into()));
                }
                (Node::LRelu(LorentzRelu::new(&name, m)), flow)
            }
            &LayerSpec::LorentzFc {
                in_dim,
                out_dim,
                activation,
            } => match flow {
                Flow::LVec(n) if n == in_dim => {
                    let layer = LorentzFc::new(&mut self.store, &name, in_dim, out_dim, activation, m, &mut self.rng)?;
                    (Node::LFc(layer), Flow::LVec(out_dim))
                }
                _ => return Err(bad(format!("a hyperbolic vector L^{in_dim}"))),
            },
            &LayerSpec::LorentzMlr { dim, classes } => match flow {
                Flow::LVec(n) if n == dim => {
                    let layer = LorentzMlr::new(&mut self.store, &name, dim, classes, m, &mut self.rng)?;
                    (Node::LMlr(layer), Flow::Vector(classes))
                }
                _ => return Err(bad(format!("a hyperbolic vector L^{dim}"))),
            },
            LayerSpec::Flatten => match flow {
                Flow::LMap { h, w, n } => (Node::Flatten { name, hyperbolic: true }, Flow::LVec(h * w * n)),
                Flow::Image { h, w, c } => (Node::Flatten { name, hyperbolic: false }, Flow::Vector(h * w * c)),
                _ => return Err(bad("a feature map".into())),
            },
            LayerSpec::Residual { branch } => {
                let (nodes, out) = self.build_seq(branch, &format!("{path}.branch"), flow)?;
                if out != flow {
                    return Err(Error::Model(format!(
                        "{path} (residual): branch maps {} to {}",
                        flow.describe(),
                        out.describe()
                    )));
                }
                let hyperbolic = flow.hyperbolic();
                (
                    Node::Residual {
                        name,
                        branch: nodes,
                        hyperbolic,
                    },
                    flow,
                )
            }
            &LayerSpec::Bn { channels } => match flow {
                Flow::Image { c, .. } | Flow::Vector(c) if c == channels => {
                    (Node::Bn(BatchNorm::new(&mut self.store, &name, channels)?), flow)
                }
                _ => return Err(bad(format!("euclidean features with {channels} channels"))),
            },
            LayerSpec::Relu => {
                if flow.hyperbolic() {
                    return Err(bad("euclidean features".into()));
                }
                (Node::Relu(Relu::new(&name)), flow)
            }
            &LayerSpec::Linear {
                in_dim,
                out_dim,
                activation,
            } => match flow {
                Flow::Vector(n) if n == in_dim => {
                    let layer = Linear::new(&mut self.store, &name, in_dim, out_dim, activation, &mut self.rng)?;
                    (Node::Linear(layer), Flow::Vector(out_dim))
                }
                _ => return Err(bad(format!("a euclidean vector R^{in_dim}"))),
            },
        })
    }
}

/// A built, validated sequential model with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    config: ModelConfig,
    manifold: Lorentz<T>,
    nodes: Vec<Node<T>>,
    store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Validates the layer graph and initializes parameters from the seed.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        let manifold = Lorentz::new(config.curvature.cast());
        if config.classes == 0 {
            return Err(Error::Config("classes must be positive".into()));
        }
        let flow = match *config.input.as_slice() {
            [h, w, c] if h > 0 && w > 0 && c > 0 => Flow::Image { h, w, c },
            [n] if n > 0 => Flow::Vector(n),
            _ => {
                return Err(Error::Config(format!(
                    "input must be [H, W, C] or [n] with positive entries, got {:?}",
                    config.input
                )))
            }
        };
        let mut b = Builder {
            cfg: config,
            manifold,
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let (nodes, out) = b.build_seq(&config.layers, "layers", flow)?;
        if out != Flow::Vector(config.classes) {
            return Err(Error::Model(format!(
                "model output is {}, expected logits R^{}",
                out.describe(),
                config.classes
            )));
        }
        Ok(Self {
            config: config.clone(),
            manifold,
            nodes,
            store: b.store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn manifold(&self) -> Lorentz<T> {
        self.manifold
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Trainable scalar count.
    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// True when any node operates on the hyperboloid.
    pub fn is_hyperbolic(&self) -> bool {
        fn any<T: Real>(nodes: &[Node<T>]) -> bool {
            nodes.iter().any(|n| match n {
                Node::Residual { branch, hyperbolic, .. } => *hyperbolic || any(branch),
                Node::Project { .. } | Node::LConv(_) | Node::LBn(_) | Node::LRelu(_) | Node::LFc(_) | Node::LMlr(_) => {
                    true
                }
                _ => false,
            })
        }
        any(&self.nodes)
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> Result<Model<U>> {
        let mut m = Model::<U>::build(&self.config)?;
        m.store = self.store.cast();
        Ok(m)
    }

    /// Checks a batch against the configured input shape.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.config.input.len() + 1 || shape[1..] != self.config.input[..] {
            let mut expected = vec![0];
            expected.extend(&self.config.input);
            return Err(Error::Shape {
                op: "model input",
                lhs: shape.to_vec(),
                rhs: expected,
            });
        }
        Ok(())
    }

    /// Logits for a batch `[B, ..input]`.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_input(&x.shape())?;
        run_seq(&self.nodes, self.manifold, ctx, x)
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let mut ctx = Ctx::new(&tape, &self.store, false);
        let y = self.forward(&mut ctx, tape.constant(x.clone()))?;
        Ok(y.value().as_ref().clone())
    }

    /// Eval-mode argmax predictions.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    /// Eval-mode forward pass recording every node's output.
    pub fn trace(&self, x: &Tensor<T>) -> Result<Vec<Traced<T>>> {
        let tape = Tape::inference();
        let mut ctx = Ctx::new(&tape, &self.store, false);
        ctx.enable_trace();
        self.forward(&mut ctx, tape.constant(x.clone()))?;
        Ok(ctx.take_trace())
    }

    /// A human-readable architecture dump.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "{} | input {:?} | classes {} | K = {} | projection {:?}",
            c.architecture,
            c.input,
            c.classes,
            c.curvature.k(),
            c.projection
        );
        fn walk<T: Real>(s: &mut String, nodes: &[Node<T>], store: &ParamStore<T>, depth: usize) {
            for n in nodes {
                let pad = "  ".repeat(depth + 1);
                let (name, desc) = describe(n);
                let count: usize = store
                    .iter()
                    .filter(|(_, p)| p.trainable && p.name.rsplit_once('.').map(|(a, _)| a) == Some(name))
                    .map(|(_, p)| p.value.numel())
                    .sum();
                let _ = writeln!(s, "{pad}{name:<20} {desc:<44} {count:>8}");
                if let Node::Residual { branch, .. } = n {
                    walk(s, branch, store, depth + 1);
                }
            }
        }
        walk(&mut s, &self.nodes, &self.store, 0);
        let _ = writeln!(s, "trainable parameters: {}", self.num_params());
        s
    }
}

impl Model<f64> {
    /// Finite-difference check of the cross-entropy loss with respect to
    /// the input batch and every trainable parameter.
    pub fn gradcheck(&self, x: &Tensor<f64>, labels: &[usize], train: bool, opts: &GradcheckOptions) -> Result<GradcheckReport> {
        let trainable: Vec<ParamId> = self.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        let mut inputs = vec![x.clone()];
        inputs.extend(trainable.iter().map(|&id| self.store.value(id).clone()));
        gradcheck_many(
            |tape, v| {
                let mut ctx = Ctx::new(tape, &self.store, train);
                for (&id, &var) in trainable.iter().zip(&v[1..]) {
                    ctx.bind(id, var);
                }
                self.forward(&mut ctx, v[0])?.cross_entropy(labels)
            },
            &inputs,
            opts,
        )
    }

    /// Checks each top-level layer in isolation: its input is the actual
    /// activation reaching it from `x`, and the loss is a fixed random
    /// linear functional of its output. Residual blocks are checked whole.
    pub fn layer_gradchecks(&self, x: &Tensor<f64>, train: bool, opts: &GradcheckOptions) -> Result<Vec<LayerCheck>> {
        self.check_input(x.shape())?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut act = x.clone();
        let mut out = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let (name, kind) = describe(node);
            let prefix = format!("{name}.");
            let own: Vec<ParamId> = self
                .store
                .iter()
                .filter(|(_, p)| p.trainable && p.name.starts_with(&prefix))
                .map(|(id, _)| id)
                .collect();
            let next = {
                let tape = Tape::inference();
                let mut ctx = Ctx::new(&tape, &self.store, train);
                run_node(node, self.manifold, &mut ctx, tape.constant(act.clone()))?.0.value()
            };
            let probe = Tensor::from_fn(next.shape(), |_| rng.random_range(-1.0..1.0));
            let mut inputs = vec![act.clone()];
            inputs.extend(own.iter().map(|&id| self.store.value(id).clone()));
            let report = gradcheck_many(
                |tape, v| {
                    let mut ctx = Ctx::new(tape, &self.store, train);
                    for (&id, &var) in own.iter().zip(&v[1..]) {
                        ctx.bind(id, var);
                    }
                    let (y, _) = run_node(node, self.manifold, &mut ctx, v[0])?;
                    Ok(y.mul(tape.constant(probe.clone()))?.sum_all())
                },
                &inputs,
                opts,
            )?;
            out.push(LayerCheck {
                layer: name.to_string(),
                kind,
                params: own.iter().map(|&id| self.store.value(id).numel()).sum(),
                report,
            });
            act = (*next).clone();
        }
        Ok(out)
    }
}

/// One row of [`Model::layer_gradchecks`].
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: String,
    pub kind: String,
    pub params: usize,
    pub report: GradcheckReport,
}

fn describe<T: Real>(n: &Node<T>) -> (&str, String) {
    match n {
        Node::Project { name, mode } => (name, format!("InputProjection {mode:?}")),
        Node::Clip { name, radius } => (name, format!("FeatureClip r={radius}")),
        Node::LConv(l) => (l.name(), l.describe()),
        Node::LBn(l) => (l.name(), l.describe()),
        Node::LRelu(l) => (l.name(), l.describe()),
        Node::LFc(l) => (l.name(), l.describe()),
        Node::LMlr(l) => (l.name(), l.describe()),
        Node::Flatten { name, hyperbolic } => (
            name,
            if *hyperbolic {
                "Flatten (Lorentz concatenation)".into()
            } else {
                "Flatten".into()
            },
        ),
        Node::Residual { name, hyperbolic, .. } => (
            name,
            if *hyperbolic {
                "LorentzResidual".into()
            } else {
                "Residual".into()
            },
        ),
        Node::Conv(l) => (Layer::<T>::name(l), Layer::<T>::describe(l)),
        Node::Bn(l) => (l.name(), l.describe()),
        Node::Relu(l) => (Layer::<T>::name(l), Layer::<T>::describe(l)),
        Node::Linear(l) => (Layer::<T>::name(l), Layer::<T>::describe(l)),
    }
}

fn run_seq<'t, T: Real>(nodes: &[Node<T>], m: Lorentz<T>, ctx: &mut Ctx<'t, T>, mut x: Var<'t, T>) -> Result<Var<'t, T>> {
    for node in nodes {
        let (y, hyperbolic) = run_node(node, m, ctx, x)?;
        let (name, _) = describe(node);
        ctx.record(name, y, hyperbolic.then_some(m.curvature));
        x = y;
    }
    Ok(x)
}

fn run_node<'t, T: Real>(node: &Node<T>, m: Lorentz<T>, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, bool)> {
    Ok(match node {
        Node::Project { mode, .. } => (input_projection(&m, x, *mode)?, true),
        Node::Clip { radius, .. } => (feature_clip(x, T::lit(*radius))?, false),
        Node::LConv(l) => (l.forward(ctx, x)?, true),
        Node::LBn(l) => (l.forward(ctx, x)?, true),
        Node::LRelu(l) => (l.forward(ctx, x)?, true),
        Node::LFc(l) => (l.forward(ctx, x)?, true),
        Node::LMlr(l) => (l.forward(ctx, x)?, false),
        Node::Flatten { hyperbolic, .. } => {
            let shape = x.shape();
            let b = shape[0];
            if *hyperbolic {
                let positions: usize = shape[1..shape.len() - 1].iter().product();
                let pts = x.reshape(&[b, positions, shape[shape.len() - 1]])?;
                (hcat_rows(&m, pts)?, true)
            } else {
                (x.reshape(&[b, shape[1..].iter().product()])?, false)
            }
        }
        Node::Residual { branch, hyperbolic, .. } => {
            let y = run_seq(branch, m, ctx, x)?;
            if *hyperbolic {
                (lorentz_residual(&m, x, y)?, true)
            } else {
                (x.add(y)?, false)
            }
        }
        Node::Conv(l) => (l.forward(ctx, x)?, false),
        Node::Bn(l) => (l.forward(ctx, x)?, false),
        Node::Relu(l) => (l.forward(ctx, x)?, false),
        Node::Linear(l) => (l.forward(ctx, x)?, false),
    })
}

/// Lifts Euclidean features `[.., c]` onto the hyperboloid `[.., c+1]`.
pub fn input_projection<'t, T: Real>(m: &Lorentz<T>, x: Var<'t, T>, mode: Projection) -> Result<Var<'t, T>> {
    match mode {
        Projection::SpaceLift => m.project(x),
        Projection::ExpLift => m.exp0(x),
    }
}

/// Row-wise argmax of a `[B, C]` tensor.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.last_dim();
    logits
        .data()
        .chunks(c.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests;
