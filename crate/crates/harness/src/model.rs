//! Sequential CNN description: an ordered layer list plus named parameters.

use std::collections::BTreeMap;
use std::fmt;

use kerneltn_core::conv::{self, ConvError, ConvGeometry, Image, Kernel};
use kerneltn_core::tensor::TensorError;
use kerneltn_core::DenseTensor;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape inconsistency: {0}")]
    ShapeInconsistency(String),
    #[error("missing parameter '{0}'")]
    MissingParameter(String),
    #[error("no conv layer named '{0}'")]
    UnknownLayer(String),
    #[error("malformed layer description at line {line}: {msg}")]
    BadDescription { line: usize, msg: String },
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv { name: String, geometry: ConvGeometry, kernel: String, bias: Option<String> },
    Relu,
    AvgPool { window: usize, stride: usize },
    MaxPool { window: usize, stride: usize },
    Flatten,
    Dense { name: String, weight: String, bias: String },
    Softmax,
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image(usize, usize, usize),
    Vector(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image(c, h, w) => c * h * w,
            Shape::Vector(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Input image shape `(C, H, W)`.
    pub input: (usize, usize, usize),
    pub layers: Vec<Layer>,
    pub params: BTreeMap<String, DenseTensor>,
}

/// Intermediate value flowing through the network.
#[derive(Debug, Clone)]
pub enum Activation {
    Image(Image),
    Vector(Vec<f64>),
}

impl Activation {
    pub fn into_vec(self) -> Vec<f64> {
        match self {
            Activation::Image(img) => img.into_tensor().into_data(),
            Activation::Vector(v) => v,
        }
    }
}

impl ModelSpec {
    pub fn new(input: (usize, usize, usize), layers: Vec<Layer>, params: BTreeMap<String, DenseTensor>) -> Result<Self> {
        let m = Self { input, layers, params };
        m.validate()?;
        Ok(m)
    }

    fn param(&self, name: &str) -> Result<&DenseTensor> {
        self.params.get(name).ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    fn expect_dims(&self, name: &str, dims: &[usize]) -> Result<()> {
        let t = self.param(name)?;
        if t.dims() != dims {
            return Err(ModelError::ShapeInconsistency(format!(
                "parameter '{name}' has dims {:?}, layer expects {dims:?}",
                t.dims()
            )));
        }
        Ok(())
    }

    /// Propagates the input shape through every layer, checking parameter
    /// shapes along the way. Returns the output shape.
    pub fn validate(&self) -> Result<Shape> {
        let (c, h, w) = self.input;
        let mut shape = Shape::Image(c, h, w);
        for (idx, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape) {
                (Layer::Conv { geometry: g, kernel, bias, .. }, Shape::Image(c, h, w)) => {
                    let k = self.param(kernel)?;
                    if k.rank() != 4 || k.dims()[1] != c || k.dims()[2] != g.kernel_h || k.dims()[3] != g.kernel_w {
                        return Err(ModelError::ShapeInconsistency(format!(
                            "layer {idx}: kernel '{kernel}' dims {:?} do not fit input {c} channels and a {}x{} window",
                            k.dims(),
                            g.kernel_h,
                            g.kernel_w
                        )));
                    }
                    let out = k.dims()[0];
                    if let Some(b) = bias {
                        self.expect_dims(b, &[out])?;
                    }
                    let (ho, wo) = g.output_dims(h, w)?;
                    Shape::Image(out, ho, wo)
                }
                (Layer::Relu | Layer::Softmax, s) => s,
                (Layer::AvgPool { window, stride } | Layer::MaxPool { window, stride }, Shape::Image(c, h, w)) => {
                    let (ho, wo) = conv::pool_geometry(*window, *stride)?.output_dims(h, w)?;
                    Shape::Image(c, ho, wo)
                }
                (Layer::Flatten, s) => Shape::Vector(s.len()),
                (Layer::Dense { weight, bias, .. }, Shape::Vector(n)) => {
                    let wt = self.param(weight)?;
                    if wt.rank() != 2 || wt.dims()[1] != n {
                        return Err(ModelError::ShapeInconsistency(format!(
                            "layer {idx}: dense weight '{weight}' dims {:?} do not accept {n} inputs",
                            wt.dims()
                        )));
                    }
                    self.expect_dims(bias, &[wt.dims()[0]])?;
                    Shape::Vector(wt.dims()[0])
                }
                (layer, s) => {
                    return Err(ModelError::ShapeInconsistency(format!(
                        "layer {idx} ({}) cannot take an activation of shape {s:?}",
                        layer.keyword()
                    )))
                }
            };
        }
        Ok(shape)
    }

    pub fn output_len(&self) -> Result<usize> {
        self.validate().map(|s| s.len())
    }

    pub fn conv_layer_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { name, .. } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    fn kernel_param(&self, layer: &str) -> Result<&str> {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Conv { name, kernel, .. } if name == layer => Some(kernel.as_str()),
                _ => None,
            })
            .ok_or_else(|| ModelError::UnknownLayer(layer.to_string()))
    }

    pub fn kernel(&self, layer: &str) -> Result<Kernel> {
        let name = self.kernel_param(layer)?;
        Ok(Kernel::new(self.param(name)?.clone())?)
    }

    /// Replaces a conv layer's kernel; the new kernel must have the same dims.
    pub fn set_kernel(&mut self, layer: &str, k: Kernel) -> Result<()> {
        let name = self.kernel_param(layer)?.to_string();
        self.expect_dims(&name, &k.dims())?;
        self.params.insert(name, k.into_tensor().without_labels());
        Ok(())
    }

    /// Runs every layer on one image; returns the final activation as a flat vector.
    pub fn forward(&self, img: &Image) -> Result<Vec<f64>> {
        let mut act = Activation::Image(img.clone());
        for layer in &self.layers {
            act = self.apply(layer, act)?;
        }
        Ok(act.into_vec())
    }

    pub(crate) fn apply(&self, layer: &Layer, act: Activation) -> Result<Activation> {
        Ok(match (layer, act) {
            (Layer::Conv { geometry, kernel, bias, .. }, Activation::Image(img)) => {
                let k = Kernel::new(self.param(kernel)?.clone())?;
                let out = conv::conv2d(&img, &k, geometry)?;
                Activation::Image(match bias {
                    Some(b) => add_channel_bias(out, self.param(b)?)?,
                    None => out,
                })
            }
            (Layer::Relu, Activation::Image(img)) => Activation::Image(Image::new(conv::relu(img.tensor()))?),
            (Layer::Relu, Activation::Vector(v)) => Activation::Vector(v.into_iter().map(|x| x.max(0.0)).collect()),
            (Layer::AvgPool { window, stride }, Activation::Image(img)) => {
                Activation::Image(conv::avg_pool(&img, *window, *stride)?)
            }
            (Layer::MaxPool { window, stride }, Activation::Image(img)) => {
                Activation::Image(conv::max_pool(&img, *window, *stride)?)
            }
            (Layer::Flatten, act) => Activation::Vector(act.into_vec()),
            (Layer::Dense { weight, bias, .. }, Activation::Vector(x)) => {
                Activation::Vector(dense_forward(self.param(weight)?, self.param(bias)?, &x))
            }
            (Layer::Softmax, act) => Activation::Vector(softmax(&act.into_vec())),
            (layer, _) => {
                return Err(ModelError::ShapeInconsistency(format!("{} received the wrong activation kind", layer.keyword())))
            }
        })
    }
}

pub(crate) fn add_channel_bias(img: Image, bias: &DenseTensor) -> Result<Image> {
    let (c, h, w) = img.shape();
    let mut t = img.into_tensor();
    let hw = h * w;
    for (ch, chunk) in t.data_mut().chunks_mut(hw).enumerate().take(c) {
        let b = bias.data()[ch];
        chunk.iter_mut().for_each(|x| *x += b);
    }
    Ok(Image::new(t)?)
}

pub(crate) fn dense_forward(w: &DenseTensor, b: &DenseTensor, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    w.data()
        .chunks(n)
        .zip(b.data())
        .map(|(row, bias)| row.iter().zip(x).fold(*bias, |acc, (wi, xi)| acc + wi * xi))
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

impl Layer {
    pub fn keyword(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::AvgPool { .. } => "avg_pool",
            Layer::MaxPool { .. } => "max_pool",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Softmax => "softmax",
        }
    }
}

/// Canonical one-line text form, parsed back by [`parse_layers`].
impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv { name, geometry: g, kernel, bias } => {
                write!(
                    f,
                    "conv {name} kernel={kernel} k={},{} s={},{} p={},{}",
                    g.kernel_h, g.kernel_w, g.stride_h, g.stride_w, g.pad_h, g.pad_w
                )?;
                if let Some(b) = bias {
                    write!(f, " bias={b}")?;
                }
                Ok(())
            }
            Layer::AvgPool { window, stride } => write!(f, "avg_pool {window} {stride}"),
            Layer::MaxPool { window, stride } => write!(f, "max_pool {window} {stride}"),
            Layer::Dense { name, weight, bias } => write!(f, "dense {name} weight={weight} bias={bias}"),
            other => f.write_str(other.keyword()),
        }
    }
}

/// Text block: an `input C H W` line followed by one line per layer.
pub fn describe(m: &ModelSpec) -> String {
    let (c, h, w) = m.input;
    let mut s = format!("input {c} {h} {w}\n");
    for l in &m.layers {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    s
}

fn pair(v: &str, line: usize) -> Result<(usize, usize)> {
    let bad = || ModelError::BadDescription { line, msg: format!("expected 'a,b', got '{v}'") };
    let (a, b) = v.split_once(',').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

fn number(v: Option<&str>, line: usize) -> Result<usize> {
    v.and_then(|s| s.parse().ok())
        .ok_or_else(|| ModelError::BadDescription { line, msg: "expected an integer".into() })
}

/// Inverse of [`describe`].
pub fn parse_layers(text: &str) -> Result<((usize, usize, usize), Vec<Layer>)> {
    let mut input = None;
    let mut layers = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut words = raw.split_whitespace();
        let Some(head) = words.next() else { continue };
        let bad = |msg: String| ModelError::BadDescription { line, msg };
        let mut keyed = BTreeMap::new();
        let mut positional = Vec::new();
        for w in words {
            match w.split_once('=') {
                Some((k, v)) => {
                    keyed.insert(k, v);
                }
                None => positional.push(w),
            }
        }
        let key = |k: &str| keyed.get(k).map(|s| s.to_string()).ok_or_else(|| bad(format!("missing '{k}='")));
        let layer = match head {
            "input" => {
                let mut it = positional.iter().copied();
                input = Some((number(it.next(), line)?, number(it.next(), line)?, number(it.next(), line)?));
                continue;
            }
            "conv" => {
                let name = positional.first().ok_or_else(|| bad("conv needs a name".into()))?.to_string();
                let geometry = ConvGeometry::new(pair(&key("k")?, line)?, pair(&key("s")?, line)?, pair(&key("p")?, line)?)?;
                Layer::Conv { name, geometry, kernel: key("kernel")?, bias: keyed.get("bias").map(|s| s.to_string()) }
            }
            "relu" => Layer::Relu,
            "avg_pool" | "max_pool" => {
                let window = number(positional.first().copied(), line)?;
                let stride = number(positional.get(1).copied(), line)?;
                if head == "avg_pool" {
                    Layer::AvgPool { window, stride }
                } else {
                    Layer::MaxPool { window, stride }
                }
            }
            "flatten" => Layer::Flatten,
            "dense" => {
                let name = positional.first().ok_or_else(|| bad("dense needs a name".into()))?.to_string();
                Layer::Dense { name, weight: key("weight")?, bias: key("bias")? }
            }
            "softmax" => Layer::Softmax,
            other => return Err(bad(format!("unknown layer '{other}'"))),
        };
        layers.push(layer);
    }
    let input = input.ok_or(ModelError::BadDescription { line: 0, msg: "missing 'input' line".into() })?;
    Ok((input, layers))
}

/// Uniform in ±sqrt(6 / fan_in).
fn he_uniform(dims: &[usize], fan_in: usize, rng: &mut impl Rng) -> DenseTensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    DenseTensor::random_uniform(dims, -bound, bound, rng).expect("nonzero dims")
}

/// The reference toy network for 1×16×16 inputs:
/// conv(1→8, 5×5, pad 2) → relu → avg_pool 2 → conv(8→16, 3×3, pad 1) → relu →
/// avg_pool 2 → flatten → dense(→classes) → softmax.
pub fn toy_architecture(classes: usize, rng: &mut impl Rng) -> ModelSpec {
    toy_with_input((1, 16, 16), classes, rng)
}

pub fn toy_with_input(input: (usize, usize, usize), classes: usize, rng: &mut impl Rng) -> ModelSpec {
    let (c, h, w) = input;
    let mut params = BTreeMap::new();
    params.insert("conv1.weight".to_string(), he_uniform(&[8, c, 5, 5], c * 25, rng));
    params.insert("conv1.bias".to_string(), DenseTensor::zeros(&[8]).unwrap());
    params.insert("conv2.weight".to_string(), he_uniform(&[16, 8, 3, 3], 72, rng));
    params.insert("conv2.bias".to_string(), DenseTensor::zeros(&[16]).unwrap());
    let flat = 16 * (h / 4) * (w / 4);
    params.insert("fc.weight".to_string(), he_uniform(&[classes, flat], flat, rng));
    params.insert("fc.bias".to_string(), DenseTensor::zeros(&[classes]).unwrap());
    let conv = |name: &str, k: usize, p: usize| Layer::Conv {
        name: name.to_string(),
        geometry: ConvGeometry::square(k, 1, p).expect("valid geometry"),
        kernel: format!("{name}.weight"),
        bias: Some(format!("{name}.bias")),
    };
    let layers = vec![
        conv("conv1", 5, 2),
        Layer::Relu,
        Layer::AvgPool { window: 2, stride: 2 },
        conv("conv2", 3, 1),
        Layer::Relu,
        Layer::AvgPool { window: 2, stride: 2 },
        Layer::Flatten,
        Layer::Dense { name: "fc".into(), weight: "fc.weight".into(), bias: "fc.bias".into() },
        Layer::Softmax,
    ];
    ModelSpec::new(input, layers, params).expect("toy architecture is consistent")
}
