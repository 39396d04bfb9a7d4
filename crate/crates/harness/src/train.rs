//! Mini-batch SGD with cross-entropy loss and hand-written backpropagation.
//! Convolution gradients go through the patch tensor: the kernel gradient
//! contracts patches with the output gradient, and the input gradient is
//! the scatter (col2im) of the kernel-weighted output gradient.

use std::collections::BTreeMap;

use kerneltn_core::conv::{self, col2im, im2col, ConvError, ConvGeometry, Image, Kernel};
use kerneltn_core::tensor::TensorError;
use kerneltn_core::{contract, ContractionSpec, DenseTensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Dataset;
use crate::model::{add_channel_bias, dense_forward, Layer, ModelError, ModelSpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite in epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("training needs a final softmax layer")]
    NoSoftmax,
    #[error("label {label} outside the model's {outputs} outputs")]
    BadLabel { label: usize, outputs: usize },
    #[error("empty training set")]
    EmptyData,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 10, lr: 0.05, batch: 16, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelSpec,
    /// Mean training loss of each epoch, measured while training.
    pub losses: Vec<f64>,
}

pub type Gradients = BTreeMap<String, DenseTensor>;

enum Cache {
    Conv { patches: conv::PatchTensor, input: (usize, usize, usize) },
    Relu(Vec<f64>),
    AvgPool { input: (usize, usize, usize) },
    MaxPool { input: (usize, usize, usize), argmax: Vec<usize> },
    Flatten(Vec<usize>),
    Dense(Vec<f64>),
    Softmax,
}

enum Act {
    Image(DenseTensor),
    Vector(Vec<f64>),
}

impl Act {
    fn into_vec(self) -> Vec<f64> {
        match self {
            Act::Image(t) => t.into_data(),
            Act::Vector(v) => v,
        }
    }
}

fn image(t: DenseTensor) -> Result<Image> {
    Ok(Image::new(t)?)
}

fn param<'a>(m: &'a ModelSpec, name: &str) -> Result<&'a DenseTensor> {
    m.params.get(name).ok_or_else(|| ModelError::MissingParameter(name.to_string()).into())
}

/// Forward pass up to (not including) the final softmax, recording what
/// backpropagation needs.
fn forward_logits(m: &ModelSpec, img: &Image) -> Result<(Vec<f64>, Vec<Cache>)> {
    match m.layers.last() {
        Some(Layer::Softmax) => {}
        _ => return Err(TrainError::NoSoftmax),
    }
    let body = &m.layers[..m.layers.len() - 1];
    let mut caches = Vec::with_capacity(body.len());
    let mut act = Act::Image(img.tensor().clone());
    for layer in body {
        let (next, cache) = match (layer, act) {
            (Layer::Conv { geometry, kernel, bias, .. }, Act::Image(t)) => {
                let x = image(t)?;
                let k = Kernel::new(param(m, kernel)?.clone())?;
                let patches = im2col(&x, geometry)?;
                let mut out = conv::conv2d_patches(&patches, &k)?;
                if let Some(b) = bias {
                    out = add_channel_bias(out, param(m, b)?)?;
                }
                (Act::Image(out.into_tensor()), Cache::Conv { patches, input: x.shape() })
            }
            (Layer::Relu, Act::Image(t)) => {
                let mask = t.data().to_vec();
                (Act::Image(conv::relu(&t)), Cache::Relu(mask))
            }
            (Layer::Relu, Act::Vector(v)) => {
                let out = v.iter().map(|x| x.max(0.0)).collect();
                (Act::Vector(out), Cache::Relu(v))
            }
            (Layer::AvgPool { window, stride }, Act::Image(t)) => {
                let x = image(t)?;
                let input = x.shape();
                (Act::Image(conv::avg_pool(&x, *window, *stride)?.into_tensor()), Cache::AvgPool { input })
            }
            (Layer::MaxPool { window, stride }, Act::Image(t)) => {
                let x = image(t)?;
                let input = x.shape();
                let (out, argmax) = conv::max_pool_with_argmax(&x, *window, *stride)?;
                (Act::Image(out.into_tensor()), Cache::MaxPool { input, argmax })
            }
            (Layer::Flatten, Act::Image(t)) => {
                let dims = t.dims().to_vec();
                (Act::Vector(t.into_data()), Cache::Flatten(dims))
            }
            (Layer::Flatten, Act::Vector(v)) => {
                let dims = vec![v.len()];
                (Act::Vector(v), Cache::Flatten(dims))
            }
            (Layer::Dense { weight, bias, .. }, Act::Vector(x)) => {
                let y = dense_forward(param(m, weight)?, param(m, bias)?, &x);
                (Act::Vector(y), Cache::Dense(x))
            }
            (Layer::Softmax, a) => {
                let p = crate::model::softmax(&a.into_vec());
                (Act::Vector(p), Cache::Softmax)
            }
            (layer, _) => {
                return Err(ModelError::ShapeInconsistency(format!("{} received the wrong activation kind", layer.keyword())).into())
            }
        };
        caches.push(cache);
        act = next;
    }
    Ok((act.into_vec(), caches))
}

/// `-ln softmax(z)[label]`, computed stably.
fn cross_entropy_of_logits(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    lse - z[label]
}

/// Cross-entropy loss of one sample.
pub fn sample_loss(m: &ModelSpec, img: &Image, label: usize) -> Result<f64> {
    let (z, _) = forward_logits(m, img)?;
    if label >= z.len() {
        return Err(TrainError::BadLabel { label, outputs: z.len() });
    }
    Ok(cross_entropy_of_logits(&z, label))
}

fn accumulate(grads: &mut Gradients, name: &str, g: DenseTensor) -> Result<()> {
    match grads.get_mut(name) {
        Some(acc) => *acc = acc.add(&g)?,
        None => {
            grads.insert(name.to_string(), g);
        }
    }
    Ok(())
}

fn pool_window_geometry(window: usize, stride: usize) -> Result<ConvGeometry> {
    Ok(conv::pool_geometry(window, stride)?)
}

/// Loss of one sample and the gradient of that loss with respect to every
/// parameter, added into `grads`.
pub fn backprop(m: &ModelSpec, img: &Image, label: usize, grads: &mut Gradients) -> Result<f64> {
    let (z, caches) = forward_logits(m, img)?;
    if label >= z.len() {
        return Err(TrainError::BadLabel { label, outputs: z.len() });
    }
    let loss = cross_entropy_of_logits(&z, label);
    let mut g_vec = crate::model::softmax(&z);
    g_vec[label] -= 1.0;
    let mut grad = Act::Vector(g_vec);
    let body = &m.layers[..m.layers.len() - 1];
    for (idx, (layer, cache)) in body.iter().zip(caches).enumerate().rev() {
        let need_input_grad = idx > 0;
        grad = match (layer, cache, grad) {
            (Layer::Dense { weight, bias, .. }, Cache::Dense(x), Act::Vector(dy)) => {
                let w = param(m, weight)?;
                let n = x.len();
                let dw = DenseTensor::from_fn(&[dy.len(), n], |ix| dy[ix[0]] * x[ix[1]])?;
                accumulate(grads, weight, dw)?;
                accumulate(grads, bias, DenseTensor::new(vec![dy.len()], dy.clone())?)?;
                let mut dx = vec![0.0; n];
                for (row, d) in w.data().chunks(n).zip(&dy) {
                    dx.iter_mut().zip(row).for_each(|(acc, wi)| *acc += wi * d);
                }
                Act::Vector(dx)
            }
            (Layer::Relu, Cache::Relu(x), g) => {
                let mask = |v: Vec<f64>| v.into_iter().zip(&x).map(|(d, &xi)| if xi > 0.0 { d } else { 0.0 }).collect::<Vec<f64>>();
                match g {
                    Act::Vector(v) => Act::Vector(mask(v)),
                    Act::Image(t) => {
                        let dims = t.dims().to_vec();
                        Act::Image(DenseTensor::new(dims, mask(t.into_data()))?)
                    }
                }
            }
            (Layer::Flatten, Cache::Flatten(dims), g) => {
                let v = g.into_vec();
                if dims.len() == 3 {
                    Act::Image(DenseTensor::new(dims, v)?)
                } else {
                    Act::Vector(v)
                }
            }
            (Layer::AvgPool { window, stride }, Cache::AvgPool { input: (c, h, w) }, Act::Image(dy)) => {
                let g = pool_window_geometry(*window, *stride)?;
                let scale = 1.0 / (window * window) as f64;
                let (ho, wo) = (dy.dims()[1], dy.dims()[2]);
                let dp = DenseTensor::from_fn(&[ho, wo, c, *window, *window], |ix| dy.get(&[ix[2], ix[0], ix[1]]) * scale)?;
                Act::Image(col2im(&dp, c, h, w, &g)?.into_tensor())
            }
            (Layer::MaxPool { .. }, Cache::MaxPool { input: (c, h, w), argmax }, Act::Image(dy)) => {
                let mut dx = vec![0.0; c * h * w];
                for (&off, d) in argmax.iter().zip(dy.data()) {
                    dx[off] += d;
                }
                Act::Image(DenseTensor::new(vec![c, h, w], dx)?)
            }
            (Layer::Conv { geometry, kernel, bias, .. }, Cache::Conv { patches, input: (c, h, w) }, Act::Image(dy)) => {
                let dk = contract(&[&dy, patches.tensor()], &ContractionSpec::parse("oij,ijcab->ocab")?)?;
                accumulate(grads, kernel, dk)?;
                if let Some(b) = bias {
                    let hw = dy.dims()[1] * dy.dims()[2];
                    let db: Vec<f64> = dy.data().chunks(hw).map(|ch| ch.iter().sum()).collect();
                    accumulate(grads, b, DenseTensor::new(vec![db.len()], db)?)?;
                }
                if need_input_grad {
                    let k = param(m, kernel)?;
                    let dp = contract(&[&dy, k], &ContractionSpec::parse("oij,ocab->ijcab")?)?;
                    Act::Image(col2im(&dp, c, h, w, geometry)?.into_tensor())
                } else {
                    Act::Vector(Vec::new())
                }
            }
            (layer, _, _) => {
                return Err(ModelError::ShapeInconsistency(format!("cannot backpropagate through {}", layer.keyword())).into())
            }
        };
    }
    Ok(loss)
}

/// Mean loss and mean gradients over the samples at `indices`.
pub fn batch_gradients(m: &ModelSpec, data: &Dataset, indices: &[usize]) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::new();
    let mut total = 0.0;
    for &i in indices {
        total += backprop(m, &data.images[i], data.labels[i], &mut grads)?;
    }
    let inv = 1.0 / indices.len() as f64;
    for g in grads.values_mut() {
        *g = g.scale(inv);
    }
    Ok((total * inv, grads))
}

fn sgd_step(m: &mut ModelSpec, grads: &Gradients, lr: f64) -> Result<()> {
    for (name, g) in grads {
        let p = m.params.get_mut(name).ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
        for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

/// Trains a copy of `template`. `on_epoch(epoch, mean_loss, model)` runs
/// after every epoch (1-based).
pub fn train_toy(
    template: &ModelSpec,
    data: &Dataset,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(usize, f64, &ModelSpec),
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut model = template.clone();
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch.max(1)) {
            let (loss, grads) = batch_gradients(&model, data, batch)?;
            if !loss.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch });
            }
            total += loss * batch.len() as f64;
            sgd_step(&mut model, &grads, opts.lr)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || model.params.values().any(|t| t.data().iter().any(|x| !x.is_finite())) {
            return Err(TrainError::DivergenceDetected { epoch });
        }
        losses.push(mean);
        on_epoch(epoch, mean, &model);
    }
    Ok(TrainOutcome { model, losses })
}
