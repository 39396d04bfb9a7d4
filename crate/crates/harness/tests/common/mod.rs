//! Loop-based oracles and fixtures shared by the harness integration tests.
#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod core_oracles;

use std::collections::BTreeMap;

use kerneltn::model::{Layer, ModelSpec};
use kerneltn_core::conv::{ConvGeometry, Image, Kernel};
use kerneltn_core::DenseTensor;
use rand::Rng;

pub use core_oracles::*;

/// Forward pass written with explicit loops over the layer list, sharing no
/// code with `ModelSpec::forward`.
pub fn naive_forward(m: &ModelSpec, img: &Image) -> Vec<f64> {
    let (mut c, mut h, mut w) = img.shape();
    let mut x: Vec<f64> = img.tensor().data().to_vec();
    for layer in &m.layers {
        match layer {
            Layer::Conv { geometry: g, kernel, bias, .. } => {
                let k = &m.params[kernel];
                let kd = k.dims();
                let input = Image::new(DenseTensor::new(vec![c, h, w], x.clone()).unwrap()).unwrap();
                let out = naive_conv(&input, &Kernel::new(k.clone()).unwrap(), g);
                let od = out.dims().to_vec();
                x = out.data().to_vec();
                if let Some(b) = bias {
                    let b = m.params[b].data();
                    for (i, v) in x.iter_mut().enumerate() {
                        *v += b[i / (od[1] * od[2])];
                    }
                }
                (c, h, w) = (kd[0], od[1], od[2]);
            }
            Layer::Relu => x.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v = 0.0
                }
            }),
            Layer::AvgPool { window, stride } | Layer::MaxPool { window, stride } => {
                let input = Image::new(DenseTensor::new(vec![c, h, w], x.clone()).unwrap()).unwrap();
                let out = if matches!(layer, Layer::AvgPool { .. }) {
                    naive_avg_pool(&input, *window, *stride)
                } else {
                    naive_max_pool(&input, *window, *stride)
                };
                (h, w) = (out.dims()[1], out.dims()[2]);
                x = out.data().to_vec();
            }
            Layer::Flatten => {}
            Layer::Dense { weight, bias, .. } => {
                let wt = &m.params[weight];
                let b = m.params[bias].data();
                let (rows, cols) = (wt.dims()[0], wt.dims()[1]);
                x = (0..rows).map(|r| b[r] + (0..cols).map(|j| wt.get(&[r, j]) * x[j]).sum::<f64>()).collect();
            }
            Layer::Softmax => {
                let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = x.iter().map(|v| (v - max).exp()).sum();
                x = x.iter().map(|v| (v - max).exp() / total).collect();
            }
        }
    }
    x
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Two conv layers with biases, one max pool and one avg pool, a dense
/// head and softmax, on 2×6×6 inputs. Every parameter is nonzero.
pub fn micro_model(classes: usize, rng: &mut impl Rng) -> ModelSpec {
    let mut params = BTreeMap::new();
    let mut add = |name: &str, dims: &[usize]| {
        params.insert(name.to_string(), random_tensor(dims, rng));
    };
    add("c1.w", &[3, 2, 3, 3]);
    add("c1.b", &[3]);
    add("c2.w", &[4, 3, 2, 2]);
    add("c2.b", &[4]);
    add("d.w", &[classes, 4]);
    add("d.b", &[classes]);
    let layers = vec![
        Layer::Conv {
            name: "c1".into(),
            geometry: ConvGeometry::square(3, 1, 1).unwrap(),
            kernel: "c1.w".into(),
            bias: Some("c1.b".into()),
        },
        Layer::Relu,
        Layer::MaxPool { window: 2, stride: 2 },
        Layer::Conv {
            name: "c2".into(),
            geometry: ConvGeometry::square(2, 1, 0).unwrap(),
            kernel: "c2.w".into(),
            bias: Some("c2.b".into()),
        },
        Layer::Relu,
        Layer::AvgPool { window: 2, stride: 2 },
        Layer::Flatten,
        Layer::Dense { name: "d".into(), weight: "d.w".into(), bias: "d.b".into() },
        Layer::Softmax,
    ];
    ModelSpec::new((2, 6, 6), layers, params).unwrap()
}

/// Reference-sized network on 3×32×32 inputs: four conv layers
/// (3→128 5×5, 128→128 5×5, 128→256 3×3, 256→256 3×3), pooling after the
/// second and fourth, and a three-layer dense classifier.
pub fn reference_architecture(rng: &mut impl Rng) -> ModelSpec {
    let mut params = BTreeMap::new();
    let mut layers = Vec::new();
    let convs = [("conv1", 3, 128, 5, 2), ("conv2", 128, 128, 5, 2), ("conv3", 128, 256, 3, 1), ("conv4", 256, 256, 3, 1)];
    for (i, (name, cin, cout, k, p)) in convs.into_iter().enumerate() {
        params.insert(format!("{name}.weight"), random_tensor(&[cout, cin, k, k], rng));
        params.insert(format!("{name}.bias"), random_tensor(&[cout], rng));
        layers.push(Layer::Conv {
            name: name.into(),
            geometry: ConvGeometry::square(k, 1, p).unwrap(),
            kernel: format!("{name}.weight"),
            bias: Some(format!("{name}.bias")),
        });
        layers.push(Layer::Relu);
        if i % 2 == 1 {
            layers.push(Layer::MaxPool { window: 2, stride: 2 });
        }
    }
    layers.push(Layer::Flatten);
    let dense = [("fc1", 256 * 8 * 8, 64), ("fc2", 64, 32), ("fc3", 32, 10)];
    for (i, (name, n_in, n_out)) in dense.into_iter().enumerate() {
        params.insert(format!("{name}.weight"), random_tensor(&[n_out, n_in], rng));
        params.insert(format!("{name}.bias"), random_tensor(&[n_out], rng));
        layers.push(Layer::Dense { name: name.into(), weight: format!("{name}.weight"), bias: format!("{name}.bias") });
        if i < 2 {
            layers.push(Layer::Relu);
        }
    }
    layers.push(Layer::Softmax);
    ModelSpec::new((3, 32, 32), layers, params).unwrap()
}

/// Largest relative discrepancy between analytic gradients and central
/// differences of the mean loss over `samples`, across every parameter
/// entry. Relative error uses max(|g|, |fd|, 1e-6) as denominator.
pub fn max_gradient_error(m: &ModelSpec, samples: &[(Image, usize)], eps: f64) -> (f64, String) {
    use kerneltn::train::{backprop, sample_loss, Gradients};
    let n = samples.len() as f64;
    let mut grads = Gradients::new();
    for (img, label) in samples {
        backprop(m, img, *label, &mut grads).unwrap();
    }
    let loss = |model: &ModelSpec| samples.iter().map(|(img, l)| sample_loss(model, img, *l).unwrap()).sum::<f64>() / n;
    let mut worst = (0.0, String::new());
    for (name, t) in &m.params {
        for i in 0..t.data().len() {
            let mut plus = m.clone();
            plus.params.get_mut(name).unwrap().data_mut()[i] += eps;
            let mut minus = m.clone();
            minus.params.get_mut(name).unwrap().data_mut()[i] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let g = grads[name].data()[i] / n;
            let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]: analytic {g:e}, numeric {fd:e}"));
            }
        }
    }
    worst
}

/// Minimal CIFAR-10 record with the given label and every pixel set to `fill`,
/// except the first pixel which is `first`.
pub fn cifar_record(label: u8, first: u8, fill: u8) -> Vec<u8> {
    let mut rec = vec![fill; 3073];
    rec[0] = label;
    rec[1] = first;
    rec
}
