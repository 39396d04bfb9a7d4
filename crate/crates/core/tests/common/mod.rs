//! Independent reference implementations used as oracles. Nothing here
//! calls into the contraction engine or the SVD under test.
#![allow(dead_code)]

use std::collections::BTreeMap;

use kerneltn_core::conv::{ConvGeometry, Image, Kernel};
use kerneltn_core::DenseTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: &[usize], rng: &mut impl Rng) -> DenseTensor {
    DenseTensor::random_uniform(dims, -1.0, 1.0, rng).unwrap()
}

pub fn random_kernel(dims: [usize; 4], rng: &mut impl Rng) -> Kernel {
    Kernel::new(random_tensor(&dims, rng)).unwrap()
}

pub fn random_image(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Image {
    Image::new(random_tensor(&[c, h, w], rng)).unwrap()
}

/// Small-integer-valued tensor; sums of such values are exact in f64.
pub fn integer_tensor(dims: &[usize], rng: &mut impl Rng) -> DenseTensor {
    let n = dims.iter().product();
    DenseTensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-8i32..=8) as f64).collect()).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn norm_sq(t: &DenseTensor) -> f64 {
    t.data().iter().map(|x| x * x).sum()
}

pub fn naive_matmul(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    assert_eq!(b.dims()[0], k);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    DenseTensor::new(vec![m, n], out).unwrap()
}

pub fn naive_transpose(a: &DenseTensor) -> DenseTensor {
    let (m, n) = (a.dims()[0], a.dims()[1]);
    DenseTensor::from_fn(&[n, m], |ix| a.data()[ix[1] * n + ix[0]]).unwrap()
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations,
/// returned in descending order.
pub fn jacobi_eigenvalues(a: &DenseTensor) -> Vec<f64> {
    let n = a.dims()[0];
    let mut m: Vec<f64> = a.data().to_vec();
    let at = |m: &Vec<f64>, i: usize, j: usize| m[i * n + j];
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| at(&m, i, j).powi(2)).sum();
        let total: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = at(&m, p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (at(&m, q, q) - at(&m, p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Brute-force einsum: loops over every assignment of every symbol.
/// Returns the result and the number of scalar multiply-accumulates of the
/// innermost update.
pub fn naive_einsum(inputs: &[&DenseTensor], specs: &[Vec<char>], output: &[char]) -> (DenseTensor, u64) {
    let mut sizes: BTreeMap<char, usize> = BTreeMap::new();
    for (t, s) in inputs.iter().zip(specs) {
        for (c, &d) in s.iter().zip(t.dims()) {
            sizes.insert(*c, d);
        }
    }
    let symbols: Vec<char> = sizes.keys().copied().collect();
    let extents: Vec<usize> = symbols.iter().map(|c| sizes[c]).collect();
    let out_dims: Vec<usize> = output.iter().map(|c| sizes[c]).collect();
    let mut out = DenseTensor::zeros(&out_dims).unwrap();
    let pos = |c: char| symbols.iter().position(|&x| x == c).unwrap();
    let mut counter = vec![0usize; symbols.len()];
    let mut macs = 0u64;
    if extents.contains(&0) {
        return (out, 0);
    }
    loop {
        let mut prod = 1.0;
        for (t, s) in inputs.iter().zip(specs) {
            let ix: Vec<usize> = s.iter().map(|&c| counter[pos(c)]).collect();
            prod *= t.get(&ix);
        }
        let oix: Vec<usize> = output.iter().map(|&c| counter[pos(c)]).collect();
        let v = out.get(&oix);
        out.set(&oix, v + prod);
        macs += 1;
        let mut k = symbols.len();
        loop {
            if k == 0 {
                return (out, macs);
            }
            k -= 1;
            counter[k] += 1;
            if counter[k] < extents[k] {
                break;
            }
            counter[k] = 0;
        }
    }
}

fn padded(img: &Image, c: usize, r: isize, s: isize) -> f64 {
    let (_, h, w) = img.shape();
    if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
        0.0
    } else {
        img.tensor().get(&[c, r as usize, s as usize])
    }
}

fn out_size(n: usize, k: usize, p: usize, s: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

pub fn naive_im2col(img: &Image, g: &ConvGeometry) -> DenseTensor {
    let (c, h, w) = img.shape();
    let ho = out_size(h, g.kernel_h, g.pad_h, g.stride_h);
    let wo = out_size(w, g.kernel_w, g.pad_w, g.stride_w);
    let mut out = DenseTensor::zeros(&[ho, wo, c, g.kernel_h, g.kernel_w]).unwrap();
    for i in 0..ho {
        for j in 0..wo {
            for ch in 0..c {
                for a in 0..g.kernel_h {
                    for b in 0..g.kernel_w {
                        let r = (i * g.stride_h + a) as isize - g.pad_h as isize;
                        let s = (j * g.stride_w + b) as isize - g.pad_w as isize;
                        out.set(&[i, j, ch, a, b], padded(img, ch, r, s));
                    }
                }
            }
        }
    }
    out
}

/// Direct cross-correlation with zero padding.
pub fn naive_conv(img: &Image, k: &Kernel, g: &ConvGeometry) -> DenseTensor {
    let (c, h, w) = img.shape();
    let [o_n, _, kh, kw] = k.dims();
    let ho = out_size(h, kh, g.pad_h, g.stride_h);
    let wo = out_size(w, kw, g.pad_w, g.stride_w);
    let mut out = DenseTensor::zeros(&[o_n, ho, wo]).unwrap();
    for o in 0..o_n {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = 0.0;
                for ch in 0..c {
                    for a in 0..kh {
                        for b in 0..kw {
                            let r = (i * g.stride_h + a) as isize - g.pad_h as isize;
                            let s = (j * g.stride_w + b) as isize - g.pad_w as isize;
                            acc += padded(img, ch, r, s) * k.tensor().get(&[o, ch, a, b]);
                        }
                    }
                }
                out.set(&[o, i, j], acc);
            }
        }
    }
    out
}

fn naive_pool(img: &Image, window: usize, stride: usize, reduce: impl Fn(&[f64]) -> f64) -> DenseTensor {
    let (c, h, w) = img.shape();
    let (ho, wo) = (out_size(h, window, 0, stride), out_size(w, window, 0, stride));
    DenseTensor::from_fn(&[c, ho, wo], |ix| {
        let mut vals = Vec::new();
        for a in 0..window {
            for b in 0..window {
                vals.push(img.tensor().get(&[ix[0], ix[1] * stride + a, ix[2] * stride + b]));
            }
        }
        reduce(&vals)
    })
    .unwrap()
}

pub fn naive_avg_pool(img: &Image, window: usize, stride: usize) -> DenseTensor {
    naive_pool(img, window, stride, |v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn naive_max_pool(img: &Image, window: usize, stride: usize) -> DenseTensor {
    naive_pool(img, window, stride, |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Matricization by explicit index arithmetic: rows enumerate `left` axes,
/// columns the remaining axes, both in ascending axis order.
pub fn naive_matricize(t: &DenseTensor, left: &[usize]) -> DenseTensor {
    let dims = t.dims();
    let right: Vec<usize> = (0..dims.len()).filter(|a| !left.contains(a)).collect();
    let rows: usize = left.iter().map(|&a| dims[a]).product();
    let cols: usize = right.iter().map(|&a| dims[a]).product();
    DenseTensor::from_fn(&[rows, cols], |rc| {
        let mut ix = vec![0; dims.len()];
        let (mut r, mut c) = (rc[0], rc[1]);
        for &a in left.iter().rev() {
            ix[a] = r % dims[a];
            r /= dims[a];
        }
        for &a in right.iter().rev() {
            ix[a] = c % dims[a];
            c /= dims[a];
        }
        t.get(&ix)
    })
    .unwrap()
}

/// Singular values via eigenvalues of the smaller Gram matrix.
pub fn gram_singular_values(m: &DenseTensor) -> Vec<f64> {
    let (r, c) = (m.dims()[0], m.dims()[1]);
    let g = if r <= c {
        naive_matmul(m, &naive_transpose(m))
    } else {
        naive_matmul(&naive_transpose(m), m)
    };
    jacobi_eigenvalues(&g).into_iter().map(|e| e.max(0.0).sqrt()).collect()
}

/// Random orthogonal `n × n` matrix from Gram-Schmidt on a random matrix.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DenseTensor {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for q in &cols {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > 1e-6 {
            cols.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    DenseTensor::from_fn(&[n, n], |ix| cols[ix[1]][ix[0]]).unwrap()
}
