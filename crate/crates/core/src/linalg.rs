//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations,
//! rank-k reconstruction, and a small SPD solver.
//!
//! The matrix is oriented so the shorter side holds the working vectors;
//! pairs of rows are rotated until every pair is numerically orthogonal.
//! The accumulated rotation is the left factor and the normalized rows are
//! the right factor.

use thiserror::Error;

use crate::tensor::{DenseTensor, TensorError};

/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 60;

/// Singular values below this fraction of the largest are clamped to zero.
pub const CLAMP_RELATIVE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("expected a rank-2 tensor, got rank {0}")]
    NotAMatrix(usize),
    #[error("Jacobi SVD did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("rank {keep} outside 1..={n_sv}")]
    BadRank { keep: usize, n_sv: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// `M = U · diag(s) · V` with `U` m×n_sv, `V` n_sv×n.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: DenseTensor,
    pub s: Vec<f64>,
    pub v: DenseTensor,
}

impl SvdFactors {
    pub fn n_sv(&self) -> usize {
        self.s.len()
    }

    /// Frobenius norm of `M - M_keep`, i.e. the root of the discarded energy.
    pub fn residual_norm(&self, keep: usize) -> f64 {
        self.s.iter().skip(keep).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Number of singular values that are exactly nonzero after clamping.
    pub fn numerical_rank(&self) -> usize {
        self.s.iter().filter(|&&x| x > 0.0).count()
    }
}

pub fn svd(m: &DenseTensor) -> Result<SvdFactors> {
    if m.rank() != 2 {
        return Err(LinalgError::NotAMatrix(m.rank()));
    }
    let (rows, cols) = (m.dims()[0], m.dims()[1]);
    if rows <= cols {
        let (j, s, w) = jacobi_rows(m.data(), rows, cols)?;
        // U = Jᵀ, so U's columns are J's rows
        let u = DenseTensor::new(vec![rows, rows], transpose_data(&j, rows, rows))?;
        let v = DenseTensor::new(vec![rows, cols], w)?;
        Ok(fix_signs(SvdFactors { u, s, v }))
    } else {
        // Mᵀ = U' S V'  =>  M = V'ᵀ S U'ᵀ
        let mt = transpose_data(m.data(), rows, cols);
        let (j, s, w) = jacobi_rows(&mt, cols, rows)?;
        let u = DenseTensor::new(vec![rows, cols], transpose_data(&w, cols, rows))?;
        let v = DenseTensor::new(vec![cols, cols], j)?;
        Ok(fix_signs(SvdFactors { u, s, v }))
    }
}

/// Returns `sum_{k<keep} s_k u_k v_k`.
pub fn truncated_reconstruct(f: &SvdFactors, keep: usize) -> Result<DenseTensor> {
    let n_sv = f.n_sv();
    if keep < 1 || keep > n_sv {
        return Err(LinalgError::BadRank { keep, n_sv });
    }
    let (m, n) = (f.u.dims()[0], f.v.dims()[1]);
    let (ud, vd) = (f.u.data(), f.v.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for k in 0..keep {
            let coef = ud[i * n_sv + k] * f.s[k];
            if coef == 0.0 {
                continue;
            }
            for (o, &v) in row.iter_mut().zip(&vd[k * n..(k + 1) * n]) {
                *o += coef * v;
            }
        }
    }
    Ok(DenseTensor::new(vec![m, n], out)?)
}

fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonalizes the `p` rows (length `q`, `p <= q`) of `a`.
///
/// Returns the accumulated rotation `J` (p×p, row-major), the singular
/// values in descending order, and the orthonormal right factor rows (p×q),
/// with `J` and the right factor reordered consistently with the values.
fn jacobi_rows(a: &[f64], p: usize, q: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut w = a.to_vec();
    let mut j = vec![0.0; p * p];
    for i in 0..p {
        j[i * p + i] = 1.0;
    }
    let tol = (q as f64).sqrt() * f64::EPSILON;
    // Rows this small end up clamped to zero (the final s_max is at least
    // ‖M‖/√p); rotating them only chases rounding noise.
    let fro2 = dot(&w, &w);
    let negligible = (CLAMP_RELATIVE * CLAMP_RELATIVE) * fro2 / p as f64;

    let mut converged = p < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..p - 1 {
            for k in i + 1..p {
                let (head, tail) = w.split_at_mut(k * q);
                let wi = &mut head[i * q..(i + 1) * q];
                let wk = &mut tail[..q];
                let alpha = dot(wi, wi);
                let beta = dot(wk, wk);
                let gamma = dot(wi, wk);
                if gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wi, wk, c, s);
                let (jh, jt) = j.split_at_mut(k * p);
                rotate(&mut jh[i * p..(i + 1) * p], &mut jt[..p], c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = (0..p).map(|i| dot(&w[i * q..(i + 1) * q], &w[i * q..(i + 1) * q]).sqrt()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    // stable: ties keep their input-derived order
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap_or(std::cmp::Ordering::Equal));
    let s_max = order.first().map_or(0.0, |&i| norms[i]);
    let cutoff = CLAMP_RELATIVE * s_max;

    let mut s = Vec::with_capacity(p);
    let mut j_sorted = Vec::with_capacity(p * p);
    let mut v = vec![0.0; p * q];
    let mut pending = Vec::new();
    for (slot, &i) in order.iter().enumerate() {
        j_sorted.extend_from_slice(&j[i * p..(i + 1) * p]);
        let sv = if norms[i] > cutoff && norms[i] > 0.0 { norms[i] } else { 0.0 };
        s.push(sv);
        if sv > 0.0 {
            for (dst, &src) in v[slot * q..(slot + 1) * q].iter_mut().zip(&w[i * q..(i + 1) * q]) {
                *dst = src / sv;
            }
        } else {
            pending.push(slot);
        }
    }
    complete_rows(&mut v, q, &pending);
    Ok((j_sorted, s, v))
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the rows listed in `pending` with unit vectors orthogonal to every other row.
fn complete_rows(v: &mut [f64], q: usize, pending: &[usize]) {
    if pending.is_empty() {
        return;
    }
    let p = v.len() / q;
    let mut filled: Vec<usize> = (0..p).filter(|r| !pending.contains(r)).collect();
    let mut candidate = 0;
    for &slot in pending {
        loop {
            assert!(candidate < q, "orthogonal completion ran out of basis vectors");
            let mut e = vec![0.0; q];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &r in &filled {
                    let row = &v[r * q..(r + 1) * q];
                    let proj = dot(&e, row);
                    for (x, &y) in e.iter_mut().zip(row) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 0.5 {
                for (dst, x) in v[slot * q..(slot + 1) * q].iter_mut().zip(&e) {
                    *dst = x / norm;
                }
                filled.push(slot);
                break;
            }
        }
    }
}

/// Makes the largest-magnitude entry of each left singular vector nonnegative.
fn fix_signs(mut f: SvdFactors) -> SvdFactors {
    let m = f.u.dims()[0];
    let n_sv = f.n_sv();
    let n = f.v.dims()[1];
    for k in 0..n_sv {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..m {
            let x = f.u.data()[i * n_sv + k].abs();
            if x > best_abs {
                best_abs = x;
                best = i;
            }
        }
        if f.u.data()[best * n_sv + k] < 0.0 {
            let ud = f.u.data_mut();
            for i in 0..m {
                ud[i * n_sv + k] = -ud[i * n_sv + k];
            }
            let vd = f.v.data_mut();
            for x in &mut vd[k * n..(k + 1) * n] {
                *x = -*x;
            }
        }
    }
    f
}
