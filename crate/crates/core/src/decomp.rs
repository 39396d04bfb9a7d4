//! Tucker (HOSVD), CP (alternating least squares) and tensor-train (TT-SVD)
//! decompositions of 4-mode kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::conv::{ConvError, Kernel};
use crate::linalg::{svd, LinalgError};
use crate::tensor::{contract, matmul, inverse_permutation, is_permutation, ContractionSpec, DenseTensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecompError {
    #[error("rank {rank} for mode {mode} outside 1..={max}")]
    BadRank { mode: usize, rank: usize, max: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("least-squares normal matrix is singular even after ridge repair")]
    SingularUpdate,
    #[error("mode order {0:?} is not a permutation of 0..4")]
    BadModeOrder(Vec<usize>),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Conv(#[from] ConvError),
}

pub type Result<T> = std::result::Result<T, DecompError>;

/// Mode-`mode` unfolding: rows index `mode`, columns the remaining modes in order.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    let rank = t.rank();
    let mut order = vec![mode];
    order.extend((0..rank).filter(|&m| m != mode));
    let rows = t.dims()[mode];
    let cols = t.len() / rows;
    Ok(t.permute(&order)?.reshape(&[rows, cols])?)
}

/// Largest admissible rank for each mode: `min(dim_i, product of the other dims)`.
pub fn feasible_ranks(dims: [usize; 4]) -> [usize; 4] {
    let total: usize = dims.iter().product();
    dims.map(|d| d.min(total / d))
}

/// Per-mode rank request for Tucker and TT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ranks<const N: usize> {
    Full,
    Fixed([usize; N]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    /// Core tensor with dims `ranks`.
    pub core: DenseTensor,
    /// Mode matrices `dim_i × ranks[i]` with orthonormal columns, in (OUT, IN, KH, KW) order.
    pub modes: [DenseTensor; 4],
    /// Full singular spectrum of each mode unfolding.
    pub singvals: [Vec<f64>; 4],
    pub ranks: [usize; 4],
}

fn tucker_spec() -> ContractionSpec {
    ContractionSpec::parse("abcd,oa,ib,hc,wd->oihw").expect("static spec")
}

/// Truncated higher-order SVD. Mode matrices are the leading left singular
/// vectors of each unfolding; the core absorbs the singular values.
pub fn hosvd(k: &Kernel, ranks: Ranks<4>) -> Result<TuckerFactors> {
    let dims = k.dims();
    let feasible = feasible_ranks(dims);
    let ranks = match ranks {
        Ranks::Full => feasible,
        Ranks::Fixed(r) => r,
    };
    for mode in 0..4 {
        if ranks[mode] < 1 || ranks[mode] > feasible[mode] {
            return Err(DecompError::BadRank { mode, rank: ranks[mode], max: feasible[mode] });
        }
    }
    let mut modes = Vec::with_capacity(4);
    let mut singvals = Vec::with_capacity(4);
    for mode in 0..4 {
        let f = svd(&unfold(k.tensor(), mode)?)?;
        modes.push(leading_columns(&f.u, ranks[mode])?);
        singvals.push(f.s);
    }
    let modes: [DenseTensor; 4] = modes.try_into().expect("four modes");
    let singvals: [Vec<f64>; 4] = singvals.try_into().expect("four modes");
    let spec = ContractionSpec::parse("oihw,oa,ib,hc,wd->abcd").expect("static spec");
    let core = contract(&[k.tensor(), &modes[0], &modes[1], &modes[2], &modes[3]], &spec)?;
    Ok(TuckerFactors { core, modes, singvals, ranks })
}

pub(crate) fn leading_columns(u: &DenseTensor, r: usize) -> Result<DenseTensor> {
    let (m, n) = (u.dims()[0], u.dims()[1]);
    if r > n {
        return Err(DecompError::SizeMismatch(format!("asked for {r} of {n} columns")));
    }
    let mut out = Vec::with_capacity(m * r);
    for i in 0..m {
        out.extend_from_slice(&u.data()[i * n..i * n + r]);
    }
    Ok(DenseTensor::new(vec![m, r], out)?)
}

pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<Kernel> {
    if f.core.rank() != 4 {
        return Err(DecompError::SizeMismatch(format!("core has dims {:?}", f.core.dims())));
    }
    for (mode, u) in f.modes.iter().enumerate() {
        if u.rank() != 2 || u.dims()[1] != f.core.dims()[mode] {
            return Err(DecompError::SizeMismatch(format!(
                "mode matrix {mode} has dims {:?} but core mode has size {}",
                u.dims(),
                f.core.dims()[mode]
            )));
        }
    }
    let t = contract(&[&f.core, &f.modes[0], &f.modes[1], &f.modes[2], &f.modes[3]], &tucker_spec())?;
    Ok(Kernel::new(t)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpOptions {
    pub max_iters: usize,
    /// Stop once the change in relative fit error between sweeps drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for CpOptions {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    pub rank: usize,
    /// Factor matrices `dim_i × rank` with unit-norm columns, (OUT, IN, KH, KW) order.
    pub factors: [DenseTensor; 4],
    /// Column weights, descending.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpDecomposition {
    pub factors: CpFactors,
    /// Relative residual `‖K - K̃‖ / ‖K‖` of the returned factors.
    pub fit_error: f64,
    /// Relative residual after each sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// CP decomposition by alternating least squares with per-update column
/// normalization into the weights.
pub fn cp_als(k: &Kernel, rank: usize, opts: &CpOptions) -> Result<CpDecomposition> {
    if rank < 1 {
        return Err(DecompError::BadRank { mode: 0, rank, max: usize::MAX });
    }
    let dims = k.dims();
    let norm = k.frobenius_norm();
    if norm == 0.0 {
        let factors = dims.map(|d| DenseTensor::from_fn(&[d, rank], |ix| if ix[0] == 0 { 1.0 } else { 0.0 }).unwrap());
        return Ok(CpDecomposition {
            factors: CpFactors { rank, factors, weights: vec![0.0; rank] },
            fit_error: 0.0,
            trace: Vec::new(),
            converged: true,
        });
    }

    let mut factors = initial_factors(k, rank, opts.seed)?;
    let mut weights = vec![1.0; rank];
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iters {
        for mode in 0..4 {
            let gram = hadamard_grams(&factors, mode)?;
            let mttkrp = mttkrp(k.tensor(), &factors, mode);
            let updated = solve_normal(&gram, &mttkrp)?;
            let (unit, w) = normalize_columns(&updated);
            factors[mode] = unit;
            weights = w;
        }
        let current = CpFactors { rank, factors: factors.clone(), weights: weights.clone() };
        let err = residual(k, &current)? / norm;
        let done = trace.last().is_some_and(|&prev: &f64| (prev - err).abs() < opts.tol) || err < 1e-15;
        trace.push(err);
        if done {
            converged = true;
            break;
        }
    }

    let sorted = sort_by_weight(CpFactors { rank, factors, weights });
    let fit_error = residual(k, &sorted)? / norm;
    Ok(CpDecomposition { factors: sorted, fit_error, trace, converged })
}

fn initial_factors(k: &Kernel, rank: usize, seed: u64) -> Result<[DenseTensor; 4]> {
    let dims = k.dims();
    let mut out = Vec::with_capacity(4);
    if dims.iter().all(|&d| rank <= d) {
        for mode in 0..4 {
            let f = svd(&unfold(k.tensor(), mode)?)?;
            out.push(leading_columns(&f.u, rank)?);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &d in &dims {
            let data: Vec<f64> = (0..d * rank).map(|_| rng.random_range(-1.0..=1.0)).collect();
            out.push(normalize_columns(&DenseTensor::new(vec![d, rank], data)?).0);
        }
    }
    Ok(out.try_into().expect("four modes"))
}

/// Hadamard product of `AᵀA` over all modes except `skip`.
fn hadamard_grams(factors: &[DenseTensor; 4], skip: usize) -> Result<DenseTensor> {
    let r = factors[0].dims()[1];
    let mut acc = DenseTensor::filled(&[r, r], 1.0)?;
    for (mode, a) in factors.iter().enumerate() {
        if mode == skip {
            continue;
        }
        let g = contract(&[a, a], &ContractionSpec::parse("ir,is->rs").expect("static spec"))?;
        acc = acc.hadamard(&g)?;
    }
    Ok(acc)
}

/// Matricized tensor times Khatri-Rao product of all factors except `mode`.
fn mttkrp(t: &DenseTensor, factors: &[DenseTensor; 4], mode: usize) -> DenseTensor {
    let dims = t.dims();
    let r = factors[0].dims()[1];
    let mut out = vec![0.0; dims[mode] * r];
    let f: Vec<&[f64]> = factors.iter().map(|a| a.data()).collect();
    let data = t.data();
    let mut off = 0;
    let mut prod = vec![0.0; r];
    for o in 0..dims[0] {
        for i in 0..dims[1] {
            for h in 0..dims[2] {
                for w in 0..dims[3] {
                    let x = data[off];
                    off += 1;
                    if x == 0.0 {
                        continue;
                    }
                    let idx = [o, i, h, w];
                    prod.iter_mut().for_each(|p| *p = x);
                    for m in (0..4).filter(|&m| m != mode) {
                        let row = &f[m][idx[m] * r..(idx[m] + 1) * r];
                        for (p, &a) in prod.iter_mut().zip(row) {
                            *p *= a;
                        }
                    }
                    let dst = &mut out[idx[mode] * r..(idx[mode] + 1) * r];
                    for (d, &p) in dst.iter_mut().zip(&prod) {
                        *d += p;
                    }
                }
            }
        }
    }
    DenseTensor::new(vec![dims[mode], r], out).expect("consistent dims")
}

/// Solves `X · G = M` for symmetric `G` by pseudo-inverse. Each update stays
/// an exact least-squares minimiser even when the requested rank exceeds what
/// the kernel supports and `G` is singular, so the error trace cannot rise.
fn solve_normal(gram: &DenseTensor, m: &DenseTensor) -> Result<DenseTensor> {
    let r = gram.dims()[0];
    let f = svd(gram)?;
    let cutoff = f.s[0] * r as f64 * f64::EPSILON;
    if !(f.s[0] > 0.0) {
        return Err(DecompError::SingularUpdate);
    }
    let kept = f.s.iter().take_while(|&&s| s > cutoff).count();
    let (ud, vd) = (f.u.data(), f.v.data());
    let n_sv = f.s.len();
    let pinv = DenseTensor::from_fn(&[r, r], |ix| {
        (0..kept).map(|k| vd[k * r + ix[0]] * ud[ix[1] * n_sv + k] / f.s[k]).sum()
    })?;
    Ok(matmul(m, &pinv)?)
}

fn normalize_columns(a: &DenseTensor) -> (DenseTensor, Vec<f64>) {
    let (m, r) = (a.dims()[0], a.dims()[1]);
    let mut out = a.clone();
    let mut weights = vec![0.0; r];
    for c in 0..r {
        let norm = (0..m).map(|i| a.data()[i * r + c].powi(2)).sum::<f64>().sqrt();
        weights[c] = norm;
        let d = out.data_mut();
        if norm > 0.0 {
            for i in 0..m {
                d[i * r + c] /= norm;
            }
        } else {
            // a dead column: park it on a unit vector so the Gram stays well defined
            for i in 0..m {
                d[i * r + c] = if i == 0 { 1.0 } else { 0.0 };
            }
        }
    }
    (out.without_labels(), weights)
}

fn sort_by_weight(f: CpFactors) -> CpFactors {
    let mut order: Vec<usize> = (0..f.rank).collect();
    order.sort_by(|&a, &b| f.weights[b].partial_cmp(&f.weights[a]).unwrap_or(std::cmp::Ordering::Equal));
    let weights = order.iter().map(|&c| f.weights[c]).collect();
    let factors = f.factors.map(|a| {
        let m = a.dims()[0];
        let r = a.dims()[1];
        DenseTensor::from_fn(&[m, r], |ix| a.data()[ix[0] * r + order[ix[1]]]).expect("same dims")
    });
    CpFactors { rank: f.rank, factors, weights }
}

fn residual(k: &Kernel, f: &CpFactors) -> Result<f64> {
    Ok(k.tensor().sub(cp_reconstruct(f)?.tensor())?.frobenius_norm())
}

/// `sum_r weights[r] · a_r ⊗ b_r ⊗ c_r ⊗ d_r`.
pub fn cp_reconstruct(f: &CpFactors) -> Result<Kernel> {
    if f.weights.len() != f.rank {
        return Err(DecompError::SizeMismatch(format!("{} weights for rank {}", f.weights.len(), f.rank)));
    }
    for (mode, a) in f.factors.iter().enumerate() {
        if a.rank() != 2 || a.dims()[1] != f.rank {
            return Err(DecompError::SizeMismatch(format!(
                "factor {mode} has dims {:?}, expected (_, {})",
                a.dims(),
                f.rank
            )));
        }
    }
    let w = DenseTensor::new(vec![f.rank], f.weights.clone())?;
    let spec = ContractionSpec::parse("r,or,ir,hr,wr->oihw").expect("static spec");
    let t = contract(&[&w, &f.factors[0], &f.factors[1], &f.factors[2], &f.factors[3]], &spec)?;
    Ok(Kernel::new(t)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtFactors {
    /// Cores `(left bond, mode dim, right bond)`; outer bonds are 1.
    pub cores: Vec<DenseTensor>,
    pub bond_dims: [usize; 3],
    /// Full singular spectrum seen at each bond before truncation.
    pub spectra: [Vec<f64>; 3],
    /// Kernel modes in chain order.
    pub mode_order: [usize; 4],
}

/// Chain order (OUT, IN, KH, KW).
pub const DEFAULT_TT_ORDER: [usize; 4] = [0, 1, 2, 3];

/// Sequential SVD sweep. A bond keeps at most `max_bond` singular values and
/// never more than the number of nonzero ones (at least one).
pub fn tt_svd(k: &Kernel, max_bond: Ranks<3>, mode_order: [usize; 4]) -> Result<TtFactors> {
    if !is_permutation(&mode_order, 4) {
        return Err(DecompError::BadModeOrder(mode_order.to_vec()));
    }
    if let Ranks::Fixed(b) = max_bond {
        if let Some(mode) = b.iter().position(|&x| x == 0) {
            return Err(DecompError::BadRank { mode, rank: 0, max: usize::MAX });
        }
    }
    let t = k.tensor().permute(&mode_order)?;
    let dims: Vec<usize> = t.dims().to_vec();
    let mut carry = t.without_labels();
    let mut left = 1;
    let mut cores = Vec::with_capacity(4);
    let mut bond_dims = [0; 3];
    let mut spectra: [Vec<f64>; 3] = Default::default();
    for bond in 0..3 {
        let rows = left * dims[bond];
        let cols = carry.len() / rows;
        let f = svd(&carry.reshape(&[rows, cols])?)?;
        let nonzero = f.numerical_rank().max(1);
        let r = match max_bond {
            Ranks::Full => nonzero,
            Ranks::Fixed(b) => b[bond].min(nonzero),
        };
        cores.push(leading_columns(&f.u, r)?.reshape(&[left, dims[bond], r])?);
        let n = f.v.dims()[1];
        let mut next = Vec::with_capacity(r * n);
        for row in 0..r {
            next.extend(f.v.data()[row * n..(row + 1) * n].iter().map(|x| x * f.s[row]));
        }
        carry = DenseTensor::new(vec![r, n], next)?;
        bond_dims[bond] = r;
        spectra[bond] = f.s;
        left = r;
    }
    cores.push(carry.reshape(&[left, dims[3], 1])?);
    Ok(TtFactors { cores, bond_dims, spectra, mode_order })
}

pub fn tt_reconstruct(f: &TtFactors) -> Result<Kernel> {
    if f.cores.len() != 4 {
        return Err(DecompError::SizeMismatch(format!("{} cores, expected 4", f.cores.len())));
    }
    if !is_permutation(&f.mode_order, 4) {
        return Err(DecompError::BadModeOrder(f.mode_order.to_vec()));
    }
    let refs: Vec<&DenseTensor> = f.cores.iter().collect();
    let spec = ContractionSpec::parse("pax,xby,ycz,zdq->pabcdq").expect("static spec");
    let chain = contract(&refs, &spec).map_err(|e| match e {
        TensorError::SpecMismatch(m) => DecompError::SizeMismatch(m),
        other => other.into(),
    })?;
    let d = chain.dims();
    if d[0] != 1 || d[5] != 1 {
        return Err(DecompError::SizeMismatch(format!("boundary bonds must be 1, got {} and {}", d[0], d[5])));
    }
    let t = chain.reshape(&d[1..5])?;
    Ok(Kernel::new(t.permute(&inverse_permutation(&f.mode_order))?)?)
}
