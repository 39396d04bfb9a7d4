//! Correlation truncation of kernels across mode bipartitions, plus the
//! metrics used to judge it: norm loss, entanglement entropy, correlation
//! loss and compression ratio.
//!
//! A bipartition is named by the modes on its left side, e.g. `OUT` or
//! `OUT,KW`. Matricization puts the left modes (in canonical
//! `OUT, IN, KH, KW` order) on the rows and the remaining modes on the
//! columns.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::conv::{ConvError, Kernel};
use crate::decomp::{cp_als, cp_reconstruct, CpOptions, DecompError};
use crate::linalg::{svd, truncated_reconstruct, LinalgError};
use crate::tensor::{inverse_permutation, DenseTensor, TensorError};

/// Kernels with a Frobenius norm below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TruncError {
    #[error("invalid bipartition: {0}")]
    BadBipartition(String),
    #[error("keep {keep} outside 1..={n_sv}")]
    BadRank { keep: usize, n_sv: usize },
    #[error("spectrum is identically zero")]
    ZeroSpectrum,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TruncError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Out,
    In,
    Kh,
    Kw,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Out, Mode::In, Mode::Kh, Mode::Kw];

    pub fn axis(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Out => "OUT",
            Mode::In => "IN",
            Mode::Kh => "KH",
            Mode::Kw => "KW",
        }
    }
}

impl FromStr for Mode {
    type Err = TruncError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OUT" => Ok(Mode::Out),
            "IN" => Ok(Mode::In),
            "KH" => Ok(Mode::Kh),
            "KW" => Ok(Mode::Kw),
            other => Err(TruncError::BadBipartition(format!("unknown mode '{other}'"))),
        }
    }
}

/// Split of the four kernel modes; `left` is a nonempty proper subset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bipartition {
    left: Vec<Mode>,
}

impl Bipartition {
    pub fn new(modes: &[Mode]) -> Result<Self> {
        let mut left = modes.to_vec();
        left.sort();
        left.dedup();
        if left.len() != modes.len() {
            return Err(TruncError::BadBipartition(format!("repeated mode in {modes:?}")));
        }
        if left.is_empty() || left.len() > 3 {
            return Err(TruncError::BadBipartition(format!(
                "left side must hold 1 to 3 modes, got {}",
                left.len()
            )));
        }
        Ok(Self { left })
    }

    pub fn single(mode: Mode) -> Self {
        Self { left: vec![mode] }
    }

    /// The seven cuts studied: OUT, IN, KH, KW, (OUT,IN), (OUT,KH), (OUT,KW).
    pub fn studied() -> Vec<Bipartition> {
        use Mode::*;
        [vec![Out], vec![In], vec![Kh], vec![Kw], vec![Out, In], vec![Out, Kh], vec![Out, Kw]]
            .iter()
            .map(|m| Bipartition::new(m).expect("static cut"))
            .collect()
    }

    pub fn left(&self) -> &[Mode] {
        &self.left
    }

    pub fn right(&self) -> Vec<Mode> {
        Mode::ALL.into_iter().filter(|m| !self.left.contains(m)).collect()
    }

    pub fn complement(&self) -> Bipartition {
        Bipartition { left: self.right() }
    }

    /// Kernel axes in matricization order (left modes, then right modes).
    pub fn axis_order(&self) -> [usize; 4] {
        let order: Vec<usize> = self.left.iter().chain(self.right().iter()).map(|m| m.axis()).collect();
        order.try_into().expect("four modes")
    }

    /// `(rows, cols)` of the matricization of a kernel with `dims`.
    pub fn matrix_dims(&self, dims: [usize; 4]) -> (usize, usize) {
        let rows: usize = self.left.iter().map(|m| dims[m.axis()]).product();
        (rows, dims.iter().product::<usize>() / rows)
    }
}

impl FromStr for Bipartition {
    type Err = TruncError;

    fn from_str(s: &str) -> Result<Self> {
        let modes = s
            .trim_matches(|c| c == '(' || c == ')')
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Mode>>>()?;
        Bipartition::new(&modes)
    }
}

impl fmt::Display for Bipartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.left.iter().map(|m| m.label()).collect();
        f.write_str(&names.join(","))
    }
}

pub fn matricize(k: &Kernel, b: &Bipartition) -> Result<DenseTensor> {
    let (rows, cols) = b.matrix_dims(k.dims());
    Ok(k.tensor().permute(&b.axis_order())?.reshape(&[rows, cols])?)
}

/// Inverse of [`matricize`] for a kernel of shape `dims`.
pub fn dematricize(m: &DenseTensor, b: &Bipartition, dims: [usize; 4]) -> Result<Kernel> {
    let order = b.axis_order();
    let permuted: Vec<usize> = order.iter().map(|&a| dims[a]).collect();
    let t = m.reshape(&permuted)?;
    Ok(Kernel::new(t.permute(&inverse_permutation(&order))?)?)
}

/// Singular values of the matricization across `b`, descending.
pub fn spectrum(k: &Kernel, b: &Bipartition) -> Result<Vec<f64>> {
    Ok(svd(&matricize(k, b)?)?.s)
}

/// `-sum p ln p` with `p_k = s_k² / sum s²`.
pub fn entanglement_entropy(s: &[f64]) -> Result<f64> {
    let total: f64 = s.iter().map(|x| x * x).sum();
    if !(total > 0.0) {
        return Err(TruncError::ZeroSpectrum);
    }
    let e = -s
        .iter()
        .map(|x| x * x / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    Ok(e.max(0.0))
}

/// Percentage drop from `before` to `after`; 0 when `before` is not positive.
pub fn norm_loss_pct(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        (before - after) / before * 100.0
    } else {
        0.0
    }
}

/// Percentage drop in entanglement entropy; 0 when `e_before` is not positive.
pub fn corr_loss_pct(e_before: f64, e_after: f64) -> f64 {
    if e_before > 0.0 {
        (e_before - e_after) / e_before * 100.0
    } else {
        0.0
    }
}

/// Dense parameter count over factored count `keep·(rows + cols + 1)`.
pub fn compression_ratio_svd(b: &Bipartition, dims: [usize; 4], keep: usize) -> f64 {
    let (rows, cols) = b.matrix_dims(dims);
    let dense: usize = dims.iter().product();
    dense as f64 / (keep * (rows + cols + 1)) as f64
}

/// Dense parameter count over `rank·(sum of dims) + rank`.
pub fn compression_ratio_cp(dims: [usize; 4], rank: usize) -> f64 {
    let dense: usize = dims.iter().product();
    dense as f64 / (rank * dims.iter().sum::<usize>() + rank) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Cut {
    Bipartition(Bipartition),
    Cp,
}

impl fmt::Display for Cut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cut::Bipartition(b) => b.fmt(f),
            Cut::Cp => f.write_str("CP"),
        }
    }
}

impl FromStr for Cut {
    type Err = TruncError;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("cp") {
            Ok(Cut::Cp)
        } else {
            Ok(Cut::Bipartition(s.parse()?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationReport {
    pub cut: Cut,
    /// Singular values kept, or the CP rank.
    pub kept: usize,
    pub norm_before: f64,
    pub norm_after: f64,
    pub norm_loss_pct: f64,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub corr_loss_pct: f64,
    pub compression_ratio: f64,
    /// Set when the input kernel norm is below [`ZERO_NORM`]; ratio metrics are then 0.
    pub zero_kernel: bool,
}

fn entropy_or_zero(s: &[f64]) -> f64 {
    entanglement_entropy(s).unwrap_or(0.0)
}

/// Keeps the `keep` largest singular values across `b` and reshapes back.
pub fn truncate_bipartition(k: &Kernel, b: &Bipartition, keep: usize) -> Result<(Kernel, TruncationReport)> {
    let dims = k.dims();
    let f = svd(&matricize(k, b)?)?;
    let n_sv = f.n_sv();
    if keep < 1 || keep > n_sv {
        return Err(TruncError::BadRank { keep, n_sv });
    }
    let truncated = dematricize(&truncated_reconstruct(&f, keep)?, b, dims)?;
    let norm_before = k.frobenius_norm();
    let norm_after = truncated.frobenius_norm();
    let zero_kernel = norm_before < ZERO_NORM;
    let (entropy_before, entropy_after) = if zero_kernel {
        (0.0, 0.0)
    } else {
        (entropy_or_zero(&f.s), entropy_or_zero(&f.s[..keep]))
    };
    let report = TruncationReport {
        cut: Cut::Bipartition(b.clone()),
        kept: keep,
        norm_before,
        norm_after,
        norm_loss_pct: if zero_kernel { 0.0 } else { norm_loss_pct(norm_before, norm_after).max(0.0) },
        entropy_before,
        entropy_after,
        corr_loss_pct: corr_loss_pct(entropy_before, entropy_after),
        compression_ratio: compression_ratio_svd(b, dims, keep),
        zero_kernel,
    };
    Ok((truncated, report))
}

/// Replaces the kernel by a rank-`rank` CP reconstruction. Entropies are
/// reported on the `OUT` bipartition.
pub fn truncate_cp(k: &Kernel, rank: usize, opts: &CpOptions) -> Result<(Kernel, TruncationReport)> {
    let dims = k.dims();
    let decomposition = cp_als(k, rank, opts)?;
    let truncated = cp_reconstruct(&decomposition.factors)?;
    let norm_before = k.frobenius_norm();
    let norm_after = truncated.frobenius_norm();
    let zero_kernel = norm_before < ZERO_NORM;
    let out = Bipartition::single(Mode::Out);
    let (entropy_before, entropy_after) = if zero_kernel {
        (0.0, 0.0)
    } else {
        (entropy_or_zero(&spectrum(k, &out)?), entropy_or_zero(&spectrum(&truncated, &out)?))
    };
    let report = TruncationReport {
        cut: Cut::Cp,
        kept: rank,
        norm_before,
        norm_after,
        norm_loss_pct: if zero_kernel { 0.0 } else { norm_loss_pct(norm_before, norm_after).clamp(0.0, 100.0) },
        entropy_before,
        entropy_after,
        corr_loss_pct: corr_loss_pct(entropy_before, entropy_after),
        compression_ratio: compression_ratio_cp(dims, rank),
        zero_kernel,
    };
    Ok((truncated, report))
}
