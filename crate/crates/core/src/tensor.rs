//! Dense N-mode tensors and a pairwise contraction engine.
//!
//! Every tensor is stored row-major (last mode fastest) as 64-bit floats.
//! Contractions are written with einsum-style subscripts, e.g. `"ij,jk->ik"`,
//! and executed as a left-to-right sequence of pairwise contractions. Each
//! pairwise step permutes both operands into `[batch, free, contracted]`
//! layout, runs a batched matrix multiply with a fixed accumulation order,
//! and reports its multiply-accumulate count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("bad permutation {order:?} for rank {rank}")]
    BadPermutation { order: Vec<usize>, rank: usize },
    #[error("contraction spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("invalid contraction spec: {0}")]
    InvalidSpec(String),
    #[error("invalid mode labels: {0}")]
    BadLabels(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// N-mode array of `f64` in row-major order with optional per-mode labels.
#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("DenseTensor");
        s.field("dims", &self.dims);
        if let Some(labels) = &self.labels {
            s.field("labels", labels);
        }
        if self.data.len() <= 16 {
            s.field("data", &self.data);
        } else {
            s.field("len", &self.data.len());
        }
        s.finish()
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(TensorError::SizeMismatch(format!(
            "every dimension must be at least 1, got {dims:?}"
        )));
    }
    Ok(())
}

/// Row-major strides for `dims`.
pub fn strides_for(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(TensorError::SizeMismatch(format!(
                "dims {dims:?} need {expected} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data, labels: None })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f64) -> Result<Self> {
        check_dims(dims)?;
        let len = dims.iter().product();
        Ok(Self { dims: dims.to_vec(), data: vec![value; len], labels: None })
    }

    pub fn scalar(value: f64) -> Self {
        Self { dims: Vec::new(), data: vec![value], labels: None }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, dims);
        }
        Ok(Self { dims: dims.to_vec(), data, labels: None })
    }

    /// Entries drawn uniformly from `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(dims: &[usize], lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        let data = (0..len).map(|_| rng.random_range(lo..hi)).collect();
        Ok(Self { dims: dims.to_vec(), data, labels: None })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 })
    }

    /// The copy (generalized delta) tensor: one where all indices agree, zero elsewhere.
    pub fn copy_tensor(rank: usize, dim: usize) -> Result<Self> {
        Self::from_fn(&vec![dim; rank], |ix| {
            if ix.windows(2).all(|w| w[0] == w[1]) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Vector with every entry equal to `alpha` (all-ones when `alpha == 1`).
    pub fn constant_vector(dim: usize, alpha: f64) -> Result<Self> {
        Self::filled(&[dim], alpha)
    }

    pub fn with_labels<S: AsRef<str>>(mut self, labels: &[S]) -> Result<Self> {
        if labels.len() != self.dims.len() {
            return Err(TensorError::BadLabels(format!(
                "{} labels for rank {}",
                labels.len(),
                self.dims.len()
            )));
        }
        let labels: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(TensorError::BadLabels(format!("duplicate labels in {labels:?}")));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_for(&self.dims)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.dims).enumerate() {
            debug_assert!(ix < d, "index {ix} out of range for mode {i} of size {d}");
            off = off * d + ix;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Reinterprets the flat data with new dimensions. Labels are dropped.
    pub fn reshape(&self, new_dims: &[usize]) -> Result<Self> {
        check_dims(new_dims)?;
        let new_len: usize = new_dims.iter().product();
        if new_len != self.data.len() {
            return Err(TensorError::SizeMismatch(format!(
                "cannot reshape {:?} ({} entries) into {new_dims:?} ({new_len} entries)",
                self.dims,
                self.data.len()
            )));
        }
        Ok(Self { dims: new_dims.to_vec(), data: self.data.clone(), labels: None })
    }

    /// Moves mode `order[i]` of `self` to position `i` of the result.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        if !is_permutation(order, self.rank()) {
            return Err(TensorError::BadPermutation { order: order.to_vec(), rank: self.rank() });
        }
        let dims: Vec<usize> = order.iter().map(|&o| self.dims[o]).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| order.iter().map(|&o| l[o].clone()).collect());
        let data = if order.iter().enumerate().all(|(i, &o)| i == o) {
            self.data.clone()
        } else {
            permute_data(&self.data, &self.dims, order)
        };
        Ok(Self { dims, data, labels })
    }

    pub fn hadamard(&self, other: &DenseTensor) -> Result<Self> {
        if self.dims != other.dims {
            return Err(TensorError::SizeMismatch(format!(
                "hadamard of {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Self { dims: self.dims.clone(), data, labels: None })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&x| f(x)).collect(), labels: self.labels.clone() }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn add(&self, other: &DenseTensor) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseTensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(TensorError::SizeMismatch(format!(
                "elementwise op on {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { dims: self.dims.clone(), data, labels: None })
    }

    /// Largest absolute entrywise difference; errors when shapes differ.
    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.rank() != 2 || b.rank() != 2 || a.dims[1] != b.dims[0] {
        return Err(TensorError::SizeMismatch(format!("matmul of {:?} and {:?}", a.dims, b.dims)));
    }
    let (m, k, n) = (a.dims[0], a.dims[1], b.dims[1]);
    let mut out = vec![0.0; m * n];
    gemm_accumulate(&a.data, &b.data, &mut out, m, k, n);
    DenseTensor::new(vec![m, n], out)
}

/// Transpose of a rank-2 tensor.
pub fn transpose(a: &DenseTensor) -> Result<DenseTensor> {
    if a.rank() != 2 {
        return Err(TensorError::SizeMismatch(format!("transpose of rank-{} tensor", a.rank())));
    }
    a.permute(&[1, 0])
}

pub fn is_permutation(order: &[usize], rank: usize) -> bool {
    if order.len() != rank {
        return false;
    }
    let mut seen = vec![false; rank];
    for &o in order {
        if o >= rank || seen[o] {
            return false;
        }
        seen[o] = true;
    }
    true
}

pub fn inverse_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..dims.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

fn permute_data(data: &[f64], dims: &[usize], order: &[usize]) -> Vec<f64> {
    let src_strides = strides_for(dims);
    let out_dims: Vec<usize> = order.iter().map(|&o| dims[o]).collect();
    let step: Vec<usize> = order.iter().map(|&o| src_strides[o]).collect();
    let rank = out_dims.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        // odometer increment, tracking the source offset
        let mut k = rank;
        while k > 0 {
            k -= 1;
            idx[k] += 1;
            src += step[k];
            if idx[k] < out_dims[k] {
                break;
            }
            src -= step[k] * out_dims[k];
            idx[k] = 0;
        }
    }
    out
}

/// `out[m×n] += a[m×k] · b[k×n]`, accumulating in a fixed i-p-j order.
fn gemm_accumulate(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Einsum-style subscripts: one symbol list per input plus the output list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionSpec {
    inputs: Vec<Vec<char>>,
    output: Vec<char>,
}

impl ContractionSpec {
    pub fn new(inputs: Vec<Vec<char>>, output: Vec<char>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(TensorError::InvalidSpec("no inputs".into()));
        }
        let mut seen = BTreeSet::new();
        for &c in &output {
            if !seen.insert(c) {
                return Err(TensorError::InvalidSpec(format!("output symbol '{c}' repeated")));
            }
            if !inputs.iter().any(|s| s.contains(&c)) {
                return Err(TensorError::InvalidSpec(format!(
                    "output symbol '{c}' does not appear in any input"
                )));
            }
        }
        Ok(Self { inputs, output })
    }

    /// Parses `"ab,bc->ac"`. Whitespace is ignored; the arrow is mandatory.
    pub fn parse(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (lhs, rhs) = compact
            .split_once("->")
            .ok_or_else(|| TensorError::InvalidSpec(format!("missing '->' in {s:?}")))?;
        let inputs: Vec<Vec<char>> = lhs.split(',').map(|p| p.chars().collect()).collect();
        for sym in inputs.iter().flatten().chain(rhs.chars().collect::<Vec<_>>().iter()) {
            if !sym.is_alphanumeric() {
                return Err(TensorError::InvalidSpec(format!("bad symbol '{sym}' in {s:?}")));
            }
        }
        Self::new(inputs, rhs.chars().collect())
    }

    pub fn inputs(&self) -> &[Vec<char>] {
        &self.inputs
    }

    pub fn output(&self) -> &[char] {
        &self.output
    }

    /// Distinct symbols in first-appearance order.
    pub fn symbols(&self) -> Vec<char> {
        let mut out = Vec::new();
        for &c in self.inputs.iter().flatten() {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    /// Checks ranks and shared-symbol sizes against concrete inputs, returning symbol sizes.
    pub fn sizes_for(&self, tensors: &[&DenseTensor]) -> Result<BTreeMap<char, usize>> {
        if tensors.len() != self.inputs.len() {
            return Err(TensorError::SpecMismatch(format!(
                "spec has {} inputs, got {} tensors",
                self.inputs.len(),
                tensors.len()
            )));
        }
        let mut sizes = BTreeMap::new();
        for (n, (syms, t)) in self.inputs.iter().zip(tensors).enumerate() {
            if syms.len() != t.rank() {
                return Err(TensorError::SpecMismatch(format!(
                    "input {n} has {} symbols but rank {}",
                    syms.len(),
                    t.rank()
                )));
            }
            for (&c, &d) in syms.iter().zip(t.dims()) {
                match sizes.insert(c, d) {
                    Some(prev) if prev != d => {
                        return Err(TensorError::SpecMismatch(format!(
                            "symbol '{c}' has conflicting sizes {prev} and {d}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(sizes)
    }
}

impl fmt::Display for ContractionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ins: Vec<String> = self.inputs.iter().map(|s| s.iter().collect()).collect();
        write!(f, "{}->{}", ins.join(","), self.output.iter().collect::<String>())
    }
}

/// Multiply-accumulate count of one pairwise step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairStep {
    /// Distinct symbols involved in the step.
    pub symbols: Vec<char>,
    pub macs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContractionStats {
    pub steps: Vec<PairStep>,
}

impl ContractionStats {
    pub fn total_macs(&self) -> u64 {
        self.steps.iter().map(|s| s.macs).sum()
    }
}

/// Contracts `inputs` according to `spec`, pairing left to right.
pub fn contract(inputs: &[&DenseTensor], spec: &ContractionSpec) -> Result<DenseTensor> {
    contract_with_stats(inputs, spec, None).map(|(t, _)| t)
}

/// Like [`contract`], but `order` (a permutation of input positions) selects the
/// sequence in which inputs are folded into the running intermediate.
pub fn contract_ordered(inputs: &[&DenseTensor], spec: &ContractionSpec, order: &[usize]) -> Result<DenseTensor> {
    contract_with_stats(inputs, spec, Some(order)).map(|(t, _)| t)
}

pub fn contract_with_stats(
    inputs: &[&DenseTensor],
    spec: &ContractionSpec,
    order: Option<&[usize]>,
) -> Result<(DenseTensor, ContractionStats)> {
    spec.sizes_for(inputs)?;
    let n = inputs.len();
    let order: Vec<usize> = match order {
        Some(o) => {
            if !is_permutation(o, n) {
                return Err(TensorError::BadPermutation { order: o.to_vec(), rank: n });
            }
            o.to_vec()
        }
        None => (0..n).collect(),
    };

    let output: BTreeSet<char> = spec.output.iter().copied().collect();
    // symbols that must survive after the inputs at order[..=step] are folded in
    let keep_after = |step: usize| -> BTreeSet<char> {
        let mut keep = output.clone();
        for &j in &order[step + 1..] {
            keep.extend(spec.inputs[j].iter().copied());
        }
        keep
    };

    let mut stats = ContractionStats::default();
    let first = order[0];
    let (mut acc, mut acc_syms) = if n == 1 {
        reduce_unary(inputs[first], &spec.inputs[first], &output)
    } else {
        reduce_unary(inputs[first], &spec.inputs[first], &keep_after(0))
    };

    for step in 1..n {
        let j = order[step];
        let keep = keep_after(step);
        let mut keep_b = keep.clone();
        keep_b.extend(acc_syms.iter().copied());
        let (b, b_syms) = reduce_unary(inputs[j], &spec.inputs[j], &keep_b);
        let (t, syms, macs) = contract_pair(&acc, &acc_syms, &b, &b_syms, &keep);
        let mut involved = acc_syms.clone();
        for &c in &b_syms {
            if !involved.contains(&c) {
                involved.push(c);
            }
        }
        stats.steps.push(PairStep { symbols: involved, macs });
        acc = t;
        acc_syms = syms;
    }

    let perm: Vec<usize> = spec
        .output
        .iter()
        .map(|c| acc_syms.iter().position(|s| s == c).expect("output symbol survives"))
        .collect();
    Ok((acc.permute(&perm)?.without_labels(), stats))
}

/// Takes diagonals over repeated symbols and sums out symbols not in `keep`.
fn reduce_unary(t: &DenseTensor, syms: &[char], keep: &BTreeSet<char>) -> (DenseTensor, Vec<char>) {
    let mut unique: Vec<char> = Vec::new();
    for &c in syms {
        if !unique.contains(&c) {
            unique.push(c);
        }
    }
    let result_syms: Vec<char> = unique.iter().copied().filter(|c| keep.contains(c)).collect();
    if unique.len() == syms.len() && result_syms.len() == unique.len() {
        return (t.clone().without_labels(), syms.to_vec());
    }

    let size_of = |c: char| t.dims()[syms.iter().position(|&s| s == c).unwrap()];
    let unique_dims: Vec<usize> = unique.iter().map(|&c| size_of(c)).collect();
    let result_dims: Vec<usize> = result_syms.iter().map(|&c| size_of(c)).collect();
    let src_strides = t.strides();
    // stride of each unique symbol in the source (sum over its repeated positions)
    let src_step: Vec<usize> = unique
        .iter()
        .map(|&c| syms.iter().zip(&src_strides).filter(|(&s, _)| s == c).map(|(_, &st)| st).sum())
        .collect();
    let res_strides = strides_for(&result_dims);
    let res_step: Vec<usize> = unique
        .iter()
        .map(|c| result_syms.iter().position(|s| s == c).map_or(0, |p| res_strides[p]))
        .collect();

    let mut out = vec![0.0; result_dims.iter().product()];
    let total: usize = unique_dims.iter().product();
    let mut idx = vec![0usize; unique.len()];
    for _ in 0..total {
        let src: usize = idx.iter().zip(&src_step).map(|(i, s)| i * s).sum();
        let dst: usize = idx.iter().zip(&res_step).map(|(i, s)| i * s).sum();
        out[dst] += t.data()[src];
        increment(&mut idx, &unique_dims);
    }
    (DenseTensor { dims: result_dims, data: out, labels: None }, result_syms)
}

/// One permute→reshape→multiply step. Returns the result, its symbols, and the MAC count.
fn contract_pair(
    a: &DenseTensor,
    a_syms: &[char],
    b: &DenseTensor,
    b_syms: &[char],
    keep: &BTreeSet<char>,
) -> (DenseTensor, Vec<char>, u64) {
    let mut batch = Vec::new();
    let mut left = Vec::new();
    let mut contracted = Vec::new();
    for &c in a_syms {
        if b_syms.contains(&c) {
            if keep.contains(&c) {
                batch.push(c);
            } else {
                contracted.push(c);
            }
        } else {
            left.push(c);
        }
    }
    let right: Vec<char> = b_syms.iter().copied().filter(|c| !a_syms.contains(c)).collect();

    let dim_a = |c: &char| a.dims()[a_syms.iter().position(|s| s == c).unwrap()];
    let dim_b = |c: &char| b.dims()[b_syms.iter().position(|s| s == c).unwrap()];
    let nb: usize = batch.iter().map(dim_a).product();
    let nl: usize = left.iter().map(dim_a).product();
    let nk: usize = contracted.iter().map(dim_a).product();
    let nr: usize = right.iter().map(dim_b).product();

    let pos = |syms: &[char], group: &[char]| -> Vec<usize> {
        group.iter().map(|c| syms.iter().position(|s| s == c).unwrap()).collect()
    };
    let a_order: Vec<usize> = [pos(a_syms, &batch), pos(a_syms, &left), pos(a_syms, &contracted)].concat();
    let b_order: Vec<usize> = [pos(b_syms, &batch), pos(b_syms, &contracted), pos(b_syms, &right)].concat();
    let ap = a.permute(&a_order).expect("valid permutation");
    let bp = b.permute(&b_order).expect("valid permutation");

    let mut out = vec![0.0; nb * nl * nr];
    for bi in 0..nb {
        gemm_accumulate(
            &ap.data[bi * nl * nk..(bi + 1) * nl * nk],
            &bp.data[bi * nk * nr..(bi + 1) * nk * nr],
            &mut out[bi * nl * nr..(bi + 1) * nl * nr],
            nl,
            nk,
            nr,
        );
    }

    let mut dims: Vec<usize> = batch.iter().map(dim_a).collect();
    dims.extend(left.iter().map(dim_a));
    dims.extend(right.iter().map(dim_b));
    let syms: Vec<char> = batch.into_iter().chain(left).chain(right).collect();
    let macs = (nb * nl * nk * nr) as u64;
    (DenseTensor { dims, data: out, labels: None }, syms, macs)
}
