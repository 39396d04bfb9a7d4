//! Analytical cost model: contraction cost as the product of all index
//! sizes involved, Tucker memory compression, and the multiply-accumulate
//! count of a dense versus Tucker-factored convolution.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::ContractionSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

pub type Result<T> = std::result::Result<T, CostError>;

/// Product of the sizes of every distinct symbol in `spec`.
pub fn contraction_cost(spec: &ContractionSpec, sizes: &BTreeMap<char, usize>) -> Result<u64> {
    spec.symbols().iter().try_fold(1u64, |acc, c| match sizes.get(c) {
        Some(&n) => Ok(acc * n as u64),
        None => Err(CostError::SpecMismatch(format!("no size for symbol '{c}'"))),
    })
}

/// Dense convolution geometry together with Tucker ranks
/// `(alpha, beta, gamma, delta)` for the `KH, KW, IN, OUT` modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub x: usize,
    pub y: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub ranks: [usize; 4],
}

impl ConvShape {
    pub fn new(x: usize, y: usize, c_in: usize, c_out: usize, h_out: usize, w_out: usize, ranks: [usize; 4]) -> Result<Self> {
        let s = Self { x, y, c_in, c_out, h_out, w_out, ranks };
        if [x, y, c_in, c_out, h_out, w_out].contains(&0) || ranks.contains(&0) {
            return Err(CostError::InvalidShape(format!("{s:?} has a zero extent")));
        }
        Ok(s)
    }

    /// 3×3 kernel, 256 → 384 channels (an AlexNet-sized layer), spatial
    /// ranks 3 and channel ranks `chi`, on a `side`×`side` output.
    pub fn alexnet_example(chi: usize, side: usize) -> Self {
        Self { x: 3, y: 3, c_in: 256, c_out: 384, h_out: side, w_out: side, ranks: [3, 3, chi, chi] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub dense_cost: u64,
    /// Absorbing the IN, KH and KW mode matrices into the patch tensor.
    pub cost1: u64,
    /// Contracting the compressed patches with the core.
    pub cost2: u64,
    /// Applying the OUT mode matrix.
    pub cost3: u64,
    pub tucker_cost: u64,
    pub speedup: f64,
    pub memory_cr: f64,
    /// The fixed absorption order (IN, then KH, then KW) is only the cheap
    /// one when `c_in > x`; costs are still reported when it is not.
    pub order_assumption_violated: bool,
}

/// Dense parameter count over the parameters held by the four mode matrices.
pub fn tucker_memory_cr(s: &ConvShape) -> f64 {
    let [a, b, g, d] = s.ranks;
    let dense = s.x * s.y * s.c_in * s.c_out;
    dense as f64 / (s.x * a + s.y * b + s.c_in * g + s.c_out * d) as f64
}

pub fn tucker_conv_costs(s: &ConvShape) -> CostEstimate {
    let [a, b, g, d] = s.ranks.map(|r| r as u64);
    let (x, y, ci, co) = (s.x as u64, s.y as u64, s.c_in as u64, s.c_out as u64);
    let hw = (s.h_out * s.w_out) as u64;
    let dense_cost = hw * x * y * ci * co;
    let cost1 = hw * (x * y * ci * g + x * y * g * a + a * y * g * b);
    let cost2 = hw * a * b * g * d;
    let cost3 = hw * d * co;
    let tucker_cost = cost1 + cost2 + cost3;
    CostEstimate {
        dense_cost,
        cost1,
        cost2,
        cost3,
        tucker_cost,
        speedup: dense_cost as f64 / tucker_cost as f64,
        memory_cr: tucker_memory_cr(s),
        order_assumption_violated: s.c_in <= s.x,
    }
}

/// Published compression ratios for [`ConvShape::alexnet_example`], by `chi`.
pub const PUBLISHED_MEMORY_CR: [(usize, f64); 5] = [(200, 7.0), (150, 9.0), (100, 14.0), (50, 28.0), (20, 69.0)];

/// Published speedups for [`ConvShape::alexnet_example`] on a 50×50 output.
/// These do not follow from [`tucker_conv_costs`]; they are kept only for
/// side-by-side display.
pub const PUBLISHED_SPEEDUPS: [(usize, f64); 5] = [(200, 1.4), (150, 2.0), (100, 3.0), (50, 6.7), (20, 17.3)];
