use rayon::prelude::*;

use crate::data::Dataset;
use crate::model::{ModelError, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub top1: f64,
    pub top5: f64,
    pub n_samples: usize,
}

/// Position of `label` when scores are sorted descending, ties going to the
/// lower class index.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    scores.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < label)).count()
}

/// Top-1 and top-5 accuracy of `m` over `data`.
pub fn evaluate(m: &ModelSpec, data: &Dataset) -> Result<EvalResult, ModelError> {
    let outputs = m.output_len()?;
    if outputs < data.classes {
        return Err(ModelError::ShapeInconsistency(format!(
            "model has {outputs} outputs but the data has {} classes",
            data.classes
        )));
    }
    let ranks = data
        .images
        .par_iter()
        .zip(&data.labels)
        .map(|(img, &label)| m.forward(img).map(|scores| rank_of(&scores, label)))
        .collect::<Result<Vec<usize>, ModelError>>()?;
    let n = ranks.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { ranks.iter().filter(|&&r| r < k).count() as f64 / n as f64 };
    Ok(EvalResult { top1: frac(1), top5: frac(5), n_samples: n })
}
