use crate::data::DatasetManifest;
use crate::decode::{beam_search, BeamConfig, PredictionPath};
use crate::error::{config_err, Result};
use crate::metrics::{accumulate, Evaluation};
use crate::model::{feature_map_forward, ModelParams};

/// Best path for every instance, in dataset order.
pub fn predict_dataset(params: &ModelParams, ds: &DatasetManifest, beam: &BeamConfig) -> Result<Vec<PredictionPath>> {
    ds.instances
        .iter()
        .map(|inst| beam_search(params, &inst.features, beam).map(|out| out.best))
        .collect()
}

pub(crate) fn score(preds: &[Vec<usize>], ds: &DatasetManifest) -> Result<Evaluation> {
    let truths: Vec<Vec<usize>> = ds.instances.iter().map(|i| i.labels.clone()).collect();
    Ok(Evaluation::from_counts(&accumulate(preds, &truths, ds.labels)?))
}

pub fn evaluate(params: &ModelParams, ds: &DatasetManifest, beam: &BeamConfig) -> Result<Evaluation> {
    let preds: Vec<Vec<usize>> = predict_dataset(params, ds, beam)?
        .iter()
        .map(PredictionPath::label_set)
        .collect();
    score(&preds, ds)
}

/// Labels whose feature-head probability exceeds `threshold`.
pub fn feature_head_predictions(params: &ModelParams, ds: &DatasetManifest, threshold: f64) -> Result<Vec<Vec<usize>>> {
    ds.instances
        .iter()
        .map(|inst| {
            let probs = feature_map_forward(&inst.features, &params.feature)?;
            Ok(probs
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > threshold)
                .map(|(l, _)| l)
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub best: f64,
    /// `(threshold, validation evaluation)` for every grid value, in grid order.
    pub scores: Vec<(f64, Evaluation)>,
}

/// Grid value with the highest validation O-F1 under `base` with its threshold
/// replaced; ties go to the smaller threshold.
pub fn tune_threshold(
    params: &ModelParams,
    validation: &DatasetManifest,
    grid: &[f64],
    base: &BeamConfig,
) -> Result<ThresholdSweep> {
    if grid.is_empty() {
        return config_err("threshold grid is empty");
    }
    if validation.is_empty() {
        return config_err("validation set is empty");
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &threshold in grid {
        let cfg = BeamConfig { threshold, ..*base };
        let eval = evaluate(params, validation, &cfg)?;
        let f = eval.overall.f1;
        let better = match best {
            None => true,
            Some((bt, bf)) => f > bf || (f == bf && threshold < bt),
        };
        if better {
            best = Some((threshold, f));
        }
        scores.push((threshold, eval));
    }
    Ok(ThresholdSweep {
        best: best.expect("grid non-empty").0,
        scores,
    })
}
