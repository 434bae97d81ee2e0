//! Library side of the command-line tool: every command reads and writes files
//! and returns what it would print.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckReport};
use crate::data::{generate_dataset, load_dataset, save_dataset, DatasetManifest, GeneratorConfig};
use crate::decode::{greedy_trace, BeamConfig, PredictionPath, TraceStep};
use crate::error::{config_err, contract_err, Result};
use crate::metrics::{Evaluation, REPORT_HEADER};
use crate::model::{checkpoint, unroll, BoundParams, FeatureMaps, ModelDims, ModelParams, UnrollOptions};
use crate::train::{evaluate, predict_dataset, train, tune_threshold, Dropout, OrderMode, TrainConfig, LOG_HEADER};

/// Thresholds tried by `tune-threshold`: 0.1, 0.2, …, 0.9.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Share of the training split held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Everything a command may need besides its file arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// `max_len == 0` means "largest label count in the training split".
    pub beam: BeamConfig,
    pub hidden: usize,
    pub attention_dim: usize,
    pub pred_hidden: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            beam: BeamConfig::new(3, 0.5, 0),
            hidden: 64,
            attention_dim: 32,
            pred_hidden: 64,
            out_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn dims_for(&self, ds: &DatasetManifest) -> ModelDims {
        ModelDims {
            labels: ds.labels,
            feature_dim: ds.feature_dim,
            hidden: self.hidden,
            attention: self.attention_dim,
            pred_hidden: self.pred_hidden,
            regions: ds.regions,
        }
    }

    /// Beam settings with `max_len` resolved against `train_max` and the
    /// attention switch taken from the training config.
    pub fn beam_for(&self, train_max: usize, labels: usize) -> BeamConfig {
        let max_len = if self.beam.max_len == 0 { train_max } else { self.beam.max_len };
        BeamConfig {
            max_len: max_len.min(labels),
            attention: self.beam.attention && self.train.attention_on,
            ..self.beam
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn check_compatible(params: &ModelParams, ds: &DatasetManifest) -> Result<()> {
    let d = &params.dims;
    if d.labels != ds.labels || d.feature_dim != ds.feature_dim || d.regions != ds.regions {
        return config_err(format!(
            "checkpoint expects c={} m={} k={}, dataset has c={} m={} k={}",
            d.labels, d.regions, d.feature_dim, ds.labels, ds.regions, ds.feature_dim
        ));
    }
    Ok(())
}

/// Writes `train.ofmld` and `test.ofmld` into `out_dir`.
pub fn gen_data(cfg: &GeneratorConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(out_dir)?;
    let splits = generate_dataset(cfg)?;
    let train = out_dir.join("train.ofmld");
    let test = out_dir.join("test.ofmld");
    save_dataset(&splits.train, &train)?;
    save_dataset(&splits.test, &test)?;
    Ok((train, test))
}

/// Holds out the last [`VALIDATION_FRACTION`] of `ds` (at least one instance when `ds` has two or more).
pub fn split_validation(ds: DatasetManifest) -> (DatasetManifest, DatasetManifest) {
    let n = ds.len();
    let hold = ((n as f64 * VALIDATION_FRACTION).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    ds.split_tail(hold)
}

/// Outcome of one training run with its held-out threshold choice.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub log: Vec<String>,
    pub threshold: f64,
    pub beam: BeamConfig,
}

/// Trains on all but the validation tail of `train_set`, then picks the
/// stopping threshold on that tail.
pub fn fit(train_set: DatasetManifest, run: &RunConfig) -> Result<TrainedModel> {
    let (fit_set, val) = split_validation(train_set);
    let beam = run.beam_for(fit_set.max_label_count(), fit_set.labels);
    let report = train(&fit_set, (!val.is_empty()).then_some(&val), run.dims_for(&fit_set), &run.train, &beam)?;
    let threshold = if val.is_empty() {
        beam.threshold
    } else {
        tune_threshold(&report.params, &val, &default_threshold_grid(), &beam)?.best
    };
    let mut log = vec![LOG_HEADER.to_string()];
    log.extend(report.log.iter().map(|l| l.line()));
    Ok(TrainedModel {
        params: report.params,
        log,
        threshold,
        beam: BeamConfig { threshold, ..beam },
    })
}

/// Decoding settings chosen at training time, stored beside the checkpoint.
pub fn decode_settings_path(checkpoint_path: &Path) -> PathBuf {
    let mut name = checkpoint_path.file_name().unwrap_or_default().to_os_string();
    name.push(".decode");
    checkpoint_path.with_file_name(name)
}

/// `(threshold, max_len)` from [`decode_settings_path`], if the file exists.
pub fn read_decode_settings(checkpoint_path: &Path) -> Result<Option<(f64, usize)>> {
    let path = decode_settings_path(checkpoint_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let (mut threshold, mut max_len) = (None, None);
    for line in text.lines() {
        match line.split_once(' ') {
            Some(("threshold", v)) => threshold = v.parse::<f64>().ok(),
            Some(("max_len", v)) => max_len = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    match (threshold, max_len) {
        (Some(t), Some(m)) => Ok(Some((t, m))),
        _ => config_err(format!("{} must hold `threshold` and `max_len` lines", path.display())),
    }
}

/// `train`: writes the checkpoint, `train.log` beside it and the decode settings.
pub fn train_command(train_path: &Path, checkpoint_path: &Path, run: &RunConfig) -> Result<TrainedModel> {
    let ds = load_dataset(train_path)?;
    let trained = fit(ds, run)?;
    if let Some(dir) = checkpoint_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    checkpoint::save(&trained.params, checkpoint_path)?;
    let dir = checkpoint_path.parent().unwrap_or(Path::new("."));
    fs::write(dir.join("train.log"), trained.log.join("\n") + "\n")?;
    fs::write(
        decode_settings_path(checkpoint_path),
        format!("threshold {}\nmax_len {}\n", trained.threshold, trained.beam.max_len),
    )?;
    Ok(trained)
}

/// `id\tlabels\tp_path`, labels comma-separated in emission order, `-` for none.
pub fn prediction_line(id: &str, path: &PredictionPath) -> String {
    let labels = if path.is_empty() {
        "-".to_string()
    } else {
        path.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
    };
    format!("{id}\t{labels}\t{:.12}", path.p_path())
}

fn resolve_beam(params: &ModelParams, beam: &BeamConfig) -> BeamConfig {
    let max_len = if beam.max_len == 0 { params.dims.labels } else { beam.max_len };
    BeamConfig {
        max_len: max_len.min(params.dims.labels),
        ..*beam
    }
}

/// `predict`: one [`prediction_line`] per instance. A width of 1 is the greedy decoder.
pub fn predict_command(params: &ModelParams, ds: &DatasetManifest, beam: &BeamConfig) -> Result<String> {
    check_compatible(params, ds)?;
    let beam = resolve_beam(params, beam);
    let paths = predict_dataset(params, ds, &beam)?;
    let mut out = String::new();
    for (inst, path) in ds.instances.iter().zip(&paths) {
        out.push_str(&prediction_line(&inst.id, path));
        out.push('\n');
    }
    Ok(out)
}

/// `predict --greedy`: same format, computed by the greedy decoder.
pub fn predict_greedy_command(params: &ModelParams, ds: &DatasetManifest, beam: &BeamConfig) -> Result<String> {
    check_compatible(params, ds)?;
    let beam = resolve_beam(params, beam);
    let mut out = String::new();
    for inst in &ds.instances {
        let (path, _) = greedy_trace(params, &inst.features, &beam)?;
        out.push_str(&prediction_line(&inst.id, &path));
        out.push('\n');
    }
    Ok(out)
}

/// `eval`: header plus one report line.
pub fn eval_command(params: &ModelParams, ds: &DatasetManifest, beam: &BeamConfig, method: &str) -> Result<String> {
    check_compatible(params, ds)?;
    let e = evaluate(params, ds, &resolve_beam(params, beam))?;
    Ok(format!("{REPORT_HEADER}\n{}\n", e.report_line(method)))
}

/// One row of the ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub method: &'static str,
    pub evaluation: Evaluation,
    pub threshold: f64,
}

/// The four controlled configurations, in report order.
pub fn ablation_configs(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let with = |order_mode: OrderMode, attention_on: bool| {
        let mut run = base.clone();
        run.train.order_mode = order_mode;
        run.train.attention_on = attention_on;
        run
    };
    vec![
        ("full", with(OrderMode::Confidence, true)),
        ("w/o-attention", with(OrderMode::Confidence, false)),
        ("frequency-first", with(OrderMode::FrequencyFirst, true)),
        ("rare-first", with(OrderMode::RareFirst, true)),
    ]
}

/// Trains each configuration on `train_set` and scores it on `test_set`.
pub fn ablate(train_set: &DatasetManifest, test_set: &DatasetManifest, base: &RunConfig) -> Result<Vec<AblationRow>> {
    ablation_configs(base)
        .into_iter()
        .map(|(method, run)| {
            log::info!("ablation: training {method}");
            let trained = fit(train_set.clone(), &run)?;
            let evaluation = evaluate(&trained.params, test_set, &trained.beam)?;
            Ok(AblationRow {
                method,
                evaluation,
                threshold: trained.threshold,
            })
        })
        .collect()
}

pub fn ablation_report(rows: &[AblationRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&r.evaluation.report_line(r.method));
        out.push('\n');
    }
    out
}

/// Small model and input used by `gradcheck`.
pub fn gradcheck_problem(seed: u64) -> Result<(ModelParams, FeatureMaps, Vec<f64>)> {
    let dims = ModelDims {
        labels: 4,
        feature_dim: 3,
        hidden: 5,
        attention: 4,
        pred_hidden: 6,
        regions: 5,
    };
    let mut params = ModelParams::init(dims, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Non-zero biases so every term of the gradient is exercised.
    for (_, _, t) in params.tensors_mut() {
        if t.rank() == 1 {
            for v in t.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    let values = (0..dims.regions * dims.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fm = FeatureMaps::from_rows(dims.regions, dims.feature_dim, values)?;
    let target = vec![1.0, 0.0, 1.0, 1.0];
    Ok((params, fm, target))
}

/// Central-difference check of `Σ_t BCE(p_t, y)` plus the feature-head BCE
/// over a 3-step unroll, every parameter group at once, with fixed dropout masks.
pub fn model_grad_check(params: &ModelParams, fm: &FeatureMaps, target: &[f64], keep_prob: f64, seed: u64) -> Result<GradCheckReport> {
    let tensors = params.to_tensors();
    grad_check(&tensors, 1e-5, |tape, vars| {
        let bound = BoundParams::from_vars(vars.to_vec());
        let mut dropout = Dropout::new(keep_prob, seed)?;
        let run = unroll(
            tape,
            &bound,
            fm,
            params,
            3,
            UnrollOptions {
                attention_on: true,
                forced_order: None,
                dropout: Some(&mut dropout),
            },
        )?;
        let mut loss = tape.bce_with_logits(run.feature_logits, target)?;
        for step in &run.steps {
            let l = tape.bce_with_logits(step.vars.logits, target)?;
            loss = tape.add(loss, l)?;
        }
        Ok(loss)
    })
}

/// `gradcheck`: the report for the seeded problem.
pub fn gradcheck_command(seed: u64, keep_prob: f64) -> Result<GradCheckReport> {
    let (params, fm, target) = gradcheck_problem(seed)?;
    model_grad_check(&params, &fm, &target, keep_prob, seed)
}

/// `tune-threshold`: best threshold and a `threshold\tC-F1\tO-F1` table.
pub fn tune_command(params: &ModelParams, val: &DatasetManifest, beam: &BeamConfig, grid: &[f64]) -> Result<(f64, String)> {
    check_compatible(params, val)?;
    let sweep = tune_threshold(params, val, grid, &resolve_beam(params, beam))?;
    let mut table = String::from("threshold\tC-F1\tO-F1\n");
    for (t, e) in &sweep.scores {
        table.push_str(&format!("{t}\t{:.4}\t{:.4}\n", e.per_class.f1, e.overall.f1));
    }
    Ok((sweep.best, table))
}

/// Values rounded to `decimals` places whose printed forms sum exactly to the
/// rounded total (largest-remainder rounding).
pub fn round_preserving_sum(values: &[f64], decimals: u32) -> Vec<i64> {
    let scale = 10f64.powi(decimals as i32);
    let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
    let mut units: Vec<i64> = scaled.iter().map(|v| v.floor() as i64).collect();
    let target = scaled.iter().sum::<f64>().round() as i64;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = target - units.iter().sum::<i64>();
    for &i in order.iter().take(missing.max(0) as usize) {
        units[i] += 1;
    }
    units
}

/// Text for one exported step: label, confidence, then the weights as a grid.
pub fn attention_grid(step: &TraceStep, t: usize, side: Option<usize>) -> String {
    let units = round_preserving_sum(&step.alpha, 6);
    let cols = side.unwrap_or(units.len());
    let mut out = format!("step {t}\nlabel {}\nconfidence {:.6}\n", step.label, step.confidence);
    for row in units.chunks(cols) {
        let cells: Vec<String> = row
            .iter()
            .map(|&u| format!("{}.{:06}", u / 1_000_000, u % 1_000_000))
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// `export-attention`: greedy-decodes each requested instance and writes
/// `<id>_t<step>.txt` per emitted label. Returns the written paths.
pub fn export_attention(
    params: &ModelParams,
    ds: &DatasetManifest,
    ids: &[String],
    beam: &BeamConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    check_compatible(params, ds)?;
    let beam = resolve_beam(params, beam);
    let mut written = Vec::new();
    let instances = ids
        .iter()
        .map(|id| match ds.find(id) {
            Some(inst) => Ok(inst),
            None => contract_err(format!("no instance with id {id:?}")),
        })
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(out_dir)?;
    for inst in instances {
        let (_, trace) = greedy_trace(params, &inst.features, &beam)?;
        for (i, step) in trace.iter().enumerate() {
            let path = out_dir.join(format!("{}_t{}.txt", inst.id, i + 1));
            fs::write(&path, attention_grid(step, i + 1, ds.grid_side()))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// For every greedy step that emits a true positive: attention mass on that
/// label's planted cells divided by the uniform share `|planted| / m`.
pub fn localization_ratios(params: &ModelParams, ds: &DatasetManifest, beam: &BeamConfig) -> Result<Vec<f64>> {
    check_compatible(params, ds)?;
    let beam = resolve_beam(params, beam);
    let m = ds.regions as f64;
    let mut ratios = Vec::new();
    for inst in &ds.instances {
        let (_, trace) = greedy_trace(params, &inst.features, &beam)?;
        for step in &trace {
            if let Some(cells) = inst.planted_cells(step.label) {
                let mass: f64 = cells.iter().map(|&c| step.alpha[c]).sum();
                ratios.push(mass / (cells.len() as f64 / m));
            }
        }
    }
    Ok(ratios)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
