//! Prediction over datasets, metrics, the S/T ablation, multi-modality
//! statistics and SVG scatter panels.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::checkpoint::Model;
use crate::datasets::{
    pad, skeleton, unpad, Digit, Example, Style, Task, TaskDims, DIGIT_DENSITY,
};
use crate::error::{contract_err, DespError, Result};
use crate::langevin::{chain_rng, predict, Clamp, SamplerConfig};
use crate::losses::{chamfer, hungarian, set_size_rmse, subset_metrics, SubsetScores};
use crate::nn::{norm, TAU_PAD};
use crate::training::ElementwiseBaseline;
use crate::util::{derive_seed, with_pool};

/// Chains evaluated together. Fixed so results do not depend on the worker count.
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedSet {
    /// All `M` rows, padding included.
    pub padded: Vec<Vec<f64>>,
    pub set: Vec<Vec<f64>>,
    /// Final energy (energy models only).
    pub energy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictOptions {
    pub sampler: SamplerConfig,
    /// Predictions per example.
    pub samples: usize,
    pub seed: u64,
}

impl PredictOptions {
    /// One prediction per example, ten for the anomaly task.
    pub fn for_task(task: Task, sampler: SamplerConfig, seed: u64) -> Self {
        Self {
            sampler,
            samples: if task == Task::Anomaly { 10 } else { 1 },
            seed,
        }
    }
}

/// Padded targets with the sampled column zeroed, used to clamp features.
fn clamp_template(task: &TaskDims, examples: &[&Example]) -> Result<Option<Clamp>> {
    let Some(free) = task.free_columns() else {
        return Ok(None);
    };
    let (_, mut y) = task.batch(examples)?;
    let d = task.y_dim;
    for row in y.data_mut().chunks_mut(d) {
        for j in free.clone() {
            row[j] = 0.0;
        }
    }
    Ok(Some(Clamp { template: y, free }))
}

fn to_predicted(padded: &Tensor, m: usize, energies: Option<&[f64]>) -> Vec<PredictedSet> {
    let d = padded.last_dim();
    padded
        .data()
        .chunks(m * d)
        .enumerate()
        .map(|(i, rows)| {
            let padded: Vec<Vec<f64>> = rows.chunks(d).map(<[f64]>::to_vec).collect();
            PredictedSet {
                set: unpad(&padded, TAU_PAD),
                padded,
                energy: energies.map(|e| e[i]),
            }
        })
        .collect()
}

/// `samples` predictions for every example, indexed `[example][sample]`.
pub fn predict_all(model: &Model, data: &[Example], opts: &PredictOptions) -> Result<Vec<Vec<PredictedSet>>> {
    if opts.samples == 0 {
        return contract_err("need at least one prediction per example");
    }
    let task = model.task();
    let items: Vec<(usize, usize)> = (0..data.len())
        .flat_map(|i| (0..opts.samples).map(move |k| (i, k)))
        .collect();
    let chunks: Vec<&[(usize, usize)]> = items.chunks(CHUNK).collect();
    let run = |chunk: &[(usize, usize)]| -> Result<Vec<PredictedSet>> {
        let examples: Vec<&Example> = chunk.iter().map(|&(i, _)| &data[i]).collect();
        let (x, _) = task.batch(&examples)?;
        match model {
            Model::Energy { model, .. } => {
                let rngs = chunk
                    .iter()
                    .map(|&(i, k)| chain_rng(derive_seed(&[opts.seed, i as u64]), k as u64))
                    .collect();
                let clamp = clamp_template(&task, &examples)?;
                let preds = predict(model, &x, &opts.sampler, rngs, clamp.as_ref())?;
                Ok(preds
                    .into_iter()
                    .map(|p| PredictedSet {
                        padded: p.padded.to_rows(),
                        set: p.set,
                        energy: Some(p.energy),
                    })
                    .collect())
            }
            Model::Baseline { model, .. } => Ok(to_predicted(&model.predict(&x)?, task.max_size, None)),
            Model::Elementwise(m) => {
                let (_, y) = task.batch(&examples)?;
                let (features, _) = ElementwiseBaseline::split(&y)?;
                let logits = m.predict_logits(&features)?;
                let mut out = y.clone();
                let d = task.y_dim;
                for (row, z) in out.data_mut().chunks_mut(d).zip(logits.data()) {
                    row[d - 1] = if *z > 0.0 { 1.0 } else { -1.0 };
                }
                Ok(to_predicted(&out, task.max_size, None))
            }
        }
    };
    let results: Vec<Result<Vec<PredictedSet>>> = with_pool(|| chunks.par_iter().map(|c| run(c)).collect());
    let mut flat = Vec::with_capacity(items.len());
    for r in results {
        flat.extend(r?);
    }
    let mut out: Vec<Vec<PredictedSet>> = Vec::with_capacity(data.len());
    let mut it = flat.into_iter();
    for _ in 0..data.len() {
        out.push(it.by_ref().take(opts.samples).collect());
    }
    Ok(out)
}

/// Indices whose indicator is positive, rounding each `o_i` by sign.
pub fn outlier_subset(padded: &[Vec<f64>]) -> Vec<usize> {
    padded
        .iter()
        .enumerate()
        .filter(|(_, r)| r.last().is_some_and(|&o| o > 0.0))
        .map(|(i, _)| i)
        .collect()
}

/// Losses of every prediction of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleScore {
    pub chamfer: Vec<f64>,
    pub hungarian: Vec<f64>,
    pub true_size: usize,
    pub pred_sizes: Vec<usize>,
    pub energies: Vec<f64>,
    pub subsets: Option<SubsetScores>,
    pub ambiguous: bool,
}

/// Chamfer on the thresholded sets (the padded rows stand in for an empty
/// prediction), Hungarian on the full padded tensors.
pub fn score_example(example: &Example, preds: &[PredictedSet], task: &TaskDims) -> Result<ExampleScore> {
    let target = pad(&example.set, task.max_size, task.y_dim)?;
    let mut score = ExampleScore {
        chamfer: Vec::with_capacity(preds.len()),
        hungarian: Vec::with_capacity(preds.len()),
        true_size: example.set.len(),
        pred_sizes: Vec::with_capacity(preds.len()),
        energies: Vec::new(),
        subsets: None,
        ambiguous: false,
    };
    for p in preds {
        let ours = if p.set.is_empty() { &p.padded } else { &p.set };
        score.chamfer.push(chamfer(ours, &example.set)?);
        score.hungarian.push(hungarian(&p.padded, &target)?.0);
        score.pred_sizes.push(p.set.len());
        score.energies.extend(p.energy);
    }
    if let Some(valid) = &example.meta.valid_subsets {
        let subsets: Vec<Vec<usize>> = preds.iter().map(|p| outlier_subset(&p.padded)).collect();
        score.subsets = Some(subset_metrics(&subsets, valid)?);
        score.ambiguous = valid.len() > 1;
    }
    Ok(score)
}

/// Aggregated metrics of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dataset: Task,
    pub model_kind: String,
    /// `all`, or `ambiguous` for instances with several valid subsets.
    pub subset: String,
    pub examples: usize,
    pub chamfer: f64,
    pub chamfer_std: f64,
    pub hungarian: f64,
    pub hungarian_std: f64,
    pub set_size_rmse: f64,
    pub mean_energy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub seed: u64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Means and standard deviations over the scored examples.
pub fn aggregate(scores: &[&ExampleScore], dataset: Task, model_kind: &str, subset: &str, seed: u64) -> Result<RunMetrics> {
    if scores.is_empty() {
        return contract_err(format!("no examples in subset {subset}"));
    }
    let ch: Vec<f64> = scores.iter().flat_map(|s| s.chamfer.iter().copied()).collect();
    let hu: Vec<f64> = scores.iter().flat_map(|s| s.hungarian.iter().copied()).collect();
    let en: Vec<f64> = scores.iter().flat_map(|s| s.energies.iter().copied()).collect();
    let truth: Vec<usize> = scores
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.true_size, s.pred_sizes.len()))
        .collect();
    let pred: Vec<usize> = scores.iter().flat_map(|s| s.pred_sizes.iter().copied()).collect();
    let (chamfer, chamfer_std) = mean_std(&ch);
    let (hungarian, hungarian_std) = mean_std(&hu);
    let subs: Vec<SubsetScores> = scores.iter().filter_map(|s| s.subsets).collect();
    let (precision, recall, f1) = if subs.is_empty() {
        (None, None, None)
    } else {
        let n = subs.len() as f64;
        let p = subs.iter().map(|s| s.precision).sum::<f64>() / n;
        let r = subs.iter().map(|s| s.recall).sum::<f64>() / n;
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (Some(p), Some(r), Some(f))
    };
    Ok(RunMetrics {
        dataset,
        model_kind: model_kind.to_string(),
        subset: subset.to_string(),
        examples: scores.len(),
        chamfer,
        chamfer_std,
        hungarian,
        hungarian_std,
        set_size_rmse: set_size_rmse(&truth, &pred)?,
        mean_energy: (!en.is_empty()).then(|| mean_std(&en).0),
        precision,
        recall,
        f1,
        seed,
    })
}

/// Predicts and scores every example. Anomaly evaluations add a row for
/// the ambiguous instances.
pub fn evaluate(model: &Model, data: &[Example], opts: &PredictOptions) -> Result<(Vec<RunMetrics>, Vec<ExampleScore>)> {
    let task = model.task();
    let preds = predict_all(model, data, opts)?;
    let scores = data
        .iter()
        .zip(&preds)
        .map(|(e, p)| score_example(e, p, &task))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&ExampleScore> = scores.iter().collect();
    let mut rows = vec![aggregate(&all, task.task, model.label(), "all", opts.seed)?];
    if task.task == Task::Anomaly {
        let amb: Vec<&ExampleScore> = scores.iter().filter(|s| s.ambiguous).collect();
        if !amb.is_empty() {
            rows.push(aggregate(&amb, task.task, model.label(), "ambiguous", opts.seed)?);
        }
    }
    Ok((rows, scores))
}

pub fn write_metrics_csv(path: &Path, rows: &[RunMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RunMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(DespError::from)).collect()
}

/// One line of the S/T ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ratio: f64,
    pub mean_energy: f64,
    pub chamfer: f64,
    pub hungarian: f64,
}

/// For each ratio, predicts with `S = round(ratio·T)` under every seed and
/// averages the metrics over seeds.
pub fn ablate_st(model: &Model, data: &[Example], sampler: &SamplerConfig, ratios: &[f64], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if !matches!(model, Model::Energy { .. }) {
        return contract_err("the S/T ablation needs an energy model");
    }
    if seeds.is_empty() {
        return contract_err("need at least one seed");
    }
    ratios
        .iter()
        .map(|&ratio| {
            if !(0.0..=1.0).contains(&ratio) {
                return contract_err(format!("ratio {ratio} outside [0, 1]"));
            }
            let (mut e, mut c, mut h) = (0.0, 0.0, 0.0);
            for &seed in seeds {
                let opts = PredictOptions {
                    sampler: sampler.with_ratio(ratio),
                    samples: 1,
                    seed,
                };
                let (rows, _) = evaluate(model, data, &opts)?;
                e += rows[0].mean_energy.unwrap_or(f64::NAN);
                c += rows[0].chamfer;
                h += rows[0].hungarian;
            }
            let n = seeds.len() as f64;
            Ok(AblationRow {
                ratio,
                mean_energy: e / n,
                chamfer: c / n,
                hungarian: h / n,
            })
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_std(a);
    let (mb, _) = mean_std(b);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// Rotation of an `n`-gon in `[0, 2π/n)`: the circular mean of `n·θ_k`
/// divided by `n`. Terms are summed in a canonical order so relabeling the
/// vertices cannot change the result.
pub fn estimate_rotation(vertices: &[Vec<f64>], n: usize) -> Result<f64> {
    if vertices.len() < 3 || n == 0 {
        return contract_err("rotation estimate needs at least 3 vertices");
    }
    let mut units: Vec<(f64, f64)> = vertices
        .iter()
        .filter(|v| v.len() >= 2 && norm(&v[..2]) >= TAU_PAD)
        .map(|v| {
            let a = n as f64 * v[1].atan2(v[0]);
            (a.cos(), a.sin())
        })
        .collect();
    if units.is_empty() {
        return Err(DespError::UndefinedAngle("all vertices lie near the origin".into()));
    }
    units.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (c, s) = units.iter().fold((0.0, 0.0), |acc, u| (acc.0 + u.0, acc.1 + u.1));
    if c.hypot(s) < 1e-9 * units.len() as f64 {
        return Err(DespError::UndefinedAngle("vertex angles cancel out".into()));
    }
    let period = TAU / n as f64;
    let phi = s.atan2(c).rem_euclid(TAU) / n as f64;
    Ok(if phi >= period { 0.0 } else { phi })
}

/// Circular standard deviation `sqrt(−2 ln R)` of angles with the given period.
pub fn circular_std(angles: &[f64], period: f64) -> f64 {
    let k = TAU / period;
    let n = angles.len() as f64;
    let c = angles.iter().map(|a| (k * a).cos()).sum::<f64>() / n;
    let s = angles.iter().map(|a| (k * a).sin()).sum::<f64>() / n;
    let r = c.hypot(s).min(1.0);
    (-2.0 * r.ln()).sqrt() / k
}

/// Evenly spaced points along a style's skeleton at the generator density.
fn skeleton_points(digit: Digit, style: Style) -> Vec<Vec<f64>> {
    let segs = skeleton(digit, style);
    let mut pts = Vec::new();
    for (a, b) in segs {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let k = ((DIGIT_DENSITY * len).round() as usize).max(2);
        for i in 0..k {
            let t = (i as f64 + 0.5) / k as f64;
            pts.push(vec![a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    pts
}

/// Writing style whose skeleton is closest to `set` in Chamfer distance.
pub fn classify_style(set: &[Vec<f64>], digit: Digit) -> Result<Style> {
    let a = chamfer(set, &skeleton_points(digit, Style::A))?;
    let b = chamfer(set, &skeleton_points(digit, Style::B))?;
    Ok(if a <= b { Style::A } else { Style::B })
}

/// Square plotting window per task.
pub fn viewport(task: Task) -> Result<(f64, f64)> {
    match task {
        Task::Polygons => Ok((-0.75, 0.75)),
        Task::Digits => Ok((0.0, 1.0)),
        Task::Anomaly => contract_err("anomaly sets are not two-dimensional"),
    }
}

/// One scatter panel per set, four panels per row.
pub fn render_svg(sets: &[Vec<Vec<f64>>], view: (f64, f64)) -> Result<String> {
    if sets.iter().flatten().any(|p| p.len() != 2) {
        return contract_err("render needs 2-d sets");
    }
    const PANEL: f64 = 160.0;
    const COLS: usize = 4;
    let cols = sets.len().clamp(1, COLS);
    let rows = sets.len().div_ceil(COLS).max(1);
    let (lo, hi) = view;
    let scale = PANEL / (hi - lo);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        cols as f64 * PANEL,
        rows as f64 * PANEL,
        cols as f64 * PANEL,
        rows as f64 * PANEL
    );
    for (k, set) in sets.iter().enumerate() {
        let ox = (k % COLS) as f64 * PANEL;
        let oy = (k / COLS) as f64 * PANEL;
        let _ = writeln!(svg, r#"  <g transform="translate({ox} {oy})">"#);
        let _ = writeln!(
            svg,
            r##"    <rect x="0" y="0" width="{PANEL}" height="{PANEL}" fill="#ffffff" stroke="#999999"/>"##
        );
        for p in set {
            let cx = (p[0] - lo) * scale;
            let cy = (hi - p[1]) * scale;
            if cx.is_finite() && cy.is_finite() {
                let _ = writeln!(svg, r##"    <circle cx="{cx:.3}" cy="{cy:.3}" r="2.5" fill="#1f4e9c"/>"##);
            }
        }
        let _ = writeln!(svg, "  </g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
