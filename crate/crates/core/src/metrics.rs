//! l1 / l2 losses and PSNR on the `[-1, 1]` convention, plus batch
//! evaluation reports over fixed test sets.
//!
//! PSNR uses peak 2 (the `[-1, 1]` range) and per-image averaging; exact
//! reconstructions map to the infinity sentinel and are excluded from
//! averages with a count note.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::data::TestPair;
use crate::degrade::{DegradationSpec, Params};
use crate::dlnet::{restore, InnerHyper};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;

fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

fn per_image<F>(x_hat: &Tensor<f64>, x: &Tensor<f64>, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &[f64]) -> f64,
{
    if x_hat.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            left: x_hat.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let [n, c, h, w] = x_hat.dims4("metrics")?;
    let plane = c * h * w;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let a = &x_hat.data()[i * plane..(i + 1) * plane];
        let b = &x.data()[i * plane..(i + 1) * plane];
        out.push(f(a, b));
    }
    Ok(out)
}

fn image_mae(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(&p, &q)| (clamp_unit(p) - clamp_unit(q)).abs()).sum();
    s / a.len() as f64
}

fn image_mse(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = clamp_unit(p) - clamp_unit(q);
            d * d
        })
        .sum();
    s / a.len() as f64
}

/// Mean absolute error on clamped values, per image then over images.
pub fn l1(x_hat: &Tensor<f64>, x: &Tensor<f64>) -> Result<f64> {
    let v = per_image(x_hat, x, image_mae)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean squared error on clamped values, per image then over images.
pub fn l2(x_hat: &Tensor<f64>, x: &Tensor<f64>) -> Result<f64> {
    let v = per_image(x_hat, x, image_mse)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn psnr_of_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (4.0 / mse).log10()
    }
}

/// PSNR in dB with peak 2 (`[-1, 1]` scale). Batches average per-image
/// PSNRs, excluding infinite ones (all-infinite stays infinite).
pub fn psnr(x_hat: &Tensor<f64>, x: &Tensor<f64>) -> Result<f64> {
    let values: Vec<f64> = per_image(x_hat, x, image_mse)?.into_iter().map(psnr_of_mse).collect();
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Ok(f64::INFINITY);
    }
    Ok(finite.iter().sum::<f64>() / finite.len() as f64)
}

/// One row of an evaluation report (a group of samples sharing a setting).
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub task: String,
    pub param: String,
    pub value: String,
    pub t: usize,
    pub n: usize,
    pub l1: f64,
    pub l2: f64,
    /// mean of finite per-image PSNRs (infinite when all are infinite)
    pub psnr: f64,
    pub n_inf_psnr: usize,
    pub runtime_s: f64,
}

/// Per-setting rows plus the all-settings average row.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub average: EvalRow,
    pub strategy: String,
}

/// Group label for a spec: inpainting sides are exact, the continuous
/// interpolation/blur parameters are binned (5% / 0.5-wide buckets) so a
/// sampled test set produces table-like rows.
pub fn setting_key(spec: &DegradationSpec<f64>) -> (String, String) {
    match spec.params {
        Params::Inpaint { s, .. } => ("s".into(), format!("{}", s)),
        Params::Interpolate { r } => {
            let bin = ((r / 0.05).floor() as i64).min(19).max(0);
            ("r".into(), format!("{:.3}", 0.05 * bin as f64 + 0.025))
        }
        Params::Blur { u } => {
            let bin = ((u / 0.5).floor() as i64).min(5).max(0);
            ("u".into(), format!("{:.2}", 0.5 * bin as f64 + 0.25))
        }
    }
}

struct Acc {
    n: usize,
    l1: f64,
    l2: f64,
    psnr: f64,
    n_inf: usize,
    runtime: f64,
    t: usize,
}

struct PairMetric {
    key: (String, String),
    t: usize,
    l1: f64,
    l2: f64,
    psnr: f64,
    runtime: f64,
}

fn pair_metric(x_hat: &Tensor<f64>, pair: &TestPair, runtime: f64) -> Result<PairMetric> {
    let mse = per_image(x_hat, &pair.x, image_mse)?[0];
    Ok(PairMetric {
        key: setting_key(&pair.spec),
        t: pair.spec.t,
        l1: l1(x_hat, &pair.x)?,
        l2: l2(x_hat, &pair.x)?,
        psnr: psnr_of_mse(mse),
        runtime,
    })
}

/// How many mask-task samples share one restoration graph during
/// evaluation (per-sample math is unchanged by batching).
const EVAL_BATCH: usize = 25;

fn measure_batch(net: &Network<f64>, pairs: &[TestPair], hyper: &InnerHyper) -> Result<Vec<PairMetric>> {
    use crate::dlnet::{restore_with, ObsModel};
    let blur = pairs.iter().any(|p| matches!(p.spec.kind, crate::degrade::Kind::BlurDownsample));
    if blur || pairs.len() == 1 {
        // per-sample kernels: restore one by one
        let mut out = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let start = Instant::now();
            let x_hat = restore(net, &pair.y, &pair.spec, hyper, false)?;
            out.push(pair_metric(&x_hat, pair, start.elapsed().as_secs_f64())?);
        }
        return Ok(out);
    }
    // masks stack along the batch axis
    let start = Instant::now();
    let [_, c, h, w] = pairs[0].y.dims4("evaluate")?;
    let mut data = Vec::with_capacity(pairs.len() * c * h * w);
    for p in pairs {
        if p.y.shape() != pairs[0].y.shape() {
            return Err(Error::invalid("test pairs must share one shape"));
        }
        data.extend_from_slice(p.y.data());
    }
    let yb = Tensor::from_vec(&[pairs.len(), c, h, w], data)?;
    let specs: Vec<_> = pairs.iter().map(|p| p.spec.clone()).collect();
    let obs = ObsModel::from_specs(&specs)?;
    let xb = restore_with(net, &yb, &yb, &obs, hyper, false)?;
    let dt = start.elapsed().as_secs_f64() / pairs.len() as f64;
    let plane = c * h * w;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let x_hat = Tensor::from_vec(&[1, c, h, w], xb.data()[i * plane..(i + 1) * plane].to_vec())?;
        out.push(pair_metric(&x_hat, pair, dt)?);
    }
    Ok(out)
}

/// Evaluate a model on a fixed test set, grouped by degradation setting.
/// `hyper.k_steps = 0` evaluates the reference forward pass. `threads`
/// caps the worker count; results are merged in sample order, so the
/// report is identical for any thread count.
pub fn evaluate(
    net: &Network<f64>,
    pairs: &[TestPair],
    hyper: &InnerHyper,
    strategy: &str,
    threads: usize,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let threads = threads.max(1).min(pairs.len());
    let batches: Vec<&[TestPair]> = pairs.chunks(EVAL_BATCH).collect();
    let metrics: Vec<PairMetric> = if threads == 1 {
        let mut all = Vec::with_capacity(pairs.len());
        for b in &batches {
            all.extend(measure_batch(net, b, hyper)?);
        }
        all
    } else {
        let chunk = batches.len().div_ceil(threads);
        let results: Vec<Result<Vec<PairMetric>>> = std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .chunks(chunk)
                .map(|group| {
                    s.spawn(move || {
                        let mut out = Vec::new();
                        for b in group {
                            out.extend(measure_batch(net, b, hyper)?);
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(pairs.len());
        for r in results {
            all.extend(r?);
        }
        all
    };

    let task = pairs[0].spec.kind.name().to_string();
    let mut groups: BTreeMap<(String, String), Acc> = BTreeMap::new();
    let mut total = Acc { n: 0, l1: 0.0, l2: 0.0, psnr: 0.0, n_inf: 0, runtime: 0.0, t: pairs[0].spec.t };
    for m in &metrics {
        let acc = groups.entry(m.key.clone()).or_insert(Acc {
            n: 0,
            l1: 0.0,
            l2: 0.0,
            psnr: 0.0,
            n_inf: 0,
            runtime: 0.0,
            t: m.t,
        });
        for a in [acc, &mut total] {
            a.n += 1;
            a.l1 += m.l1;
            a.l2 += m.l2;
            a.runtime += m.runtime;
            if m.psnr.is_finite() {
                a.psnr += m.psnr;
            } else {
                a.n_inf += 1;
            }
        }
    }

    let to_row = |task: &str, param: String, value: String, a: &Acc| EvalRow {
        task: task.to_string(),
        param,
        value,
        t: a.t,
        n: a.n,
        l1: a.l1 / a.n as f64,
        l2: a.l2 / a.n as f64,
        psnr: if a.n > a.n_inf { a.psnr / (a.n - a.n_inf) as f64 } else { f64::INFINITY },
        n_inf_psnr: a.n_inf,
        runtime_s: a.runtime,
    };

    let rows: Vec<EvalRow> = groups
        .iter()
        .map(|((param, value), acc)| to_row(&task, param.clone(), value.clone(), acc))
        .collect();
    let average = to_row(&task, "all".into(), "avg".into(), &total);
    Ok(EvalReport { rows, average, strategy: strategy.to_string() })
}

fn fmt_psnr(v: f64) -> String {
    if v.is_finite() {
        format!("{}", v)
    } else {
        "inf".into()
    }
}

impl EvalReport {
    /// CSV with columns (task, param, value, t, n, l1, l2, psnr, runtime_s).
    /// Samples with infinite PSNR are excluded from row averages; a count
    /// note is appended when any were.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,param,value,t,n,l1,l2,psnr,runtime_s\n");
        for row in self.rows.iter().chain(std::iter::once(&self.average)) {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.task,
                row.param,
                row.value,
                row.t,
                row.n,
                row.l1,
                row.l2,
                fmt_psnr(row.psnr),
                row.runtime_s
            ));
        }
        let inf_total: usize = self.rows.iter().map(|r| r.n_inf_psnr).sum();
        if inf_total > 0 {
            s.push_str(&format!("# note: {} samples with infinite psnr excluded from averages\n", inf_total));
        }
        s
    }
}
