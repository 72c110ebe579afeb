//! Losses, the outer ADAM optimizer and the four training strategies:
//! reference (one fixed degradation), rigid-joint, naive-likelihood and
//! the unrolled-refinement strategy that backpropagates through the inner
//! loop.
//!
//! Training is bit-deterministic in (seed, config, dataset): degradations
//! are resampled per sample per epoch from derived seeds, and batches are
//! single graphs (mask tasks) or fixed-order per-sample accumulations
//! (blur task).

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::{Dataset, TestPair};
use crate::degrade::{sample_spec, DegradationSpec, Kind, SpecRanges};
use crate::dlnet::{restore, restore_with, InnerHyper, ObsModel};
use crate::error::{Error, Result};
use crate::metrics;
use crate::net::Network;
use crate::rng;

use crate::tensor::{backward, no_grad, GradMode, Gradients, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    /// One fixed degradation spec for every sample.
    Reference,
    /// Degradations resampled per sample per epoch, plain forward.
    Joint,
    /// Joint plus `lambda * L_lik` added to the objective.
    Naive { lambda: f64 },
    /// Joint trained through the unrolled refinement loop.
    DlNet { hyper: InnerHyper },
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::Reference => "reference".into(),
            Strategy::Joint => "joint".into(),
            Strategy::Naive { lambda } => format!("naive({})", lambda),
            Strategy::DlNet { .. } => "dlnet".into(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Strategy::DlNet { hyper } => hyper.k_steps,
            _ => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Strategy::Naive { lambda } if *lambda <= 0.0 => {
                Err(Error::invalid(format!("naive lambda={} must be > 0", lambda)))
            }
            Strategy::DlNet { hyper } => hyper.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainCfg {
    pub strategy: Strategy,
    pub task: Kind,
    pub ranges: SpecRanges,
    /// Spec record used by the Reference strategy.
    pub reference_record: Option<String>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    /// (every_n_epochs, factor): divide the learning rate by `factor`
    /// every `every_n_epochs` epochs.
    pub lr_drop: Option<(usize, f64)>,
    pub seed: u64,
}

impl TrainCfg {
    pub fn new(strategy: Strategy, task: Kind) -> Self {
        TrainCfg {
            strategy,
            task,
            ranges: SpecRanges::default(),
            reference_record: None,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch: 100,
            epochs: 1,
            lr_drop: Some((100, 10.0)),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.lr <= 0.0 || self.batch == 0 || self.epochs == 0 {
            return Err(Error::invalid("lr, batch and epochs must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if matches!(self.strategy, Strategy::Reference) && self.reference_record.is_none() {
            return Err(Error::invalid("reference strategy needs a reference_record"));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_drop {
            Some((every, factor)) if every > 0 => self.lr / factor.powi((epoch / every) as i32),
            _ => self.lr,
        }
    }
}

/// Reconstruction loss: squared error averaged over all elements
/// (the per-element mean form of the `1/(whN)` normalization).
pub fn loss_rec(x_hat: &Tensor<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let n = x_hat.numel() as f64;
    Ok(x_hat.sub(x)?.sq_norm().scale(1.0 / n))
}

/// Naive-likelihood objective: `loss_rec + lambda * mean-normalized
/// fidelity` of the prediction against the observation.
pub fn loss_naive(
    x_hat: &Tensor<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    spec: &DegradationSpec<f64>,
    lambda: f64,
) -> Result<Tensor<f64>> {
    let obs = ObsModel::from_spec(spec)?;
    loss_naive_with(x_hat, x, y, &obs, lambda)
}

fn loss_naive_with(
    x_hat: &Tensor<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    obs: &ObsModel<f64>,
    lambda: f64,
) -> Result<Tensor<f64>> {
    let rec = loss_rec(x_hat, x)?;
    let lik = obs.fidelity(x_hat, y)?.scale(1.0 / y.numel() as f64);
    rec.add(&lik.scale(lambda))
}

/// Outer optimizer state: per-parameter moments and the shared step
/// counter. This is ordinary ADAM with stepwise bias correction.
#[derive(Default)]
pub struct AdamOuterState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

const OUTER_BETA1: f64 = 0.9;
const OUTER_BETA2: f64 = 0.999;
const OUTER_EPS: f64 = 1e-8;

/// One ADAM update over all parameters. `grads[i]` pairs with `params[i]`;
/// a missing gradient is treated as zero. Weight decay enters as an L2
/// gradient addition `wd * param`.
pub fn adam_outer_step(
    params: &mut [&mut Tensor<f64>],
    grads: &[Option<Tensor<f64>>],
    state: &mut AdamOuterState,
    lr: f64,
    wd: f64,
) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid("optimizer state out of sync with parameters"));
    }
    state.step += 1;
    let bc1 = 1.0 - OUTER_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - OUTER_BETA2.powi(state.step as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let pdata = p.data();
        let zero;
        let gdata: &[f64] = match &grads[i] {
            Some(g) => {
                if g.shape() != p.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "adam_outer_step",
                        left: g.shape().to_vec(),
                        right: p.shape().to_vec(),
                    });
                }
                g.data()
            }
            None => {
                zero = vec![0.0; pdata.len()];
                &zero
            }
        };
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut new_data = Vec::with_capacity(pdata.len());
        for j in 0..pdata.len() {
            let g = gdata[j] + wd * pdata[j];
            m[j] = OUTER_BETA1 * m[j] + (1.0 - OUTER_BETA1) * g;
            v[j] = OUTER_BETA2 * v[j] + (1.0 - OUTER_BETA2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            new_data.push(pdata[j] - lr * m_hat / (v_hat.sqrt() + OUTER_EPS));
        }
        **p = Tensor::from_vec(p.shape(), new_data)?.requiring_grad();
    }
    Ok(())
}

/// One line of the epoch log.
#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub strategy: String,
    pub k: usize,
    pub train_loss: f64,
    pub val_l1: Option<f64>,
    pub val_l2: Option<f64>,
    pub val_psnr: Option<f64>,
    pub wall_seconds: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{}", x)).unwrap_or_default()
}

/// Epoch log CSV: (epoch, strategy, K, train_loss, val_l1, val_l2,
/// val_psnr, wall_seconds).
pub fn epoch_csv(rows: &[EpochRow]) -> String {
    let mut s = String::from("epoch,strategy,K,train_loss,val_l1,val_l2,val_psnr,wall_seconds\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.strategy,
            r.k,
            r.train_loss,
            fmt_opt(r.val_l1),
            fmt_opt(r.val_l2),
            fmt_opt(r.val_psnr),
            r.wall_seconds
        ));
    }
    s
}

fn stack_images(ds: &Dataset, indices: &[usize]) -> Result<Tensor<f64>> {
    let [_, c, h, w] = ds.images[0].dims4("train")?;
    let mut data = Vec::with_capacity(indices.len() * c * h * w);
    for &i in indices {
        data.extend_from_slice(ds.images[i].data());
    }
    Tensor::from_vec(&[indices.len(), c, h, w], data)
}

struct BatchLoss {
    loss: Tensor<f64>,
}

fn batch_loss_masks(
    net: &Network<f64>,
    xb: &Tensor<f64>,
    specs: &[DegradationSpec<f64>],
    strategy: &Strategy,
) -> Result<BatchLoss> {
    let obs = ObsModel::from_specs(specs)?;
    let yb = no_grad(|| obs.apply(xb))?;
    let x_hat = match strategy {
        Strategy::DlNet { hyper } => restore_with(net, &yb, &yb, &obs, hyper, true)?,
        _ => net.forward(&yb)?,
    };
    let loss = match strategy {
        Strategy::Naive { lambda } => loss_naive_with(&x_hat, xb, &yb, &obs, *lambda)?,
        _ => loss_rec(&x_hat, xb)?,
    };
    Ok(BatchLoss { loss })
}

fn batch_loss_blur(
    net: &Network<f64>,
    ds: &Dataset,
    indices: &[usize],
    specs: &[DegradationSpec<f64>],
    strategy: &Strategy,
    noise_seeds: &[u64],
) -> Result<BatchLoss> {
    let mut rec_sum: Option<Tensor<f64>> = None;
    let mut lik_sum: Option<Tensor<f64>> = None;
    let mut rec_elems = 0usize;
    let mut lik_elems = 0usize;
    for ((&i, spec), &nseed) in indices.iter().zip(specs).zip(noise_seeds) {
        let x = &ds.images[i];
        let y = no_grad(|| spec.apply(x, nseed))?;
        let y_in = no_grad(|| crate::data::bicubic_resize(&y, spec.t as f64))?;
        let obs = ObsModel::from_spec(spec)?;
        let x_hat = match strategy {
            Strategy::DlNet { hyper } => restore_with(net, &y_in, &y, &obs, hyper, true)?,
            _ => net.forward(&y_in)?,
        };
        let rec = x_hat.sub(x)?.sq_norm();
        rec_elems += x.numel();
        rec_sum = Some(match rec_sum {
            Some(acc) => acc.add(&rec)?,
            None => rec,
        });
        if let Strategy::Naive { .. } = strategy {
            let lik = obs.fidelity(&x_hat, &y)?;
            lik_elems += y.numel();
            lik_sum = Some(match lik_sum {
                Some(acc) => acc.add(&lik)?,
                None => lik,
            });
        }
    }
    let mut loss = rec_sum.ok_or_else(|| Error::invalid("empty batch"))?.scale(1.0 / rec_elems as f64);
    if let Strategy::Naive { lambda } = strategy {
        let lik = lik_sum.expect("naive accumulates fidelity").scale(*lambda / lik_elems as f64);
        loss = loss.add(&lik)?;
    }
    Ok(BatchLoss { loss })
}

fn validate_model(
    net: &Network<f64>,
    val: &[TestPair],
    strategy: &Strategy,
) -> Result<(f64, f64, f64)> {
    let hyper = match strategy {
        Strategy::DlNet { hyper } => *hyper,
        _ => InnerHyper::default().with_k(0),
    };
    let (mut l1s, mut l2s, mut psnrs) = (0.0, 0.0, 0.0);
    let mut n_finite = 0usize;
    for pair in val {
        let x_hat = restore(net, &pair.y, &pair.spec, &hyper, false)?;
        l1s += metrics::l1(&x_hat, &pair.x)?;
        l2s += metrics::l2(&x_hat, &pair.x)?;
        let p = metrics::psnr(&x_hat, &pair.x)?;
        if p.is_finite() {
            psnrs += p;
            n_finite += 1;
        }
    }
    let n = val.len() as f64;
    let psnr = if n_finite > 0 { psnrs / n_finite as f64 } else { f64::INFINITY };
    Ok((l1s / n, l2s / n, psnr))
}

/// Train `net` in place; returns the per-epoch log. Deterministic given
/// (seed, cfg, dataset).
pub fn train(
    net: &mut Network<f64>,
    ds: &Dataset,
    val: Option<&[TestPair]>,
    cfg: &TrainCfg,
) -> Result<Vec<EpochRow>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let (h, w) = ds.image_hw()?;
    cfg.ranges.validate(cfg.task, h, w)?;
    let reference_spec = match &cfg.reference_record {
        Some(record) => Some(DegradationSpec::parse_record(record, h, w)?),
        None => None,
    };
    let is_mask_task = matches!(cfg.task, Kind::Inpaint | Kind::Interpolate);
    let n = ds.len();
    let mut state = AdamOuterState::default();
    let mut rows = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::chacha(rng::derive(cfg.seed, "shuffle", epoch as u64)));

        let mut loss_weighted = 0.0f64;
        let mut seen = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            // per-sample degradations, resampled every epoch
            let specs: Vec<DegradationSpec<f64>> = chunk
                .iter()
                .enumerate()
                .map(|(j, _)| match &reference_spec {
                    Some(spec) => Ok(spec.clone()),
                    None => {
                        let counter = (epoch * n + seen + j) as u64;
                        sample_spec(cfg.task, rng::derive(cfg.seed, "spec", counter), &cfg.ranges, h, w)
                    }
                })
                .collect::<Result<_>>()?;
            let noise_seeds: Vec<u64> = chunk
                .iter()
                .enumerate()
                .map(|(j, _)| rng::derive(cfg.seed, "noise", (epoch * n + seen + j) as u64))
                .collect();

            let batch = if is_mask_task {
                let xb = stack_images(ds, chunk)?;
                batch_loss_masks(net, &xb, &specs, &cfg.strategy)?
            } else {
                batch_loss_blur(net, ds, chunk, &specs, &cfg.strategy, &noise_seeds)?
            };
            let loss_value = batch.loss.item()?;
            if !loss_value.is_finite() {
                return Err(Error::Train {
                    epoch,
                    batch: bi,
                    msg: format!("non-finite loss {} (strategy {})", loss_value, cfg.strategy.name()),
                });
            }
            loss_weighted += loss_value * chunk.len() as f64;
            seen += chunk.len();

            let grads: Gradients<f64> = backward(&batch.loss, GradMode::EVAL)?;
            let grad_list: Vec<Option<Tensor<f64>>> =
                net.params().iter().map(|p| grads.get(p).cloned()).collect();
            let mut params = net.params_mut();
            adam_outer_step(&mut params, &grad_list, &mut state, lr, cfg.weight_decay)?;
        }

        let (val_l1, val_l2, val_psnr) = match val {
            Some(pairs) if !pairs.is_empty() => {
                let (a, b, c) = validate_model(net, pairs, &cfg.strategy)?;
                (Some(a), Some(b), Some(c))
            }
            _ => (None, None, None),
        };
        rows.push(EpochRow {
            epoch,
            strategy: cfg.strategy.name(),
            k: cfg.strategy.k(),
            train_loss: loss_weighted / seen as f64,
            val_l1,
            val_l2,
            val_psnr,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}
