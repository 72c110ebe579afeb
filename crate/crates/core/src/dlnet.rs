//! The unrolled refinement module: a degradation-fidelity objective on the
//! latent code `z` and K recorded ADAM steps minimizing it, through which
//! the outer training loss backpropagates (double backward).
//!
//! With K = 0 the module degenerates to the plain reference forward pass,
//! bit-exactly, and it never adds learnable parameters.

use crate::data::bicubic_resize;
use crate::degrade::{DegradationSpec, Kind};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::scalar::{lit, Scalar};
use crate::tensor::{backward_toward, is_recording, no_grad, GradMode, Tensor};

/// Denominators of the moment estimates in each inner step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasCorrection {
    /// Divide by the constants (1 - beta1), (1 - beta2), exactly as the
    /// recursion is defined here.
    PaperConstant,
    /// Standard step-dependent (1 - beta1^k), (1 - beta2^k), kept as a
    /// comparison flag.
    StepwisePower,
}

/// Hyperparameters of the inner refinement loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerHyper {
    pub k_steps: usize,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub bias_correction: BiasCorrection,
}

impl Default for InnerHyper {
    fn default() -> Self {
        InnerHyper {
            k_steps: 5,
            gamma: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            bias_correction: BiasCorrection::PaperConstant,
        }
    }
}

impl InnerHyper {
    /// Task defaults: interpolation runs a 10x larger inner step.
    pub fn for_task(task: Kind) -> Self {
        match task {
            Kind::Interpolate => InnerHyper { gamma: 1e-2, ..Default::default() },
            _ => InnerHyper::default(),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_steps = k;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(Error::invalid(format!("gamma={} must be > 0", self.gamma)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) || b == 0.0 {
                return Err(Error::invalid(format!("{}={} must lie in (0, 1)", name, b)));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::invalid("eps must be > 0"));
        }
        Ok(())
    }
}

/// First/second moment accumulators shaped like `z`, zeroed per call.
pub struct InnerState<T: Scalar> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> InnerState<T> {
    pub fn new(shape: &[usize]) -> Self {
        InnerState { m: Tensor::zeros(shape), v: Tensor::zeros(shape) }
    }
}

/// Differentiable observation model extracted from one spec (or a batch of
/// mask specs stacked along the batch axis), with the fidelity weight.
pub struct ObsModel<T: Scalar> {
    op: ObsOp<T>,
    weight: f64,
}

enum ObsOp<T: Scalar> {
    Mask(Tensor<T>),
    BlurDown { kernel: Tensor<T>, t: usize },
}

impl<T: Scalar> ObsModel<T> {
    pub fn from_spec(spec: &DegradationSpec<T>) -> Result<Self> {
        Self::from_specs(std::slice::from_ref(spec))
    }

    /// Batch form: all specs must share the kind; mask tasks stack their
    /// masks along the batch axis, the blur task is single-sample.
    pub fn from_specs(specs: &[DegradationSpec<T>]) -> Result<Self> {
        let first = specs.first().ok_or_else(|| Error::invalid("no specs"))?;
        if specs.iter().any(|s| s.kind != first.kind || s.sigma != first.sigma || s.t != first.t) {
            return Err(Error::Spec("batched specs must share kind, t and sigma".into()));
        }
        let weight = if first.sigma > 0.0 { 1.0 / (2.0 * first.sigma * first.sigma) } else { 1.0 };
        let op = match first.kind {
            Kind::Inpaint | Kind::Interpolate => {
                let masks: Vec<&Tensor<T>> = specs
                    .iter()
                    .map(|s| s.mask.as_ref().ok_or_else(|| Error::Spec("mask missing".into())))
                    .collect::<Result<_>>()?;
                let [_, c, h, w] = masks[0].dims4("obs_model")?;
                let mut data = Vec::with_capacity(specs.len() * c * h * w);
                for m in &masks {
                    data.extend_from_slice(m.data());
                }
                ObsOp::Mask(Tensor::from_vec(&[specs.len(), c, h, w], data)?)
            }
            Kind::BlurDownsample => {
                if specs.len() != 1 {
                    return Err(Error::Spec("blur observations are per-sample".into()));
                }
                let k = first.kernel.as_ref().ok_or_else(|| Error::Spec("kernel missing".into()))?;
                ObsOp::BlurDown { kernel: k.clone(), t: first.t }
            }
        };
        Ok(ObsModel { op, weight })
    }

    /// Differentiable `(W x) downsampled`, no noise.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.op {
            ObsOp::Mask(m) => x.mul(&m.broadcast_to(x.shape())?),
            ObsOp::BlurDown { kernel, t } => {
                let k4 = kernel.reshape(&[1, 1, crate::degrade::KERNEL_SIZE, crate::degrade::KERNEL_SIZE])?;
                x.conv2d(&k4, 1, crate::degrade::KERNEL_PAD)?.downsample(*t)
            }
        }
    }

    /// `weight * ||apply(x_hat) - y||^2` as a scalar graph tensor.
    pub fn fidelity(&self, x_hat: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        let resid = self.apply(x_hat)?.sub(y)?;
        let sq = resid.sq_norm();
        Ok(if self.weight == 1.0 { sq } else { sq.scale(lit(self.weight)) })
    }
}

/// Squared-residual fidelity of a candidate against the observation under
/// `spec`: `1/(2 sigma^2) * ||(W x_hat) dt - y||^2`, with weight 1 when
/// `sigma = 0` (the inner objective carries no prefactor then).
pub fn fidelity<T: Scalar>(x_hat: &Tensor<T>, y: &Tensor<T>, spec: &DegradationSpec<T>) -> Result<Tensor<T>> {
    ObsModel::from_spec(spec)?.fidelity(x_hat, y)
}

/// Smoothing constant added under the square root of the second moment.
/// The sqrt derivative is unbounded at 0, so an exactly-zero gradient
/// coordinate (masked-out region, dead relu) would turn the unrolled
/// loop's second backward into 0/0. Adding 1e-24 keeps the recursion
/// differentiable; in f64 the forward value is bit-identical for any
/// v-hat above ~1e-9, so the k=1 hand oracle is unaffected.
pub const V_SMOOTHING: f64 = 1e-24;

/// One inner ADAM step on the recursion
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g*g`,
/// `m^ = m / c1`, `v^ = v / c2`, `dz = -gamma m^ / (sqrt(v^) + eps)`,
/// where (c1, c2) are the bias-correction denominators. All arithmetic is
/// graph-recorded when `grad` carries a graph.
pub fn adam_inner_step<T: Scalar>(
    grad: &Tensor<T>,
    state: &mut InnerState<T>,
    hyper: &InnerHyper,
    k: usize,
) -> Result<Tensor<T>> {
    if k < 1 {
        return Err(Error::invalid("inner step index k starts at 1"));
    }
    let b1: T = lit(hyper.beta1);
    let b2: T = lit(hyper.beta2);
    state.m = state.m.scale(b1).add(&grad.scale(T::one() - b1))?;
    state.v = state.v.scale(b2).add(&grad.mul(grad)?.scale(T::one() - b2))?;
    let (c1, c2) = match hyper.bias_correction {
        BiasCorrection::PaperConstant => (1.0 - hyper.beta1, 1.0 - hyper.beta2),
        BiasCorrection::StepwisePower => {
            (1.0 - hyper.beta1.powi(k as i32), 1.0 - hyper.beta2.powi(k as i32))
        }
    };
    let m_hat = state.m.scale(T::one() / lit(c1));
    let v_hat = state.v.scale(T::one() / lit(c2));
    let denom = v_hat.add_scalar(lit(V_SMOOTHING)).sqrt()?.add_scalar(lit(hyper.eps));
    Ok(m_hat.scale(lit(hyper.gamma)).div(&denom)?.neg())
}

/// Data-level twin of [`adam_inner_step`] for the inference loop, where no
/// graph is needed: one fused pass instead of a dozen tensor ops. Every
/// elementwise expression mirrors the op form exactly, so the two paths
/// produce bit-identical values (asserted in tests).
fn adam_inner_step_fused<T: Scalar>(
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    hyper: &InnerHyper,
    k: usize,
) -> Vec<T> {
    let b1: T = lit(hyper.beta1);
    let b2: T = lit(hyper.beta2);
    let one = T::one();
    let (c1, c2) = match hyper.bias_correction {
        BiasCorrection::PaperConstant => (1.0 - hyper.beta1, 1.0 - hyper.beta2),
        BiasCorrection::StepwisePower => {
            (1.0 - hyper.beta1.powi(k as i32), 1.0 - hyper.beta2.powi(k as i32))
        }
    };
    let inv_c1 = one / lit::<T>(c1);
    let inv_c2 = one / lit::<T>(c2);
    let smooth: T = lit(V_SMOOTHING);
    let eps: T = lit(hyper.eps);
    let gamma: T = lit(hyper.gamma);
    let mut dz = Vec::with_capacity(grad.len());
    for (i, &g) in grad.iter().enumerate() {
        m[i] = m[i] * b1 + g * (one - b1);
        v[i] = v[i] * b2 + (g * g) * (one - b2);
        let m_hat = m[i] * inv_c1;
        let v_hat = v[i] * inv_c2;
        let denom = (v_hat + smooth).sqrt() + eps;
        dz.push(-((m_hat * gamma) / denom));
    }
    dz
}

/// K unrolled ADAM steps on `z` against the fidelity of `h(z)`.
///
/// In training mode the per-step gradient of the fidelity w.r.t. `z` is
/// taken with `create_graph = true`, so the returned code carries full
/// lineage to `z0` and to h's parameters. In inference mode each step is
/// detached (no double backward needed).
pub fn inner_refine<T: Scalar>(
    net: &Network<T>,
    z0: &Tensor<T>,
    y_in: &Tensor<T>,
    y_obs: &Tensor<T>,
    obs: &ObsModel<T>,
    hyper: &InnerHyper,
    training: bool,
) -> Result<Tensor<T>> {
    refine_impl(net, z0, y_in, y_obs, obs, hyper, training, None)
}

/// [`inner_refine`] that also reports the fidelity value at every step
/// k = 0..K (inference mode only).
pub fn refine_traced<T: Scalar>(
    net: &Network<T>,
    z0: &Tensor<T>,
    y_in: &Tensor<T>,
    y_obs: &Tensor<T>,
    obs: &ObsModel<T>,
    hyper: &InnerHyper,
) -> Result<(Tensor<T>, Vec<f64>)> {
    let mut trace = Vec::with_capacity(hyper.k_steps + 1);
    let z = refine_impl(net, z0, y_in, y_obs, obs, hyper, false, Some(&mut trace))?;
    // fidelity at the final code
    let fid = no_grad(|| -> Result<f64> {
        let xh = net.forward_h(&z, y_in)?;
        obs.fidelity(&xh, y_obs)?.item().map(|v| v.to_f64().unwrap())
    })?;
    trace.push(fid);
    Ok((z, trace))
}

#[allow(clippy::too_many_arguments)]
fn refine_impl<T: Scalar>(
    net: &Network<T>,
    z0: &Tensor<T>,
    y_in: &Tensor<T>,
    y_obs: &Tensor<T>,
    obs: &ObsModel<T>,
    hyper: &InnerHyper,
    training: bool,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<Tensor<T>> {
    hyper.validate()?;
    if training && !is_recording() {
        return Err(Error::Graph(
            "training-mode refinement builds the unrolled graph and cannot run inside no_grad".into(),
        ));
    }
    let mut z = if training { z0.clone() } else { z0.detach() };
    let mut state = InnerState::new(if training { z.shape() } else { &[] });
    let mut m_buf = vec![T::zero(); if training { 0 } else { z.numel() }];
    let mut v_buf = m_buf.clone();
    for k in 1..=hyper.k_steps {
        let zc = if training { z.clone() } else { z.requiring_grad() };
        let mode = if training { GradMode::HIGHER_ORDER } else { GradMode::EVAL };
        // the step needs its own graph through h even when the caller sits
        // inside no_grad (inference is such a caller)
        let (fid_value, gz) = crate::tensor::with_recording_on(|| -> Result<_> {
            let x_hat = net.forward_h(&zc, y_in)?;
            let fid = obs.fidelity(&x_hat, y_obs)?;
            let gz = backward_toward(&fid, mode, &zc)?;
            Ok((fid.item()?.to_f64().unwrap(), gz))
        })?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(fid_value);
        }
        if training {
            let dz = adam_inner_step(&gz, &mut state, hyper, k)?;
            z = zc.add(&dz)?;
        } else {
            let dz = adam_inner_step_fused(gz.data(), &mut m_buf, &mut v_buf, hyper, k);
            z = no_grad(|| zc.detach().add(&Tensor::from_vec(zc.shape(), dz)?))?;
        }
    }
    Ok(z)
}

/// Network input fed to `g` for an observation under `spec`: mask tasks see
/// the observation itself, the blur task sees its bicubic upscale back to
/// the target resolution.
pub fn prepare_input<T: Scalar>(y: &Tensor<T>, spec: &DegradationSpec<T>) -> Result<Tensor<T>> {
    match spec.kind {
        Kind::Inpaint | Kind::Interpolate => Ok(y.clone()),
        Kind::BlurDownsample => bicubic_resize(y, spec.t as f64),
    }
}

/// Core restoration with explicit network input, observation and model;
/// the batched entry used by training.
pub fn restore_with<T: Scalar>(
    net: &Network<T>,
    y_in: &Tensor<T>,
    y_obs: &Tensor<T>,
    obs: &ObsModel<T>,
    hyper: &InnerHyper,
    training: bool,
) -> Result<Tensor<T>> {
    net.validate_split()?;
    if training {
        let z0 = net.forward_g(y_in)?;
        let z = inner_refine(net, &z0, y_in, y_obs, obs, hyper, true)?;
        net.forward_h(&z, y_in)
    } else {
        let y_in = y_in.detach();
        let z0 = no_grad(|| net.forward_g(&y_in))?;
        let z = inner_refine(net, &z0, &y_in, &y_obs.detach(), obs, hyper, false)?;
        no_grad(|| net.forward_h(&z, &y_in))
    }
}

/// Restore one observation: `h(refine(g(input)))`. With `hyper.k_steps = 0`
/// this is exactly the reference forward pass.
pub fn restore<T: Scalar>(
    net: &Network<T>,
    y_img: &Tensor<T>,
    spec: &DegradationSpec<T>,
    hyper: &InnerHyper,
    training: bool,
) -> Result<Tensor<T>> {
    let obs = ObsModel::from_spec(spec)?;
    let y_in = prepare_input(y_img, spec)?;
    restore_with(net, &y_in, y_img, &obs, hyper, training)
}

/// [`restore`] that also returns the fidelity trace over k = 0..K
/// (inference mode).
pub fn restore_traced<T: Scalar>(
    net: &Network<T>,
    y_img: &Tensor<T>,
    spec: &DegradationSpec<T>,
    hyper: &InnerHyper,
) -> Result<(Tensor<T>, Vec<f64>)> {
    net.validate_split()?;
    let obs = ObsModel::from_spec(spec)?;
    let y_in = prepare_input(y_img, spec)?.detach();
    let z0 = no_grad(|| net.forward_g(&y_in))?;
    let (z, trace) = refine_traced(net, &z0, &y_in, &y_img.detach(), &obs, hyper)?;
    let x_hat = no_grad(|| net.forward_h(&z, &y_in))?;
    Ok((x_hat, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_autoencoder, Layer};
    use crate::tensor::{backward, grad_check};
    use rand::Rng;

    type Spec = DegradationSpec<f64>;

    fn rand_image(n: usize, size: usize, seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::chacha(seed);
        let data = (0..n * size * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[n, 1, size, size], data).unwrap()
    }

    /// h = relu then 1x1 conv with weight 1: the identity on positive z.
    fn identity_head() -> Network<f64> {
        Network {
            layers: vec![
                Layer::Relu,
                Layer::Conv {
                    w: Tensor::ones(&[1, 1, 1, 1]).requiring_grad(),
                    b: None,
                    stride: 1,
                    pad: 0,
                },
            ],
            split_idx: 0,
        }
    }

    #[test]
    fn adam_inner_step_transcription_oracle() {
        // hand evaluation at grad 2, fresh state, defaults:
        // m = 0.2, v = 0.004, m^ = 2, v^ = 4, dz = -1e-3 * 2 / (2 + 1e-8)
        let hyper = InnerHyper::default();
        let grad = Tensor::scalar(2.0f64);
        let mut state = InnerState::new(&[]);
        let dz = adam_inner_step(&grad, &mut state, &hyper, 1).unwrap();
        assert!((state.m.item().unwrap() - 0.2).abs() < 1e-9);
        assert!((state.v.item().unwrap() - 0.004).abs() < 1e-9);
        let m_hat = state.m.item().unwrap() / (1.0 - 0.9);
        let v_hat = state.v.item().unwrap() / (1.0 - 0.999);
        assert!((m_hat - 2.0).abs() < 1e-9);
        assert!((v_hat - 4.0).abs() < 1e-9);
        assert!((dz.item().unwrap() - (-1.000e-3)).abs() < 1e-9, "dz = {}", dz.item().unwrap());
    }

    #[test]
    fn adam_inner_step_zero_grad_is_exact_zero() {
        let hyper = InnerHyper::default();
        let grad: Tensor<f64> = Tensor::zeros(&[4]);
        let mut state = InnerState::new(&[4]);
        let dz = adam_inner_step(&grad, &mut state, &hyper, 1).unwrap();
        assert!(dz.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_first_step_opposes_gradient() {
        let hyper = InnerHyper::default();
        let mut rng = crate::rng::chacha(3);
        let grad =
            Tensor::from_vec(&[8], (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>()).unwrap();
        let mut state = InnerState::new(&[8]);
        let dz = adam_inner_step(&grad, &mut state, &hyper, 1).unwrap();
        for (g, d) in grad.data().iter().zip(dz.data()) {
            if *g != 0.0 {
                assert!(g.signum() == -d.signum(), "g={} dz={}", g, d);
            }
        }
    }

    #[test]
    fn adam_stepwise_power_differs_after_first_step() {
        let paper = InnerHyper::default();
        let stepwise = InnerHyper { bias_correction: BiasCorrection::StepwisePower, ..paper };
        let grad = Tensor::scalar(1.0f64);
        // k = 1: (1 - b^1) equals the constants, steps agree
        let mut s1 = InnerState::new(&[]);
        let mut s2 = InnerState::new(&[]);
        let d1 = adam_inner_step(&grad, &mut s1, &paper, 1).unwrap();
        let d2 = adam_inner_step(&grad, &mut s2, &stepwise, 1).unwrap();
        assert_eq!(d1.item().unwrap(), d2.item().unwrap());
        // k = 2: they diverge
        let d1 = adam_inner_step(&grad, &mut s1, &paper, 2).unwrap();
        let d2 = adam_inner_step(&grad, &mut s2, &stepwise, 2).unwrap();
        assert_ne!(d1.item().unwrap(), d2.item().unwrap());
    }

    #[test]
    fn fused_adam_matches_op_form_bitwise() {
        let mut rng = crate::rng::chacha(91);
        for bc in [BiasCorrection::PaperConstant, BiasCorrection::StepwisePower] {
            let hyper = InnerHyper { bias_correction: bc, ..Default::default() };
            let mut state = InnerState::new(&[32]);
            let mut m = vec![0.0f64; 32];
            let mut v = vec![0.0f64; 32];
            for k in 1..=7 {
                let grad = Tensor::from_vec(
                    &[32],
                    (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>(),
                )
                .unwrap();
                let dz_ops = adam_inner_step(&grad, &mut state, &hyper, k).unwrap();
                let dz_fused = adam_inner_step_fused(grad.data(), &mut m, &mut v, &hyper, k);
                for (a, b) in dz_ops.data().iter().zip(&dz_fused) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
                for (a, b) in state.m.data().iter().zip(&m) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn inner_state_v_stays_nonnegative_and_dz_finite() {
        let hyper = InnerHyper::default();
        let mut state = InnerState::new(&[16]);
        let mut rng = crate::rng::chacha(17);
        for k in 1..=20 {
            let grad = Tensor::from_vec(
                &[16],
                (0..16).map(|_| rng.gen_range(-100.0..100.0)).collect::<Vec<f64>>(),
            )
            .unwrap();
            let dz = adam_inner_step(&grad, &mut state, &hyper, k).unwrap();
            assert!(state.v.data().iter().all(|&v| v >= 0.0));
            assert!(dz.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn fidelity_consistency_and_hand_value() {
        // ground truth reproduces its own observation
        let x = rand_image(1, 8, 5);
        let spec = Spec::inpaint(8, 8, 3, (0, 1)).unwrap();
        let y = spec.apply(&x, 0).unwrap();
        let f = fidelity(&x, &y, &spec).unwrap();
        assert!(f.item().unwrap() <= 1e-20);

        // x_hat = [1,1], y = [0,1], identity W, weight 1 -> 1.0
        let xh = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
        let y = Tensor::from_vec(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let spec = Spec::identity(1, 2);
        assert_eq!(fidelity(&xh, &y, &spec).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn fidelity_masked_pixels_have_zero_gradient() {
        let x = rand_image(1, 8, 6);
        let spec = Spec::inpaint(8, 8, 4, (0, 0)).unwrap();
        let y = spec.apply(&x, 0).unwrap();
        let xh = rand_image(1, 8, 7).requiring_grad();
        let f = fidelity(&xh, &y, &spec).unwrap();
        let g = backward(&f, GradMode::EVAL).unwrap();
        let gx = g.get(&xh).unwrap();
        let mask = spec.mask.as_ref().unwrap();
        for (gv, mv) in gx.data().iter().zip(mask.data()) {
            if *mv == 0.0 {
                assert_eq!(*gv, 0.0);
            }
        }
    }

    #[test]
    fn fidelity_sigma_weight() {
        let xh = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = Tensor::zeros(&[1, 1, 2, 2]);
        let spec = Spec::blur_downsample(0.0, 1, 0.5, 0).unwrap();
        // weight = 1 / (2 * 0.25) = 2
        let f = fidelity(&xh, &y, &spec).unwrap();
        assert!((f.item().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_toy_trace_of_one_step() {
        // h = identity, W = 1, t = 1, y = 0, z0 = 2, K = 1:
        // objective z^2, grad 4, z1 = 2 - 1e-3 * (4 / (4 + 1e-8))
        let net = identity_head();
        let z0 = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = Tensor::zeros(&[1, 1, 1, 1]);
        let spec = Spec::identity(1, 1);
        let obs = ObsModel::from_spec(&spec).unwrap();
        let hyper = InnerHyper::default().with_k(1);
        let z1 = inner_refine(&net, &z0, &y, &y, &obs, &hyper, false).unwrap();
        assert!((z1.item().unwrap() - 1.999).abs() < 1e-9, "z1 = {}", z1.item().unwrap());
    }

    #[test]
    fn k0_returns_z0_and_restore_equals_forward() {
        let net = build_autoencoder::<f64>(16, 4, 11).unwrap();
        let y = rand_image(2, 16, 21);
        let spec = Spec::inpaint(16, 16, 5, (0, 0)).unwrap();
        let obs = ObsModel::from_spec(&spec).unwrap();
        let hyper = InnerHyper::default().with_k(0);

        let z0 = net.forward_g(&y).unwrap();
        let z = inner_refine(&net, &z0, &y, &y, &obs, &hyper, false).unwrap();
        assert_eq!(z.data(), z0.data());

        for training in [false, true] {
            let out = restore(&net, &y, &spec, &hyper, training).unwrap();
            let reference = net.forward(&y).unwrap();
            assert_eq!(out.data(), reference.data(), "training={}", training);
        }
    }

    #[test]
    fn zero_gradient_fixed_point() {
        // fully masked observation: fidelity is identically zero, so the
        // refinement never moves z
        let net = build_autoencoder::<f64>(16, 4, 13).unwrap();
        let y = rand_image(1, 16, 23);
        let spec = Spec::inpaint(16, 16, 16, (0, 0)).unwrap(); // mask all zeros
        let y_masked = spec.apply(&y, 0).unwrap();
        let obs = ObsModel::from_spec(&spec).unwrap();
        let hyper = InnerHyper::default();
        let z0 = no_grad(|| net.forward_g(&y_masked)).unwrap();
        let z = inner_refine(&net, &z0, &y_masked, &y_masked, &obs, &hyper, false).unwrap();
        assert_eq!(z.data(), z0.data());
    }

    #[test]
    fn restore_shape_unchanged_by_k() {
        let net = build_autoencoder::<f64>(16, 4, 15).unwrap();
        let y = rand_image(1, 16, 29);
        let spec = Spec::interpolate(16, 16, 0.4, 3).unwrap();
        for k in [0, 1, 3] {
            let out = restore(&net, &y, &spec, &InnerHyper::default().with_k(k), false).unwrap();
            assert_eq!(out.shape(), y.shape());
        }
    }

    #[test]
    fn refinement_reduces_fidelity_even_untrained() {
        // the inner loop descends the fidelity; on an untrained net the
        // trace should already drop from k=0 to k=K given enough steps
        let net = build_autoencoder::<f64>(16, 4, 17).unwrap();
        let x = rand_image(1, 16, 31);
        let spec = Spec::interpolate(16, 16, 0.3, 9).unwrap();
        let y = spec.apply(&x, 0).unwrap();
        let hyper = InnerHyper { gamma: 1e-2, k_steps: 25, ..Default::default() };
        let (_, trace) = restore_traced(&net, &y, &spec, &hyper).unwrap();
        assert_eq!(trace.len(), 26);
        assert!(
            trace[25] < trace[0],
            "fidelity did not drop: {} -> {}",
            trace[0],
            trace[25]
        );
    }

    #[test]
    fn restore_adds_no_parameters() {
        let net = build_autoencoder::<f64>(16, 4, 19).unwrap();
        let before = net.param_count();
        let y = rand_image(1, 16, 37);
        let spec = Spec::inpaint(16, 16, 4, (1, 1)).unwrap();
        let _ = restore(&net, &y, &spec, &InnerHyper::default(), true).unwrap();
        assert_eq!(net.param_count(), before);
    }

    #[test]
    fn training_gradients_flow_through_unrolled_loop() {
        // double-backward gate at unit-test scale: dL/d(params) through the
        // training-mode restore matches finite differences of the value
        // function (evaluated in inference mode, which computes the same
        // numbers without building the outer graph).
        let net = build_autoencoder::<f64>(16, 2, 23).unwrap();
        let x = rand_image(1, 16, 41);
        let spec = Spec::inpaint(16, 16, 6, (0, 0)).unwrap();
        let y = spec.apply(&x, 0).unwrap();
        let hyper = InnerHyper { k_steps: 2, gamma: 1e-2, ..Default::default() };

        let loss = {
            let xh = restore(&net, &y, &spec, &hyper, true).unwrap();
            xh.sub(&x).unwrap().sq_norm()
        };
        let grads = backward(&loss, GradMode::EVAL).unwrap();

        let value_at = |n: &Network<f64>| -> f64 {
            let xh = restore(n, &y, &spec, &hyper, false).unwrap();
            xh.sub(&x).unwrap().sq_norm().item().unwrap()
        };
        // same values in both modes
        assert!((value_at(&net) - loss.item().unwrap()).abs() < 1e-12);

        // one g-side tensor (first conv weight) and the h-side conv weight
        let slots = [0usize, net.params().len() - 2];
        let eps = 1e-5;
        for &slot in &slots {
            let p0 = net.params()[slot].clone();
            let analytic = grads.get_or_zeros(&p0);
            assert!(analytic.data().iter().any(|&v| v != 0.0), "slot {} got zero grad", slot);
            let mut max_rel = 0.0f64;
            for i in 0..p0.numel() {
                let perturbed = |delta: f64| {
                    let mut d = p0.data().to_vec();
                    d[i] += delta;
                    let mut n2 = net.clone();
                    *n2.params_mut()[slot] =
                        Tensor::from_vec(p0.shape(), d).unwrap().requiring_grad();
                    value_at(&n2)
                };
                let fd = (perturbed(eps) - perturbed(-eps)) / (2.0 * eps);
                let a = analytic.data()[i];
                assert!(a.is_finite() && fd.is_finite(), "slot {} coord {}: a={} fd={}", slot, i, a, fd);
                let rel = (a - fd).abs() / 1.0f64.max(a.abs()).max(fd.abs());
                max_rel = max_rel.max(rel);
            }
            assert!(max_rel < 1e-4, "slot {} rel={}", slot, max_rel);
        }
    }
}
