//! Built-in verification suites: finite-difference gradient sweeps over
//! every primitive op, a double-backward sweep, the inner-ADAM
//! transcription oracle and the structural invariants. `cmd_selftest`
//! runs all of them; the acceptance tests run them at full case counts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::degrade::{sample_spec, DegradationSpec, Kind, SpecRanges};
use crate::dlnet::{adam_inner_step, fidelity, restore, InnerHyper, InnerState};
use crate::error::Result;
use crate::net::build_autoencoder;
use crate::rng;

use crate::tensor::{backward, grad_check_masked, no_grad, GradMode, Tensor};

/// One named pass/fail line.
#[derive(Clone, Debug)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckLine { name: name.to_string(), passed, detail }
    }
}

type T64 = Tensor<f64>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> T64 {
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Uniform magnitudes in `[lo_abs, hi_abs]` with random sign (keeps
/// denominators and relu arguments away from zero).
fn uniform_away(rng: &mut ChaCha8Rng, shape: &[usize], lo_abs: f64, hi_abs: f64) -> T64 {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let m = rng.gen_range(lo_abs..hi_abs);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

struct OpCase {
    name: &'static str,
    /// builds (input, scalar function of the input)
    build: Box<dyn Fn(&mut ChaCha8Rng) -> (T64, Box<dyn Fn(&T64) -> Result<T64>>)>,
}

fn weighted_sum(t: &T64, c: &T64) -> Result<T64> {
    Ok(t.mul(c)?.sum())
}

fn op_cases() -> Vec<OpCase> {
    let img: &[usize] = &[2, 2, 4, 4];
    let mut cases: Vec<OpCase> = Vec::new();
    let mut push = |name: &'static str,
                    build: Box<dyn Fn(&mut ChaCha8Rng) -> (T64, Box<dyn Fn(&T64) -> Result<T64>>)>| {
        cases.push(OpCase { name, build });
    };

    push(
        "add",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let b = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.add(&b)?, &c)))
        }),
    );
    push(
        "sub",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let b = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&b.sub(v)?, &c)))
        }),
    );
    push(
        "mul",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let b = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.mul(&b)?, &c)))
        }),
    );
    push(
        "div(numerator)",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let b = uniform_away(r, img, 0.5, 2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.div(&b)?, &c)))
        }),
    );
    push(
        "div(denominator)",
        Box::new(move |r| {
            let x = uniform_away(r, img, 0.5, 2.0);
            let a = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&a.div(v)?, &c)))
        }),
    );
    push(
        "neg",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.neg(), &c)))
        }),
    );
    push(
        "sqrt",
        Box::new(move |r| {
            let x = uniform(r, img, 0.3, 3.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.sqrt()?, &c)))
        }),
    );
    push(
        "relu",
        Box::new(move |r| {
            // inputs bounded away from the kink by much more than eps
            let x = uniform_away(r, img, 1e-2, 2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.relu(), &c)))
        }),
    );
    push(
        "tanh",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.tanh(), &c)))
        }),
    );
    push(
        "scale",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let a = r.gen_range(-2.0..2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.scale(a), &c)))
        }),
    );
    push(
        "add_scalar",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let a = r.gen_range(-2.0..2.0);
            let c = uniform(r, img, -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.add_scalar(a), &c)))
        }),
    );
    push(
        "matmul(left)",
        Box::new(|r| {
            let x = uniform(r, &[3, 4], -1.5, 1.5);
            let b = uniform(r, &[4, 2], -1.5, 1.5);
            let c = uniform(r, &[3, 2], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.matmul(&b)?, &c)))
        }),
    );
    push(
        "matmul(right)",
        Box::new(|r| {
            let x = uniform(r, &[4, 2], -1.5, 1.5);
            let a = uniform(r, &[3, 4], -1.5, 1.5);
            let c = uniform(r, &[3, 2], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&a.matmul(v)?, &c)))
        }),
    );
    push(
        "matmul_nt",
        Box::new(|r| {
            let x = uniform(r, &[3, 4], -1.5, 1.5);
            let b = uniform(r, &[2, 4], -1.5, 1.5);
            let c = uniform(r, &[3, 2], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.matmul_nt(&b)?, &c)))
        }),
    );
    push(
        "matmul_tn",
        Box::new(|r| {
            let x = uniform(r, &[4, 3], -1.5, 1.5);
            let b = uniform(r, &[4, 2], -1.5, 1.5);
            let c = uniform(r, &[3, 2], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.matmul_tn(&b)?, &c)))
        }),
    );
    push(
        "permute",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, &[4, 2, 2, 4], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.permute(&[3, 1, 0, 2])?, &c)))
        }),
    );
    push(
        "reshape",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, &[8, 8], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.reshape(&[8, 8])?, &c)))
        }),
    );
    push(
        "broadcast",
        Box::new(|r| {
            let x = uniform(r, &[1, 3, 1, 1], -2.0, 2.0);
            let c = uniform(r, &[2, 3, 4, 4], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.broadcast_to(&[2, 3, 4, 4])?, &c)))
        }),
    );
    push(
        "sum_to",
        Box::new(|r| {
            let x = uniform(r, &[2, 3, 4, 4], -2.0, 2.0);
            let c = uniform(r, &[1, 3, 1, 1], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.sum_to_shape(&[1, 3, 1, 1])?, &c)))
        }),
    );
    push(
        "downsample",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, &[2, 2, 2, 2], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.downsample(2)?, &c)))
        }),
    );
    push(
        "upsample_zero",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            let c = uniform(r, &[2, 2, 8, 8], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.upsample_zero(2)?, &c)))
        }),
    );
    push(
        "im2col",
        Box::new(|r| {
            let x = uniform(r, &[1, 2, 5, 5], -2.0, 2.0);
            let c = uniform(r, &[2 * 9, 9], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.im2col(3, 3, 2, 1)?, &c)))
        }),
    );
    push(
        "col2im",
        Box::new(|r| {
            let g = crate::tensor::ConvGeom::new(1, 2, 5, 5, 3, 3, 2, 1);
            let x = uniform(r, &[g.rows(), g.cols()], -2.0, 2.0);
            let c = uniform(r, &[1, 2, 5, 5], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.col2im(g)?, &c)))
        }),
    );
    push(
        "conv2d(input)",
        Box::new(|r| {
            let x = uniform(r, &[1, 2, 6, 6], -1.5, 1.5);
            let k = uniform(r, &[3, 2, 3, 3], -1.0, 1.0);
            let c = uniform(r, &[1, 3, 3, 3], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.conv2d(&k, 2, 1)?, &c)))
        }),
    );
    push(
        "conv2d(kernel)",
        Box::new(|r| {
            let a = uniform(r, &[1, 2, 6, 6], -1.5, 1.5);
            let x = uniform(r, &[3, 2, 3, 3], -1.0, 1.0);
            let c = uniform(r, &[1, 3, 3, 3], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&a.conv2d(v, 2, 1)?, &c)))
        }),
    );
    push(
        "deconv2d(input)",
        Box::new(|r| {
            let x = uniform(r, &[1, 3, 3, 3], -1.5, 1.5);
            let k = uniform(r, &[3, 2, 4, 4], -1.0, 1.0);
            let c = uniform(r, &[1, 2, 6, 6], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.deconv2d(&k, 2, 1)?, &c)))
        }),
    );
    push(
        "deconv2d(kernel)",
        Box::new(|r| {
            let a = uniform(r, &[1, 3, 3, 3], -1.5, 1.5);
            let x = uniform(r, &[3, 2, 4, 4], -1.0, 1.0);
            let c = uniform(r, &[1, 2, 6, 6], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&a.deconv2d(v, 2, 1)?, &c)))
        }),
    );
    push(
        "chan_fc(x)",
        Box::new(|r| {
            let x = uniform(r, &[2, 3, 4], -1.5, 1.5);
            let w = uniform(r, &[3, 4, 4], -1.0, 1.0);
            let c = uniform(r, &[2, 3, 4], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.chan_fc(&w)?, &c)))
        }),
    );
    push(
        "chan_fc(w)",
        Box::new(|r| {
            let a = uniform(r, &[2, 3, 4], -1.5, 1.5);
            let x = uniform(r, &[3, 4, 4], -1.0, 1.0);
            let c = uniform(r, &[2, 3, 4], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&a.chan_fc(v)?, &c)))
        }),
    );
    push(
        "chan_outer",
        Box::new(|r| {
            let x = uniform(r, &[2, 3, 4], -1.5, 1.5);
            let b = uniform(r, &[2, 3, 4], -1.5, 1.5);
            let c = uniform(r, &[3, 4, 4], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.chan_outer(&b)?, &c)))
        }),
    );
    push(
        "chan_transpose",
        Box::new(|r| {
            let x = uniform(r, &[3, 4, 4], -1.5, 1.5);
            let c = uniform(r, &[3, 4, 4], -1.0, 1.0);
            (x, Box::new(move |v| weighted_sum(&v.chan_transpose()?, &c)))
        }),
    );
    push(
        "sum",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            (x, Box::new(move |v| Ok(v.sum())))
        }),
    );
    push(
        "mean",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            (x, Box::new(move |v| Ok(v.mean())))
        }),
    );
    push(
        "sq_norm",
        Box::new(move |r| {
            let x = uniform(r, img, -2.0, 2.0);
            (x, Box::new(move |v| Ok(v.sq_norm())))
        }),
    );
    cases
}

/// Finite-difference check of every primitive: `cases` random inputs per
/// op at step `eps`, passing when the max relative error stays below
/// `tol`.
pub fn gradient_sweep(cases: usize, eps: f64, tol: f64, seed: u64) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    for case in op_cases() {
        let mut max_rel = 0.0f64;
        for i in 0..cases {
            let mut r = rng::chacha(rng::derive(seed, case.name, i as u64));
            let (x, f) = (case.build)(&mut r);
            let rel = grad_check_masked(|v| f(v), &x, eps, |_| false)?;
            max_rel = max_rel.max(rel);
        }
        out.push(CheckLine::new(
            &format!("grad {}", case.name),
            max_rel <= tol,
            format!("max rel err {:.3e} over {} cases (tol {:.0e})", max_rel, cases, tol),
        ));
    }
    Ok(out)
}

/// Double-backward check: for smooth compositions of >= 3 primitives,
/// `d/dx sum(D * grad f)` is compared against central differences of
/// `grad f` itself.
pub fn double_backward_sweep(cases: usize, eps: f64, tol: f64, seed: u64) -> Result<CheckLine> {
    let mut max_rel = 0.0f64;
    for i in 0..cases {
        let mut r = rng::chacha(rng::derive(seed, "double", i as u64));
        let x0 = uniform(&mut r, &[1, 1, 5, 5], -1.5, 1.5);
        let k = uniform(&mut r, &[2, 1, 3, 3], -1.0, 1.0);
        let c = uniform(&mut r, &[1, 2, 5, 5], -1.0, 1.0);
        let d = uniform(&mut r, &[1, 1, 5, 5], -1.0, 1.0);
        // f(x) = sum(C * tanh(conv(x, k))) + 0.25 * sq_norm(x): conv, tanh,
        // mul, sum, sq_norm all participate
        let f = |v: &T64| -> Result<T64> {
            let a = v.conv2d(&k, 1, 1)?.tanh().mul(&c)?.sum();
            a.add(&v.sq_norm().scale(0.25))
        };

        let grad_of = |v: &T64| -> Result<T64> {
            let leaf = v.requiring_grad();
            let y = f(&leaf)?;
            let g = backward(&y, GradMode::EVAL)?;
            Ok(g.get_or_zeros(&leaf))
        };

        // analytic: second backward over the recorded gradient graph
        let leaf = x0.requiring_grad();
        let y = f(&leaf)?;
        let grads = backward(&y, GradMode::HIGHER_ORDER)?;
        let gx = grads.get_or_zeros(&leaf);
        let s = gx.mul(&d)?.sum();
        let grads2 = backward(&s, GradMode::EVAL)?;
        let analytic = grads2.get_or_zeros(&leaf);

        for idx in 0..x0.numel() {
            let mut plus = x0.data().to_vec();
            plus[idx] += eps;
            let mut minus = x0.data().to_vec();
            minus[idx] -= eps;
            let gp = grad_of(&Tensor::from_vec(x0.shape(), plus)?)?;
            let gm = grad_of(&Tensor::from_vec(x0.shape(), minus)?)?;
            let sp: f64 = gp.data().iter().zip(d.data()).map(|(a, b)| a * b).sum();
            let sm: f64 = gm.data().iter().zip(d.data()).map(|(a, b)| a * b).sum();
            let fd = (sp - sm) / (2.0 * eps);
            let a = analytic.data()[idx];
            let rel = (a - fd).abs() / 1.0f64.max(a.abs()).max(fd.abs());
            if !rel.is_finite() {
                return Ok(CheckLine::new(
                    "double backward (3+ op composition)",
                    false,
                    format!("non-finite second derivative at case {} coord {}", i, idx),
                ));
            }
            max_rel = max_rel.max(rel);
        }
    }
    Ok(CheckLine::new(
        "double backward (3+ op composition)",
        max_rel <= tol,
        format!("max rel err {:.3e} over {} cases (tol {:.0e})", max_rel, cases, tol),
    ))
}

/// Hand-evaluated transcription oracle for the inner ADAM recursion.
pub fn adam_oracle() -> CheckLine {
    let hyper = InnerHyper::default();
    let grad = Tensor::scalar(2.0f64);
    let mut state = InnerState::new(&[]);
    let dz = match adam_inner_step(&grad, &mut state, &hyper, 1) {
        Ok(dz) => dz,
        Err(e) => return CheckLine::new("inner adam transcription", false, e.to_string()),
    };
    let m = state.m.item().unwrap();
    let v = state.v.item().unwrap();
    let m_hat = m / (1.0 - hyper.beta1);
    let v_hat = v / (1.0 - hyper.beta2);
    let dz = dz.item().unwrap();
    let ok = (m - 0.2).abs() < 1e-9
        && (v - 0.004).abs() < 1e-9
        && (m_hat - 2.0).abs() < 1e-9
        && (v_hat - 4.0).abs() < 1e-9
        && (dz + 1.000e-3).abs() < 1e-9;
    CheckLine::new(
        "inner adam transcription",
        ok,
        format!("m={} v={} m^={} v^={} dz={}", m, v, m_hat, v_hat, dz),
    )
}

/// Structural invariants: fidelity consistency across the three task
/// kinds, the degenerate-unroll identity and parameter-count stability.
pub fn invariant_suite(cases: usize, seed: u64) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();

    // ground truth reproduces its own observation at sigma = 0
    let mut worst = 0.0f64;
    for i in 0..cases {
        let mut r = rng::chacha(rng::derive(seed, "fid", i as u64));
        let x = uniform(&mut r, &[1, 1, 16, 16], -1.0, 1.0);
        let kind = [Kind::Inpaint, Kind::Interpolate, Kind::BlurDownsample][i % 3];
        let ranges = SpecRanges { s_max: 12, t: 2, ..Default::default() };
        let spec: DegradationSpec<f64> =
            sample_spec(kind, rng::derive(seed, "fid-spec", i as u64), &ranges, 16, 16)?;
        let y = spec.apply(&x, spec.seed)?;
        let f = fidelity(&x, &y, &spec)?.item()?;
        worst = worst.max(f);
    }
    out.push(CheckLine::new(
        "fidelity consistency (sigma=0)",
        worst <= 1e-20,
        format!("max fidelity {:.3e} over {} random (x, spec) (tol 1e-20)", worst, cases),
    ));

    // K = 0 restore is the reference forward pass, bit-exactly
    let net = build_autoencoder::<f64>(16, 4, rng::derive(seed, "net", 0))?;
    let hyper = InnerHyper::default().with_k(0);
    let mut identical = true;
    for i in 0..cases {
        let mut r = rng::chacha(rng::derive(seed, "k0", i as u64));
        let y = uniform(&mut r, &[1, 1, 16, 16], -1.0, 1.0);
        let spec = DegradationSpec::inpaint(16, 16, 4, (0, 0))?;
        let a = restore(&net, &y, &spec, &hyper, false)?;
        let b = net.forward(&y)?;
        identical &= a.data() == b.data();
    }
    out.push(CheckLine::new(
        "degenerate unroll (K=0) identity",
        identical,
        format!("restore == forward bit-exactly on {} random inputs", cases),
    ));

    // the recursion adds no learnable parameters
    let before = net.param_count();
    let spec = DegradationSpec::inpaint(16, 16, 4, (1, -1))?;
    let y = no_grad(|| {
        spec.apply(&uniform(&mut rng::chacha(seed), &[1, 1, 16, 16], -1.0, 1.0), 0)
    })?;
    let _ = restore(&net, &y, &spec, &InnerHyper::default(), true)?;
    out.push(CheckLine::new(
        "parameter count invariance",
        net.param_count() == before,
        format!("{} parameters before and after refinement", before),
    ));

    // mask idempotence
    let mut idem = true;
    for i in 0..cases {
        let mut r = rng::chacha(rng::derive(seed, "idem", i as u64));
        let x = uniform(&mut r, &[1, 1, 12, 12], -1.0, 1.0);
        let spec: DegradationSpec<f64> = DegradationSpec::interpolate(12, 12, r.gen_range(0.0..0.9), i as u64)?;
        let once = spec.apply_deterministic(&x)?;
        let twice = spec.apply_deterministic(&once)?;
        idem &= once.data() == twice.data();
    }
    out.push(CheckLine::new(
        "mask idempotence",
        idem,
        format!("M(Mx) == Mx exactly on {} random masks", cases),
    ));

    Ok(out)
}

/// The full suite at the given case count. Returns all lines plus the
/// overall verdict.
pub fn run_all(cases: usize, seed: u64) -> Result<(Vec<CheckLine>, bool)> {
    let mut lines = gradient_sweep(cases, 1e-5, 1e-5, seed)?;
    lines.push(double_backward_sweep(cases.min(20), 1e-5, 1e-4, seed)?);
    lines.push(adam_oracle());
    lines.extend(invariant_suite(cases, seed)?);
    let ok = lines.iter().all(|l| l.passed);
    Ok((lines, ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_selftest_passes() {
        let (lines, ok) = run_all(5, 42).unwrap();
        for l in &lines {
            assert!(l.passed, "{}: {}", l.name, l.detail);
        }
        assert!(ok);
    }
}
