//! Degradation operators: square inpainting masks, Bernoulli interpolation
//! masks, Gaussian blur kernels, downsampling and additive noise.
//!
//! A spec is reproducible from its generator record plus a seed, which is
//! what test-set manifests persist.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Fixed spatial support of every blur kernel.
pub const KERNEL_SIZE: usize = 15;
/// Zero padding that keeps the blurred image the same size.
pub const KERNEL_PAD: usize = KERNEL_SIZE / 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Inpaint,
    Interpolate,
    BlurDownsample,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Inpaint => "inpaint",
            Kind::Interpolate => "interpolate",
            Kind::BlurDownsample => "blurdown",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inpaint" => Ok(Kind::Inpaint),
            "interpolate" => Ok(Kind::Interpolate),
            "blurdown" => Ok(Kind::BlurDownsample),
            other => Err(Error::Parse(format!("unknown degradation kind '{}'", other))),
        }
    }
}

/// Generator parameters behind a realized spec.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Params {
    /// Square hole of side `s`, shifted by `offset` from the centroid.
    Inpaint { s: usize, offset: (i64, i64) },
    /// Independent per-pixel removal with probability `r`.
    Interpolate { r: f64 },
    /// Isotropic Gaussian blur of width `u`.
    Blur { u: f64 },
}

/// The degradation tuple: the operator W (mask or kernel), downsampling
/// factor `t` and noise level `sigma`, plus the generator record and the
/// seed used for mask/noise randomness.
#[derive(Clone, Debug)]
pub struct DegradationSpec<T: Scalar> {
    pub kind: Kind,
    pub mask: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub t: usize,
    pub sigma: f64,
    pub params: Params,
    pub seed: u64,
}

/// Binary mask that is zero exactly on the `s x s` block whose top-left
/// corner is `(h/2 - s/2 + dy, w/2 - s/2 + dx)`.
pub fn make_square_mask<T: Scalar>(h: usize, w: usize, s: usize, offset: (i64, i64)) -> Result<Tensor<T>> {
    if s < 1 || s > h.min(w) {
        return Err(Error::invalid(format!("mask side s={} outside [1, {}]", s, h.min(w))));
    }
    let top = (h / 2) as i64 - (s / 2) as i64 + offset.0;
    let left = (w / 2) as i64 - (s / 2) as i64 + offset.1;
    if top < 0 || left < 0 || top + s as i64 > h as i64 || left + s as i64 > w as i64 {
        return Err(Error::invalid(format!(
            "square block {}x{} at ({}, {}) leaves {}x{} bounds",
            s, s, top, left, h, w
        )));
    }
    let (top, left) = (top as usize, left as usize);
    let mut data = vec![T::one(); h * w];
    for i in top..top + s {
        for j in left..left + s {
            data[i * w + j] = T::zero();
        }
    }
    Tensor::from_vec(&[1, 1, h, w], data)
}

/// Binary mask with each pixel independently 0 with probability `r`.
pub fn make_bernoulli_mask<T: Scalar>(h: usize, w: usize, r: f64, seed: u64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("removal fraction r={} outside [0, 1]", r)));
    }
    let mut rng = rng::chacha(seed);
    let data = (0..h * w)
        .map(|_| if rng.gen::<f64>() < r { T::zero() } else { T::one() })
        .collect();
    Tensor::from_vec(&[1, 1, h, w], data)
}

/// Isotropic Gaussian kernel of width `u` on the fixed 15x15 grid,
/// truncated and renormalized to sum 1. `u = 0` gives the delta kernel.
pub fn make_gaussian_kernel<T: Scalar>(u: f64) -> Result<Tensor<T>> {
    if !(0.0..=3.0).contains(&u) {
        return Err(Error::invalid(format!("kernel width u={} outside [0, 3]", u)));
    }
    let k = KERNEL_SIZE;
    let c = (k / 2) as f64;
    let mut data = vec![0.0f64; k * k];
    if u == 0.0 {
        data[(k / 2) * k + k / 2] = 1.0;
    } else {
        let inv = 1.0 / (2.0 * u * u);
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                let v = (-d2 * inv).exp();
                data[i * k + j] = v;
                sum += v;
            }
        }
        for v in &mut data {
            *v /= sum;
        }
    }
    Tensor::from_vec(&[k, k], data.into_iter().map(lit).collect())
}

impl<T: Scalar> DegradationSpec<T> {
    pub fn inpaint(h: usize, w: usize, s: usize, offset: (i64, i64)) -> Result<Self> {
        Ok(DegradationSpec {
            kind: Kind::Inpaint,
            mask: Some(make_square_mask(h, w, s, offset)?),
            kernel: None,
            t: 1,
            sigma: 0.0,
            params: Params::Inpaint { s, offset },
            seed: 0,
        })
    }

    pub fn interpolate(h: usize, w: usize, r: f64, seed: u64) -> Result<Self> {
        Ok(DegradationSpec {
            kind: Kind::Interpolate,
            mask: Some(make_bernoulli_mask(h, w, r, seed)?),
            kernel: None,
            t: 1,
            sigma: 0.0,
            params: Params::Interpolate { r },
            seed,
        })
    }

    pub fn blur_downsample(u: f64, t: usize, sigma: f64, seed: u64) -> Result<Self> {
        if t < 1 {
            return Err(Error::invalid(format!("downsampling factor t={} must be >= 1", t)));
        }
        if sigma < 0.0 {
            return Err(Error::invalid(format!("noise level sigma={} must be >= 0", sigma)));
        }
        Ok(DegradationSpec {
            kind: Kind::BlurDownsample,
            mask: None,
            kernel: Some(make_gaussian_kernel(u)?),
            t,
            sigma,
            params: Params::Blur { u },
            seed,
        })
    }

    /// Identity spec (all-ones mask): a no-op observation model.
    pub fn identity(h: usize, w: usize) -> Self {
        Self::interpolate(h, w, 0.0, 0).expect("r=0 is valid")
    }

    /// Check the struct invariants.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            Kind::Inpaint | Kind::Interpolate => {
                if self.t != 1 || self.sigma != 0.0 {
                    return Err(Error::Spec("mask tasks require t=1 and sigma=0".into()));
                }
                if self.kernel.is_some() {
                    return Err(Error::Spec("mask tasks carry no kernel".into()));
                }
                let m = self.mask.as_ref().ok_or_else(|| Error::Spec("mask missing".into()))?;
                if m.data().iter().any(|&v| v != T::zero() && v != T::one()) {
                    return Err(Error::Spec("mask entries must be 0 or 1".into()));
                }
            }
            Kind::BlurDownsample => {
                if self.mask.is_some() {
                    return Err(Error::Spec("blur task carries no mask".into()));
                }
                let k = self.kernel.as_ref().ok_or_else(|| Error::Spec("kernel missing".into()))?;
                if k.data().iter().any(|&v| v < T::zero()) {
                    return Err(Error::Spec("kernel entries must be >= 0".into()));
                }
                let sum: f64 = k.data().iter().map(|v| v.to_f64().unwrap()).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::Spec(format!("kernel sums to {}, not 1", sum)));
                }
            }
        }
        Ok(())
    }

    /// One-line key-value record (kind, s/r/u, offset, t, sigma, seed).
    pub fn record(&self) -> String {
        let mut line = format!("kind={}", self.kind.name());
        match self.params {
            Params::Inpaint { s, offset } => {
                line.push_str(&format!(" s={} dy={} dx={}", s, offset.0, offset.1));
            }
            Params::Interpolate { r } => line.push_str(&format!(" r={}", r)),
            Params::Blur { u } => line.push_str(&format!(" u={}", u)),
        }
        line.push_str(&format!(" t={} sigma={} seed={}", self.t, self.sigma, self.seed));
        line
    }

    /// Rebuild a spec from its [`DegradationSpec::record`] line and the
    /// image size it applies to.
    pub fn parse_record(line: &str, h: usize, w: usize) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad spec token '{}'", tok)))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k).copied().ok_or_else(|| Error::Parse(format!("spec record missing '{}'", k)))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("bad number for '{}'", k)))
        };
        let int = |k: &str| -> Result<i64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("bad integer for '{}'", k)))
        };
        let t = int("t")? as usize;
        let sigma = num("sigma")?;
        let seed: u64 = get("seed")?.parse().map_err(|_| Error::Parse("bad seed".into()))?;
        let mut spec = match get("kind")? {
            "inpaint" => Self::inpaint(h, w, int("s")? as usize, (int("dy")?, int("dx")?))?,
            "interpolate" => Self::interpolate(h, w, num("r")?, seed)?,
            "blurdown" => Self::blur_downsample(num("u")?, t, sigma, seed)?,
            other => return Err(Error::Parse(format!("unknown degradation kind '{}'", other))),
        };
        spec.seed = seed;
        if spec.t != t || spec.sigma != sigma {
            return Err(Error::Parse(format!("inconsistent t/sigma in record '{}'", line)));
        }
        Ok(spec)
    }

    /// Apply W and the downsampling, differentiably, without noise.
    /// This is the observation model the fidelity term uses.
    pub fn apply_deterministic(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.kind {
            Kind::Inpaint | Kind::Interpolate => {
                let m = self.mask.as_ref().ok_or_else(|| Error::Spec("mask missing".into()))?;
                x.mul(&m.broadcast_to(x.shape())?)
            }
            Kind::BlurDownsample => {
                let k = self.kernel.as_ref().ok_or_else(|| Error::Spec("kernel missing".into()))?;
                let [_, c, _, _] = x.dims4("apply_degradation")?;
                if c != 1 {
                    return Err(Error::Dimension {
                        op: "apply_degradation",
                        shape: x.shape().to_vec(),
                        msg: "blur path expects a single channel; process color planes separately".into(),
                    });
                }
                let k4 = k.reshape(&[1, 1, KERNEL_SIZE, KERNEL_SIZE])?;
                x.conv2d(&k4, 1, KERNEL_PAD)?.downsample(self.t)
            }
        }
    }

    /// `y = (W x) downsampled + noise`, seeded. With `sigma = 0` this is
    /// exactly [`DegradationSpec::apply_deterministic`].
    pub fn apply(&self, x: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
        let clean = self.apply_deterministic(x)?;
        if self.sigma == 0.0 {
            return Ok(clean);
        }
        let mut rng = rng::chacha(seed);
        let noise: Vec<T> = (0..clean.numel())
            .map(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                lit(n * self.sigma)
            })
            .collect();
        clean.add(&Tensor::from_vec(clean.shape(), noise)?)
    }
}

/// Valid ranges for [`sample_spec`] draws.
#[derive(Clone, Copy, Debug)]
pub struct SpecRanges {
    pub s_min: usize,
    pub s_max: usize,
    /// Offsets are drawn uniformly from `[-offset_max, offset_max]^2` and
    /// clipped so the block stays inside the image.
    pub offset_max: i64,
    pub r_max: f64,
    pub u_max: f64,
    pub t: usize,
    pub sigma: f64,
}

impl Default for SpecRanges {
    fn default() -> Self {
        SpecRanges { s_min: 1, s_max: 30, offset_max: 10, r_max: 0.75, u_max: 3.0, t: 2, sigma: 0.0 }
    }
}

impl SpecRanges {
    /// Check the ranges the given task actually draws from.
    pub fn validate(&self, task: Kind, h: usize, w: usize) -> Result<()> {
        match task {
            Kind::Inpaint => {
                if self.s_min < 1 || self.s_min > self.s_max || self.s_max > h.min(w) {
                    return Err(Error::invalid(format!(
                        "s range [{}, {}] invalid for {}x{} images",
                        self.s_min, self.s_max, h, w
                    )));
                }
            }
            Kind::Interpolate => {
                if !(0.0..=1.0).contains(&self.r_max) {
                    return Err(Error::invalid(format!("r_max={} outside [0, 1]", self.r_max)));
                }
            }
            Kind::BlurDownsample => {
                if !(0.0..=3.0).contains(&self.u_max) {
                    return Err(Error::invalid(format!("u_max={} outside [0, 3]", self.u_max)));
                }
                if self.t < 1 {
                    return Err(Error::invalid("t must be >= 1"));
                }
                if self.sigma < 0.0 {
                    return Err(Error::invalid("sigma must be >= 0"));
                }
            }
        }
        Ok(())
    }
}

fn clip(v: i64, lo: i64, hi: i64) -> i64 {
    v.max(lo).min(hi)
}

/// Draw a degradation spec uniformly from `ranges`, deterministically in
/// `rng_seed`, for `h x w` images.
pub fn sample_spec<T: Scalar>(
    task: Kind,
    rng_seed: u64,
    ranges: &SpecRanges,
    h: usize,
    w: usize,
) -> Result<DegradationSpec<T>> {
    ranges.validate(task, h, w)?;
    let mut rng = rng::chacha(rng_seed);
    match task {
        Kind::Inpaint => {
            let s = rng.gen_range(ranges.s_min..=ranges.s_max);
            let dy = rng.gen_range(-ranges.offset_max..=ranges.offset_max);
            let dx = rng.gen_range(-ranges.offset_max..=ranges.offset_max);
            let base_y = (h / 2) as i64 - (s / 2) as i64;
            let base_x = (w / 2) as i64 - (s / 2) as i64;
            let dy = clip(dy, -base_y, h as i64 - s as i64 - base_y);
            let dx = clip(dx, -base_x, w as i64 - s as i64 - base_x);
            DegradationSpec::inpaint(h, w, s, (dy, dx))
        }
        Kind::Interpolate => {
            let r = rng.gen_range(0.0..=ranges.r_max);
            let seed = rng.gen::<u64>();
            DegradationSpec::interpolate(h, w, r, seed)
        }
        Kind::BlurDownsample => {
            let u = rng.gen_range(0.0..=ranges.u_max);
            let seed = rng.gen::<u64>();
            DegradationSpec::blur_downsample(u, ranges.t, ranges.sigma, seed)
        }
    }
}
