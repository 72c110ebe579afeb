//! Reference architectures split as `f = h . g`: a stride-2 encoder-decoder
//! with a channel-wise fully-connected bottleneck for inpainting and
//! interpolation, and a residual conv stack for super-resolution on
//! bicubic-pre-upscaled input.
//!
//! The split keeps `h` light: exactly one ReLU followed by one convolution
//! (plus the optional tanh or global residual add), so the latent code `z`
//! is the last hidden representation before that ReLU.

use std::io::{Read, Write};
use std::path::Path;

#[allow(unused_imports)]
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Layer<T: Scalar> {
    Conv { w: Tensor<T>, b: Option<Tensor<T>>, stride: usize, pad: usize },
    Deconv { w: Tensor<T>, b: Option<Tensor<T>>, stride: usize, pad: usize },
    /// One dense map per channel across spatial positions: `w: [c,s,s]`,
    /// `b: [c,s]` on a flattened `s = h*w` grid.
    ChannelFc { w: Tensor<T>, b: Option<Tensor<T>> },
    Relu,
    Tanh,
    /// Adds the network input (global residual connection).
    ResidualAdd,
}

impl<T: Scalar> Layer<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Deconv { .. } => "deconv",
            Layer::ChannelFc { .. } => "chanfc",
            Layer::Relu => "relu",
            Layer::Tanh => "tanh",
            Layer::ResidualAdd => "residual_add",
        }
    }
}

/// Ordered layers with a split index: `g` is `layers[..split_idx]`,
/// `h` is `layers[split_idx..]`.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    pub layers: Vec<Layer<T>>,
    pub split_idx: usize,
}

impl<T: Scalar> Network<T> {
    /// The `h` side must be one ReLU, one conv, then optionally a tanh or
    /// residual add. Builders satisfy this by construction; hand-assembled
    /// networks are checked before the refinement loop runs.
    pub fn validate_split(&self) -> Result<()> {
        let h = &self.layers[self.split_idx.min(self.layers.len())..];
        let ok = matches!(h, [Layer::Relu, Layer::Conv { .. }])
            || matches!(h, [Layer::Relu, Layer::Conv { .. }, Layer::Tanh])
            || matches!(h, [Layer::Relu, Layer::Conv { .. }, Layer::ResidualAdd]);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "output head must be [relu, conv(, tanh|residual_add)], got {:?}",
                h.iter().map(Layer::kind_name).collect::<Vec<_>>()
            )))
        }
    }

    fn apply_layer(layer: &Layer<T>, x: &Tensor<T>, input0: &Tensor<T>) -> Result<Tensor<T>> {
        match layer {
            Layer::Conv { w, b, stride, pad } => {
                let mut y = x.conv2d(w, *stride, *pad)?;
                if let Some(b) = b {
                    let c = y.shape()[1];
                    y = y.add(&b.reshape(&[1, c, 1, 1])?.broadcast_to(y.shape())?)?;
                }
                Ok(y)
            }
            Layer::Deconv { w, b, stride, pad } => {
                let mut y = x.deconv2d(w, *stride, *pad)?;
                if let Some(b) = b {
                    let c = y.shape()[1];
                    y = y.add(&b.reshape(&[1, c, 1, 1])?.broadcast_to(y.shape())?)?;
                }
                Ok(y)
            }
            Layer::ChannelFc { w, b } => {
                let [n, c, h, ww] = x.dims4("channel_fc")?;
                let flat = x.reshape(&[n, c, h * ww])?;
                let mut y = flat.chan_fc(w)?;
                if let Some(b) = b {
                    let s = h * ww;
                    y = y.add(&b.reshape(&[1, c, s])?.broadcast_to(y.shape())?)?;
                }
                y.reshape(&[n, c, h, ww])
            }
            Layer::Relu => Ok(x.relu()),
            Layer::Tanh => Ok(x.tanh()),
            Layer::ResidualAdd => x.add(input0),
        }
    }

    fn run(&self, range: std::ops::Range<usize>, x: &Tensor<T>, input0: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for layer in &self.layers[range] {
            cur = Self::apply_layer(layer, &cur, input0)?;
        }
        Ok(cur)
    }

    /// Full forward pass `f(y) = h(g(y))`.
    pub fn forward(&self, y_in: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(0..self.layers.len(), y_in, y_in)
    }

    /// Encoder side: latent code `z = g(y)`.
    pub fn forward_g(&self, y_in: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(0..self.split_idx, y_in, y_in)
    }

    /// Output head: `x_hat = h(z)`. `y_in` is the original network input,
    /// consumed only by a residual-add head.
    pub fn forward_h(&self, z: &Tensor<T>, y_in: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(self.split_idx..self.layers.len(), z, y_in)
    }

    /// Parameter tensors in a stable order (weights before biases).
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { w, b, .. } | Layer::Deconv { w, b, .. } | Layer::ChannelFc { w, b } => {
                    out.push(w);
                    if let Some(b) = b {
                        out.push(b);
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Mutable slots matching [`Network::params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { w, b, .. } | Layer::Deconv { w, b, .. } | Layer::ChannelFc { w, b } => {
                    out.push(w);
                    if let Some(b) = b {
                        out.push(b);
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

fn randn<T: Scalar>(shape: &[usize], std: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor<T> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let n: f64 = StandardNormal.sample(rng);
            lit(n * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("randn shape").requiring_grad()
}

fn zeros_param<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).requiring_grad()
}

/// Fan-in scaled Gaussian init (std = sqrt(2 / fan_in)) for conv weights.
fn msra_conv<T: Scalar>(o: usize, c: usize, k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / (c * k * k) as f64).sqrt();
    randn(&[o, c, k, k], std, rng)
}

fn msra_deconv<T: Scalar>(ci: usize, co: usize, k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / (ci * k * k) as f64).sqrt();
    randn(&[ci, co, k, k], std, rng)
}

/// Stride-2 conv encoder from `img x img` down to 4x4, channel-wise FC
/// bottleneck, mirrored deconv decoder and a tanh-bounded one-conv head.
/// Channels double per stage starting at `base_ch`.
pub fn build_autoencoder<T: Scalar>(img: usize, base_ch: usize, seed: u64) -> Result<Network<T>> {
    if img < 16 || !img.is_power_of_two() {
        return Err(Error::invalid(format!("img={} must be a power of two >= 16", img)));
    }
    if base_ch < 1 {
        return Err(Error::invalid("base_ch must be >= 1"));
    }
    let stages = (img / 4).trailing_zeros() as usize; // img -> 4
    let mut rng = rng::chacha(seed);
    let mut layers: Vec<Layer<T>> = Vec::new();

    let mut c_in = 1;
    let mut c_out = base_ch;
    for _ in 0..stages {
        layers.push(Layer::Conv {
            w: msra_conv(c_out, c_in, 4, &mut rng),
            b: Some(zeros_param(&[c_out])),
            stride: 2,
            pad: 1,
        });
        layers.push(Layer::Relu);
        c_in = c_out;
        c_out *= 2;
    }

    let c_mid = c_in; // base_ch * 2^(stages-1)
    let s = 16; // 4x4 bottleneck
    layers.push(Layer::ChannelFc {
        w: randn(&[c_mid, s, s], 0.02, &mut rng),
        b: Some(zeros_param(&[c_mid, s])),
    });

    let mut c_in = c_mid;
    for stage in 0..stages {
        let c_out = if stage + 1 < stages { c_in / 2 } else { base_ch };
        layers.push(Layer::Deconv {
            w: msra_deconv(c_in, c_out, 4, &mut rng),
            b: Some(zeros_param(&[c_out])),
            stride: 2,
            pad: 1,
        });
        if stage + 1 < stages {
            layers.push(Layer::Relu);
        }
        c_in = c_out;
    }

    // the output head stays one light conv (1x1): the latent code already
    // sits at full resolution, and a heavy head would dominate the
    // refinement loop's cost
    let split_idx = layers.len();
    layers.push(Layer::Relu);
    layers.push(Layer::Conv {
        w: msra_conv(1, base_ch, 1, &mut rng),
        b: Some(zeros_param(&[1])),
        stride: 1,
        pad: 0,
    });
    layers.push(Layer::Tanh);

    let net = Network { layers, split_idx };
    net.validate_split()?;
    Ok(net)
}

/// Residual conv stack on bicubic-pre-upscaled input: `depth` 3x3 convs
/// with ReLU in between, a global residual add and a linear output range.
pub fn build_sisr_net<T: Scalar>(depth: usize, ch: usize, seed: u64) -> Result<Network<T>> {
    if depth < 3 {
        return Err(Error::invalid(format!("depth={} must be >= 3", depth)));
    }
    let mut rng = rng::chacha(seed);
    let mut layers: Vec<Layer<T>> = Vec::new();
    layers.push(Layer::Conv {
        w: msra_conv(ch, 1, 3, &mut rng),
        b: Some(zeros_param(&[ch])),
        stride: 1,
        pad: 1,
    });
    for _ in 0..depth - 2 {
        layers.push(Layer::Relu);
        layers.push(Layer::Conv {
            w: msra_conv(ch, ch, 3, &mut rng),
            b: Some(zeros_param(&[ch])),
            stride: 1,
            pad: 1,
        });
    }
    let split_idx = layers.len();
    layers.push(Layer::Relu);
    layers.push(Layer::Conv {
        w: msra_conv(1, ch, 3, &mut rng),
        b: Some(zeros_param(&[1])),
        stride: 1,
        pad: 1,
    });
    layers.push(Layer::ResidualAdd);

    let net = Network { layers, split_idx };
    net.validate_split()?;
    Ok(net)
}

// ---- checkpoint format ----
//
// Binary file: magic "DLNC", u32 version, u32 split_idx, u32 layer count,
// then one descriptor per layer, then all parameters as little-endian f64
// in `params()` order. A human-readable sidecar `<path>.manifest.txt`
// lists the same structure.

const MAGIC: &[u8; 4] = b"DLNC";
const VERSION: u32 = 1;

fn layer_tag(layer: &Layer<f64>) -> u8 {
    match layer {
        Layer::Conv { .. } => 0,
        Layer::Deconv { .. } => 1,
        Layer::ChannelFc { .. } => 2,
        Layer::Relu => 3,
        Layer::Tanh => 4,
        Layer::ResidualAdd => 5,
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint(net: &Network<f64>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, net.split_idx as u32);
    put_u32(&mut buf, net.layers.len() as u32);
    for layer in &net.layers {
        buf.push(layer_tag(layer));
        match layer {
            Layer::Conv { w, b, stride, pad } | Layer::Deconv { w, b, stride, pad } => {
                for d in w.shape() {
                    put_u32(&mut buf, *d as u32);
                }
                put_u32(&mut buf, *stride as u32);
                put_u32(&mut buf, *pad as u32);
                buf.push(b.is_some() as u8);
            }
            Layer::ChannelFc { w, b } => {
                put_u32(&mut buf, w.shape()[0] as u32);
                put_u32(&mut buf, w.shape()[1] as u32);
                buf.push(b.is_some() as u8);
            }
            _ => {}
        }
    }
    for p in net.params() {
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, &buf)?;

    let mut man = String::new();
    man.push_str(&format!("format=dln-checkpoint version={}\n", VERSION));
    man.push_str(&format!("split_idx={}\nlayers={}\n", net.split_idx, net.layers.len()));
    for (i, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Conv { w, stride, pad, .. } => {
                man.push_str(&format!("layer {} conv w={:?} stride={} pad={}\n", i, w.shape(), stride, pad))
            }
            Layer::Deconv { w, stride, pad, .. } => {
                man.push_str(&format!("layer {} deconv w={:?} stride={} pad={}\n", i, w.shape(), stride, pad))
            }
            Layer::ChannelFc { w, .. } => man.push_str(&format!("layer {} chanfc w={:?}\n", i, w.shape())),
            other => man.push_str(&format!("layer {} {}\n", i, other.kind_name())),
        }
    }
    man.push_str(&format!("param_count={}\n", net.param_count()));
    std::fs::write(manifest_path(path), man)?;
    Ok(())
}

pub fn manifest_path(ckpt: &Path) -> std::path::PathBuf {
    let mut os = ckpt.as_os_str().to_owned();
    os.push(".manifest.txt");
    std::path::PathBuf::from(os)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f64>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {}", version)));
    }
    let split_idx = r.u32()? as usize;
    let n_layers = r.u32()? as usize;

    enum Desc {
        Conv([usize; 4], usize, usize, bool),
        Deconv([usize; 4], usize, usize, bool),
        ChanFc(usize, usize, bool),
        Relu,
        Tanh,
        ResidualAdd,
    }
    let mut descs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.u8()?;
        let desc = match tag {
            0 | 1 => {
                let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
                let stride = r.u32()? as usize;
                let pad = r.u32()? as usize;
                let bias = r.u8()? != 0;
                if tag == 0 {
                    Desc::Conv(shape, stride, pad, bias)
                } else {
                    Desc::Deconv(shape, stride, pad, bias)
                }
            }
            2 => Desc::ChanFc(r.u32()? as usize, r.u32()? as usize, r.u8()? != 0),
            3 => Desc::Relu,
            4 => Desc::Tanh,
            5 => Desc::ResidualAdd,
            other => return Err(Error::Parse(format!("unknown layer tag {}", other))),
        };
        descs.push(desc);
    }

    let param = |shape: &[usize], r: &mut Reader| -> Result<Tensor<f64>> {
        let n = shape.iter().product();
        Ok(Tensor::from_vec(shape, r.f64s(n)?)?.requiring_grad())
    };
    let mut layers = Vec::with_capacity(n_layers);
    for desc in &descs {
        let layer = match desc {
            Desc::Conv(shape, stride, pad, bias) => Layer::Conv {
                w: param(shape, &mut r)?,
                b: if *bias { Some(param(&[shape[0]], &mut r)?) } else { None },
                stride: *stride,
                pad: *pad,
            },
            Desc::Deconv(shape, stride, pad, bias) => Layer::Deconv {
                w: param(shape, &mut r)?,
                b: if *bias { Some(param(&[shape[1]], &mut r)?) } else { None },
                stride: *stride,
                pad: *pad,
            },
            Desc::ChanFc(c, s, bias) => Layer::ChannelFc {
                w: param(&[*c, *s, *s], &mut r)?,
                b: if *bias { Some(param(&[*c, *s], &mut r)?) } else { None },
            },
            Desc::Relu => Layer::Relu,
            Desc::Tanh => Layer::Tanh,
            Desc::ResidualAdd => Layer::ResidualAdd,
        };
        layers.push(layer);
    }
    if r.pos != buf.len() {
        return Err(Error::Parse("checkpoint has trailing bytes".into()));
    }
    Ok(Network { layers, split_idx })
}

#[allow(dead_code)]
fn write_all(path: &Path, data: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(data)?;
    Ok(())
}
