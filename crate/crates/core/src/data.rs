//! Image I/O, synthetic dataset generation, bicubic resizing and persisted
//! fixed test sets.
//!
//! Pixel convention: 8-bit value `p` maps to `2p/255 - 1`; saving inverts
//! with round-half-up after clamping to `[-1, 1]`.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::degrade::{sample_spec, DegradationSpec, Kind, SpecRanges};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Source {
    Synthetic { seed: u64, n: usize, size: usize },
    Directory(PathBuf),
}

/// Images in `[-1, 1]`, all sharing one shape `[1, c, h, w]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<Tensor<f64>>,
    pub source: Source,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_hw(&self) -> Result<(usize, usize)> {
        let first = self.images.first().ok_or_else(|| Error::invalid("dataset is empty"))?;
        let [_, _, h, w] = first.dims4("dataset")?;
        Ok((h, w))
    }
}

/// Procedural images mixing smooth gradients, ellipses, rectangles and
/// band-limited sinusoid textures, so inpainting has learnable structure.
pub fn gen_synthetic(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    if ![16, 32, 64].contains(&size) {
        return Err(Error::invalid(format!("size={} not in {{16, 32, 64}}", size)));
    }
    if n < 1 {
        return Err(Error::invalid("need at least one image"));
    }
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::chacha(rng::derive(seed, "synth-img", i as u64));
        let mut img = vec![0.0f64; size * size];
        // smooth base gradient
        let (a, bx, by) = (r.gen_range(-0.5..0.5), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 / size as f64, y as f64 / size as f64);
                img[y * size + x] = a + bx * fx + by * fy;
            }
        }
        // hard-edged shapes
        for _ in 0..r.gen_range(1..=3usize) {
            let rect = r.gen_bool(0.5);
            let (cx, cy) = (r.gen_range(0.15..0.85), r.gen_range(0.15..0.85));
            let (rx, ry) = (r.gen_range(0.08..0.3), r.gen_range(0.08..0.3));
            let v = r.gen_range(-0.9..0.9);
            for y in 0..size {
                for x in 0..size {
                    let (fx, fy) = (x as f64 / size as f64, y as f64 / size as f64);
                    let inside = if rect {
                        (fx - cx).abs() < rx && (fy - cy).abs() < ry
                    } else {
                        ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2) < 1.0
                    };
                    if inside {
                        img[y * size + x] = v;
                    }
                }
            }
        }
        // band-limited texture
        for _ in 0..2 {
            let amp = r.gen_range(0.05..0.15);
            let (fx, fy) = (r.gen_range(1..=4usize) as f64, r.gen_range(1..=4usize) as f64);
            let phase = r.gen_range(0.0..std::f64::consts::TAU);
            for y in 0..size {
                for x in 0..size {
                    let arg = std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / size as f64 + phase;
                    img[y * size + x] += amp * arg.sin();
                }
            }
        }
        for v in &mut img {
            *v = v.clamp(-1.0, 1.0);
        }
        images.push(Tensor::from_vec(&[1, 1, size, size], img)?);
    }
    Ok(Dataset { images, source: Source::Synthetic { seed, n, size } })
}

/// Load a PNG as a `[1, c, h, w]` tensor in `[-1, 1]` (c = 1 or 3).
pub fn load_png(path: &Path) -> Result<Tensor<f64>> {
    let img = image::open(path)?;
    let (data, c, h, w) = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            (g.into_raw().iter().map(|&p| byte_to_unit(p)).collect::<Vec<_>>(), 1, h, w)
        }
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            // interleaved -> planar
            let mut data = vec![0.0f64; 3 * h * w];
            for i in 0..h * w {
                for ch in 0..3 {
                    data[ch * h * w + i] = byte_to_unit(raw[i * 3 + ch]);
                }
            }
            (data, 3, h, w)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            let mut data = vec![0.0f64; 3 * h * w];
            for i in 0..h * w {
                for ch in 0..3 {
                    data[ch * h * w + i] = byte_to_unit(raw[i * 3 + ch]);
                }
            }
            (data, 3, h, w)
        }
    };
    Tensor::from_vec(&[1, c, h, w], data)
}

/// Save a `[1, c, h, w]` tensor to an 8-bit PNG (grayscale or RGB),
/// clamping to `[-1, 1]` first.
pub fn save_png(x: &Tensor<f64>, path: &Path) -> Result<()> {
    let [n, c, h, w] = x.dims4("save_png")?;
    if n != 1 || (c != 1 && c != 3) {
        return Err(Error::Dimension {
            op: "save_png",
            shape: x.shape().to_vec(),
            msg: "expected [1, 1|3, h, w]".into(),
        });
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    if c == 1 {
        let raw: Vec<u8> = x.data().iter().map(|&v| unit_to_byte(v)).collect();
        let img = image::GrayImage::from_raw(w as u32, h as u32, raw)
            .ok_or_else(|| Error::invalid("image buffer size"))?;
        img.save(path)?;
    } else {
        let plane = h * w;
        let mut raw = vec![0u8; 3 * plane];
        for i in 0..plane {
            for ch in 0..3 {
                raw[i * 3 + ch] = unit_to_byte(x.data()[ch * plane + i]);
            }
        }
        let img = image::RgbImage::from_raw(w as u32, h as u32, raw)
            .ok_or_else(|| Error::invalid("image buffer size"))?;
        img.save(path)?;
    }
    Ok(())
}

#[inline]
fn byte_to_unit(p: u8) -> f64 {
    2.0 * p as f64 / 255.0 - 1.0
}

#[inline]
fn unit_to_byte(v: f64) -> u8 {
    let v = v.clamp(-1.0, 1.0);
    ((v + 1.0) * 255.0 / 2.0).round() as u8
}

/// All PNGs of a directory, sorted by file name.
pub fn load_dir(path: &Path) -> Result<Dataset> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no .png files under {}", path.display())));
    }
    let mut images = Vec::with_capacity(files.len());
    for f in &files {
        images.push(load_png(f)?);
    }
    let shape = images[0].shape().to_vec();
    if images.iter().any(|im| im.shape() != shape) {
        return Err(Error::invalid("images in a dataset must share one shape"));
    }
    Ok(Dataset { images, source: Source::Directory(path.to_path_buf()) })
}

// ---- bicubic resize ----

/// Catmull-Rom cubic (a = -0.5).
fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

struct AxisPlan {
    // per output index: (first source index, weights)
    taps: Vec<(usize, Vec<f64>)>,
}

fn plan_axis(in_len: usize, out_len: usize) -> AxisPlan {
    let scale = out_len as f64 / in_len as f64;
    // widen the kernel when minifying (antialias), standard imresize behavior
    let kscale = scale.min(1.0);
    let support = 2.0 / kscale;
    let mut taps = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let center = (o as f64 + 0.5) / scale - 0.5;
        let lo = (center - support).ceil() as i64;
        let hi = (center + support).floor() as i64;
        let mut ws = Vec::with_capacity((hi - lo + 1) as usize);
        let mut sum = 0.0;
        for i in lo..=hi {
            let wv = cubic((i as f64 - center) * kscale);
            ws.push(wv);
            sum += wv;
        }
        for wv in &mut ws {
            *wv /= sum;
        }
        // clamp indices to the edge
        let first = lo;
        let idx_w: Vec<(usize, f64)> = ws
            .iter()
            .enumerate()
            .map(|(j, &wv)| ((first + j as i64).clamp(0, in_len as i64 - 1) as usize, wv))
            .collect();
        // merge duplicate clamped indices
        let start = idx_w.first().map(|&(i, _)| i).unwrap_or(0);
        let end = idx_w.last().map(|&(i, _)| i).unwrap_or(0);
        let mut merged = vec![0.0f64; end - start + 1];
        for (i, wv) in idx_w {
            merged[i - start] += wv;
        }
        taps.push((start, merged));
    }
    AxisPlan { taps }
}

/// Separable Catmull-Rom resize with edge clamping, align-corners false,
/// antialiased when minifying. `scale` is in {1/4, 1/3, 1/2, 2, 3, 4} (or 1).
pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    const VALID: [f64; 7] = [0.25, 1.0 / 3.0, 0.5, 1.0, 2.0, 3.0, 4.0];
    if !VALID.iter().any(|&v| (v - scale).abs() < 1e-9) {
        return Err(Error::invalid(format!("scale {} not supported", scale)));
    }
    let [n, c, h, w] = x.dims4("bicubic_resize")?;
    let oh = (h as f64 * scale).round() as usize;
    let ow = (w as f64 * scale).round() as usize;
    let vplan = plan_axis(h, oh);
    let hplan = plan_axis(w, ow);
    let src: Vec<f64> = x.data().iter().map(|v| v.to_f64().unwrap()).collect();

    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut tmp = vec![0.0f64; oh * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        // rows (vertical)
        for (oi, (start, ws)) in vplan.taps.iter().enumerate() {
            for j in 0..w {
                let mut acc = 0.0;
                for (k, &wv) in ws.iter().enumerate() {
                    acc += wv * src[base + (start + k) * w + j];
                }
                tmp[oi * w + j] = acc;
            }
        }
        // cols (horizontal)
        for oi in 0..oh {
            for (start, ws) in &hplan.taps {
                let mut acc = 0.0;
                for (k, &wv) in ws.iter().enumerate() {
                    acc += wv * tmp[oi * w + start + k];
                }
                out.push(lit(acc));
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

/// ITU-R BT.601 luminance of an RGB tensor `[1,3,h,w]` in `[-1,1]`,
/// returned on the 8-bit-style `[16, 235]` scale (as used by the SISR
/// evaluation convention).
pub fn rgb_to_luma601(x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let [n, c, h, w] = x.dims4("rgb_to_luma601")?;
    if n != 1 || c != 3 {
        return Err(Error::Dimension {
            op: "rgb_to_luma601",
            shape: x.shape().to_vec(),
            msg: "expected [1,3,h,w]".into(),
        });
    }
    let plane = h * w;
    let d = x.data();
    let data: Vec<f64> = (0..plane)
        .map(|i| {
            let r = (d[i] + 1.0) / 2.0;
            let g = (d[plane + i] + 1.0) / 2.0;
            let b = (d[2 * plane + i] + 1.0) / 2.0;
            16.0 + 65.481 * r + 128.553 * g + 24.966 * b
        })
        .collect();
    Tensor::from_vec(&[1, 1, h, w], data)
}

// ---- fixed test sets ----

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub pair_id: usize,
    pub image_id: usize,
    /// Serialized degradation record (includes the mask/noise seed).
    pub record: String,
}

#[derive(Clone, Debug)]
pub struct TestManifest {
    pub version: u32,
    pub task: Kind,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl TestManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("version={}\n", self.version));
        s.push_str(&format!("task={}\n", self.task.name()));
        s.push_str(&format!("seed={}\n", self.seed));
        s.push_str(&format!("n={}\n", self.entries.len()));
        for e in &self.entries {
            s.push_str(&format!("entry id={:06} img={:06} {}\n", e.pair_id, e.image_id, e.record));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut task = None;
        let mut seed = None;
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("entry ") {
                let mut parts = rest.splitn(3, ' ');
                let id = parts
                    .next()
                    .and_then(|t| t.strip_prefix("id="))
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad manifest entry '{}'", line)))?;
                let img = parts
                    .next()
                    .and_then(|t| t.strip_prefix("img="))
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad manifest entry '{}'", line)))?;
                let record = parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("bad manifest entry '{}'", line)))?
                    .to_string();
                entries.push(ManifestEntry { pair_id: id, image_id: img, record });
            } else if let Some(v) = line.strip_prefix("version=") {
                version = v.parse().ok();
            } else if let Some(v) = line.strip_prefix("task=") {
                task = Some(Kind::parse(v)?);
            } else if let Some(v) = line.strip_prefix("seed=") {
                seed = v.parse().ok();
            } else if line.starts_with("n=") {
                // redundant count, ignored
            } else {
                return Err(Error::Parse(format!("unexpected manifest line '{}'", line)));
            }
        }
        Ok(TestManifest {
            version: version.ok_or_else(|| Error::Parse("manifest missing version".into()))?,
            task: task.ok_or_else(|| Error::Parse("manifest missing task".into()))?,
            seed: seed.ok_or_else(|| Error::Parse("manifest missing seed".into()))?,
            entries,
        })
    }
}

/// One evaluation sample: ground truth, observation and the spec that
/// produced it.
#[derive(Clone, Debug)]
pub struct TestPair {
    pub x: Tensor<f64>,
    pub y: Tensor<f64>,
    pub spec: DegradationSpec<f64>,
}

fn gt_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{:06}_gt.png", id))
}

fn deg_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{:06}_deg.png", id))
}

/// Degrade each dataset image with `n_specs_per_image` sampled degradations
/// and persist the (gt, degraded, spec) triples under `out_dir`, so every
/// model is evaluated on identical pairs. A replay check verifies the
/// manifest regenerates the cached observations bit-exactly.
pub fn build_fixed_testset(
    ds: &Dataset,
    task: Kind,
    ranges: &SpecRanges,
    n_specs_per_image: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<TestManifest> {
    if ds.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let (h, w) = ds.image_hw()?;
    ranges.validate(task, h, w)?;
    std::fs::create_dir_all(out_dir)?;

    let mut entries = Vec::with_capacity(ds.len() * n_specs_per_image);
    let mut pair_id = 0usize;
    for (img_id, x) in ds.images.iter().enumerate() {
        // quantize gt once so replay sees exactly what eval will load
        save_png(x, &gt_path(out_dir, pair_id))?;
        let x_q = load_png(&gt_path(out_dir, pair_id))?;
        for k in 0..n_specs_per_image {
            let spec_seed = rng::derive(seed, "testset-spec", (img_id * n_specs_per_image + k) as u64);
            let spec = sample_spec::<f64>(task, spec_seed, ranges, h, w)?;
            let y = spec.apply(&x_q, spec.seed)?;
            if pair_id != img_id * n_specs_per_image + k {
                return Err(Error::invalid("pair id bookkeeping broke"));
            }
            if k > 0 {
                save_png(&x_q, &gt_path(out_dir, pair_id))?;
            }
            save_png(&y, &deg_path(out_dir, pair_id))?;
            entries.push(ManifestEntry { pair_id, image_id: img_id, record: spec.record() });
            pair_id += 1;
        }
    }
    let manifest = TestManifest { version: MANIFEST_VERSION, task, seed, entries };
    std::fs::write(out_dir.join("manifest.txt"), manifest.to_text())?;

    // replay check: regenerating from the manifest must reproduce the cache
    let replayed = load_testset(out_dir)?;
    for pair in &replayed {
        let y = pair.spec.apply(&pair.x, pair.spec.seed)?;
        let y_q: Vec<u8> = y.data().iter().map(|&v| unit_to_byte(v)).collect();
        let cached: Vec<u8> = pair.y.data().iter().map(|&v| unit_to_byte(v)).collect();
        if y_q != cached {
            return Err(Error::invalid("testset replay mismatch"));
        }
    }
    Ok(manifest)
}

/// Load a persisted test set back into memory.
pub fn load_testset(dir: &Path) -> Result<Vec<TestPair>> {
    let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let manifest = TestManifest::parse(&text)?;
    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let x = load_png(&gt_path(dir, e.pair_id))?;
        let [_, _, h, w] = x.dims4("load_testset")?;
        let spec = DegradationSpec::parse_record(&e.record, h, w)?;
        let y = load_png(&deg_path(dir, e.pair_id))?;
        pairs.push(TestPair { x, y, spec });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let a = gen_synthetic(4, 16, 5).unwrap();
        let b = gen_synthetic(4, 16, 5).unwrap();
        for (ia, ib) in a.images.iter().zip(&b.images) {
            assert_eq!(ia.data(), ib.data());
        }
        assert!(a.images.iter().all(|im| im.data().iter().all(|v| (-1.0..=1.0).contains(v))));
    }

    #[test]
    fn synthetic_mean_image_is_seed_stationary() {
        let n = 200;
        let mean_of = |seed: u64| {
            let ds = gen_synthetic(n, 16, seed).unwrap();
            let mut acc = vec![0.0f64; 256];
            for im in &ds.images {
                for (a, v) in acc.iter_mut().zip(im.data()) {
                    *a += v / n as f64;
                }
            }
            acc
        };
        let m1 = mean_of(1);
        let m2 = mean_of(2);
        let l1: f64 = m1.iter().zip(&m2).map(|(a, b)| (a - b).abs()).sum::<f64>() / 256.0;
        assert!(l1 < 0.1, "mean-image l1 distance {}", l1);
    }

    #[test]
    fn png_mapping_endpoints_and_round_trip() {
        assert_eq!(byte_to_unit(0), -1.0);
        assert_eq!(byte_to_unit(255), 1.0);
        assert!((byte_to_unit(128) - (2.0 * 128.0 / 255.0 - 1.0)).abs() < 1e-15);
        assert!((byte_to_unit(128) - 0.00392156862745097).abs() < 1e-15);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let ds = gen_synthetic(1, 16, 9).unwrap();
        save_png(&ds.images[0], &p).unwrap();
        let back = load_png(&p).unwrap();
        let max_err = ds.images[0]
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 2.0 / 255.0, "round-trip error {}", max_err);
        // quantization is idempotent
        save_png(&back, &p).unwrap();
        let again = load_png(&p).unwrap();
        assert_eq!(back.data(), again.data());
    }

    #[test]
    fn bicubic_preserves_constants_and_doubles_shape() {
        let x = Tensor::full(&[1, 1, 8, 8], 0.37f64);
        let y = bicubic_resize(&x, 2.0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 16, 16]);
        assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        let z = bicubic_resize(&x, 0.5).unwrap();
        assert_eq!(z.shape(), &[1, 1, 4, 4]);
        assert!(z.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        assert!(bicubic_resize(&x, 1.7).is_err());
    }

    #[test]
    fn bicubic_matches_linear_ramp() {
        // interpolating a linear ramp reproduces the ramp away from edges
        let data: Vec<f64> = (0..16).flat_map(|i| (0..16).map(move |j| 0.02 * j as f64 + 0.01 * i as f64)).collect();
        let x = Tensor::from_vec(&[1, 1, 16, 16], data).unwrap();
        let y = bicubic_resize(&x, 2.0).unwrap();
        for i in 4..28 {
            for j in 4..28 {
                let want = 0.02 * ((j as f64 + 0.5) / 2.0 - 0.5) + 0.01 * ((i as f64 + 0.5) / 2.0 - 0.5);
                let got = y.data()[i * 32 + j];
                assert!((got - want).abs() < 1e-10, "({}, {}): {} vs {}", i, j, got, want);
            }
        }
    }

    #[test]
    fn testset_build_counts_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic(10, 16, 3).unwrap();
        let ranges = SpecRanges { s_max: 8, offset_max: 3, ..Default::default() };
        let m = build_fixed_testset(&ds, Kind::Inpaint, &ranges, 10, 44, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 100, "10 images x 10 specs");
        let pairs = load_testset(dir.path()).unwrap();
        assert_eq!(pairs.len(), 100);
        // masked pixels of y are zero-filled
        for p in &pairs[..5] {
            let mask = p.spec.mask.as_ref().unwrap();
            for (i, &mv) in mask.data().iter().enumerate() {
                if mv == 0.0 {
                    assert!((p.y.data()[i] - byte_to_unit(unit_to_byte(0.0))).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn testset_build_is_seed_deterministic() {
        let ds = gen_synthetic(3, 16, 3).unwrap();
        let ranges = SpecRanges { s_max: 8, offset_max: 3, ..Default::default() };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = build_fixed_testset(&ds, Kind::Interpolate, &ranges, 4, 7, d1.path()).unwrap();
        let m2 = build_fixed_testset(&ds, Kind::Interpolate, &ranges, 4, 7, d2.path()).unwrap();
        assert_eq!(m1.to_text(), m2.to_text());
        let t1 = std::fs::read(d1.path().join("000003_deg.png")).unwrap();
        let t2 = std::fs::read(d2.path().join("000003_deg.png")).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = TestManifest {
            version: MANIFEST_VERSION,
            task: Kind::Inpaint,
            seed: 123,
            entries: vec![ManifestEntry {
                pair_id: 0,
                image_id: 0,
                record: "kind=inpaint s=3 dy=0 dx=1 t=1 sigma=0 seed=0".into(),
            }],
        };
        let back = TestManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back.to_text(), m.to_text());
    }
}
