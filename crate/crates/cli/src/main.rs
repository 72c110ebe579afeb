//! `dln` command-line harness.
//!
//! Subcommands: gen (synthetic datasets), degrade (apply one degradation),
//! testset (persist a fixed multi-degradation test set), train, eval,
//! restore and selftest. Exit codes: 0 success, 2 config error, 3 runtime
//! numeric failure, 4 I/O.

mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::RunConfig;
use dln_core::data::{self, Dataset, TestPair};
use dln_core::degrade::{sample_spec, DegradationSpec, Kind};
use dln_core::dlnet::{restore, InnerHyper};
use dln_core::error::{Error, Result};
use dln_core::metrics::evaluate;
use dln_core::net::{build_autoencoder, build_sisr_net, load_checkpoint, save_checkpoint, Network};
use dln_core::rng;
use dln_core::tensor::Tensor;
use dln_core::train::{epoch_csv, train};

#[derive(Parser)]
#[command(name = "dln", version, about = "Restoration networks with an unrolled fidelity-refinement module")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset of PNGs.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one degradation to a PNG or a directory of PNGs.
    Degrade {
        /// inpaint | interpolate | blurdown
        #[arg(long)]
        task: String,
        /// square hole side (inpaint)
        #[arg(long)]
        s: Option<usize>,
        /// removal fraction (interpolate)
        #[arg(long)]
        r: Option<f64>,
        /// blur width (blurdown)
        #[arg(long)]
        u: Option<f64>,
        #[arg(long, default_value_t = 1)]
        t: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// hole offset "dy,dx" (inpaint)
        #[arg(long, default_value = "0,0")]
        offset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "PNG|DIR")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a persisted fixed test set (each image degraded n-specs times).
    Testset {
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 10)]
        n_specs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        s_max: usize,
        #[arg(long, default_value_t = 0.75)]
        r_max: f64,
        #[arg(long, default_value_t = 3.0)]
        u_max: f64,
        #[arg(long, default_value_t = 2)]
        t: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// override [train].strategy
        #[arg(long)]
        strategy: Option<String>,
        /// override [train].seed
        #[arg(long)]
        seed: Option<u64>,
        /// override config name (run directory)
        #[arg(long)]
        name: Option<String>,
        /// resume/fine-tune from a checkpoint (overrides [train].init)
        #[arg(long)]
        resume: Option<PathBuf>,
        /// root of run directories
        #[arg(long, default_value = "runs")]
        out_root: PathBuf,
    },
    /// Evaluate a checkpoint on a fixed test set (reference pass included,
    /// with the runtime-overhead ratio).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1e-3)]
        gamma: f64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore a single degraded image.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// degradation record, e.g. "kind=inpaint s=12 dy=0 dx=0 t=1 sigma=0 seed=0"
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1e-3)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in verification suites.
    Selftest {
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArg(_) | Error::Spec(_) | Error::Parse(_) => 2,
        Error::Io(_) | Error::Image(_) => 4,
        _ => 3,
    }
}

fn kind_label(e: &Error) -> &'static str {
    match e {
        Error::InvalidArg(_) | Error::Spec(_) | Error::Parse(_) => "config",
        Error::Io(_) | Error::Image(_) => "io",
        _ => "numeric",
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => {}
        Err(e) => {
            let code = exit_code(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: code={} kind={} msg=\"{}\"", code, kind_label(&e), msg);
            std::process::exit(code);
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { n, size, seed, out } => cmd_gen(n, size, seed, &out),
        Cmd::Degrade { task, s, r, u, t, sigma, offset, seed, input, out } => {
            cmd_degrade(&task, s, r, u, t, sigma, &offset, seed, &input, &out)
        }
        Cmd::Testset { input, task, n_specs, seed, s_max, r_max, u_max, t, out } => {
            cmd_testset(&input, &task, n_specs, seed, s_max, r_max, u_max, t, &out)
        }
        Cmd::Train { config, strategy, seed, name, resume, out_root } => {
            cmd_train(&config, strategy, seed, name, resume, &out_root)
        }
        Cmd::Eval { checkpoint, testset, k, gamma, threads, out } => {
            cmd_eval(&checkpoint, &testset, k, gamma, threads, &out)
        }
        Cmd::Restore { checkpoint, image, spec, k, gamma, out } => {
            cmd_restore(&checkpoint, &image, &spec, k, gamma, &out)
        }
        Cmd::Selftest { cases } => cmd_selftest(cases),
    }
}

fn cmd_gen(n: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = data::gen_synthetic(n, size, seed)?;
    std::fs::create_dir_all(out)?;
    for (i, img) in ds.images.iter().enumerate() {
        data::save_png(img, &out.join(format!("{:06}.png", i)))?;
    }
    println!("gen: wrote {} {}x{} images to {}", n, size, size, out.display());
    Ok(())
}

fn parse_offset(s: &str) -> Result<(i64, i64)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| Error::invalid(format!("offset '{}' must be 'dy,dx'", s)))?;
    let dy = a.trim().parse().map_err(|_| Error::invalid(format!("bad offset dy '{}'", a)))?;
    let dx = b.trim().parse().map_err(|_| Error::invalid(format!("bad offset dx '{}'", b)))?;
    Ok((dy, dx))
}

/// Apply a degradation channel-wise (the mask/kernel is shared across the
/// color planes of an RGB image).
fn apply_channelwise(spec: &DegradationSpec<f64>, x: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let [n, c, h, w] = x.dims4("degrade")?;
    if c == 1 {
        return spec.apply(x, seed);
    }
    let plane = h * w;
    let mut out: Option<Vec<f64>> = None;
    let mut shape = None;
    for ch in 0..c {
        let part = Tensor::from_vec(&[n, 1, h, w], x.data()[ch * plane..(ch + 1) * plane].to_vec())?;
        let y = spec.apply(&part, rng::derive(seed, "chan", ch as u64))?;
        shape = Some([y.shape()[0], c, y.shape()[2], y.shape()[3]]);
        out.get_or_insert_with(Vec::new).extend_from_slice(y.data());
    }
    let shape = shape.unwrap();
    Tensor::from_vec(&shape, out.unwrap())
}

#[allow(clippy::too_many_arguments)]
fn cmd_degrade(
    task: &str,
    s: Option<usize>,
    r: Option<f64>,
    u: Option<f64>,
    t: usize,
    sigma: f64,
    offset: &str,
    seed: u64,
    input: &Path,
    out: &Path,
) -> Result<()> {
    let kind = Kind::parse(task)?;
    let files: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::invalid(format!("no .png inputs under {}", input.display())));
    }
    std::fs::create_dir_all(out)?;
    for (i, f) in files.iter().enumerate() {
        let x = data::load_png(f)?;
        let [_, _, h, w] = x.dims4("degrade")?;
        let per_file_seed = rng::derive(seed, "degrade", i as u64);
        let spec = match kind {
            Kind::Inpaint => {
                let s = s.ok_or_else(|| Error::invalid("--s required for inpaint"))?;
                DegradationSpec::inpaint(h, w, s, parse_offset(offset)?)?
            }
            Kind::Interpolate => {
                let r = r.ok_or_else(|| Error::invalid("--r required for interpolate"))?;
                DegradationSpec::interpolate(h, w, r, per_file_seed)?
            }
            Kind::BlurDownsample => {
                let u = u.ok_or_else(|| Error::invalid("--u required for blurdown"))?;
                DegradationSpec::blur_downsample(u, t, sigma, per_file_seed)?
            }
        };
        let y = apply_channelwise(&spec, &x, per_file_seed)?;
        let stem = f.file_stem().unwrap_or_default().to_string_lossy();
        data::save_png(&y, &out.join(format!("{}_deg.png", stem)))?;
        std::fs::write(out.join(format!("{}_spec.txt", stem)), format!("{}\n", spec.record()))?;
    }
    println!("degrade: wrote {} degraded images to {}", files.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_testset(
    input: &Path,
    task: &str,
    n_specs: usize,
    seed: u64,
    s_max: usize,
    r_max: f64,
    u_max: f64,
    t: usize,
    out: &Path,
) -> Result<()> {
    let kind = Kind::parse(task)?;
    let ds = data::load_dir(input)?;
    let ranges = dln_core::degrade::SpecRanges { s_max, r_max, u_max, t, ..Default::default() };
    let manifest = data::build_fixed_testset(&ds, kind, &ranges, n_specs, seed, out)?;
    println!(
        "testset: {} images x {} specs = {} pairs under {}",
        ds.len(),
        n_specs,
        manifest.entries.len(),
        out.display()
    );
    Ok(())
}

fn build_net(cfg: &RunConfig, img: usize) -> Result<Network<f64>> {
    match cfg.net.arch.as_str() {
        "autoencoder" => build_autoencoder(img, cfg.net.base_ch, cfg.net.seed),
        "sisr" => build_sisr_net(cfg.net.depth, cfg.net.base_ch, cfg.net.seed),
        other => Err(Error::invalid(format!("unknown arch '{}'", other))),
    }
}

fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.data.kind.as_str() {
        "synthetic" => data::gen_synthetic(cfg.data.n, cfg.data.size, cfg.data.seed),
        "directory" => data::load_dir(Path::new(&cfg.data.path)),
        other => Err(Error::invalid(format!("unknown data kind '{}'", other))),
    }
}

/// In-memory validation pairs drawn from a separate synthetic stream.
fn build_val_pairs(cfg: &RunConfig, h: usize, w: usize) -> Result<Vec<TestPair>> {
    if cfg.eval.val_n == 0 {
        return Ok(Vec::new());
    }
    let task = cfg.task()?;
    let ranges = cfg.ranges();
    let val = data::gen_synthetic(cfg.eval.val_n, h, rng::derive(cfg.eval.val_seed, "val-imgs", 0))?;
    let mut pairs = Vec::with_capacity(val.len());
    for (i, x) in val.images.iter().enumerate() {
        let spec = sample_spec(task, rng::derive(cfg.eval.val_seed, "val-spec", i as u64), &ranges, h, w)?;
        let y = spec.apply(x, spec.seed)?;
        pairs.push(TestPair { x: x.clone(), y, spec });
    }
    Ok(pairs)
}

fn cmd_train(
    config_path: &Path,
    strategy: Option<String>,
    seed: Option<u64>,
    name: Option<String>,
    resume: Option<PathBuf>,
    out_root: &Path,
) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = strategy {
        cfg.train.strategy = s;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(n) = name {
        cfg.name = n;
    }
    if let Some(r) = resume {
        cfg.train.init = r.to_string_lossy().into_owned();
    }
    cfg.validate()?;

    let run_dir = out_root.join(&cfg.name);
    std::fs::create_dir_all(run_dir.join("ckpt"))?;
    std::fs::create_dir_all(run_dir.join("logs"))?;
    std::fs::create_dir_all(run_dir.join("eval"))?;
    std::fs::write(run_dir.join("config.echo"), cfg.to_toml())?;

    let ds = build_dataset(&cfg)?;
    let (h, w) = ds.image_hw()?;
    if h != w {
        return Err(Error::invalid("training images must be square"));
    }
    let mut net = if cfg.train.init.is_empty() {
        build_net(&cfg, h)?
    } else {
        load_checkpoint(Path::new(&cfg.train.init))?
    };
    let val = build_val_pairs(&cfg, h, w)?;
    let train_cfg = cfg.train_cfg()?;

    let started = Instant::now();
    let rows = train(&mut net, &ds, if val.is_empty() { None } else { Some(&val) }, &train_cfg)?;
    let csv = epoch_csv(&rows);
    std::fs::write(run_dir.join("logs").join("train.csv"), &csv)?;
    let ckpt = run_dir.join("ckpt").join("final.ckpt");
    save_checkpoint(&net, &ckpt)?;

    let last = rows.last().expect("at least one epoch");
    println!(
        "train: {} ({}) {} epochs in {:.1}s, final loss {:.6}, checkpoint {}",
        cfg.name,
        last.strategy,
        rows.len(),
        started.elapsed().as_secs_f64(),
        last.train_loss,
        ckpt.display()
    );
    if let (Some(l1), Some(psnr)) = (last.val_l1, last.val_psnr) {
        println!("train: final val l1 {:.4}, psnr {:.2} dB", l1, psnr);
    }
    Ok(())
}

fn grid_png(pairs: &[TestPair], net: &Network<f64>, hyper: &InnerHyper, path: &Path) -> Result<()> {
    let cols = pairs.len().min(4);
    if cols == 0 {
        return Ok(());
    }
    let [_, _, h, w] = pairs[0].x.dims4("grid")?;
    let mut canvas = vec![0.0f64; 3 * h * cols * w];
    for (j, pair) in pairs.iter().take(cols).enumerate() {
        let shown_y = if pair.y.shape()[2] != h {
            data::bicubic_resize(&pair.y, pair.spec.t as f64)?
        } else {
            pair.y.clone()
        };
        let x_hat = restore(net, &pair.y, &pair.spec, hyper, false)?;
        for (row, img) in [&shown_y, &x_hat, &pair.x].into_iter().enumerate() {
            for i in 0..h {
                for jx in 0..w {
                    canvas[(row * h + i) * cols * w + j * w + jx] = img.data()[i * w + jx];
                }
            }
        }
    }
    data::save_png(&Tensor::from_vec(&[1, 1, 3 * h, cols * w], canvas)?, path)
}

fn cmd_eval(checkpoint: &Path, testset: &Path, k: usize, gamma: f64, threads: usize, out: &Path) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let pairs = data::load_testset(testset)?;
    std::fs::create_dir_all(out)?;

    let hyper = InnerHyper { k_steps: k, gamma, ..Default::default() };
    let reference = InnerHyper { k_steps: 0, gamma, ..Default::default() };

    let report = evaluate(&net, &pairs, &hyper, &format!("dlnet(k={})", k), threads)?;
    let ref_report = evaluate(&net, &pairs, &reference, "reference", threads)?;

    std::fs::write(out.join("report.csv"), report.to_csv())?;
    std::fs::write(out.join("reference.csv"), ref_report.to_csv())?;

    let ratio = report.average.runtime_s / ref_report.average.runtime_s;
    let overhead = format!(
        "strategy,k,runtime_s,ratio\nreference,0,{},1\ndlnet,{},{},{}\n",
        ref_report.average.runtime_s, k, report.average.runtime_s, ratio
    );
    std::fs::write(out.join("overhead.csv"), &overhead)?;

    grid_png(&pairs, &net, &hyper, &out.join("grid.png"))?;

    println!(
        "eval: k={} avg psnr {:.3} dB (reference {:.3} dB) over {} pairs",
        k,
        report.average.psnr,
        ref_report.average.psnr,
        report.average.n
    );
    println!("eval: overhead_ratio k={} ratio={:.3}", k, ratio);
    Ok(())
}

fn cmd_restore(checkpoint: &Path, image: &Path, spec_str: &str, k: usize, gamma: f64, out: &Path) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let y = data::load_png(image)?;
    let [n, c, h, w] = y.dims4("restore")?;
    // the record describes the observation, which lives at LR for blur
    let spec = DegradationSpec::parse_record(spec_str, h, w)?;
    let hyper = InnerHyper { k_steps: k, gamma, ..Default::default() };
    let x_hat = if c == 1 {
        restore(&net, &y, &spec, &hyper, false)?
    } else {
        let plane = h * w;
        let mut merged = Vec::with_capacity(c * plane);
        let mut out_shape = [n, c, h, w];
        for ch in 0..c {
            let part = Tensor::from_vec(&[n, 1, h, w], y.data()[ch * plane..(ch + 1) * plane].to_vec())?;
            let r = restore(&net, &part, &spec, &hyper, false)?;
            out_shape = [r.shape()[0], c, r.shape()[2], r.shape()[3]];
            merged.extend_from_slice(r.data());
        }
        Tensor::from_vec(&out_shape, merged)?
    };
    data::save_png(&x_hat, out)?;
    println!("restore: wrote {}", out.display());
    Ok(())
}

fn cmd_selftest(cases: usize) -> Result<()> {
    let started = Instant::now();
    let (lines, ok) = dln_core::selftest::run_all(cases, 2024)?;
    for l in &lines {
        println!("[{}] {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
    }
    println!(
        "selftest: {}/{} checks passed in {:.1}s",
        lines.iter().filter(|l| l.passed).count(),
        lines.len(),
        started.elapsed().as_secs_f64()
    );
    if ok {
        Ok(())
    } else {
        Err(Error::Graph("selftest failed".into()))
    }
}
