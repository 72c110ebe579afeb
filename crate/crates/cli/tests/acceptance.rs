//! Acceptance suite: one pass/fail line per criterion.
//!
//! Fast oracles and invariants run first; criteria 5-9 share one toy
//! benchmark (synthetic 32x32, 2000 train / 200 test images, inpainting
//! sides 1..12, 40 epochs, three seeds) whose training runs execute on a
//! two-worker pool. Run with `-- --nocapture` to watch the lines appear.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use dln_core::data::{build_fixed_testset, gen_synthetic, load_testset, TestPair};
use dln_core::degrade::{sample_spec, DegradationSpec, Kind, SpecRanges};
use dln_core::dlnet::{adam_inner_step, restore, restore_traced, InnerHyper, InnerState};
use dln_core::metrics::evaluate;
use dln_core::net::{build_autoencoder, save_checkpoint, Network};
use dln_core::rng;
use dln_core::tensor::Tensor;
use dln_core::train::{train, EpochRow, Strategy, TrainCfg};
use dln_core::{selftest, Result};

const SEEDS: [u64; 3] = [101, 102, 103];
const IMG: usize = 32;
const BASE_CH: usize = 4;
const TRAIN_N: usize = 2000;
const TEST_N: usize = 200;
const SPECS_PER_IMAGE: usize = 10;
const EPOCHS: usize = 40;
const BATCH: usize = 25;
const DATA_SEED: u64 = 90_001;
const TEST_IMG_SEED: u64 = 90_002;
const TESTSET_SEED: u64 = 90_003;

struct Line {
    id: usize,
    name: &'static str,
    status: &'static str, // PASS | FAIL | SKIP
    detail: String,
}

fn emit(lines: &mut Vec<Line>, id: usize, name: &'static str, passed: bool, detail: String) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("[{}] criterion {:2}: {} — {}", status, id, name, detail);
    lines.push(Line { id, name, status, detail });
}

fn emit_skip(lines: &mut Vec<Line>, id: usize, name: &'static str, detail: String) {
    println!("[SKIP] criterion {:2}: {} — {}", id, name, detail);
    lines.push(Line { id, name, status: "SKIP", detail });
}

fn inpaint_ranges() -> SpecRanges {
    SpecRanges { s_min: 1, s_max: 12, offset_max: 10, ..Default::default() }
}

fn interp_ranges() -> SpecRanges {
    SpecRanges { r_max: 0.75, ..Default::default() }
}

#[derive(Clone)]
struct Job {
    label: String,
    task: Kind,
    strategy: Strategy,
    seed: u64,
}

struct RunResult {
    net: Network<f64>,
    rows: Vec<EpochRow>,
}

struct Bench {
    runs: HashMap<String, RunResult>,
    inpaint_pairs: Vec<TestPair>,
    interp_pairs: Vec<TestPair>,
    inpaint_testset_dir: PathBuf,
    _tmp: tempfile::TempDir,
}

fn bench_jobs() -> Vec<Job> {
    let mut jobs = Vec::new();
    for &seed in &SEEDS {
        let mk = |label: String, task, strategy| Job { label, task, strategy, seed };
        jobs.push(mk(format!("joint-inpaint-{}", seed), Kind::Inpaint, Strategy::Joint));
        for lambda in [1.0, 0.1, 0.01] {
            jobs.push(mk(
                format!("naive{}-inpaint-{}", lambda, seed),
                Kind::Inpaint,
                Strategy::Naive { lambda },
            ));
        }
        for k in [2usize, 5] {
            jobs.push(mk(
                format!("dlnet{}-inpaint-{}", k, seed),
                Kind::Inpaint,
                Strategy::DlNet { hyper: InnerHyper::default().with_k(k) },
            ));
        }
        jobs.push(mk(format!("joint-interp-{}", seed), Kind::Interpolate, Strategy::Joint));
        jobs.push(mk(
            format!("dlnet5-interp-{}", seed),
            Kind::Interpolate,
            Strategy::DlNet { hyper: InnerHyper::for_task(Kind::Interpolate) },
        ));
    }
    jobs
}

fn train_job(ds: &dln_core::data::Dataset, job: &Job) -> Result<RunResult> {
    let mut net = build_autoencoder::<f64>(IMG, BASE_CH, job.seed)?;
    let cfg = TrainCfg {
        strategy: job.strategy.clone(),
        task: job.task,
        ranges: match job.task {
            Kind::Inpaint => inpaint_ranges(),
            _ => interp_ranges(),
        },
        reference_record: None,
        lr: 1e-3,
        weight_decay: 1e-4,
        batch: BATCH,
        epochs: EPOCHS,
        lr_drop: Some((20, 10.0)),
        seed: job.seed,
    };
    let rows = train(&mut net, ds, None, &cfg)?;
    Ok(RunResult { net, rows })
}

fn run_benchmark() -> Result<Bench> {
    let tmp = tempfile::tempdir()?;
    let ds = gen_synthetic(TRAIN_N, IMG, DATA_SEED)?;
    let test_imgs = gen_synthetic(TEST_N, IMG, TEST_IMG_SEED)?;

    let inpaint_dir = tmp.path().join("testset_inpaint");
    build_fixed_testset(&test_imgs, Kind::Inpaint, &inpaint_ranges(), SPECS_PER_IMAGE, TESTSET_SEED, &inpaint_dir)?;
    let inpaint_pairs = load_testset(&inpaint_dir)?;
    let interp_dir = tmp.path().join("testset_interp");
    build_fixed_testset(&test_imgs, Kind::Interpolate, &interp_ranges(), SPECS_PER_IMAGE, TESTSET_SEED, &interp_dir)?;
    let interp_pairs = load_testset(&interp_dir)?;

    let jobs = bench_jobs();
    let total = jobs.len();
    let queue = Mutex::new(jobs.into_iter().collect::<Vec<_>>());
    let results: Mutex<HashMap<String, RunResult>> = Mutex::new(HashMap::new());
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());

    std::thread::scope(|s| {
        for _ in 0..2 {
            s.spawn(|| loop {
                let job = {
                    let mut q = queue.lock().unwrap();
                    match q.pop() {
                        Some(j) => j,
                        None => break,
                    }
                };
                let started = Instant::now();
                match train_job(&ds, &job) {
                    Ok(res) => {
                        let done = {
                            let mut r = results.lock().unwrap();
                            r.insert(job.label.clone(), res);
                            r.len()
                        };
                        println!(
                            "    [bench {:2}/{}] {} trained in {:.0}s",
                            done,
                            total,
                            job.label,
                            started.elapsed().as_secs_f64()
                        );
                    }
                    Err(e) => failures.lock().unwrap().push(format!("{}: {}", job.label, e)),
                }
            });
        }
    });

    let failures = failures.into_inner().unwrap();
    if !failures.is_empty() {
        return Err(dln_core::Error::invalid(format!("benchmark runs failed: {:?}", failures)));
    }
    Ok(Bench {
        runs: results.into_inner().unwrap(),
        inpaint_pairs,
        interp_pairs,
        inpaint_testset_dir: inpaint_dir,
        _tmp: tmp,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

fn avg_psnr(bench: &Bench, label_prefix: &str, pairs: &[TestPair], hyper: &InnerHyper) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &seed in &SEEDS {
        let run = &bench.runs[&format!("{}-{}", label_prefix, seed)];
        let report = evaluate(&run.net, pairs, hyper, label_prefix, 2)?;
        out.push(report.average.psnr);
    }
    Ok(out)
}

fn normalize_csv_without_wall(text: &str) -> String {
    // drop the trailing wall_seconds column (timing is not deterministic)
    text.lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.pop();
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn write_determinism_config(dir: &Path) -> PathBuf {
    let path = dir.join("det.toml");
    std::fs::write(
        &path,
        r#"
name = "det"

[data]
kind = "synthetic"
n = 64
size = 16
seed = 3
path = ""

[net]
arch = "autoencoder"
base_ch = 4
depth = 6
seed = 1

[degrade]
task = "inpaint"
s_min = 1
s_max = 6
offset_max = 3
r_max = 0.75
u_max = 3.0
t = 1
sigma = 0.0
reference = ""

[train]
strategy = "dlnet"
lambda = 1.0
lr = 1e-3
weight_decay = 1e-4
batch = 16
epochs = 3
lr_drop_every = 0
lr_drop_factor = 10.0
seed = 77
init = ""

[dlnet]
k = 2
gamma = 1e-3
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
bias_correction = "paper"

[eval]
val_n = 8
val_seed = 9
threads = 1
"#,
    )
    .unwrap();
    path
}

#[test]
fn acceptance() {
    let mut lines: Vec<Line> = Vec::new();
    let suite_started = Instant::now();

    // 1. autodiff oracle ---------------------------------------------------
    {
        let started = Instant::now();
        let sweep = selftest::gradient_sweep(100, 1e-5, 1e-5, 4242).expect("gradient sweep runs");
        let double = selftest::double_backward_sweep(20, 1e-5, 1e-4, 4242).expect("double sweep runs");
        let elapsed = started.elapsed().as_secs_f64();
        let ok = sweep.iter().all(|l| l.passed) && double.passed && elapsed < 60.0;
        emit(
            &mut lines,
            1,
            "autodiff finite-difference oracle",
            ok,
            format!(
                "{} primitive sweeps at 100 cases (rel <= 1e-5); double backward [{}]; {:.1}s < 60s",
                sweep.len(),
                double.detail,
                elapsed
            ),
        );
    }

    // 2. inner-ADAM transcription oracle ------------------------------------
    {
        let hyper = InnerHyper::default();
        let grad = Tensor::<f64>::scalar(2.0);
        let mut state = InnerState::new(&[]);
        let dz = adam_inner_step(&grad, &mut state, &hyper, 1).expect("adam step");
        let m = state.m.item().unwrap();
        let v = state.v.item().unwrap();
        let m_hat = m / (1.0 - hyper.beta1);
        let v_hat = v / (1.0 - hyper.beta2);
        let dz = dz.item().unwrap();
        let ok = (m - 0.2).abs() <= 1e-9
            && (v - 0.004).abs() <= 1e-9
            && (m_hat - 2.0).abs() <= 1e-9
            && (v_hat - 4.0).abs() <= 1e-9
            && (dz + 1.000e-3).abs() <= 1e-9;
        emit(
            &mut lines,
            2,
            "inner-ADAM transcription oracle",
            ok,
            format!("(m, v, m^, v^, dz) = ({}, {}, {}, {}, {}) vs (0.2, 0.004, 2, 4, -1.000e-3) at 1e-9", m, v, m_hat, v_hat, dz),
        );
    }

    // 3. degenerate-unroll identity -----------------------------------------
    {
        let net = build_autoencoder::<f64>(IMG, BASE_CH, 7).expect("net");
        let hyper = InnerHyper::default().with_k(0);
        let spec = DegradationSpec::<f64>::inpaint(IMG, IMG, 8, (2, -3)).unwrap();
        let mut identical = true;
        for i in 0..100u64 {
            let imgs = gen_synthetic(1, IMG, rng::derive(31, "c3", i)).unwrap();
            let y = spec.apply(&imgs.images[0], 0).unwrap();
            let a = restore(&net, &y, &spec, &hyper, false).unwrap();
            let b = net.forward(&y).unwrap();
            identical &= a.data() == b.data();
        }
        let count_before = net.param_count();
        let y = spec.apply(&gen_synthetic(1, IMG, 1).unwrap().images[0], 0).unwrap();
        let _ = restore(&net, &y, &spec, &InnerHyper::default(), true).unwrap();
        let ok = identical && net.param_count() == count_before;
        emit(
            &mut lines,
            3,
            "degenerate unroll identity + parameter count",
            ok,
            format!(
                "restore(K=0) == forward bit-exactly on 100 inputs; param_count {} unchanged by the recursion",
                count_before
            ),
        );
    }

    // 4. fidelity consistency ------------------------------------------------
    {
        let mut worst = 0.0f64;
        for i in 0..100u64 {
            let kind = [Kind::Inpaint, Kind::Interpolate, Kind::BlurDownsample][(i % 3) as usize];
            let ranges = SpecRanges { s_max: 12, t: 2, ..Default::default() };
            let spec: DegradationSpec<f64> =
                sample_spec(kind, rng::derive(77, "c4", i), &ranges, IMG, IMG).unwrap();
            let x = gen_synthetic(1, IMG, rng::derive(78, "c4x", i)).unwrap().images[0].clone();
            let y = spec.apply(&x, spec.seed).unwrap();
            let f = dln_core::dlnet::fidelity(&x, &y, &spec).unwrap().item().unwrap();
            worst = worst.max(f);
        }
        emit(
            &mut lines,
            4,
            "fidelity consistency at sigma=0",
            worst <= 1e-20,
            format!("max fidelity(x, degrade(x)) = {:.3e} over 100 random (x, spec), all kinds (tol 1e-20)", worst),
        );
    }

    // toy benchmark for criteria 5-9 ----------------------------------------
    println!("    running the toy benchmark ({} training runs, 2 workers)...", bench_jobs().len());
    let bench_started = Instant::now();
    let bench = run_benchmark().expect("benchmark trains");
    println!("    benchmark done in {:.0}s", bench_started.elapsed().as_secs_f64());

    let k0 = InnerHyper::default().with_k(0);
    let joint_inpaint = avg_psnr(&bench, "joint-inpaint", &bench.inpaint_pairs, &k0).unwrap();

    // 5. naive-likelihood negative result ------------------------------------
    {
        let mut details = Vec::new();
        let mut ok = true;
        for lambda in [1.0, 0.1, 0.01] {
            let naive =
                avg_psnr(&bench, &format!("naive{}-inpaint", lambda), &bench.inpaint_pairs, &k0).unwrap();
            let gap = (mean(&naive) - mean(&joint_inpaint)).abs();
            ok &= gap <= 0.3;
            details.push(format!("lambda={}: |{:.3} - {:.3}| = {:.3} dB", lambda, mean(&naive), mean(&joint_inpaint), gap));
        }
        emit(
            &mut lines,
            5,
            "naive-likelihood tracks rigid joint (<= 0.3 dB)",
            ok,
            details.join("; "),
        );
    }

    // 6. refinement strategy beats joint -------------------------------------
    {
        let dlnet_inpaint =
            avg_psnr(&bench, "dlnet5-inpaint", &bench.inpaint_pairs, &InnerHyper::default()).unwrap();
        let gap_inpaint = mean(&dlnet_inpaint) - mean(&joint_inpaint);

        let joint_interp = avg_psnr(&bench, "joint-interp", &bench.interp_pairs, &k0).unwrap();
        let dlnet_interp = avg_psnr(
            &bench,
            "dlnet5-interp",
            &bench.interp_pairs,
            &InnerHyper::for_task(Kind::Interpolate),
        )
        .unwrap();
        let gap_interp = mean(&dlnet_interp) - mean(&joint_interp);

        let ok = gap_inpaint >= 0.2 && gap_interp >= 0.2;
        emit(
            &mut lines,
            6,
            "unrolled refinement beats joint (>= 0.2 dB)",
            ok,
            format!(
                "inpaint: {:.3} vs {:.3} (+{:.3} dB); interpolate (gamma=1e-2): {:.3} vs {:.3} (+{:.3} dB), mean of 3 seeds",
                mean(&dlnet_inpaint),
                mean(&joint_inpaint),
                gap_inpaint,
                mean(&dlnet_interp),
                mean(&joint_interp),
                gap_interp
            ),
        );
    }

    // 7. K-ablation ordering of epoch-20 training loss ------------------------
    {
        let loss_at = |prefix: &str| -> f64 {
            let mut v: Vec<f64> = SEEDS
                .iter()
                .map(|s| bench.runs[&format!("{}-{}", prefix, s)].rows[19].train_loss)
                .collect();
            median(&mut v)
        };
        // the rigid-joint run plays the role of the K=1 curve
        let l1 = loss_at("joint-inpaint");
        let l2 = loss_at("dlnet2-inpaint");
        let l5 = loss_at("dlnet5-inpaint");
        let ok = l1 >= l2 && l2 >= l5;
        emit(
            &mut lines,
            7,
            "epoch-20 training loss non-increasing in K {1,2,5}",
            ok,
            format!("median losses: K=1(joint) {:.5} >= K=2 {:.5} >= K=5 {:.5}", l1, l2, l5),
        );
    }

    // 8. inner-loop efficacy on the trained model ------------------------------
    {
        let run = &bench.runs[&format!("dlnet5-inpaint-{}", SEEDS[0])];
        let hyper = InnerHyper::default();
        let mut fid0 = Vec::new();
        let mut fid_k = Vec::new();
        for pair in bench.inpaint_pairs.iter().take(64) {
            let (_, trace) = restore_traced(&run.net, &pair.y, &pair.spec, &hyper).unwrap();
            fid0.push(trace[0]);
            fid_k.push(*trace.last().unwrap());
        }
        let m0 = median(&mut fid0);
        let mk = median(&mut fid_k);
        let reduction = (m0 - mk) / m0;
        let ok = mk < m0 && reduction >= 0.10;
        emit(
            &mut lines,
            8,
            "inner loop cuts fidelity on a trained model",
            ok,
            format!("median fidelity k=0: {:.4}, k=5: {:.4} ({:.1}% reduction, need >= 10%)", m0, mk, reduction * 100.0),
        );
    }

    // 9. runtime overhead via cmd_eval ----------------------------------------
    {
        let tmp = tempfile::tempdir().unwrap();
        let ckpt = tmp.path().join("dlnet5.ckpt");
        save_checkpoint(&bench.runs[&format!("dlnet5-inpaint-{}", SEEDS[0])].net, &ckpt).unwrap();
        let eval_dir = tmp.path().join("eval");
        let out = Command::new(env!("CARGO_BIN_EXE_dln"))
            .args(["eval", "--k", "5", "--gamma", "1e-3", "--threads", "1"])
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--testset")
            .arg(&bench.inpaint_testset_dir)
            .arg("--out")
            .arg(&eval_dir)
            .output()
            .expect("spawn dln eval");
        assert!(out.status.success(), "cmd_eval failed: {}", String::from_utf8_lossy(&out.stderr));
        let overhead = std::fs::read_to_string(eval_dir.join("overhead.csv")).unwrap();
        let ratio: f64 = overhead
            .lines()
            .find(|l| l.starts_with("dlnet,"))
            .and_then(|l| l.split(',').nth(3))
            .and_then(|v| v.parse().ok())
            .expect("overhead ratio in csv");
        emit(
            &mut lines,
            9,
            "K=5 inference wall-clock within 3x of reference",
            ratio <= 3.0 && ratio > 0.0,
            format!("cmd_eval reported overhead ratio {:.3} (bound 3.0) over {} restores", ratio, bench.inpaint_pairs.len()),
        );
    }

    // 10. optional Set-5 bicubic protocol --------------------------------------
    {
        let dir = std::env::var("DLN_SET5_DIR").unwrap_or_else(|_| "data/Set5".into());
        let dir = PathBuf::from(dir);
        if dir.is_dir() {
            match set5_bicubic_psnr(&dir) {
                Ok((psnr, n)) => {
                    let ok = (psnr - 33.66).abs() <= 0.15;
                    emit(
                        &mut lines,
                        10,
                        "bicubic x2 luminance PSNR on Set-5",
                        ok,
                        format!("{:.3} dB over {} images vs 33.66 +/- 0.15", psnr, n),
                    );
                }
                Err(e) => emit(&mut lines, 10, "bicubic x2 luminance PSNR on Set-5", false, e.to_string()),
            }
        } else {
            emit_skip(
                &mut lines,
                10,
                "bicubic x2 luminance PSNR on Set-5",
                format!("dataset not present at {} (set DLN_SET5_DIR to enable)", dir.display()),
            );
        }
    }

    // 11. bit-determinism of cmd_train ------------------------------------------
    {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_determinism_config(tmp.path());
        let runs = tmp.path().join("runs");
        for name in ["a", "b"] {
            let out = Command::new(env!("CARGO_BIN_EXE_dln"))
                .arg("train")
                .arg("--config")
                .arg(&cfg)
                .args(["--name", name])
                .arg("--out-root")
                .arg(&runs)
                .output()
                .expect("spawn dln train");
            assert!(out.status.success(), "cmd_train failed: {}", String::from_utf8_lossy(&out.stderr));
        }
        let ckpt_a = std::fs::read(runs.join("a/ckpt/final.ckpt")).unwrap();
        let ckpt_b = std::fs::read(runs.join("b/ckpt/final.ckpt")).unwrap();
        let csv_a = std::fs::read_to_string(runs.join("a/logs/train.csv")).unwrap();
        let csv_b = std::fs::read_to_string(runs.join("b/logs/train.csv")).unwrap();
        let ok = ckpt_a == ckpt_b && normalize_csv_without_wall(&csv_a) == normalize_csv_without_wall(&csv_b);
        emit(
            &mut lines,
            11,
            "cmd_train is bit-deterministic per seed",
            ok,
            format!(
                "checkpoints identical ({} bytes); epoch CSVs identical up to the wall_seconds column",
                ckpt_a.len()
            ),
        );
    }

    println!("acceptance suite finished in {:.0}s", suite_started.elapsed().as_secs_f64());
    let failed: Vec<String> = lines
        .iter()
        .filter(|l| l.status == "FAIL")
        .map(|l| format!("criterion {} ({}): {}", l.id, l.name, l.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

/// Standard SISR evaluation protocol for the bicubic baseline: luminance
/// channel (BT.601), antialiased bicubic downscale by 2, bicubic upscale
/// back, border shave of 2, PSNR on the [0, 255] scale, per-image average.
fn set5_bicubic_psnr(dir: &Path) -> Result<(f64, usize)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("bmp"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(dln_core::Error::invalid("no images in Set-5 directory"));
    }
    let mut psnrs = Vec::new();
    for f in &files {
        let rgb = dln_core::data::load_png(f)?;
        let y = dln_core::data::rgb_to_luma601(&rgb)?;
        // modcrop to a multiple of 2
        let [_, _, h, w] = y.dims4("set5")?;
        let (h2, w2) = (h - h % 2, w - w % 2);
        let mut cropped = Vec::with_capacity(h2 * w2);
        for i in 0..h2 {
            cropped.extend_from_slice(&y.data()[i * w..i * w + w2]);
        }
        let y = Tensor::<f64>::from_vec(&[1, 1, h2, w2], cropped)?;
        let lr = dln_core::data::bicubic_resize(&y, 0.5)?;
        let up = dln_core::data::bicubic_resize(&lr, 2.0)?;
        // shave the border by the scale factor
        let shave = 2usize;
        let mut se = 0.0;
        let mut n = 0usize;
        for i in shave..h2 - shave {
            for j in shave..w2 - shave {
                let d = up.data()[i * w2 + j] - y.data()[i * w2 + j];
                se += d * d;
                n += 1;
            }
        }
        let mse = se / n as f64;
        psnrs.push(10.0 * (255.0f64 * 255.0 / mse).log10());
    }
    Ok((psnrs.iter().sum::<f64>() / psnrs.len() as f64, psnrs.len()))
}
