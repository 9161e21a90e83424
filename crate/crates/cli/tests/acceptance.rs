//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lpdh_core::gradcheck::{check, check_subset, Report};
use lpdh_core::hazesynth::{
    procedural_scene, recover_clean, rng, sample_scalars, synthesize, transmission, DepthSource, AIRLIGHT_RANGE,
    BETA_RANGE,
};
use lpdh_core::linalg::{svd, Matrix};
use lpdh_core::metrics::{psnr, ssim};
use lpdh_core::network::{BottomBranch, Bound, DehazeModel, Mode, ModelConfig};
use lpdh_core::pyramid::{decompose_any, reconstruct_crop};
use lpdh_core::training::{adam_step, charbonnier, AdamHyper, AdamState};
use lpdh_core::tucker::{hooi, reconstruct as tucker_reconstruct, Ranks, TuckerConfig, TuckerDecomp};
use lpdh_core::{Tape, Tensor, Var};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.random::<f64>())
}

fn signed(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, seed).map(|v| 2.0 * v - 1.0)
}

fn gaussian(shape: &[usize], seed: u64, sigma: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let u1 = r.random::<f64>().max(1e-300);
        let u2 = r.random::<f64>();
        sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

// ---------------------------------------------------------------- 1

fn pyramid_reconstruction() -> Outcome {
    let mut r = rng(2024);
    let mut worst = 0.0f32;
    for i in 0..50u64 {
        let h = r.random_range(32..=256);
        let w = r.random_range(32..=256);
        let levels = r.random_range(1..=5);
        let img = uniform(&[1, 3, h, w], 10_000 + i).cast::<f32>();
        let (pyr, (oh, ow)) = decompose_any(&img, levels).map_err(|e| e.to_string())?;
        let back = reconstruct_crop(&pyr, oh, ow).map_err(|e| e.to_string())?;
        let err = back.max_abs_diff(&img).map_err(|e| e.to_string())?;
        ensure!(err <= 1e-6, "image {i} ({h}x{w}, L={levels}): max error {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("50 images, worst max|err| {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn orthonormal(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let a = Matrix::from_fn(rows, cols, |_, _| r.random::<f64>() - 0.5);
    svd(&a).unwrap().u.leading_cols(cols)
}

fn tucker_regime() -> Outcome {
    let mut r = rng(77);
    let (mut worst_err, mut worst_iter) = (0.0f64, 0);
    for i in 0..20u64 {
        let dims: [usize; 3] = std::array::from_fn(|_| r.random_range(3..=16));
        let ranks: [usize; 3] = std::array::from_fn(|m| r.random_range(1..=dims[m].min(5)));
        let core = uniform(&ranks, 500 + i).map(|v| v - 0.5);
        let factors = [0, 1, 2].map(|m| orthonormal(dims[m], ranks[m], 600 + 3 * i + m as u64));
        let t = tucker_reconstruct(&TuckerDecomp { core, factors }).map_err(|e| e.to_string())?;
        let cfg = TuckerConfig {
            ranks: Ranks::Explicit(ranks),
            tol: 1e-4,
            max_iter: 100,
            seed: i,
        };
        let res = hooi(&t, &cfg).map_err(|e| e.to_string())?;
        ensure!(
            res.error() < 1e-4 && res.iterations <= 100,
            "tensor {i} {dims:?} rank {ranks:?}: error {:e} after {} iterations",
            res.error(),
            res.iterations
        );
        worst_err = worst_err.max(res.error());
        worst_iter = worst_iter.max(res.iterations);
    }
    Ok(format!(
        "20 tensors, worst error {worst_err:.2e}, at most {worst_iter} iterations"
    ))
}

// ---------------------------------------------------------------- 3

const GRAD_TOL: f64 = 1e-3;
const OP_STEP: f64 = 1e-6;
const TOY_STEPS: [f64; 2] = [1e-4, 1e-6];

fn project(t: &mut Tape<f64>, v: Var, seed: u64) -> lpdh_core::Result<Var> {
    let w = t.constant(signed(t.value(v).shape(), seed ^ 0xabcdef))?;
    let p = t.mul(v, w)?;
    t.sum(p)
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> lpdh_core::Result<Var>>;

fn op_cases() -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let s = [2, 3, 4, 5];
    let away = |seed| signed(&s, seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 });
    vec![
        (
            "add",
            vec![signed(&s, 1), signed(&[1], 2)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![signed(&s, 3), signed(&s, 4)],
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![signed(&s, 5), signed(&s, 6)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        ("scale", vec![signed(&s, 7)], Box::new(|t, v| t.scale(v[0], -1.7))),
        (
            "add_scalar",
            vec![signed(&s, 8)],
            Box::new(|t, v| t.add_scalar(v[0], 0.3)),
        ),
        ("square", vec![signed(&s, 9)], Box::new(|t, v| t.square(v[0]))),
        ("tanh", vec![signed(&s, 10).scale(2.0)], Box::new(|t, v| t.tanh(v[0]))),
        (
            "sqrt",
            vec![uniform(&s, 11).map(|x| x + 0.05)],
            Box::new(|t, v| t.sqrt(v[0])),
        ),
        ("leaky_relu", vec![away(12)], Box::new(|t, v| t.leaky_relu(v[0], 0.2))),
        ("relu", vec![away(13)], Box::new(|t, v| t.relu(v[0]))),
        (
            "clamp",
            vec![signed(&s, 14).scale(1.5)],
            Box::new(|t, v| t.clamp(v[0], -0.9995, 0.9995)),
        ),
        (
            "sum",
            vec![signed(&s, 15)],
            Box::new(|t, v| {
                let x = t.sum(v[0])?;
                t.square(x)
            }),
        ),
        (
            "mean",
            vec![signed(&s, 16)],
            Box::new(|t, v| {
                let x = t.mean(v[0])?;
                t.tanh(x)
            }),
        ),
        (
            "conv2d stride 1",
            vec![signed(&[2, 3, 6, 7], 17), signed(&[4, 3, 3, 3], 18), signed(&[4], 19)],
            Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1)),
        ),
        (
            "conv2d stride 2",
            vec![signed(&[1, 3, 8, 9], 20), signed(&[4, 3, 3, 3], 21)],
            Box::new(|t, v| t.conv2d(v[0], v[1], None, 2, 1)),
        ),
        (
            "concat",
            vec![signed(&[1, 2, 3, 3], 22), signed(&[1, 4, 3, 3], 23)],
            Box::new(|t, v| t.concat(&[v[0], v[1]], 1)),
        ),
        (
            "narrow",
            vec![signed(&[2, 5, 3, 3], 24)],
            Box::new(|t, v| t.narrow(v[0], 1, 1, 3)),
        ),
        (
            "crop",
            vec![signed(&[1, 3, 6, 7], 25)],
            Box::new(|t, v| t.crop(v[0], 4, 5)),
        ),
        (
            "upsample_bilinear",
            vec![signed(&[2, 2, 3, 5], 26)],
            Box::new(|t, v| t.upsample_bilinear(v[0], 9, 10)),
        ),
        (
            "charbonnier",
            vec![signed(&[1, 3, 4, 4], 27), signed(&[1, 3, 4, 4], 28)],
            Box::new(|t, v| charbonnier(t, v[0], v[1], 1e-3)),
        ),
    ]
}

fn toy_model(seed: u64) -> DehazeModel<f64> {
    let mut m = DehazeModel::<f64>::new(ModelConfig {
        terms: 3,
        bottom_depth: 2,
        bottom_channels: 4,
        k_depth: 2,
        k_channels: 4,
        tucker_enabled: false,
        seed,
        ..Default::default()
    })
    .unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for p in m.params_mut() {
        let scale = (3.0 / (p.len().max(1) as f64).sqrt()).min(0.5);
        for v in p.data_mut() {
            *v += 0.5 * scale * (2.0 * r.random::<f64>() - 1.0);
        }
    }
    m
}

fn toy_report(seed: u64) -> lpdh_core::Result<Report> {
    let model = toy_model(seed);
    let named = model.named_params();
    let n_bottom = named.iter().filter(|(n, _)| n.starts_with("bottom.")).count();
    let params: Vec<Tensor<f64>> = named.into_iter().map(|(_, t)| t.clone()).collect();
    let img = uniform(&[1, 3, 16, 16], 100 + seed);
    let target = uniform(&[1, 3, 16, 16], 200 + seed);
    let mut pick = rng(300 + seed);
    let mask: Vec<Vec<bool>> = params
        .iter()
        .map(|p| {
            let keep = (40.0 / p.len() as f64).min(1.0);
            (0..p.len()).map(|_| pick.random::<f64>() < keep).collect()
        })
        .collect();
    let run = |h: f64| {
        check_subset(
            &params,
            h,
            |i, j| mask[i][j],
            |t, v| {
                let bound = Bound {
                    bottom: v[..n_bottom].to_vec(),
                    k_net: v[n_bottom..].to_vec(),
                };
                let out = model.forward(t, &bound, &img, Mode::Train, None)?;
                let tgt = t.constant(target.clone())?;
                charbonnier(t, out.fused, tgt, 1e-3)
            },
        )
    };
    let (coarse, fine) = (run(TOY_STEPS[0])?, run(TOY_STEPS[1])?);
    let coords = coarse
        .coords
        .into_iter()
        .zip(fine.coords)
        .map(|(a, b)| if a.rel_err() <= b.rel_err() { a } else { b })
        .collect();
    Ok(Report { coords })
}

fn gradient_fidelity() -> Outcome {
    let mut worst_op = 0.0f64;
    let cases = op_cases();
    let n_ops = cases.len();
    for (i, (name, inputs, op)) in cases.into_iter().enumerate() {
        let r = check(&inputs, OP_STEP, |t, v| {
            let y = op(t, v)?;
            project(t, y, i as u64)
        })
        .map_err(|e| e.to_string())?;
        ensure!(
            r.max_rel_err() <= GRAD_TOL,
            "{name}: relative error {:.3e}",
            r.max_rel_err()
        );
        worst_op = worst_op.max(r.max_rel_err());
    }
    let mut worst_toy = 0.0f64;
    let mut coords = 0;
    for seed in 0..10 {
        let r = toy_report(seed).map_err(|e| e.to_string())?;
        ensure!(
            r.max_rel_err() <= GRAD_TOL,
            "toy model seed {seed}: relative error {:.3e}",
            r.max_rel_err()
        );
        worst_toy = worst_toy.max(r.max_rel_err());
        coords += r.coords.len();
    }
    Ok(format!(
        "{n_ops} ops worst {worst_op:.2e}; toy model 10 seeds, {coords} coordinates, worst {worst_toy:.2e}"
    ))
}

// ---------------------------------------------------------------- 4

fn identity_closure() -> Outcome {
    let mut worst = 0.0f32;
    for seed in 0..10u64 {
        let terms = 2 + seed as usize % 4;
        let mut model = DehazeModel::<f32>::new(ModelConfig {
            terms,
            tucker_enabled: false,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        model.bottom = BottomBranch::Identity;
        let (h, w) = (37 + 9 * seed as usize, 61 - 2 * seed as usize);
        let img = uniform(&[1, 3, h, w], 900 + seed).cast::<f32>();
        let out = model.dehaze(&img).map_err(|e| e.to_string())?;
        let err = out.max_abs_diff(&img).map_err(|e| e.to_string())?;
        ensure!(err <= 1e-6, "seed {seed} (n={terms}, {h}x{w}): max error {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("10 images, worst max|err| {worst:.2e}"))
}

// ---------------------------------------------------------------- 5

fn loss_values() -> Outcome {
    let mut tape = Tape::<f32>::new();
    let x = tape
        .constant(Tensor::full([1, 3, 8, 8], 0.25))
        .map_err(|e| e.to_string())?;
    let y = tape
        .constant(Tensor::full([1, 3, 8, 8], 3.25))
        .map_err(|e| e.to_string())?;
    let zero = charbonnier(&mut tape, x, x, 1e-3).map_err(|e| e.to_string())?;
    let five = charbonnier(&mut tape, y, x, 4.0).map_err(|e| e.to_string())?;
    let zero = tape.value(zero).data()[0] as f64;
    let five = tape.value(five).data()[0] as f64;
    ensure!((zero - 1e-3).abs() <= 1e-7, "x=0 gives {zero}");
    ensure!((five - 5.0).abs() <= 1e-7, "|x|=3, eps=4 gives {five}");

    let mut w = Tensor::<f64>::scalar(0.0);
    let mut state = AdamState::new([vec![1]]);
    let hp = AdamHyper {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    for _ in 0..100 {
        let mut t = Tape::new();
        let v = t.param(w.clone()).map_err(|e| e.to_string())?;
        let d = t.add_scalar(v, -3.0).map_err(|e| e.to_string())?;
        let sq = t.square(d).map_err(|e| e.to_string())?;
        let l = t.sum(sq).map_err(|e| e.to_string())?;
        let g = t.backward(l).map_err(|e| e.to_string())?.get(v).unwrap().clone();
        adam_step(&mut [&mut w], &[g], &["w".into()], &mut state, hp).map_err(|e| e.to_string())?;
    }
    let gap = (w.data()[0] - 3.0).abs();
    ensure!(gap < 0.1, "Adam ends at w = {}", w.data()[0]);
    Ok(format!(
        "charbonnier {zero:.9} / {five:.7}; Adam |w-3| = {gap:.2e} after 100 steps"
    ))
}

// ---------------------------------------------------------------- 6, 7, 9

fn lpdh(work: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lpdh"))
        .current_dir(work)
        .args(args)
        .output()
        .map_err(|e| format!("spawn lpdh: {e}"))?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    ensure!(
        out.status.success(),
        "lpdh {} exited with {}: {}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(stdout)
}

struct EvalSummary {
    psnr_out: f64,
    ssim_out: f64,
    psnr_hazy: f64,
    ssim_hazy: f64,
    rows: usize,
    header: String,
}

fn read_eval(path: &Path) -> Result<EvalSummary, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let lines: Vec<&str> = text.lines().collect();
    let mean = lines
        .iter()
        .find(|l| l.starts_with("mean,"))
        .ok_or_else(|| format!("{}: no mean row", path.display()))?;
    let v: Vec<f64> = mean.split(',').skip(1).map(|s| s.parse().unwrap_or(f64::NAN)).collect();
    ensure!(v.len() == 4, "{}: malformed mean row", path.display());
    Ok(EvalSummary {
        psnr_out: v[0],
        ssim_out: v[1],
        psnr_hazy: v[2],
        ssim_hazy: v[3],
        rows: lines.len() - 2,
        header: lines[0].to_string(),
    })
}

fn read_curve(path: &Path) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.rsplit(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format!("{}: bad row `{l}`", path.display()))
        })
        .collect()
}

/// Strict-decrease violations of the `window`-step moving average over the
/// first `span` steps.
fn moving_average_violations(curve: &[f64], window: usize, span: usize) -> usize {
    let span = span.min(curve.len());
    let avgs: Vec<f64> = (window..=span)
        .map(|end| curve[end - window..end].iter().sum::<f64>() / window as f64)
        .collect();
    avgs.windows(2).filter(|p| p[1] >= p[0]).count()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().expect("temp dir");
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn s(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn synth(&self, dir: &str, count: usize) -> Result<(), String> {
        let count = count.to_string();
        lpdh(
            &self.root,
            &[
                "synth",
                "--seed",
                "1",
                "--count",
                &count,
                "--size",
                "64",
                "--out-dir",
                dir,
            ],
        )?;
        Ok(())
    }

    fn train(&self, data: &str, tag: &str, extra: &[&str]) -> Result<Vec<f64>, String> {
        let ckpt = format!("{tag}.ckpt");
        let mut args = vec!["train", "--data", data, "--steps", "500", "--seed", "1", "--out", &ckpt];
        args.extend_from_slice(extra);
        lpdh(&self.root, &args)?;
        read_curve(&self.root.join(format!("{tag}.loss.csv")))
    }

    /// Train on the 8-pair set with `extra` flags and evaluate on it.
    fn train_eval(&self, tag: &str, extra: &[&str]) -> Result<(Vec<f64>, EvalSummary), String> {
        let curve = self.train("data", tag, extra)?;
        let report = format!("{tag}.eval.csv");
        lpdh(
            &self.root,
            &[
                "eval",
                "--data",
                "data",
                "--ckpt",
                &format!("{tag}.ckpt"),
                "--out",
                &report,
            ],
        )?;
        Ok((curve, read_eval(&self.root.join(report))?))
    }
}

fn learning_signal(ws: &Workspace) -> Outcome {
    ws.synth("data", 8)?;
    let (curve, eval) = ws.train_eval("baseline", &[])?;
    ensure!(curve.len() == 500, "loss curve has {} rows", curve.len());
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    let uplift = eval.psnr_out - eval.psnr_hazy;
    ensure!(
        last <= 0.5 * first,
        "loss {first:.4} -> {last:.4} (ratio {:.3})",
        last / first
    );
    ensure!(uplift >= 3.0, "PSNR uplift {uplift:.2} dB");

    ws.synth("single", 1)?;
    let one = ws.train("single", "overfit", &[])?;
    let (o_first, o_last) = (one[0], one[one.len() - 1]);
    let rises = moving_average_violations(&one, 50, 300);
    ensure!(
        o_last <= 0.5 * o_first,
        "one-pair overfit loss {o_first:.4} -> {o_last:.4}"
    );
    ensure!(
        rises <= 2,
        "one-pair overfit: 50-step moving average rose {rises} times in 300 steps"
    );
    Ok(format!(
        "loss {first:.4} -> {last:.4} (x{:.3}); PSNR {:.2} vs hazy {:.2} (+{uplift:.2} dB); SSIM {:.3} vs {:.3}; \
         one-pair overfit {o_first:.4} -> {o_last:.4} with {rises} moving-average rises",
        last / first,
        eval.psnr_out,
        eval.psnr_hazy,
        eval.ssim_out,
        eval.ssim_hazy
    ))
}

fn ablations(ws: &Workspace) -> Outcome {
    if !ws.root.join("data").exists() {
        ws.synth("data", 8)?;
    }
    let baseline = match read_eval(&ws.root.join("baseline.eval.csv")) {
        Ok(b) => b,
        Err(_) => ws.train_eval("baseline", &[])?.1,
    };
    let variants: [(&str, &[&str]); 5] = [
        ("tucker-off", &["--tucker", "off"]),
        ("single-unet", &["--single-unet"]),
        ("terms3", &["--terms", "3"]),
        ("terms5", &["--terms", "5"]),
        ("terms6", &["--terms", "6"]),
    ];
    let mut lines = vec![format!(
        "baseline psnr {:.2} ssim {:.3}",
        baseline.psnr_out, baseline.ssim_out
    )];
    for (tag, flags) in variants {
        let (_, e) = ws.train_eval(tag, flags)?;
        ensure!(e.header == baseline.header, "{tag}: CSV header `{}`", e.header);
        ensure!(e.rows == baseline.rows, "{tag}: {} rows vs {}", e.rows, baseline.rows);
        ensure!(e.psnr_out.is_finite(), "{tag}: non-finite PSNR");
        let d = e.psnr_out - baseline.psnr_out;
        lines.push(format!(
            "{tag} psnr {:.2} ({}{:.2}) ssim {:.3}",
            e.psnr_out,
            if d >= 0.0 { "+" } else { "" },
            d,
            e.ssim_out
        ));
    }
    Ok(lines.join("; "))
}

const BENCH_STAGES: [&str; 7] = [
    "decompose_ms",
    "bottom_net_ms",
    "tucker_ms",
    "k_net_ms",
    "modulate_ms",
    "reconstruct_ms",
    "total_ms",
];

fn four_k_bench(ws: &Workspace) -> Outcome {
    lpdh(&ws.root, &["bench", "--iters", "3", "--json", &ws.s("bench.json")])?;
    let text = fs::read_to_string(ws.root.join("bench.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure!(
        v["width"] == 3840 && v["height"] == 2160,
        "benchmarked {}x{}",
        v["width"],
        v["height"]
    );
    let mut parts = Vec::new();
    for key in BENCH_STAGES {
        let ms = v[key].as_f64().ok_or_else(|| format!("missing stage {key}"))?;
        ensure!(ms.is_finite() && ms >= 0.0, "{key} = {ms}");
        parts.push(format!("{} {:.0} ms", key.trim_end_matches("_ms"), ms));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- 8

fn brute_psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let diffs: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let sse: f64 = diffs.iter().map(|d| d * d).sum();
    10.0 * (diffs.len() as f64 / sse).log10()
}

#[allow(clippy::needless_range_loop)]
fn scalar_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (_, c, h, w) = a.dims4().unwrap();
    let grey =
        |t: &Tensor<f64>, y: usize, x: usize| (0..c).map(|k| t.data()[(k * h + y) * w + x]).sum::<f64>() / c as f64;
    let mut kern = [[0.0f64; 11]; 11];
    for (i, row) in kern.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / 4.5).exp();
        }
    }
    let total: f64 = kern.iter().flatten().sum();
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut n = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let win = |f: &dyn Fn(usize, usize) -> f64| {
                let mut s = 0.0;
                for i in 0..11 {
                    for j in 0..11 {
                        s += kern[i][j] / total * f(y0 + i, x0 + j);
                    }
                }
                s
            };
            let ma = win(&|y, x| grey(a, y, x));
            let mb = win(&|y, x| grey(b, y, x));
            let va = win(&|y, x| (grey(a, y, x) - ma).powi(2));
            let vb = win(&|y, x| (grey(b, y, x) - mb).powi(2));
            let cov = win(&|y, x| (grey(a, y, x) - ma) * (grey(b, y, x) - mb));
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    acc / n as f64
}

fn metric_oracles() -> Outcome {
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for seed in 0..10u64 {
        let shape = [1, 3, 23 + seed as usize, 31];
        let a = uniform(&shape, seed);
        let noise = gaussian(&shape, seed + 1000, 0.03 + 0.02 * (seed % 4) as f64);
        let b = a.add(&noise).unwrap().map(|v| v.clamp(0.0, 1.0));
        let p = psnr(&a, &b, 1.0).map_err(|e| e.to_string())?;
        let s = ssim(&a, &b).map_err(|e| e.to_string())?;
        let (ep, es) = ((p - brute_psnr(&a, &b)).abs(), (s - scalar_ssim(&a, &b)).abs());
        ensure!(ep <= 1e-9, "pair {seed}: PSNR off by {ep:e} dB");
        ensure!(es <= 1e-4, "pair {seed}: SSIM off by {es:e}");
        dp = dp.max(ep);
        ds = ds.max(es);
    }
    Ok(format!("10 pairs, PSNR max diff {dp:.2e} dB, SSIM max diff {ds:.2e}"))
}

// ---------------------------------------------------------------- 10

fn haze_sanity() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let sources = [DepthSource::Ramp, DepthSource::Radial, DepthSource::Noise];
    for seed in 0..20u64 {
        let clean = procedural_scene::<f64>(seed, 27, 33).map_err(|e| e.to_string())?;
        let pair = synthesize(clean.clone(), seed, &sources[seed as usize % 3]).map_err(|e| e.to_string())?;
        let t = transmission(&pair.params.depth, pair.params.beta).map_err(|e| e.to_string())?;
        let back = recover_clean(&pair.hazy, pair.params.a, &t, 0.05).map_err(|e| e.to_string())?;
        for (&r, &c) in back.data().iter().zip(clean.data()) {
            if !r.is_nan() {
                worst = worst.max((r - c).abs());
                checked += 1;
            }
        }
    }
    ensure!(checked > 0, "no pixel had t >= 0.05");
    ensure!(worst <= 1e-6, "inversion error {worst:e}");
    let (mut a_lo, mut a_hi, mut b_lo, mut b_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in 0..10_000u64 {
        let (a, b) = sample_scalars(s);
        (a_lo, a_hi, b_lo, b_hi) = (a_lo.min(a), a_hi.max(a), b_lo.min(b), b_hi.max(b));
    }
    ensure!(
        a_lo >= AIRLIGHT_RANGE.0 && a_hi <= AIRLIGHT_RANGE.1,
        "A drawn in [{a_lo}, {a_hi}]"
    );
    ensure!(
        b_lo >= BETA_RANGE.0 && b_hi <= BETA_RANGE.1,
        "beta drawn in [{b_lo}, {b_hi}]"
    );
    Ok(format!(
        "inversion max err {worst:.2e} over {checked} values; A in [{a_lo:.4}, {a_hi:.4}], beta in [{b_lo:.4}, {b_hi:.4}]"
    ))
}

// ----------------------------------------------------------------

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let took = start.elapsed();
    let (ok, detail) = match outcome {
        Ok(d) if took <= budget => (true, d),
        Ok(d) => (false, format!("{d}; exceeded {budget:?} budget")),
        Err(e) => (false, e),
    };
    println!(
        "criterion {id:>2} {:<4} {name}: {detail} [{:.1}s]",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    ok
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let ws = Workspace::new();
    let min = |m: u64| Duration::from_secs(60 * m);
    let sec = Duration::from_secs;
    let results = [
        run(1, "pyramid perfect reconstruction", sec(10), pyramid_reconstruction),
        run(2, "tucker solver regime", sec(30), tucker_regime),
        run(3, "gradient fidelity", min(2), gradient_fidelity),
        run(4, "identity closure", sec(10), identity_closure),
        run(5, "loss values", sec(5), loss_values),
        run(6, "desk-scale learning signal", min(15), || learning_signal(&ws)),
        run(7, "ablation switchboard", min(45), || ablations(&ws)),
        run(8, "metric oracles", sec(10), metric_oracles),
        run(9, "4K completion benchmark", min(5), || four_k_bench(&ws)),
        run(10, "haze model sanity", sec(10), haze_sanity),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
