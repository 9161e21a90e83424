use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use lpdh_core::bench;
use lpdh_core::checkpoint;
use lpdh_core::hazesynth::{self, procedural_scene, DepthSource};
use lpdh_core::imageio::{read_depth_map, read_image, read_planar, write_image, write_planar};
use lpdh_core::metrics;
use lpdh_core::network::{DehazeModel, ModelConfig, StageTimes};
use lpdh_core::pyramid::{self, Pyramid};
use lpdh_core::training::{self, loss_curve_csv, Pair, TrainConfig};
use lpdh_core::tucker::{self, Ranks, TuckerConfig};
use lpdh_core::{Error, Result, Tensor};

use crate::args::*;
use crate::data::{self, list_images, list_pairs, manifest_line, read_pair, MANIFEST, MANIFEST_HEADER};
use crate::manifest::Recorder;

pub fn dispatch(cmd: &Command, rec: &mut Recorder) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, rec),
        Command::Decompose(a) => decompose(a, rec),
        Command::Reconstruct(a) => reconstruct(a, rec),
        Command::Tucker(a) => tucker_cmd(a, rec),
        Command::Train(a) => train(a, rec),
        Command::Dehaze(a) => dehaze(a, rec),
        Command::Eval(a) => eval(a, rec),
        Command::Bench(a) => bench_cmd(a, rec),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str, rec: &mut Recorder) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    rec.output(path)
}

fn save_image(path: &Path, img: &Tensor<f32>, rec: &mut Recorder) -> Result<()> {
    write_image(path, img)?;
    rec.output(path)
}

fn load_image(path: &Path, rec: &mut Recorder) -> Result<Tensor<f32>> {
    let img = read_image(path)?;
    rec.input(path)?;
    Ok(img)
}

fn depth_source(spec: &str, rec: &mut Recorder) -> Result<DepthSource> {
    Ok(match spec {
        "ramp" => DepthSource::Ramp,
        "radial" => DepthSource::Radial,
        "noise" => DepthSource::Noise,
        path => {
            let p = Path::new(path);
            let map = read_depth_map(p)?;
            rec.input(p)?;
            DepthSource::Map(map)
        }
    })
}

fn synth(a: &SynthArgs, rec: &mut Recorder) -> Result<()> {
    if a.count == 0 {
        return Err(Error::Contract("--count must be >= 1".into()));
    }
    if a.size == 0 {
        return Err(Error::Contract("--size must be >= 1".into()));
    }
    let depth = depth_source(&a.depth, rec)?;
    let cleans = match &a.clean_dir {
        Some(dir) => Some(list_images(dir)?),
        None => None,
    };
    mkdir(&a.out_dir)?;
    rec.lap("setup");
    let mut lines = vec![MANIFEST_HEADER.to_string()];
    for i in 0..a.count {
        let seed = a.seed.wrapping_add(i as u64);
        let clean = match &cleans {
            Some(list) => load_image(&list[i % list.len()], rec)?,
            None => procedural_scene::<f32>(seed, a.size, a.size)?,
        };
        let pair = hazesynth::synthesize(clean, seed, &depth)?;
        let (hazy_name, clean_name) = (format!("{i:04}_hazy.ppm"), format!("{i:04}_clean.ppm"));
        save_image(&a.out_dir.join(&hazy_name), &pair.hazy, rec)?;
        save_image(&a.out_dir.join(&clean_name), &pair.clean, rec)?;
        lines.push(manifest_line(&hazy_name, &clean_name, &pair.params));
    }
    lines.push(String::new());
    write_text(&a.out_dir.join(MANIFEST), &lines.join("\n"), rec)?;
    rec.lap("synthesize");
    println!("wrote {} pairs to {}", a.count, a.out_dir.display());
    Ok(())
}

const PYRAMID_META: &str = "pyramid.txt";

fn band_name(i: usize) -> String {
    format!("band{i}")
}

fn decompose(a: &DecomposeArgs, rec: &mut Recorder) -> Result<()> {
    let img = load_image(&a.input, rec)?;
    rec.lap("read");
    let (pyr, (h, w)) = pyramid::decompose_any(&img, a.levels)?;
    rec.lap("decompose");
    mkdir(&a.out_dir)?;
    for (i, band) in pyr.high_bands.iter().enumerate() {
        let view = band.map(|v| v + 0.5);
        save_image(&a.out_dir.join(format!("{}.ppm", band_name(i))), &view, rec)?;
        let side = a.out_dir.join(format!("{}.f32", band_name(i)));
        write_planar(&side, band)?;
        rec.output(&side)?;
    }
    save_image(&a.out_dir.join("low.ppm"), &pyr.low_band, rec)?;
    let side = a.out_dir.join("low.f32");
    write_planar(&side, &pyr.low_band)?;
    rec.output(&side)?;
    let meta = format!(
        "levels {}\nheight {h}\nwidth {w}\nbands {}\nhigh band images are offset by +0.5; .f32 files are lossless\n",
        a.levels,
        (0..a.levels).map(band_name).collect::<Vec<_>>().join(",")
    );
    write_text(&a.out_dir.join(PYRAMID_META), &meta, rec)?;
    rec.lap("write");
    println!(
        "{} high bands + low band ({:?}) in {}",
        a.levels,
        pyr.low_band.shape(),
        a.out_dir.display()
    );
    Ok(())
}

fn meta_value(text: &str, key: &str, path: &Path) -> Result<usize> {
    text.lines()
        .filter_map(|l| l.split_once(' '))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: missing `{key}`", path.display())))
}

fn read_side(path: PathBuf, rec: &mut Recorder) -> Result<Tensor<f32>> {
    let t = read_planar(&path)?;
    rec.input(&path)?;
    Ok(t)
}

fn reconstruct(a: &ReconstructArgs, rec: &mut Recorder) -> Result<()> {
    let meta_path = a.dir.join(PYRAMID_META);
    let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let levels = meta_value(&meta, "levels", &meta_path)?;
    let h = meta_value(&meta, "height", &meta_path)?;
    let w = meta_value(&meta, "width", &meta_path)?;
    let high_bands = (0..levels)
        .map(|i| read_side(a.dir.join(format!("{}.f32", band_name(i))), rec))
        .collect::<Result<Vec<_>>>()?;
    let low_band = read_side(a.dir.join("low.f32"), rec)?;
    rec.lap("read");
    let img = pyramid::reconstruct_crop(&Pyramid { high_bands, low_band }, h, w)?;
    rec.lap("reconstruct");
    save_image(&a.out, &img, rec)?;
    rec.lap("write");
    println!("reconstructed {h}x{w} image to {}", a.out.display());
    Ok(())
}

fn tucker_cmd(a: &TuckerArgs, rec: &mut Recorder) -> Result<()> {
    let img = load_image(&a.input, rec)?;
    rec.lap("read");
    let ranks = match &a.ranks {
        Some(r) if r.len() == 3 => Ranks::Explicit([r[0], r[1], r[2]]),
        Some(r) => {
            return Err(Error::Contract(format!(
                "--ranks takes 3 comma-separated values, got {}",
                r.len()
            )))
        }
        None => Ranks::Fraction(a.rank_fraction),
    };
    let cfg = TuckerConfig {
        ranks,
        tol: a.tol,
        max_iter: a.max_iter,
        seed: a.seed,
    };
    let hwc = tucker::nchw_item_to_hwc(&img, 0)?;
    let result = tucker::hooi(&hwc, &cfg)?;
    let out: Tensor<f32> = tucker::hwc_to_nchw(&tucker::reconstruct(&result.decomp)?)?;
    rec.lap("hooi");
    save_image(&a.out, &out, rec)?;
    rec.lap("write");
    let r = result.decomp.ranks();
    println!("ranks (h, w, c): {} {} {}", r[0], r[1], r[2]);
    println!("iterations: {}", result.iterations);
    println!("relative error: {:.6e}", result.error());
    Ok(())
}

fn model_config(m: &ModelArgs, seed: u64) -> ModelConfig {
    ModelConfig {
        terms: m.terms,
        bottom_depth: m.bottom_depth,
        bottom_channels: m.bottom_channels,
        k_depth: m.k_depth,
        k_channels: m.k_channels,
        k_out_channels: m.k_out_channels,
        single_unet: m.single_unet,
        explicit_factorials: m.explicit_factorials,
        tucker_enabled: m.tucker.is_on(),
        tucker: TuckerConfig::default(),
        seed,
    }
}

fn load_dataset(dir: &Path, rec: &mut Recorder) -> Result<Vec<Pair<f32>>> {
    list_pairs(dir)?
        .into_iter()
        .map(|p| {
            let (hazy, clean) = read_pair(&p)?;
            rec.input(&p.hazy)?;
            rec.input(&p.clean)?;
            Ok(Pair {
                name: p.name,
                hazy,
                clean,
            })
        })
        .collect()
}

fn train(a: &TrainArgs, rec: &mut Recorder) -> Result<()> {
    let pairs = load_dataset(&a.data, rec)?;
    let mut model = DehazeModel::<f32>::new(model_config(&a.model, a.seed))?;
    let cfg = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        steps: a.steps,
        tucker_lambda: a.tucker_lambda,
        tucker_on_k: a.tucker_on_k,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        checkpoint_path: Some(a.out.clone()),
        ..Default::default()
    };
    rec.lap("load");
    info!(
        "training {} parameters on {} pairs for {} steps",
        model.param_count(),
        pairs.len(),
        a.steps
    );
    let report = training::train(&mut model, &pairs, &cfg)?;
    rec.lap("train");
    checkpoint::save(&a.out, &model, Some(&report.optimizer))?;
    rec.output(&a.out)?;
    let csv_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_text(&csv_path, &loss_curve_csv(&report.curve), rec)?;
    rec.lap("save");
    let (first, last) = (report.curve[0], report.curve[report.curve.len() - 1]);
    println!(
        "loss {:.6} -> {:.6} over {} steps; checkpoint {}; curve {}",
        first.total,
        last.total,
        report.curve.len(),
        a.out.display(),
        csv_path.display()
    );
    Ok(())
}

fn load_model(path: &Path, tucker: Option<Switch>, rec: &mut Recorder) -> Result<DehazeModel<f32>> {
    let mut model = checkpoint::load::<f32>(path)?.model;
    rec.input(path)?;
    if let Some(t) = tucker {
        model.config.tucker_enabled = t.is_on();
    }
    Ok(model)
}

fn record_stages(rec: &mut Recorder, st: &StageTimes) {
    rec.stage("decompose", st.decompose);
    rec.stage("bottom_net", st.bottom_net);
    rec.stage("tucker", st.tucker);
    rec.stage("k_net", st.k_net);
    rec.stage("modulate", st.modulate);
    rec.stage("reconstruct", st.reconstruct);
}

fn dehaze(a: &DehazeArgs, rec: &mut Recorder) -> Result<()> {
    let model = load_model(&a.ckpt, a.tucker, rec)?;
    let img = load_image(&a.input, rec)?;
    rec.lap("load");
    let mut st = StageTimes::default();
    let out = model.dehaze_timed(&img, Some(&mut st))?;
    record_stages(rec, &st);
    rec.reset_lap();
    save_image(&a.out, &out, rec)?;
    rec.lap("write");
    println!("dehazed {} -> {}", a.input.display(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs, rec: &mut Recorder) -> Result<()> {
    let model = load_model(&a.ckpt, a.tucker, rec)?;
    let items = list_pairs(&a.data)?
        .into_iter()
        .map(|p| {
            let loaded = data::read_pair(&p);
            if loaded.is_ok() {
                rec.input(&p.hazy)?;
                rec.input(&p.clean)?;
            }
            Ok((p.name, loaded))
        })
        .collect::<Result<Vec<_>>>()?;
    rec.lap("load");
    let report = metrics::eval_dataset(&model, items)?;
    rec.lap("evaluate");
    let csv = report.to_csv();
    match &a.out {
        Some(path) => {
            write_text(path, &csv, rec)?;
            let m = report.mean();
            println!(
                "{} pairs: psnr {:.3} dB (hazy {:.3}), ssim {:.4} (hazy {:.4}); report {}",
                report.rows.len(),
                m.psnr_out,
                m.psnr_hazy,
                m.ssim_out,
                m.ssim_hazy,
                path.display()
            );
        }
        None => print!("{csv}"),
    }
    if report.skipped > 0 {
        eprintln!("skipped {} unreadable pairs", report.skipped);
    }
    Ok(())
}

fn bench_cmd(a: &BenchArgs, rec: &mut Recorder) -> Result<()> {
    let model = match &a.ckpt {
        Some(p) => load_model(p, None, rec)?,
        None => DehazeModel::<f32>::new(ModelConfig {
            seed: a.seed,
            ..Default::default()
        })?,
    };
    let img = match &a.input {
        Some(p) => load_image(p, rec)?,
        None => procedural_scene::<f32>(a.seed, a.height, a.width)?,
    };
    rec.lap("setup");
    let report = bench::run(&model, &img, a.iters)?;
    record_stages(rec, &report.stages);
    rec.stage("total", report.total);
    rec.reset_lap();
    print!("{}", report.render());
    if let Some(path) = &a.json {
        let rows: serde_json::Map<String, serde_json::Value> = report
            .rows()
            .into_iter()
            .map(|(n, d)| (format!("{n}_ms"), (d.as_secs_f64() * 1e3).into()))
            .chain([
                ("width".to_string(), report.width.into()),
                ("height".to_string(), report.height.into()),
                ("iters".to_string(), report.iters.into()),
                (
                    "megapixels_per_second".to_string(),
                    report.megapixels_per_second().into(),
                ),
            ])
            .collect();
        let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::Format(e.to_string()))?;
        write_text(path, &text, rec)?;
    }
    Ok(())
}
