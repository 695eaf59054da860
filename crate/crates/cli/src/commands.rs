use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vsrpp_core::data::metrics::{evaluate_clip, mean_metrics, temporal_profile, write_metrics_csv, Convention};
use vsrpp_core::data::{load_clip_dir, save_clip_dir, save_png, Clip, DegradationMode, DegradationSpec, SynthKind};
use vsrpp_core::experiment::{run_toy_experiment, ToyExperiment};
use vsrpp_core::flow::{FlowProvider, PyramidalFlow, ZeroFlow};
use vsrpp_core::net::{encode_weights, load_config, load_weights, save_weights, NetConfig, Variant};
use vsrpp_core::train::{train, TrainConfig, TrainingSet};
use vsrpp_core::{Result, VsrError, VsrNet};

use crate::manifest::{blob_hash, RunManifest};
use crate::{AblateArgs, DegradeArgs, EvalArgs, ProfileArgs, RestoreArgs, TrainArgs};

/// Runs `body`, then appends the manifest with the outcome.
fn with_manifest(command: &str, path: &Path, body: impl FnOnce(&mut RunManifest) -> Result<()>) -> Result<()> {
    let mut m = RunManifest::start(command);
    let out = body(&mut m);
    let status = match &out {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("error:{}", e.kind()),
    };
    m.append(path, &status)?;
    out
}

fn provider(name: &str) -> Result<Box<dyn FlowProvider>> {
    match name {
        "pyramidal" => Ok(Box::new(PyramidalFlow::default())),
        "zero" => Ok(Box::new(ZeroFlow)),
        _ => Err(VsrError::Usage(format!(
            "unknown flow provider {name:?} (pyramidal|zero)"
        ))),
    }
}

fn net_config(path: Option<&PathBuf>) -> Result<NetConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(NetConfig::toy()),
    }
}

enum DataSpec {
    Synthetic(SynthKind),
    Dir(PathBuf),
}

fn parse_data(s: &str) -> Result<DataSpec> {
    match s.strip_prefix("synthetic:") {
        Some(kind) => Ok(DataSpec::Synthetic(kind.parse()?)),
        None => Ok(DataSpec::Dir(PathBuf::from(s))),
    }
}

/// A clip directory, or a directory whose subdirectories are clips.
fn load_clips(dir: &Path) -> Result<Vec<Clip>> {
    if let Ok(clip) = load_clip_dir(dir) {
        return Ok(vec![clip]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| VsrError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return load_clip_dir(dir).map(|c| vec![c]);
    }
    subdirs.iter().map(|d| load_clip_dir(d)).collect()
}

pub fn degrade(a: &DegradeArgs, manifest: &Path) -> Result<()> {
    with_manifest("degrade", manifest, |m| {
        let mode: DegradationMode = a.mode.parse()?;
        let spec = DegradationSpec {
            mode,
            scale: a.scale,
            sigma: a.sigma,
        };
        m.config = Some(format!("mode={:?} scale={} sigma={}", mode, a.scale, a.sigma));
        let clip = load_clip_dir(&a.input)?;
        let out = clip.map_frames(|f| spec.apply(f))?;
        save_clip_dir(&out, &a.out)?;
        m.metric("frames", out.len());
        m.metric("lr_height", out.height());
        m.metric("lr_width", out.width());
        println!("degraded {} frames to {}×{}", out.len(), out.height(), out.width());
        Ok(())
    })
}

fn print_paper_recipe(cfg: &TrainConfig) {
    println!("preset=paper (printed only; not run at desk scale)");
    println!("lr_main={:e} lr_flow={:e}", cfg.adam.lr_main, cfg.adam.lr_flow);
    println!("steps={} freeze_flow_steps={}", cfg.steps, cfg.freeze_flow_steps);
    println!("batch={} patch={} seq_len={}", cfg.batch, cfg.patch, cfg.seq_len);
    println!("schedule=cosine loss=charbonnier eps={:e}", cfg.charbonnier_eps);
    eprintln!("warning: the paper recipe needs hundreds of GPU-hours; use --preset toy for desk-scale runs");
}

pub fn train_toy(a: &TrainArgs, manifest: &Path) -> Result<()> {
    with_manifest("train-toy", manifest, |m| {
        let mut cfg = match a.preset.as_str() {
            "toy" => TrainConfig::toy(),
            "paper" => {
                let cfg = TrainConfig::paper();
                print_paper_recipe(&cfg);
                m.config = Some("preset=paper".into());
                return Ok(());
            }
            other => return Err(VsrError::Usage(format!("unknown preset {other:?} (toy|paper)"))),
        };
        let out = a
            .out
            .as_ref()
            .ok_or_else(|| VsrError::Usage("--out is required for training".into()))?;
        cfg.seed = a.seed;
        if let Some(v) = a.steps {
            cfg.steps = v;
        }
        if let Some(v) = a.batch {
            cfg.batch = v;
        }
        if let Some(v) = a.patch {
            cfg.patch = v;
        }
        if let Some(v) = a.seq_len {
            cfg.seq_len = v;
        }
        if let Some(v) = a.lr {
            cfg.adam.lr_flow = v * cfg.adam.lr_flow / cfg.adam.lr_main;
            cfg.adam.lr_main = v;
        }
        if let Some(v) = a.log_every {
            cfg.log_every = v;
        }
        if let Some(v) = a.freeze_steps {
            cfg.freeze_flow_steps = v;
        }
        let net_cfg = net_config(a.config.as_ref())?;
        m.config = Some(format!("{}{cfg:?}", net_cfg.to_config_string()));
        m.seed = Some(cfg.seed);
        let net = VsrNet::new(net_cfg)?;
        let flow = provider(&a.flow)?;
        let degradation = DegradationSpec::bi(net.config().upscale);
        let set = match parse_data(&a.data)? {
            DataSpec::Synthetic(kind) => {
                let base = ToyExperiment::new(net.config().clone(), cfg.clone());
                TrainingSet::synthetic(
                    kind,
                    base.pool,
                    base.frames,
                    base.hr_size,
                    cfg.seed,
                    &degradation,
                    flow.as_ref(),
                    &net,
                )?
            }
            DataSpec::Dir(dir) => TrainingSet::from_clips(load_clips(&dir)?, &degradation, flow.as_ref(), &net)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut weights = net.init_weights(&mut rng)?;
        println!(
            "params={} steps={} lr_main={:e} lr_flow={:e}",
            weights.param_count(),
            cfg.steps,
            cfg.adam.lr_main,
            cfg.adam.lr_flow
        );
        let report = train(&net, &mut weights, &set, &cfg, |step, loss, lr| {
            println!("step={step} loss={loss:.6} lr={lr:.3e}");
        })?;
        save_weights(&weights, out)?;
        let hash = blob_hash(&encode_weights(&weights)?);
        println!(
            "initial_loss={:.6} final_loss={:.6}",
            report.initial_loss, report.final_loss
        );
        println!("weights={} hash={hash}", out.display());
        m.weights_hash = Some(hash);
        m.metric("initial_loss", report.initial_loss);
        m.metric("final_loss", report.final_loss);
        m.metric("params", weights.param_count());
        Ok(())
    })
}

pub fn restore(a: &RestoreArgs, manifest: &Path) -> Result<()> {
    with_manifest("restore", manifest, |m| {
        let net_cfg = net_config(a.config.as_ref())?;
        m.config = Some(net_cfg.to_config_string());
        let net = VsrNet::new(net_cfg)?;
        let weights = load_weights(&a.weights)?;
        net.check_weights(&weights)?;
        m.weights_hash = Some(blob_hash(&encode_weights(&weights)?));
        let clip = load_clip_dir(&a.input)?;
        let flow = provider(&a.flow)?;
        let out = net.forward(&clip.frames, &weights, flow.as_ref())?;
        let out = Clip::new(clip.id.clone(), out)?;
        save_clip_dir(&out, &a.out)?;
        m.metric("frames", out.len());
        println!("restored {} frames to {}×{}", out.len(), out.height(), out.width());
        Ok(())
    })
}

pub fn eval(a: &EvalArgs, manifest: &Path) -> Result<()> {
    with_manifest("eval", manifest, |m| {
        let conv: Convention = a.convention.parse()?;
        m.config = Some(format!("convention={} crop=none", conv.as_str()));
        let pred = load_clip_dir(&a.pred)?;
        let gt = load_clip_dir(&a.gt)?;
        let rows = evaluate_clip(&pred, &gt, conv)?;
        let out = a.out.clone().unwrap_or_else(|| a.pred.join("metrics.csv"));
        write_metrics_csv(&out, &rows, conv)?;
        let (p, s) = mean_metrics(&rows);
        println!(
            "clip={} frames={} psnr={p:.4} ssim={s:.6} convention={}",
            gt.id,
            rows.len(),
            conv.as_str()
        );
        m.metric(
            "psnr",
            if p.is_finite() {
                p.into()
            } else {
                serde_json::Value::from("inf")
            },
        );
        m.metric("ssim", s);
        Ok(())
    })
}

pub fn ablate(a: &AblateArgs, manifest: &Path) -> Result<()> {
    with_manifest("ablate", manifest, |m| {
        let variant: Variant = a.variant.parse()?;
        let kind = match parse_data(&a.data)? {
            DataSpec::Synthetic(k) => k,
            DataSpec::Dir(_) => return Err(VsrError::Usage("ablate runs on synthetic:<kind> data".into())),
        };
        let net_cfg = variant.apply(&net_config(a.config.as_ref())?);
        let mut train_cfg = TrainConfig::toy();
        train_cfg.steps = a.steps;
        train_cfg.seed = a.seed;
        let mut exp = ToyExperiment::new(net_cfg.clone(), train_cfg);
        exp.kind = kind;
        m.config = Some(net_cfg.to_config_string());
        m.seed = Some(a.seed);
        let flow = provider(&a.flow)?;
        let r = run_toy_experiment(&exp, flow.as_ref(), |step, loss, _| {
            println!("step={step} loss={loss:.6}")
        })?;
        std::fs::create_dir_all(&a.out_dir).map_err(|e| VsrError::io(&a.out_dir, e))?;
        save_weights(&r.weights, &a.out_dir.join(format!("variant_{variant}.vsrw")))?;
        m.weights_hash = Some(blob_hash(&encode_weights(&r.weights)?));
        let csv = a.out_dir.join("ablation.csv");
        let fresh = !csv.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv)
            .map_err(|e| VsrError::io(&csv, e))?;
        if fresh {
            writeln!(
                f,
                "variant,params,steps,seed,psnr_y,bicubic_psnr_y,initial_loss,final_loss,paper_reference_psnr"
            )
            .map_err(|e| VsrError::io(&csv, e))?;
        }
        writeln!(
            f,
            "{variant},{},{},{},{:.4},{:.4},{:.6},{:.6},{:.2}",
            r.params,
            a.steps,
            a.seed,
            r.eval.model_psnr,
            r.eval.bicubic_psnr,
            r.report.initial_loss,
            r.report.final_loss,
            variant.reference_psnr()
        )
        .map_err(|e| VsrError::io(&csv, e))?;
        println!(
            "variant={variant} params={} psnr_y={:.4} bicubic_psnr_y={:.4} paper_reference={:.2} (published full-scale REDS4 value, not reproduced here)",
            r.params,
            r.eval.model_psnr,
            r.eval.bicubic_psnr,
            variant.reference_psnr()
        );
        m.metric("params", r.params);
        m.metric("psnr_y", r.eval.model_psnr);
        m.metric("bicubic_psnr_y", r.eval.bicubic_psnr);
        Ok(())
    })
}

pub fn profile(a: &ProfileArgs, manifest: &Path) -> Result<()> {
    with_manifest("profile", manifest, |m| {
        let clip = load_clip_dir(&a.input)?;
        let (img, score) = temporal_profile(&clip, a.column)?;
        save_png(&img, &a.out)?;
        println!("column={} frames={} consistency={score:.6}", a.column, clip.len());
        m.metric("consistency", score);
        Ok(())
    })
}
