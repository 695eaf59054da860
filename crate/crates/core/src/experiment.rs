//! Toy-scale train-and-evaluate protocol shared by the CLI and the tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::metrics::{psnr, temporal_profile, Convention};
use crate::data::{bicubic_upsample, synth_clip_with, Clip, DegradationSpec, SynthKind, SynthParams};
use crate::error::Result;
use crate::flow::FlowProvider;
use crate::net::{NetConfig, VsrNet};
use crate::train::{train, TrainConfig, TrainReport, TrainingSet};
use crate::weights::ModelWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyExperiment {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub kind: SynthKind,
    /// Training clips in the synthetic pool.
    pub pool: usize,
    pub frames: usize,
    pub hr_size: usize,
    pub degradation: DegradationSpec,
    /// Seed of the held-out evaluation clip; never used for training.
    pub holdout_seed: u64,
    pub holdout_frames: usize,
}

impl ToyExperiment {
    pub fn new(net: NetConfig, train: TrainConfig) -> Self {
        ToyExperiment {
            net,
            train,
            kind: SynthKind::Translate,
            pool: 12,
            frames: 10,
            hr_size: 96,
            degradation: DegradationSpec::bi(4),
            holdout_seed: 0xC0FFEE,
            holdout_frames: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub model_psnr: f64,
    pub bicubic_psnr: f64,
    pub model_consistency: f64,
    pub bicubic_consistency: f64,
    pub output: Clip,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: TrainReport,
    pub weights: ModelWeights,
    pub params: usize,
    pub eval: Evaluation,
}

/// The held-out HR clip of `exp` and its degraded input.
pub fn holdout_clip(exp: &ToyExperiment) -> Result<(Clip, Clip)> {
    let params = SynthParams {
        height: exp.hr_size,
        width: exp.hr_size,
        velocity: None,
    };
    let hr = synth_clip_with(exp.kind, exp.holdout_frames, exp.holdout_seed, params)?;
    let lr = hr.map_frames(|f| exp.degradation.apply(f))?;
    Ok((hr, lr))
}

fn mean_psnr(pred: &Clip, gt: &Clip) -> Result<f64> {
    let mut total = 0.0;
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        total += psnr(p, g, Convention::Y)?;
    }
    Ok(total / gt.len() as f64)
}

/// Y-PSNR and temporal consistency of the model and of per-frame bicubic
/// upsampling on `lr`, against `hr`. Outputs are clamped to `[0, 1]`.
pub fn evaluate(
    net: &VsrNet,
    weights: &ModelWeights,
    hr: &Clip,
    lr: &Clip,
    provider: &dyn FlowProvider,
) -> Result<Evaluation> {
    let scale = net.config().upscale;
    let out = net.forward(&lr.frames, weights, provider)?;
    let output = Clip::new(
        hr.id.clone(),
        out.into_iter().map(|t| t.map(|v| v.clamp(0.0, 1.0))).collect(),
    )?;
    let bicubic = lr.map_frames(|f| Ok(bicubic_upsample(f, scale)?.map(|v| v.clamp(0.0, 1.0))))?;
    let column = hr.width() / 2;
    Ok(Evaluation {
        model_psnr: mean_psnr(&output, hr)?,
        bicubic_psnr: mean_psnr(&bicubic, hr)?,
        model_consistency: temporal_profile(&output, column)?.1,
        bicubic_consistency: temporal_profile(&bicubic, column)?.1,
        output,
    })
}

/// Builds the pool, trains from a seeded init and evaluates on the held-out clip.
pub fn run_toy_experiment(
    exp: &ToyExperiment,
    provider: &dyn FlowProvider,
    on_log: impl FnMut(u64, f64, f64),
) -> Result<ExperimentResult> {
    let net = VsrNet::new(exp.net.clone())?;
    let set = TrainingSet::synthetic(
        exp.kind,
        exp.pool,
        exp.frames,
        exp.hr_size,
        exp.train.seed,
        &exp.degradation,
        provider,
        &net,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(exp.train.seed);
    let mut weights = net.init_weights(&mut rng)?;
    let report = train(&net, &mut weights, &set, &exp.train, on_log)?;
    let (hr, lr) = holdout_clip(exp)?;
    let eval = evaluate(&net, &weights, &hr, &lr, provider)?;
    Ok(ExperimentResult {
        report,
        params: weights.param_count(),
        weights,
        eval,
    })
}
