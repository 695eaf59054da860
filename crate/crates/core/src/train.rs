//! Training loop: random LR patches, Charbonnier loss, two-group Adam with
//! cosine annealing and an initial flow-freeze window.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{freeze_flow, AdamConfig, Graph, OptimizerState, Var, DEFAULT_CHARBONNIER_EPS};
use crate::data::{synth_clip_with, Clip, DegradationSpec, SynthKind, SynthParams};
use crate::error::{Result, VsrError};
use crate::flow::{Direction, FlowProvider};
use crate::net::layers::Ctx;
use crate::net::{BranchFlows, SequenceFlows, VsrNet};
use crate::tensor::Tensor;
use crate::weights::ModelWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub freeze_flow_steps: u64,
    pub batch: usize,
    /// LR patch side.
    pub patch: usize,
    /// Frames per training sample.
    pub seq_len: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub log_every: u64,
    pub charbonnier_eps: f64,
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn toy() -> Self {
        TrainConfig {
            steps: 500,
            freeze_flow_steps: 50,
            batch: 2,
            patch: 16,
            seq_len: 5,
            seed: 0,
            adam: AdamConfig {
                lr_main: 2e-3,
                lr_flow: 5e-4,
                ..AdamConfig::default()
            },
            log_every: 50,
            charbonnier_eps: DEFAULT_CHARBONNIER_EPS,
        }
    }

    /// The published recipe: 600K iterations, flow frozen for the first 5K,
    /// batch 8 of 64×64 LR patches over 30 frames.
    pub fn paper() -> Self {
        TrainConfig {
            steps: 600_000,
            freeze_flow_steps: 5_000,
            batch: 8,
            patch: 64,
            seq_len: 30,
            seed: 0,
            adam: AdamConfig::default(),
            log_every: 100,
            charbonnier_eps: DEFAULT_CHARBONNIER_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.patch == 0 || self.seq_len == 0 {
            return Err(VsrError::Config("batch, patch and seq_len must be positive".into()));
        }
        if !(self.charbonnier_eps > 0.0) {
            return Err(VsrError::Config("charbonnier_eps must be positive".into()));
        }
        Ok(())
    }
}

/// A training clip: HR frames, their degraded LR frames and LR flows.
#[derive(Debug, Clone)]
pub struct TrainClip {
    pub hr: Clip,
    pub lr: Clip,
    pub flows: SequenceFlows,
}

/// LR inputs, HR targets and flows for one step (batch stacked on dim 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub lr: Vec<Tensor>,
    pub hr: Vec<Tensor>,
    pub flows: SequenceFlows,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub clips: Vec<TrainClip>,
    pub scale: usize,
}

fn crop(t: &Tensor, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, th, tw) = t.dims4()?;
    if y + h > th || x + w > tw {
        return Err(VsrError::dim(format!("crop {h}×{w} at ({y},{x}) outside {th}×{tw}")));
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in t.data().chunks_exact(th * tw) {
        for r in y..y + h {
            out.extend_from_slice(&plane[r * tw + x..r * tw + x + w]);
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

impl TrainingSet {
    /// Degrades HR clips and estimates their LR flows once.
    pub fn from_clips(
        hr: Vec<Clip>,
        degradation: &DegradationSpec,
        provider: &dyn FlowProvider,
        net: &VsrNet,
    ) -> Result<Self> {
        if hr.is_empty() {
            return Err(VsrError::Usage("training needs at least one clip".into()));
        }
        let clips = hr
            .into_iter()
            .map(|hr| {
                let lr = hr.map_frames(|f| degradation.apply(f))?;
                let flows = net.compute_flows(&lr.frames, provider)?;
                Ok(TrainClip { hr, lr, flows })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            clips,
            scale: degradation.scale,
        })
    }

    /// `count` synthetic clips of `frames` frames at `hr_size`², seeded from `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn synthetic(
        kind: SynthKind,
        count: usize,
        frames: usize,
        hr_size: usize,
        seed: u64,
        degradation: &DegradationSpec,
        provider: &dyn FlowProvider,
        net: &VsrNet,
    ) -> Result<Self> {
        let params = SynthParams {
            height: hr_size,
            width: hr_size,
            velocity: None,
        };
        let hr = (0..count as u64)
            .map(|k| synth_clip_with(kind, frames, seed.wrapping_mul(1_000_003).wrapping_add(k), params))
            .collect::<Result<Vec<_>>>()?;
        Self::from_clips(hr, degradation, provider, net)
    }

    /// One training sample: a random clip, temporal window and LR patch.
    /// Flows whose predecessor falls outside the window are zeroed, as at
    /// the clip boundary.
    fn sample(
        &self,
        rng: &mut ChaCha8Rng,
        patch: usize,
        seq_len: usize,
    ) -> Result<(Vec<Tensor>, Vec<Tensor>, SequenceFlows)> {
        let clip = &self.clips[rng.random_range(0..self.clips.len())];
        let len = clip.lr.len();
        let t = seq_len.min(len);
        let start = rng.random_range(0..=len - t);
        let (lh, lw) = (clip.lr.height(), clip.lr.width());
        let (ph, pw) = (patch.min(lh), patch.min(lw));
        let y = rng.random_range(0..=lh - ph);
        let x = rng.random_range(0..=lw - pw);
        let s = self.scale;
        let mut lr = Vec::with_capacity(t);
        let mut hr = Vec::with_capacity(t);
        for i in start..start + t {
            lr.push(crop(&clip.lr.frames[i], y, x, ph, pw)?);
            hr.push(crop(&clip.hr.frames[i], y * s, x * s, ph * s, pw * s)?);
        }
        let window = |d: Direction, b: &BranchFlows| -> Result<BranchFlows> {
            let pick = |p: usize, src: &[Tensor]| -> Result<Vec<Tensor>> {
                (0..t)
                    .map(|k| match d.predecessor(k, p, t) {
                        Some(_) => crop(&src[start + k], y, x, ph, pw),
                        None => Ok(Tensor::zeros(&[1, 2, ph, pw])),
                    })
                    .collect()
            };
            Ok(BranchFlows {
                first: pick(1, &b.first)?,
                second: pick(2, &b.second)?,
            })
        };
        let flows = SequenceFlows {
            forward: window(Direction::Forward, &clip.flows.forward)?,
            backward: window(Direction::Backward, &clip.flows.backward)?,
        };
        Ok((lr, hr, flows))
    }

    /// A batch drawn from `batch_seed`; all samples use the same window length.
    pub fn sample_batch(&self, batch_seed: u64, batch: usize, patch: usize, seq_len: usize) -> Result<Batch> {
        let min_len = self.clips.iter().map(|c| c.lr.len()).min().unwrap_or(1);
        let min_h = self
            .clips
            .iter()
            .map(|c| c.lr.height().min(c.lr.width()))
            .min()
            .unwrap_or(1);
        let (t, p) = (seq_len.min(min_len), patch.min(min_h));
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
        let samples = (0..batch)
            .map(|_| self.sample(&mut rng, p, t))
            .collect::<Result<Vec<_>>>()?;
        let stack = |get: &dyn Fn(usize) -> Tensor| Tensor::stack_batch(&(0..batch).map(get).collect::<Vec<_>>());
        let per_frame = |f: &dyn Fn(usize, usize) -> Tensor| -> Result<Vec<Tensor>> {
            (0..t).map(|i| stack(&|b| f(b, i))).collect()
        };
        Ok(Batch {
            lr: per_frame(&|b, i| samples[b].0[i].clone())?,
            hr: per_frame(&|b, i| samples[b].1[i].clone())?,
            flows: SequenceFlows {
                forward: BranchFlows {
                    first: per_frame(&|b, i| samples[b].2.forward.first[i].clone())?,
                    second: per_frame(&|b, i| samples[b].2.forward.second[i].clone())?,
                },
                backward: BranchFlows {
                    first: per_frame(&|b, i| samples[b].2.backward.first[i].clone())?,
                    second: per_frame(&|b, i| samples[b].2.backward.second[i].clone())?,
                },
            },
        })
    }
}

/// Seed of the batch used at `step`.
pub fn batch_seed(seed: u64, step: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng.random()
}

/// Mean Charbonnier loss over all frames of `batch`, recorded on `graph`.
fn batch_loss<'g>(net: &VsrNet, ctx: &Ctx<'g, f32>, batch: &Batch, eps: f32) -> Result<Var<f32>> {
    let frames: Vec<Var<f32>> = batch.lr.iter().map(|f| ctx.graph.constant(f.clone())).collect();
    let (out, _) = net.forward_graph(ctx, &frames, &batch.flows)?;
    let mut total: Option<Var<f32>> = None;
    for (o, hr) in out.iter().zip(&batch.hr) {
        let target = ctx.graph.constant(hr.clone());
        let l = ctx.graph.charbonnier(o, &target, eps)?;
        total = Some(match total {
            None => l,
            Some(t) => ctx.graph.add(&t, &l)?,
        });
    }
    let total = total.ok_or_else(|| VsrError::Usage("empty batch".into()))?;
    ctx.graph.scale(&total, 1.0 / out.len() as f32)
}

/// Loss of `weights` on `batch` without recording gradients.
pub fn evaluate_loss(net: &VsrNet, weights: &ModelWeights, batch: &Batch, eps: f64) -> Result<f64> {
    let graph = Graph::no_grad();
    let ctx = Ctx::new(&graph, weights);
    Ok(batch_loss(net, &ctx, batch, eps as f32)?.value().item()? as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `(step, loss)` every `log_every` steps and at the last step.
    pub logged: Vec<(u64, f64)>,
    /// Loss on a fixed validation batch before the first and after the last step.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: u64,
}

/// Trains `weights` in place. `on_log` receives every logged `(step, loss, lr_main)`.
pub fn train(
    net: &VsrNet,
    weights: &mut ModelWeights,
    set: &TrainingSet,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(u64, f64, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    net.check_weights(weights)?;
    let eps = cfg.charbonnier_eps as f32;
    let val_seed = batch_seed(cfg.seed ^ 0x5eed_0f7a11, u64::MAX);
    let val = set.sample_batch(val_seed, cfg.batch, cfg.patch, cfg.seq_len)?;
    let initial_loss = evaluate_loss(net, weights, &val, cfg.charbonnier_eps)?;
    let mut opt = OptimizerState::new(cfg.adam);
    let mut logged = Vec::new();
    for step in 0..cfg.steps {
        let seed = batch_seed(cfg.seed, step);
        let abort = |e: VsrError| match e {
            VsrError::NonFinite(m) => VsrError::NonFinite(format!("{m} at step {step} (batch seed {seed})")),
            other => other,
        };
        let batch = set.sample_batch(seed, cfg.batch, cfg.patch, cfg.seq_len)?;
        let graph = Graph::new();
        let (loss_value, grads) = {
            let ctx = Ctx::new(&graph, weights);
            let loss = batch_loss(net, &ctx, &batch, eps).map_err(abort)?;
            let v = loss.value().item()? as f64;
            if !v.is_finite() {
                return Err(VsrError::NonFinite(format!("loss at step {step} (batch seed {seed})")));
            }
            (v, graph.backward(&loss).map_err(abort)?)
        };
        let lrs = opt.scheduled_lrs(cfg.steps);
        opt.adam_step(weights, &grads, lrs, freeze_flow(step, cfg.freeze_flow_steps))?;
        if !weights.all_finite() {
            return Err(VsrError::NonFinite(format!(
                "weights after step {step} (batch seed {seed})"
            )));
        }
        if (cfg.log_every > 0 && step % cfg.log_every == 0) || step + 1 == cfg.steps {
            logged.push((step, loss_value));
            on_log(step, loss_value, lrs.main);
        }
    }
    let final_loss = evaluate_loss(net, weights, &val, cfg.charbonnier_eps)?;
    Ok(TrainReport {
        logged,
        initial_loss,
        final_loss,
        steps: cfg.steps,
    })
}
