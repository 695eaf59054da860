//! Feature extraction, grid propagation and reconstruction.

use std::cell::Cell;

use rand::Rng;

use crate::align::FlowGuidedAlignment;
use crate::autodiff::{Graph, Var};
use crate::error::{Result, VsrError};
use crate::flow::{flow_pairs, Direction, FlowPairs, FlowProvider};
use crate::net::config::NetConfig;
use crate::net::layers::{init_weights, residual_stack_layers, Ctx, Init, LayerSpec, LEAKY_GAIN};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Tensor};
use crate::weights::ModelWeights;

/// Flows for one propagation direction: `first[i]` points from frame `i`
/// to its predecessor, `second[i]` to the one before that.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchFlows<T: Scalar = f32> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> BranchFlows<T> {
    pub fn from_pairs(pairs: &FlowPairs) -> Self {
        BranchFlows {
            first: pairs.first.iter().map(|f| f.tensor().cast()).collect(),
            second: pairs.second.iter().map(|f| f.tensor().cast()).collect(),
        }
    }

    pub fn zeros(len: usize, n: usize, h: usize, w: usize) -> Self {
        BranchFlows {
            first: vec![Tensor::zeros(&[n, 2, h, w]); len],
            second: vec![Tensor::zeros(&[n, 2, h, w]); len],
        }
    }

    fn get(&self, i: usize, p: usize) -> &Tensor<T> {
        if p == 1 {
            &self.first[i]
        } else {
            &self.second[i]
        }
    }
}

/// Flows for both directions of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFlows<T: Scalar = f32> {
    pub forward: BranchFlows<T>,
    pub backward: BranchFlows<T>,
}

impl<T: Scalar> SequenceFlows<T> {
    pub fn zeros(len: usize, n: usize, h: usize, w: usize) -> Self {
        SequenceFlows {
            forward: BranchFlows::zeros(len, n, h, w),
            backward: BranchFlows::zeros(len, n, h, w),
        }
    }

    pub fn for_direction(&self, d: Direction) -> &BranchFlows<T> {
        match d {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    pub fn len(&self) -> usize {
        self.forward.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same flows with the time axis reversed and directions swapped.
    pub fn reversed(&self) -> Self {
        let rev = |b: &BranchFlows<T>| BranchFlows {
            first: b.first.iter().rev().cloned().collect(),
            second: b.second.iter().rev().cloned().collect(),
        };
        SequenceFlows {
            forward: rev(&self.backward),
            backward: rev(&self.forward),
        }
    }

    pub fn cast<U: Scalar>(&self) -> SequenceFlows<U> {
        let c = |b: &BranchFlows<T>| BranchFlows {
            first: b.first.iter().map(Tensor::cast).collect(),
            second: b.second.iter().map(Tensor::cast).collect(),
        };
        SequenceFlows {
            forward: c(&self.forward),
            backward: c(&self.backward),
        }
    }
}

/// Per-branch feature sequences while propagation runs.
///
/// `previous` holds `f^{j-1}` (starting with `g`) and `current` the
/// features of branch `j` computed so far. Completed branches are never
/// touched again.
pub struct PropagationState<T: Scalar> {
    pub branch: usize,
    pub direction: Direction,
    pub previous: Vec<Var<T>>,
    pub current: Vec<Option<Var<T>>>,
    /// How many predecessor features were read at distance 1 and 2.
    pub reads: [Cell<usize>; 2],
}

impl<T: Scalar> PropagationState<T> {
    pub fn new(g: Vec<Var<T>>) -> Self {
        let len = g.len();
        PropagationState {
            branch: 0,
            direction: Direction::Backward,
            previous: g,
            current: vec![None; len],
            reads: [Cell::new(0), Cell::new(0)],
        }
    }

    pub fn second_order_reads(&self) -> usize {
        self.reads[1].get()
    }

    pub fn first_order_reads(&self) -> usize {
        self.reads[0].get()
    }

    fn finish_branch(&mut self) -> Result<()> {
        let done = std::mem::take(&mut self.current)
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| VsrError::Usage(format!("branch {} left frames unprocessed", self.branch)))?;
        self.current = vec![None; done.len()];
        self.previous = done;
        Ok(())
    }
}

/// Counters reported by a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardStats {
    pub first_order_reads: usize,
    pub second_order_reads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VsrNet {
    config: NetConfig,
}

fn conv_spec(layers: &[LayerSpec], name: &str) -> ConvSpec {
    layers
        .iter()
        .find(|l| l.name == name)
        .map(|l| l.conv)
        .unwrap_or_else(|| panic!("layer {name} not in spec list"))
}

const FRAME_CHANNELS: usize = 3;

impl VsrNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        Ok(VsrNet { config })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn upsample_stages(&self) -> usize {
        self.config.upscale.trailing_zeros() as usize
    }

    pub fn alignment(&self, j: usize) -> FlowGuidedAlignment {
        let c = &self.config;
        FlowGuidedAlignment::new(
            format!("branch{j}.align"),
            c.channels,
            c.order,
            c.groups_per_predecessor(),
            c.alignment_mode,
        )
    }

    fn flow_refine_layers(&self) -> Vec<LayerSpec> {
        let c = self.config.channels;
        vec![
            LayerSpec::new(
                "flow.refine.conv1",
                ConvSpec::same(FRAME_CHANNELS + 2, c, 3),
                Init::Uniform { gain: LEAKY_GAIN },
            ),
            LayerSpec::new("flow.refine.conv2", ConvSpec::same(c, 2, 3), Init::Zero),
        ]
    }

    /// Every convolution of the network, in initialization order.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let c = &self.config;
        let ch = c.channels;
        let mut layers = residual_stack_layers("extract", FRAME_CHANNELS, ch, c.extraction_blocks);
        if c.flow_refine {
            layers.extend(self.flow_refine_layers());
        }
        for j in 1..=c.num_branches {
            layers.extend(self.alignment(j).layers());
            layers.extend(residual_stack_layers(
                &format!("branch{j}.resblocks"),
                2 * ch,
                ch,
                c.branch_blocks,
            ));
        }
        for s in 1..=self.upsample_stages() {
            layers.push(LayerSpec::new(
                format!("recon.up{s}"),
                ConvSpec::same(ch, 4 * ch, 3),
                Init::Uniform { gain: LEAKY_GAIN },
            ));
        }
        layers.push(LayerSpec::new(
            "recon.last",
            ConvSpec::same(ch, FRAME_CHANNELS, 3),
            Init::Uniform { gain: 1.0 },
        ));
        layers
    }

    pub fn init_weights<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelWeights<T>> {
        init_weights(&self.layer_specs(), rng)
    }

    /// All parameters present and zero.
    pub fn zero_weights<T: Scalar>(&self) -> ModelWeights<T> {
        let mut w = ModelWeights::new();
        for l in self.layer_specs() {
            w.insert(l.weight_name(), Tensor::zeros(&l.conv.weight_shape()))
                .expect("unique layer names");
            if l.conv.has_bias {
                w.insert(l.bias_name(), Tensor::zeros(&[l.conv.out_channels]))
                    .expect("unique layer names");
            }
        }
        w
    }

    /// Checks that `weights` holds exactly this network's tensors with the
    /// expected shapes; the error lists every offending name.
    pub fn check_weights<T: Scalar>(&self, weights: &ModelWeights<T>) -> Result<()> {
        let expected = self.zero_weights::<T>();
        let mut problems = Vec::new();
        for (name, t) in expected.iter() {
            match weights.get(name) {
                None => problems.push(format!("{name} (missing)")),
                Some(w) if w.shape() != t.shape() => {
                    problems.push(format!("{name} (shape {:?}, expected {:?})", w.shape(), t.shape()))
                }
                Some(_) => {}
            }
        }
        for name in weights.names() {
            if expected.get(name).is_none() {
                problems.push(format!("{name} (unexpected)"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(VsrError::Incompatible(format!(
                "weights do not match the config: {}",
                problems.join(", ")
            )))
        }
    }

    /// Flows for both directions, estimated on the LR frames.
    pub fn compute_flows(&self, frames: &[Tensor], provider: &dyn FlowProvider) -> Result<SequenceFlows> {
        Ok(SequenceFlows {
            forward: BranchFlows::from_pairs(&flow_pairs(frames, Direction::Forward, provider)?),
            backward: BranchFlows::from_pairs(&flow_pairs(frames, Direction::Backward, provider)?),
        })
    }

    fn check_frames<T: Scalar>(frames: &[Var<T>]) -> Result<(usize, usize, usize)> {
        let first = frames
            .first()
            .ok_or_else(|| VsrError::Usage("the network needs at least one frame".into()))?;
        let (n, c, h, w) = first.value().dims4()?;
        if c != FRAME_CHANNELS {
            return Err(VsrError::dim(format!("frames need {FRAME_CHANNELS} channels, got {c}")));
        }
        for f in frames {
            if f.shape() != first.shape() {
                return Err(VsrError::dim(format!(
                    "frame shape {:?} differs from {:?}",
                    f.shape(),
                    first.shape()
                )));
            }
        }
        Ok((n, h, w))
    }

    /// Per-frame features `g_i`.
    pub fn extract_features<T: Scalar>(&self, ctx: &Ctx<'_, T>, frames: &[Var<T>]) -> Result<Vec<Var<T>>> {
        Self::check_frames(frames)?;
        let c = &self.config;
        frames
            .iter()
            .map(|f| ctx.residual_stack("extract", f, FRAME_CHANNELS, c.channels, c.extraction_blocks))
            .collect()
    }

    /// Graph variables for the flows, with the learned refinement applied
    /// where a predecessor exists. Missing predecessors keep exact zeros.
    fn flow_vars<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        frames: &[Var<T>],
        flows: &BranchFlows<T>,
        direction: Direction,
    ) -> Result<Vec<[Var<T>; 2]>> {
        let len = frames.len();
        let refine = |i: usize, p: usize| -> Result<Var<T>> {
            let s = ctx.graph.constant(flows.get(i, p).clone());
            if !self.config.flow_refine || direction.predecessor(i, p, len).is_none() {
                return Ok(s);
            }
            let layers = self.flow_refine_layers();
            let x = ctx.graph.cat_channels(&[&frames[i], &s])?;
            let h = ctx.lrelu(&ctx.conv(&layers[0].name, &x, &layers[0].conv)?)?;
            let d = ctx.conv(&layers[1].name, &h, &layers[1].conv)?;
            ctx.graph.add(&s, &d)
        };
        (0..len).map(|i| Ok([refine(i, 1)?, refine(i, 2)?])).collect()
    }

    /// Runs branch `j` over the whole clip, in its direction.
    pub fn propagate_branch<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        state: &mut PropagationState<T>,
        j: usize,
        g: &[Var<T>],
        flows: &[[Var<T>; 2]],
    ) -> Result<()> {
        let len = g.len();
        if flows.len() != len || state.previous.len() != len {
            return Err(VsrError::dim(format!(
                "branch {j}: {len} features, {} flows, {} previous-branch features",
                flows.len(),
                state.previous.len()
            )));
        }
        let c = &self.config;
        let direction = c.branch_direction(j);
        state.branch = j;
        state.direction = direction;
        let align = self.alignment(j);
        let zero_feat = ctx.graph.constant(Tensor::zeros(g[0].shape()));
        let stack = format!("branch{j}.resblocks");
        for i in direction.order(len) {
            let mut prevs = Vec::with_capacity(c.order);
            for p in 1..=c.order {
                state.reads[p - 1].set(state.reads[p - 1].get() + 1);
                let feat = match direction.predecessor(i, p, len) {
                    Some(k) => state.current[k]
                        .clone()
                        .ok_or_else(|| VsrError::Usage(format!("branch {j}: frame {k} used before it was computed")))?,
                    None => zero_feat.clone(),
                };
                prevs.push(feat);
            }
            let prev_refs: Vec<&Var<T>> = prevs.iter().collect();
            let flow_refs: Vec<&Var<T>> = flows[i][..c.order].iter().collect();
            let aligned = align.forward(ctx, &g[i], &prev_refs, &flow_refs)?;
            let x = ctx.graph.cat_channels(&[&state.previous[i], &aligned])?;
            let r = ctx.residual_stack(&stack, &x, 2 * c.channels, c.channels, c.branch_blocks)?;
            state.current[i] = Some(ctx.graph.add(&aligned, &r)?);
        }
        state.finish_branch()
    }

    /// HR frames from the final features plus a bilinear global residual.
    pub fn reconstruct<T: Scalar>(&self, ctx: &Ctx<'_, T>, feats: &[Var<T>], frames: &[Var<T>]) -> Result<Vec<Var<T>>> {
        if feats.len() != frames.len() {
            return Err(VsrError::dim(format!(
                "{} feature maps for {} frames",
                feats.len(),
                frames.len()
            )));
        }
        let layers = self.layer_specs();
        let scale = self.config.upscale;
        feats
            .iter()
            .zip(frames)
            .map(|(f, lr)| {
                let mut h = f.clone();
                for s in 1..=self.upsample_stages() {
                    let name = format!("recon.up{s}");
                    h = ctx.conv(&name, &h, &conv_spec(&layers, &name))?;
                    h = ctx.graph.pixel_shuffle(&h, 2)?;
                    h = ctx.lrelu(&h)?;
                }
                let out = ctx.conv("recon.last", &h, &conv_spec(&layers, "recon.last"))?;
                let (_, _, lh, lw) = lr.value().dims4()?;
                let base = ctx.graph.resize_bilinear(lr, lh * scale, lw * scale)?;
                ctx.graph.add(&out, &base)
            })
            .collect()
    }

    /// Full network on graph variables; used for both training and inference.
    pub fn forward_graph<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        frames: &[Var<T>],
        flows: &SequenceFlows<T>,
    ) -> Result<(Vec<Var<T>>, ForwardStats)> {
        let (n, h, w) = Self::check_frames(frames)?;
        if flows.len() != frames.len() {
            return Err(VsrError::dim(format!(
                "{} flow entries for {} frames",
                flows.len(),
                frames.len()
            )));
        }
        for d in [Direction::Forward, Direction::Backward] {
            let b = flows.for_direction(d);
            for t in b.first.iter().chain(&b.second) {
                if t.shape() != [n, 2, h, w] {
                    return Err(VsrError::dim(format!(
                        "{} flow shape {:?}, expected {:?}",
                        d.as_str(),
                        t.shape(),
                        [n, 2, h, w]
                    )));
                }
            }
        }
        let g = self.extract_features(ctx, frames)?;
        let fwd = self.flow_vars(ctx, frames, &flows.forward, Direction::Forward)?;
        let bwd = self.flow_vars(ctx, frames, &flows.backward, Direction::Backward)?;
        let mut state = PropagationState::new(g.clone());
        for j in 1..=self.config.num_branches {
            let f = match self.config.branch_direction(j) {
                Direction::Forward => &fwd,
                Direction::Backward => &bwd,
            };
            self.propagate_branch(ctx, &mut state, j, &g, f)?;
        }
        let stats = ForwardStats {
            first_order_reads: state.first_order_reads(),
            second_order_reads: state.second_order_reads(),
        };
        Ok((self.reconstruct(ctx, &state.previous, frames)?, stats))
    }

    /// Inference with precomputed flows.
    pub fn forward_with_flows<T: Scalar>(
        &self,
        frames: &[Tensor<T>],
        flows: &SequenceFlows<T>,
        weights: &ModelWeights<T>,
    ) -> Result<(Vec<Tensor<T>>, ForwardStats)> {
        let graph = Graph::no_grad();
        let ctx = Ctx::new(&graph, weights);
        let vars: Vec<Var<T>> = frames.iter().map(|f| graph.constant(f.clone())).collect();
        let (out, stats) = self.forward_graph(&ctx, &vars, flows)?;
        Ok((out.into_iter().map(Var::into_tensor).collect(), stats))
    }

    /// Inference: flows from `provider`, then the full network.
    pub fn forward(
        &self,
        frames: &[Tensor],
        weights: &ModelWeights,
        provider: &dyn FlowProvider,
    ) -> Result<Vec<Tensor>> {
        let flows = self.compute_flows(frames, provider)?;
        Ok(self.forward_with_flows(frames, &flows, weights)?.0)
    }
}

/// Number of learnable scalars.
pub fn param_count<T: Scalar>(weights: &ModelWeights<T>) -> usize {
    weights.param_count()
}
