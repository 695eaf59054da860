//! Flow-guided deformable alignment.
//!
//! Predecessor features are first warped with their flows. The warped
//! features, the current frame's features and the flows drive a small
//! convolution stack that predicts a residue on top of the flow for every
//! deformable (group, tap) offset, plus a sigmoid modulation mask. The
//! deformable convolution then samples the *unwarped* predecessors.
//!
//! For second order the DCN runs over `cat(f_prev1, f_prev2)`; groups
//! `0..G/2` cover `f_prev1` and take the first half of the offset and mask
//! channels, groups `G/2..G` cover `f_prev2` and take the second half.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Result, VsrError};
use crate::flow::FlowField;
use crate::kernels::{self, deform};
use crate::net::config::AlignmentMode;
use crate::net::layers::{init_weights, Ctx, Init, LayerSpec, LEAKY_GAIN};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Tensor};
use crate::weights::ModelWeights;

/// Kernel taps of the 3×3 deformable convolution.
pub const DCN_TAPS: usize = 9;

/// Offsets and masks for one deformable convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentBundle<T: Scalar = f32> {
    /// `N × (P·G·9·2) × H × W`, flow already added.
    pub offsets: Tensor<T>,
    /// `N × (P·G·9) × H × W`, in `(0, 1)`.
    pub masks: Tensor<T>,
    /// Number of predecessors `P` (the order).
    pub order: usize,
    /// Deformable groups `G` per predecessor.
    pub groups_per_flow: usize,
}

impl<T: Scalar> AlignmentBundle<T> {
    /// Offsets belonging to predecessor `p` (1-based).
    pub fn offsets_for(&self, p: usize) -> Result<Tensor<T>> {
        let len = self.groups_per_flow * DCN_TAPS * 2;
        self.offsets.narrow_channels((p - 1) * len, len)
    }

    /// Masks belonging to predecessor `p` (1-based).
    pub fn masks_for(&self, p: usize) -> Result<Tensor<T>> {
        let len = self.groups_per_flow * DCN_TAPS;
        self.masks.narrow_channels((p - 1) * len, len)
    }
}

/// Turns raw offset/mask predictions into a bundle: block `p` of the
/// offsets receives flow `p` in every (group, tap) slot, masks go through
/// the sigmoid.
pub fn split_offsets<T: Scalar>(
    raw_offsets: &Tensor<T>,
    raw_masks: &Tensor<T>,
    flows: &[&FlowField<T>],
) -> Result<AlignmentBundle<T>> {
    let order = flows.len();
    let (_, mc, _, _) = raw_masks.dims4()?;
    let (_, oc, _, _) = raw_offsets.dims4()?;
    if order == 0 || mc % (order * DCN_TAPS) != 0 || oc != 2 * mc {
        return Err(VsrError::dim(format!(
            "{oc} offset / {mc} mask channels do not split over {order} flow(s) × {DCN_TAPS} taps"
        )));
    }
    let groups_per_flow = mc / (order * DCN_TAPS);
    let flow_tensors: Vec<&Tensor<T>> = flows.iter().map(|f| f.tensor()).collect();
    Ok(AlignmentBundle {
        offsets: deform::add_flow_to_offsets(raw_offsets, &flow_tensors, groups_per_flow, DCN_TAPS)?,
        masks: kernels::sigmoid(raw_masks),
        order,
        groups_per_flow,
    })
}

/// Alignment block of one propagation branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGuidedAlignment {
    pub prefix: String,
    pub channels: usize,
    pub order: usize,
    pub groups_per_flow: usize,
    pub mode: AlignmentMode,
}

impl FlowGuidedAlignment {
    pub fn new(
        prefix: impl Into<String>,
        channels: usize,
        order: usize,
        groups_per_flow: usize,
        mode: AlignmentMode,
    ) -> Self {
        FlowGuidedAlignment {
            prefix: prefix.into(),
            channels,
            order,
            groups_per_flow,
            mode,
        }
    }

    fn name(&self, layer: &str) -> String {
        format!("{}.{layer}", self.prefix)
    }

    /// Channels entering the offset/mask stack: current features, warped
    /// predecessors and their flows.
    pub fn condition_channels(&self) -> usize {
        (self.order + 1) * self.channels + 2 * self.order
    }

    pub fn offset_channels(&self) -> usize {
        self.order * self.groups_per_flow * DCN_TAPS * 2
    }

    pub fn mask_channels(&self) -> usize {
        self.order * self.groups_per_flow * DCN_TAPS
    }

    fn dcn_spec(&self) -> ConvSpec {
        ConvSpec::same(self.order * self.channels, self.channels, 3)
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let c = self.channels;
        let leaky = Init::Uniform { gain: LEAKY_GAIN };
        match self.mode {
            AlignmentMode::FlowGuidedDcn => vec![
                LayerSpec::new(
                    self.name("conv1"),
                    ConvSpec::same(self.condition_channels(), c, 3),
                    leaky,
                ),
                LayerSpec::new(self.name("conv2"), ConvSpec::same(c, c, 3), leaky),
                LayerSpec::new(self.name("conv3"), ConvSpec::same(c, c, 3), leaky),
                LayerSpec::new(
                    self.name("offset"),
                    ConvSpec::same(c, self.offset_channels(), 3),
                    Init::Zero,
                ),
                LayerSpec::new(
                    self.name("mask"),
                    ConvSpec::same(c, self.mask_channels(), 3),
                    Init::Zero,
                ),
                LayerSpec::new(self.name("dcn"), self.dcn_spec(), Init::Uniform { gain: 1.0 }),
            ],
            AlignmentMode::FlowWarpOnly | AlignmentMode::None if self.order == 2 => vec![LayerSpec::new(
                self.name("fuse"),
                ConvSpec::same(2 * c, c, 3),
                Init::Uniform { gain: 1.0 },
            )],
            AlignmentMode::FlowWarpOnly | AlignmentMode::None => Vec::new(),
        }
    }

    pub fn init_weights<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelWeights<T>> {
        init_weights(&self.layers(), rng)
    }

    fn check_inputs<T: Scalar>(&self, current: &Var<T>, prevs: &[&Var<T>], flows: &[&Var<T>]) -> Result<()> {
        if prevs.len() != self.order || flows.len() != self.order {
            return Err(VsrError::dim(format!(
                "order-{} alignment given {} features and {} flows",
                self.order,
                prevs.len(),
                flows.len()
            )));
        }
        let (n, c, h, w) = current.value().dims4()?;
        if c != self.channels {
            return Err(VsrError::dim(format!(
                "alignment expects {} channels, got {c}",
                self.channels
            )));
        }
        for p in prevs {
            if p.shape() != current.shape() {
                return Err(VsrError::dim(format!(
                    "predecessor shape {:?} differs from current {:?}",
                    p.shape(),
                    current.shape()
                )));
            }
        }
        for f in flows {
            if f.shape() != [n, 2, h, w] {
                return Err(VsrError::dim(format!(
                    "flow shape {:?}, expected {:?}",
                    f.shape(),
                    [n, 2, h, w]
                )));
            }
        }
        Ok(())
    }

    /// Offsets (flow plus predicted residue) and masks.
    pub fn bundle<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        current: &Var<T>,
        prevs: &[&Var<T>],
        flows: &[&Var<T>],
    ) -> Result<(Var<T>, Var<T>)> {
        self.check_inputs(current, prevs, flows)?;
        let g = ctx.graph;
        let warped = prevs
            .iter()
            .zip(flows)
            .map(|(f, s)| g.warp(f, s))
            .collect::<Result<Vec<_>>>()?;
        let mut cond: Vec<&Var<T>> = vec![current];
        cond.extend(warped.iter());
        cond.extend(flows.iter().copied());
        let x = g.cat_channels(&cond)?;
        let c = self.channels;
        let h = ctx.lrelu(&ctx.conv(
            &self.name("conv1"),
            &x,
            &ConvSpec::same(self.condition_channels(), c, 3),
        )?)?;
        let h = ctx.lrelu(&ctx.conv(&self.name("conv2"), &h, &ConvSpec::same(c, c, 3))?)?;
        let h = ctx.lrelu(&ctx.conv(&self.name("conv3"), &h, &ConvSpec::same(c, c, 3))?)?;
        let raw_o = ctx.conv(&self.name("offset"), &h, &ConvSpec::same(c, self.offset_channels(), 3))?;
        let raw_m = ctx.conv(&self.name("mask"), &h, &ConvSpec::same(c, self.mask_channels(), 3))?;
        let offsets = g.add_flow_to_offsets(&raw_o, flows, self.groups_per_flow, DCN_TAPS)?;
        let masks = g.sigmoid(&raw_m)?;
        Ok((offsets, masks))
    }

    /// Deformable convolution over the unwarped, concatenated predecessors.
    pub fn apply_dcn<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        prevs: &[&Var<T>],
        offsets: &Var<T>,
        masks: &Var<T>,
    ) -> Result<Var<T>> {
        let g = ctx.graph;
        let x = if prevs.len() == 1 {
            prevs[0].clone()
        } else {
            g.cat_channels(prevs)?
        };
        let spec = self.dcn_spec();
        let w = ctx.param(&format!("{}.weight", self.name("dcn")))?;
        let b = ctx.param(&format!("{}.bias", self.name("dcn")))?;
        g.deform_conv2d(
            &x,
            &w,
            Some(&b),
            offsets,
            masks,
            self.order * self.groups_per_flow,
            &spec,
        )
    }

    /// Aligned feature for the current timestep.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        current: &Var<T>,
        prevs: &[&Var<T>],
        flows: &[&Var<T>],
    ) -> Result<Var<T>> {
        self.check_inputs(current, prevs, flows)?;
        let g = ctx.graph;
        let aligned = match self.mode {
            AlignmentMode::FlowGuidedDcn => {
                let (offsets, masks) = self.bundle(ctx, current, prevs, flows)?;
                return self.apply_dcn(ctx, prevs, &offsets, &masks);
            }
            AlignmentMode::FlowWarpOnly => prevs
                .iter()
                .zip(flows)
                .map(|(f, s)| g.warp(f, s))
                .collect::<Result<Vec<_>>>()?,
            AlignmentMode::None => prevs.iter().map(|&f| f.clone()).collect(),
        };
        match aligned.as_slice() {
            [single] => Ok(single.clone()),
            many => {
                let refs: Vec<&Var<T>> = many.iter().collect();
                let x = g.cat_channels(&refs)?;
                ctx.conv(
                    &self.name("fuse"),
                    &x,
                    &ConvSpec::same(2 * self.channels, self.channels, 3),
                )
            }
        }
    }
}

fn run_no_grad<T: Scalar>(
    module: &FlowGuidedAlignment,
    weights: &ModelWeights<T>,
    current: &Tensor<T>,
    prevs: &[&Tensor<T>],
    flows: &[&FlowField<T>],
) -> Result<Tensor<T>> {
    let graph = Graph::no_grad();
    let ctx = Ctx::new(&graph, weights);
    let cur = graph.constant(current.clone());
    let pv: Vec<Var<T>> = prevs.iter().map(|t| graph.constant((*t).clone())).collect();
    let fv: Vec<Var<T>> = flows.iter().map(|f| graph.constant(f.tensor().clone())).collect();
    let pr: Vec<&Var<T>> = pv.iter().collect();
    let fr: Vec<&Var<T>> = fv.iter().collect();
    Ok(module.forward(&ctx, &cur, &pr, &fr)?.into_tensor())
}

/// Second-order alignment of `f_prev1`, `f_prev2` to the current frame.
#[allow(clippy::too_many_arguments)]
pub fn align_second_order<T: Scalar>(
    module: &FlowGuidedAlignment,
    weights: &ModelWeights<T>,
    current: &Tensor<T>,
    f_prev1: &Tensor<T>,
    f_prev2: &Tensor<T>,
    s1: &FlowField<T>,
    s2: &FlowField<T>,
) -> Result<Tensor<T>> {
    if module.order != 2 {
        return Err(VsrError::Usage("align_second_order on a first-order module".into()));
    }
    run_no_grad(module, weights, current, &[f_prev1, f_prev2], &[s1, s2])
}

/// First-order alignment of `f_prev1` to the current frame.
pub fn align_first_order<T: Scalar>(
    module: &FlowGuidedAlignment,
    weights: &ModelWeights<T>,
    current: &Tensor<T>,
    f_prev1: &Tensor<T>,
    s1: &FlowField<T>,
) -> Result<Tensor<T>> {
    if module.order != 1 {
        return Err(VsrError::Usage("align_first_order on a second-order module".into()));
    }
    run_no_grad(module, weights, current, &[f_prev1], &[s1])
}
