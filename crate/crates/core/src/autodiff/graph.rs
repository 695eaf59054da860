use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::error::{Result, VsrError};
use crate::kernels::{self, deform};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Tensor};

/// A value produced on a [`Graph`]. Cloning is cheap.
///
/// `id` is `None` for values that no gradient can flow into (constants,
/// frozen leaves and everything computed from them only).
#[derive(Clone, Debug)]
pub struct Var<T: Scalar = f32> {
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Rc::try_unwrap(self.value).unwrap_or_else(|rc| (*rc).clone())
    }
}

enum Op<T: Scalar> {
    Leaf(String),
    Conv {
        x: Var<T>,
        w: Var<T>,
        b: Option<usize>,
        spec: ConvSpec,
    },
    Deform {
        x: Var<T>,
        w: Var<T>,
        b: Option<usize>,
        off: Var<T>,
        mask: Var<T>,
        groups: usize,
        spec: ConvSpec,
    },
    Warp {
        x: Var<T>,
        flow: Var<T>,
    },
    Sample {
        x: Var<T>,
        coords: Var<T>,
    },
    Shuffle {
        x: Option<usize>,
        r: usize,
    },
    Leaky {
        x: Var<T>,
        slope: T,
    },
    Sigmoid {
        x: Option<usize>,
        out: Rc<Tensor<T>>,
    },
    Add(Option<usize>, Option<usize>),
    Sub(Option<usize>, Option<usize>),
    Mul(Var<T>, Var<T>),
    Scale {
        x: Option<usize>,
        s: T,
    },
    Cat(Vec<(Option<usize>, usize)>),
    Narrow {
        x: Option<usize>,
        start: usize,
        in_shape: Vec<usize>,
    },
    FlowOffsets {
        raw: Option<usize>,
        flows: Vec<Option<usize>>,
        groups_per_flow: usize,
        taps: usize,
    },
    Resize {
        x: Option<usize>,
        in_shape: Vec<usize>,
    },
    Charbonnier {
        pred: Var<T>,
        target: Var<T>,
        eps: T,
    },
    Sum {
        x: Option<usize>,
        shape: Vec<usize>,
    },
}

/// Define-by-run record of executed operations.
///
/// Every operation evaluates eagerly; when at least one input can receive a
/// gradient the operation is appended to the tape together with whatever its
/// backward pass needs. A disabled graph records nothing and keeps no
/// intermediate values alive.
pub struct Graph<T: Scalar = f32> {
    tape: RefCell<Vec<Op<T>>>,
    params: RefCell<HashMap<String, Var<T>>>,
    enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of trainable leaves, keyed by leaf name.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T: Scalar = f32> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, name: String, grad: Tensor<T>) {
        self.map.insert(name, grad);
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: Option<usize>, g: Tensor<T>) -> Result<()> {
    if let Some(i) = id {
        match &mut grads[i] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    /// A recording graph.
    pub fn new() -> Self {
        Graph {
            tape: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            enabled: true,
        }
    }

    /// A graph that evaluates without recording (inference).
    pub fn no_grad() -> Self {
        Graph {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    /// Number of recorded operations, leaves included.
    pub fn len(&self) -> usize {
        self.tape.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<T>) -> usize {
        let mut tape = self.tape.borrow_mut();
        tape.push(op);
        tape.len() - 1
    }

    fn emit(&self, what: &str, value: Tensor<T>, track: bool, op: impl FnOnce() -> Op<T>) -> Result<Var<T>> {
        value.check_finite(what)?;
        let id = (self.enabled && track).then(|| self.push(op()));
        Ok(Var {
            id,
            value: Rc::new(value),
        })
    }

    /// A value no gradient flows into.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    /// Named leaf. Trainable leaves receive an entry in the gradient map;
    /// registering the same name twice returns the first registration.
    pub fn leaf(&self, name: &str, value: Rc<Tensor<T>>, trainable: bool) -> Var<T> {
        if !(trainable && self.enabled) {
            return Var { id: None, value };
        }
        if let Some(v) = self.params.borrow().get(name) {
            return v.clone();
        }
        let id = self.push(Op::Leaf(name.to_string()));
        let var = Var { id: Some(id), value };
        self.params.borrow_mut().insert(name.to_string(), var.clone());
        var
    }

    pub fn conv2d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, spec: &ConvSpec) -> Result<Var<T>> {
        let out = kernels::conv2d(x.value(), w.value(), b.map(|b| b.value()), spec)?;
        let track = x.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.emit("conv2d", out, track, || Op::Conv {
            x: x.clone(),
            w: w.clone(),
            b: b.and_then(|b| b.id),
            spec: *spec,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn deform_conv2d(
        &self,
        x: &Var<T>,
        w: &Var<T>,
        b: Option<&Var<T>>,
        off: &Var<T>,
        mask: &Var<T>,
        groups: usize,
        spec: &ConvSpec,
    ) -> Result<Var<T>> {
        let out = kernels::deform_conv2d(
            x.value(),
            w.value(),
            b.map(|b| b.value()),
            off.value(),
            mask.value(),
            groups,
            spec,
        )?;
        let track = [x, w, off, mask].iter().any(|v| v.requires_grad()) || b.is_some_and(|b| b.requires_grad());
        self.emit("deform_conv2d", out, track, || Op::Deform {
            x: x.clone(),
            w: w.clone(),
            b: b.and_then(|b| b.id),
            off: off.clone(),
            mask: mask.clone(),
            groups,
            spec: *spec,
        })
    }

    pub fn warp(&self, x: &Var<T>, flow: &Var<T>) -> Result<Var<T>> {
        let out = kernels::warp(x.value(), flow.value())?;
        self.emit("warp", out, x.requires_grad() || flow.requires_grad(), || Op::Warp {
            x: x.clone(),
            flow: flow.clone(),
        })
    }

    pub fn bilinear_sample(&self, x: &Var<T>, coords: &Var<T>) -> Result<Var<T>> {
        let out = kernels::bilinear_sample(x.value(), coords.value())?;
        self.emit(
            "bilinear_sample",
            out,
            x.requires_grad() || coords.requires_grad(),
            || Op::Sample {
                x: x.clone(),
                coords: coords.clone(),
            },
        )
    }

    pub fn pixel_shuffle(&self, x: &Var<T>, r: usize) -> Result<Var<T>> {
        let out = kernels::pixel_shuffle(x.value(), r)?;
        self.emit("pixel_shuffle", out, x.requires_grad(), || Op::Shuffle { x: x.id, r })
    }

    pub fn leaky_relu(&self, x: &Var<T>, slope: T) -> Result<Var<T>> {
        let out = kernels::leaky_relu(x.value(), slope);
        self.emit("leaky_relu", out, x.requires_grad(), || Op::Leaky {
            x: x.clone(),
            slope,
        })
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.leaky_relu(x, T::zero())
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = Rc::new(kernels::sigmoid(x.value()));
        out.check_finite("sigmoid")?;
        let id = (self.enabled && x.requires_grad()).then(|| {
            self.push(Op::Sigmoid {
                x: x.id,
                out: out.clone(),
            })
        });
        Ok(Var { id, value: out })
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = a.value().add(b.value())?;
        self.emit("add", out, a.requires_grad() || b.requires_grad(), || {
            Op::Add(a.id, b.id)
        })
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = a.value().sub(b.value())?;
        self.emit("sub", out, a.requires_grad() || b.requires_grad(), || {
            Op::Sub(a.id, b.id)
        })
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = a.value().zip_map(b.value(), |x, y| x * y)?;
        self.emit("mul", out, a.requires_grad() || b.requires_grad(), || {
            Op::Mul(a.clone(), b.clone())
        })
    }

    pub fn scale(&self, x: &Var<T>, s: T) -> Result<Var<T>> {
        let out = x.value().scale(s);
        self.emit("scale", out, x.requires_grad(), || Op::Scale { x: x.id, s })
    }

    pub fn cat_channels(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|v| v.value()).collect();
        let out = Tensor::cat_channels(&values)?;
        let track = parts.iter().any(|v| v.requires_grad());
        self.emit("cat_channels", out, track, || {
            Op::Cat(parts.iter().map(|v| (v.id, v.shape()[1])).collect())
        })
    }

    pub fn narrow_channels(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let out = x.value().narrow_channels(start, len)?;
        self.emit("narrow_channels", out, x.requires_grad(), || Op::Narrow {
            x: x.id,
            start,
            in_shape: x.shape().to_vec(),
        })
    }

    /// Adds each flow to every (group, tap) slot of its block of offset
    /// channels; see [`deform::add_flow_to_offsets`].
    pub fn add_flow_to_offsets(
        &self,
        raw: &Var<T>,
        flows: &[&Var<T>],
        groups_per_flow: usize,
        taps: usize,
    ) -> Result<Var<T>> {
        let flow_values: Vec<&Tensor<T>> = flows.iter().map(|f| f.value()).collect();
        let out = deform::add_flow_to_offsets(raw.value(), &flow_values, groups_per_flow, taps)?;
        let track = raw.requires_grad() || flows.iter().any(|f| f.requires_grad());
        self.emit("add_flow_to_offsets", out, track, || Op::FlowOffsets {
            raw: raw.id,
            flows: flows.iter().map(|f| f.id).collect(),
            groups_per_flow,
            taps,
        })
    }

    pub fn resize_bilinear(&self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let out = kernels::resize_bilinear(x.value(), out_h, out_w)?;
        self.emit("resize_bilinear", out, x.requires_grad(), || Op::Resize {
            x: x.id,
            in_shape: x.shape().to_vec(),
        })
    }

    /// Mean of `sqrt((pred − target)² + eps²)` as a scalar.
    pub fn charbonnier(&self, pred: &Var<T>, target: &Var<T>, eps: T) -> Result<Var<T>> {
        let loss = crate::autodiff::loss::charbonnier_loss(pred.value(), target.value(), eps)?;
        self.emit(
            "charbonnier",
            Tensor::scalar(loss),
            pred.requires_grad() || target.requires_grad(),
            || Op::Charbonnier {
                pred: pred.clone(),
                target: target.clone(),
                eps,
            },
        )
    }

    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = Tensor::scalar(x.value().sum());
        self.emit("sum", out, x.requires_grad(), || Op::Sum {
            x: x.id,
            shape: x.shape().to_vec(),
        })
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the graph.
    pub fn backward(self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value().numel() != 1 {
            return Err(VsrError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let tape = self.tape.into_inner();
        let mut grads: Vec<Option<Tensor<T>>> = (0..tape.len()).map(|_| None).collect();
        let mut out = Gradients::default();
        let Some(root) = loss.id else {
            return Ok(out);
        };
        grads[root] = Some(Tensor::full(loss.shape(), T::one()));
        for (i, op) in tape.into_iter().enumerate().rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            match op {
                Op::Leaf(name) => {
                    out.map.insert(name, g);
                }
                Op::Conv { x, w, b, spec } => {
                    let r = kernels::conv2d_backward(x.value(), w.value(), &spec, &g)?;
                    accumulate(&mut grads, x.id, r.input)?;
                    accumulate(&mut grads, w.id, r.weight)?;
                    if let Some(db) = r.bias {
                        accumulate(&mut grads, b, db)?;
                    }
                }
                Op::Deform {
                    x,
                    w,
                    b,
                    off,
                    mask,
                    groups,
                    spec,
                } => {
                    let r = kernels::deform_conv2d_backward(
                        x.value(),
                        w.value(),
                        off.value(),
                        mask.value(),
                        groups,
                        &spec,
                        &g,
                    )?;
                    accumulate(&mut grads, x.id, r.input)?;
                    accumulate(&mut grads, w.id, r.weight)?;
                    accumulate(&mut grads, off.id, r.offsets)?;
                    accumulate(&mut grads, mask.id, r.masks)?;
                    if let Some(db) = r.bias {
                        accumulate(&mut grads, b, db)?;
                    }
                }
                Op::Warp { x, flow } => {
                    let (dx, dflow) = kernels::warp_backward(x.value(), flow.value(), &g)?;
                    accumulate(&mut grads, x.id, dx)?;
                    accumulate(&mut grads, flow.id, dflow)?;
                }
                Op::Sample { x, coords } => {
                    let (dx, dc) = kernels::bilinear_sample_backward(x.value(), coords.value(), &g)?;
                    accumulate(&mut grads, x.id, dx)?;
                    accumulate(&mut grads, coords.id, dc)?;
                }
                Op::Shuffle { x, r } => {
                    accumulate(&mut grads, x, kernels::pixel_unshuffle(&g, r)?)?;
                }
                Op::Leaky { x, slope } => {
                    let dx = kernels::activation::leaky_relu_backward(x.value(), slope, &g);
                    accumulate(&mut grads, x.id, dx)?;
                }
                Op::Sigmoid { x, out: y } => {
                    accumulate(&mut grads, x, kernels::activation::sigmoid_backward(&y, &g))?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone())?;
                    accumulate(&mut grads, b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.scale(-T::one()))?;
                    accumulate(&mut grads, a, g)?;
                }
                Op::Mul(a, b) => {
                    if a.requires_grad() {
                        accumulate(&mut grads, a.id, g.zip_map(b.value(), |x, y| x * y)?)?;
                    }
                    if b.requires_grad() {
                        accumulate(&mut grads, b.id, g.zip_map(a.value(), |x, y| x * y)?)?;
                    }
                }
                Op::Scale { x, s } => accumulate(&mut grads, x, g.scale(s))?,
                Op::Cat(parts) => {
                    let mut start = 0;
                    for (id, c) in parts {
                        if id.is_some() {
                            accumulate(&mut grads, id, g.narrow_channels(start, c)?)?;
                        }
                        start += c;
                    }
                }
                Op::Narrow { x, start, in_shape } => {
                    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
                    let len = g.shape()[1];
                    let plane = h * w;
                    let mut full = Tensor::zeros(&in_shape);
                    for b in 0..n {
                        full.data_mut()[(b * c + start) * plane..(b * c + start + len) * plane]
                            .copy_from_slice(&g.data()[b * len * plane..(b + 1) * len * plane]);
                    }
                    accumulate(&mut grads, x, full)?;
                }
                Op::FlowOffsets {
                    raw,
                    flows,
                    groups_per_flow,
                    taps,
                } => {
                    let dflows = deform::add_flow_to_offsets_backward(&g, flows.len(), groups_per_flow, taps)?;
                    for (id, df) in flows.into_iter().zip(dflows) {
                        accumulate(&mut grads, id, df)?;
                    }
                    accumulate(&mut grads, raw, g)?;
                }
                Op::Resize { x, in_shape } => {
                    accumulate(&mut grads, x, kernels::resize_bilinear_backward(&in_shape, &g)?)?;
                }
                Op::Charbonnier { pred, target, eps } => {
                    let scale = g.item()?;
                    let d = crate::autodiff::loss::charbonnier_grad(pred.value(), target.value(), eps)?.scale(scale);
                    if target.requires_grad() {
                        accumulate(&mut grads, target.id, d.scale(-T::one()))?;
                    }
                    accumulate(&mut grads, pred.id, d)?;
                }
                Op::Sum { x, shape } => {
                    accumulate(&mut grads, x, Tensor::full(&shape, g.item()?))?;
                }
            }
        }
        Ok(out)
    }
}
