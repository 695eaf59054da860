use crate::error::{Result, VsrError};
use crate::flow::{FlowCache, FlowField, FlowProvider};
use crate::parallel::map_indexed;
use crate::tensor::Tensor;

/// Temporal direction of a propagation branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Iterates `i = 0, 1, …`; predecessors are `i − 1`, `i − 2`.
    Forward,
    /// Iterates `i = T − 1, T − 2, …`; predecessors are `i + 1`, `i + 2`.
    Backward,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    /// Frame index `p` steps back along this direction, if inside `0..len`.
    pub fn predecessor(self, i: usize, p: usize, len: usize) -> Option<usize> {
        match self {
            Direction::Forward => i.checked_sub(p),
            Direction::Backward => (i + p < len).then_some(i + p),
        }
    }

    /// Frame indices in processing order.
    pub fn order(self, len: usize) -> Vec<usize> {
        match self {
            Direction::Forward => (0..len).collect(),
            Direction::Backward => (0..len).rev().collect(),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// First- and second-order flows for every frame of a clip in one direction.
///
/// `first[i]` is the flow from frame `i` to its predecessor and `second[i]`
/// to the predecessor's predecessor. Missing predecessors get exact zeros.
#[derive(Debug, Clone)]
pub struct FlowPairs {
    pub direction: Direction,
    pub first: Vec<FlowField>,
    pub second: Vec<FlowField>,
}

impl FlowPairs {
    pub fn get(&self, i: usize, order: usize) -> &FlowField {
        match order {
            1 => &self.first[i],
            2 => &self.second[i],
            _ => panic!("flow order {order} not stored"),
        }
    }
}

fn check_frames(frames: &[Tensor]) -> Result<(usize, usize, usize)> {
    let first = frames
        .first()
        .ok_or_else(|| VsrError::Usage("flow_pairs needs at least one frame".into()))?;
    let (n, _, h, w) = first.dims4()?;
    for f in frames {
        first.expect_same_shape(f, "flow_pairs frames")?;
    }
    Ok((n, h, w))
}

fn pairs_with(
    frames: &[Tensor],
    direction: Direction,
    estimate: impl Fn(usize, usize, usize) -> Result<FlowField> + Sync + Send,
) -> Result<FlowPairs> {
    let (n, h, w) = check_frames(frames)?;
    let len = frames.len();
    let jobs: Vec<(usize, usize)> = (0..len).flat_map(|i| [(i, 1), (i, 2)]).collect();
    let flows = map_indexed(jobs.len(), |k| {
        let (i, p) = jobs[k];
        match direction.predecessor(i, p, len) {
            Some(j) => estimate(i, j, p),
            None => Ok(FlowField::zeros(n, h, w)),
        }
    });
    let mut first = Vec::with_capacity(len);
    let mut second = Vec::with_capacity(len);
    for (k, flow) in flows.into_iter().enumerate() {
        if jobs[k].1 == 1 {
            first.push(flow?);
        } else {
            second.push(flow?);
        }
    }
    Ok(FlowPairs {
        direction,
        first,
        second,
    })
}

/// Flows `s_{i→i∓1}` and `s_{i→i∓2}` for every frame.
pub fn flow_pairs(frames: &[Tensor], direction: Direction, provider: &dyn FlowProvider) -> Result<FlowPairs> {
    pairs_with(frames, direction, |i, j, _| provider.estimate(&frames[i], &frames[j]))
}

/// As [`flow_pairs`], reading flows from `cache` when present and storing
/// newly estimated ones. Only single-item batches can be cached.
pub fn flow_pairs_cached(
    frames: &[Tensor],
    direction: Direction,
    provider: &dyn FlowProvider,
    cache: &FlowCache,
    clip: &str,
) -> Result<FlowPairs> {
    pairs_with(frames, direction, |i, j, p| {
        if let Some(hit) = cache.load(clip, direction, i, p)? {
            if hit.tensor().shape() == [1, 2, frames[i].shape()[2], frames[i].shape()[3]] {
                return Ok(hit);
            }
        }
        let flow = provider.estimate(&frames[i], &frames[j])?;
        cache.store(clip, direction, i, p, &flow)?;
        Ok(flow)
    })
}
