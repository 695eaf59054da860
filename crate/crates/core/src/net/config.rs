//! Network configuration, presets and the `key=value` config file.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, VsrError};
use crate::flow::Direction;

/// How propagated features are aligned to the current frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlignmentMode {
    /// Flow-guided modulated deformable convolution.
    FlowGuidedDcn,
    /// Plain flow warping.
    FlowWarpOnly,
    /// Predecessor features used as they are.
    None,
}

impl AlignmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentMode::FlowGuidedDcn => "flow_guided_dcn",
            AlignmentMode::FlowWarpOnly => "flow_warp_only",
            AlignmentMode::None => "none",
        }
    }
}

impl FromStr for AlignmentMode {
    type Err = VsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow_guided_dcn" => Ok(AlignmentMode::FlowGuidedDcn),
            "flow_warp_only" => Ok(AlignmentMode::FlowWarpOnly),
            "none" => Ok(AlignmentMode::None),
            _ => Err(VsrError::Config(format!("unknown alignment_mode {s:?}"))),
        }
    }
}

/// Ablation lattice: (A) flow warping, first order, one bidirectional pass;
/// (B) adds flow-guided deformable alignment; (C) adds second-order
/// connections; `Full` adds grid propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    A,
    B,
    C,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::Full];

    /// Published REDS4 PSNR of the corresponding full-scale model, for display only.
    pub fn reference_psnr(self) -> f64 {
        match self {
            Variant::A => 31.48,
            Variant::B => 31.94,
            Variant::C => 32.08,
            Variant::Full => 32.39,
        }
    }

    /// `base` with this variant's topology switches applied.
    pub fn apply(self, base: &NetConfig) -> NetConfig {
        let mut c = base.clone();
        match self {
            Variant::A => {
                c.alignment_mode = AlignmentMode::FlowWarpOnly;
                c.order = 1;
                c.use_grid = false;
                c.num_branches = 2;
            }
            Variant::B => {
                c.alignment_mode = AlignmentMode::FlowGuidedDcn;
                c.order = 1;
                c.use_grid = false;
                c.num_branches = 2;
            }
            Variant::C => {
                c.alignment_mode = AlignmentMode::FlowGuidedDcn;
                c.order = 2;
                c.use_grid = false;
                c.num_branches = 2;
            }
            Variant::Full => {
                c.alignment_mode = AlignmentMode::FlowGuidedDcn;
                c.order = 2;
                c.use_grid = true;
                c.num_branches = base.num_branches.max(4);
            }
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::Full => "full",
        })
    }
}

impl FromStr for Variant {
    type Err = VsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            "c" => Ok(Variant::C),
            "full" => Ok(Variant::Full),
            _ => Err(VsrError::Usage(format!("unknown variant {s:?} (A|B|C|full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub channels: usize,
    pub extraction_blocks: usize,
    pub branch_blocks: usize,
    /// Propagation branches; they alternate direction starting with `first_direction`.
    pub num_branches: usize,
    /// 1 or 2: how many predecessors each timestep aligns.
    pub order: usize,
    pub use_grid: bool,
    pub alignment_mode: AlignmentMode,
    pub upscale: usize,
    pub dcn_groups: usize,
    pub first_direction: Direction,
    /// Adds a learned residual on top of the classical flow (`flow.*` parameters).
    pub flow_refine: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl NetConfig {
    /// Full-size architecture: 64 channels, 5 extraction blocks, 7 blocks per
    /// branch, two grid iterations, second order, 16 deformable groups.
    pub fn paper() -> Self {
        NetConfig {
            channels: 64,
            extraction_blocks: 5,
            branch_blocks: 7,
            num_branches: 4,
            order: 2,
            use_grid: true,
            alignment_mode: AlignmentMode::FlowGuidedDcn,
            upscale: 4,
            dcn_groups: 16,
            first_direction: Direction::Backward,
            flow_refine: false,
        }
    }

    /// Desk-scale architecture with the same topology.
    pub fn toy() -> Self {
        NetConfig {
            channels: 16,
            extraction_blocks: 2,
            branch_blocks: 2,
            dcn_groups: 4,
            ..Self::paper()
        }
    }

    /// Direction of branch `j` (1-based).
    pub fn branch_direction(&self, j: usize) -> Direction {
        if j % 2 == 1 {
            self.first_direction
        } else {
            self.first_direction.reversed()
        }
    }

    /// Deformable groups applied to each aligned predecessor.
    pub fn groups_per_predecessor(&self) -> usize {
        self.dcn_groups / self.order
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(VsrError::Config(m));
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if !(1..=2).contains(&self.order) {
            return fail(format!("order must be 1 or 2, got {}", self.order));
        }
        if self.num_branches == 0 || !self.num_branches.is_multiple_of(2) {
            return fail(format!(
                "num_branches must be even and positive, got {}",
                self.num_branches
            ));
        }
        if !self.use_grid && self.num_branches != 2 {
            return fail(format!(
                "use_grid=false means one bidirectional pass (2 branches), got {}",
                self.num_branches
            ));
        }
        if self.use_grid && self.num_branches < 4 {
            return fail("use_grid=true needs at least 4 branches".into());
        }
        if self.upscale < 2 || !self.upscale.is_power_of_two() {
            return fail(format!("upscale must be a power of two ≥ 2, got {}", self.upscale));
        }
        if self.alignment_mode == AlignmentMode::FlowGuidedDcn {
            let g = self.dcn_groups;
            if g == 0 || !g.is_multiple_of(self.order) || !self.channels.is_multiple_of(g / self.order) {
                return fail(format!(
                    "{g} deformable groups cannot split {} channels over {} predecessor(s)",
                    self.channels, self.order
                ));
            }
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_config_string(&self) -> String {
        format!(
            "channels={}\nextraction_blocks={}\nbranch_blocks={}\nnum_branches={}\norder={}\n\
             use_grid={}\nalignment_mode={}\nupscale={}\ndcn_groups={}\nfirst_direction={}\n\
             flow_refine={}\n",
            self.channels,
            self.extraction_blocks,
            self.branch_blocks,
            self.num_branches,
            self.order,
            self.use_grid,
            self.alignment_mode.as_str(),
            self.upscale,
            self.dcn_groups,
            self.first_direction.as_str(),
            self.flow_refine,
        )
    }

    /// Parses `key=value` lines over the toy preset. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are rejected. A leading
    /// `preset=paper|toy` line selects the base.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = NetConfig::toy();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| VsrError::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| VsrError::Config(format!("line {}: {key} expects an integer, got {v:?}", lineno + 1)))
            };
            let flag = |v: &str| match v {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                _ => Err(VsrError::Config(format!(
                    "line {}: {key} expects true/false, got {v:?}",
                    lineno + 1
                ))),
            };
            match key {
                "preset" => {
                    cfg = match value {
                        "paper" => NetConfig::paper(),
                        "toy" => NetConfig::toy(),
                        _ => return Err(VsrError::Config(format!("unknown preset {value:?}"))),
                    }
                }
                "channels" => cfg.channels = num(value)?,
                "extraction_blocks" => cfg.extraction_blocks = num(value)?,
                "branch_blocks" => cfg.branch_blocks = num(value)?,
                "num_branches" => cfg.num_branches = num(value)?,
                "order" => cfg.order = num(value)?,
                "use_grid" => cfg.use_grid = flag(value)?,
                "alignment_mode" => cfg.alignment_mode = value.parse()?,
                "upscale" => cfg.upscale = num(value)?,
                "dcn_groups" => cfg.dcn_groups = num(value)?,
                "first_direction" => {
                    cfg.first_direction = match value {
                        "backward" => Direction::Backward,
                        "forward" => Direction::Forward,
                        _ => return Err(VsrError::Config(format!("unknown direction {value:?}"))),
                    }
                }
                "flow_refine" => cfg.flow_refine = flag(value)?,
                _ => return Err(VsrError::Config(format!("line {}: unknown key {key:?}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
