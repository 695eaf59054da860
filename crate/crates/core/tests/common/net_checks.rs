//! End-to-end network checks shared by the network tests and the acceptance run.

use vsrpp_core::data::{synth_clip_with, SynthKind, SynthParams};
use vsrpp_core::flow::{Direction, PyramidalFlow};
use vsrpp_core::{NetConfig, Variant, VsrNet};

/// Runs 1- and 2-frame clips through every variant and checks that boundary
/// flows are zero, every frame reads one zero-injected predecessor per order
/// and branch, and outputs are finite at 4× size.
pub fn short_clip_case() -> Result<(), String> {
    for variant in Variant::ALL {
        let cfg = variant.apply(&NetConfig {
            channels: 4,
            ..NetConfig::toy()
        });
        let net = VsrNet::new(cfg).map_err(|e| e.to_string())?;
        let weights = net.init_weights(&mut super::rng(1)).map_err(|e| e.to_string())?;
        for len in [1, 2] {
            let params = SynthParams {
                height: 10,
                width: 12,
                velocity: None,
            };
            let clip = synth_clip_with(SynthKind::Translate, len, 4, params).map_err(|e| e.to_string())?;
            let flows = net
                .compute_flows(&clip.frames, &PyramidalFlow::default())
                .map_err(|e| e.to_string())?;
            for d in [Direction::Forward, Direction::Backward] {
                if !flows
                    .for_direction(d)
                    .second
                    .iter()
                    .all(|s| s.data().iter().all(|&v| v == 0.0))
                {
                    return Err(format!("{variant}/{len}: nonzero second-order flow at the boundary"));
                }
            }
            let (out, stats) = net
                .forward_with_flows(&clip.frames, &flows, &weights)
                .map_err(|e| e.to_string())?;
            if out.len() != len || out.iter().any(|o| o.shape() != [1, 3, 40, 48] || !o.all_finite()) {
                return Err(format!("{variant}/{len}: bad output shape or non-finite values"));
            }
            let reads = len * net.config().num_branches;
            let second = if net.config().order == 2 { reads } else { 0 };
            if stats.first_order_reads != reads || stats.second_order_reads != second {
                return Err(format!("{variant}/{len}: unexpected predecessor reads {stats:?}"));
            }
        }
    }
    Ok(())
}
