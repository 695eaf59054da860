mod common;

use common::checks::*;

#[test]
fn kernels_match_scalar_oracles() {
    for (name, err) in kernel_oracle_suite() {
        assert!(err <= 1e-5, "{name}: {err:e}");
    }
}

#[test]
fn dcn_with_zero_offsets_is_conv() {
    for seed in 0..20 {
        let err = dcn_zero_offset_case(seed);
        assert!(err <= 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn dcn_with_integer_offsets_is_shifted_conv() {
    for seed in 0..20 {
        let err = dcn_integer_shift_case(seed);
        assert!(err <= 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn flow_broadcast_matches_explicit_indexing() {
    for seed in 0..20 {
        assert_eq!(flow_broadcast_case(seed), 0.0, "seed {seed}");
    }
}
