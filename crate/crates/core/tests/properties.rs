//! Whole-run invariants over random configurations.

mod common;

use fedlcbq::diagnostics::{
    monotone_value_check, replay_check, verify_d3_bounds, verify_decomposition, verify_lemma6_trace, TraceIndex,
};
use fedlcbq::mdp::value_iteration;
use fedlcbq::trace::RunTrace;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn runs_satisfy_trace_invariants(seed in any::<u64>()) {
        let case = common::fuzz_case(seed);
        let t = &case.trace;
        let pi = value_iteration(&case.mdp).1.to_stochastic();
        let dec = verify_decomposition(t, &case.mdp, &pi).unwrap();
        prop_assert!(dec.passed, "residual {}", dec.max_abs_residual);
        let index = TraceIndex::new(t).unwrap();
        let w = verify_lemma6_trace(t, &index).unwrap();
        prop_assert!(w.passed, "{:?}", w.violations.first());
        prop_assert!(verify_d3_bounds(t).unwrap().passed);
        prop_assert!(monotone_value_check(t).unwrap().is_none());
        prop_assert!(replay_check(t).unwrap().identical);
    }

    #[test]
    fn aggregated_counts_add_up(seed in any::<u64>()) {
        let t = common::fuzz_case(seed).trace;
        let d = t.header.dims;
        let last = t.snapshots.last().unwrap();
        prop_assert_eq!(last.n_global.iter().sum::<u64>() as usize, t.visits.len());
        let total: u64 = t.snapshots.iter().map(|s| s.n_round.iter().sum::<u64>()).sum();
        prop_assert_eq!(total as usize, t.header.episodes * t.header.agents * d.horizon);
    }

    #[test]
    fn trace_bytes_round_trip(seed in any::<u64>()) {
        let t = common::fuzz_case(seed).trace;
        let back = RunTrace::from_bytes(&t.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn truncated_traces_fail_to_parse(seed in any::<u64>(), frac in 0.0f64..1.0) {
        let bytes = common::fuzz_case(seed).trace.to_bytes().unwrap();
        let cut = ((bytes.len() as f64) * frac) as usize;
        prop_assert!(RunTrace::from_bytes(&bytes[..cut]).is_err());
    }
}
