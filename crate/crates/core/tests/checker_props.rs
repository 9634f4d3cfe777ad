use packsim::pack::{CheckOutcome, SeqCheckerState};
use packsim::SimTime;
use proptest::prelude::*;

/// Arrivals as (seqno, observing node). Observers change rarely, as a
/// proxy role moves only on route changes.
fn arrivals() -> impl Strategy<Value = Vec<(u32, u32)>> {
    prop::collection::vec((1u32..300, prop::bool::weighted(0.05), 0u32..4), 1..400).prop_map(|raw| {
        let mut node = 0;
        raw.into_iter()
            .map(|(seq, hop, to)| {
                if hop {
                    node = to;
                }
                (seq, node)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn expectation_only_moves_forward_at_one_proxy(stream in arrivals()) {
        let mut st = SeqCheckerState::new(0);
        for (seq, node) in stream {
            let before = st.exp_seqno;
            let same = st.now_proxy == Some(node);
            let out = st.check_sequence(seq, node, SimTime::ZERO);
            prop_assert_eq!(st.now_proxy, Some(node));
            match out {
                CheckOutcome::ProxyChanged => {
                    prop_assert!(!same);
                    prop_assert_eq!(st.exp_seqno, seq);
                }
                CheckOutcome::InOrder if seq == 1 => prop_assert_eq!(st.exp_seqno, 1),
                CheckOutcome::InOrder => {
                    prop_assert_eq!(seq, before + 1);
                    prop_assert_eq!(st.exp_seqno, seq);
                }
                CheckOutcome::Missing { first, count } => {
                    prop_assert!(same || seq == 1);
                    prop_assert_eq!(first, before + 1);
                    prop_assert_eq!(first + count, seq);
                    prop_assert!(count >= 1);
                }
                CheckOutcome::RetransmissionSeen => {
                    prop_assert_eq!(st.exp_seqno, before);
                    prop_assert!(seq <= before);
                }
            }
            if same && seq != 1 {
                prop_assert!(st.exp_seqno >= before, "expectation fell from {before} to {}", st.exp_seqno);
            }
        }
    }

    #[test]
    fn miss_log_matches_reported_gaps(stream in arrivals()) {
        let mut st = SeqCheckerState::new(0);
        let mut reported = Vec::new();
        for (k, &(seq, node)) in stream.iter().enumerate() {
            let t = SimTime(k as u64);
            if let CheckOutcome::Missing { first, count } = st.check_sequence(seq, node, t) {
                reported.push((first, count, t));
            }
        }
        let logged: Vec<_> = st.miss_log.iter().map(|m| (m.miss_seqno, m.num_miss_seqno, m.detected_at)).collect();
        prop_assert_eq!(logged, reported);
    }
}
