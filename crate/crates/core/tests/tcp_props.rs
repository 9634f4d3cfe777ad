//! Sender and receiver driven over a lossy, reordering link.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use packsim::packet::TcpSegment;
use packsim::tcp::{
    CwndState, SendCause, SenderEvent, TcpConfig, TcpReceiver, TcpSender, VegasAdjust,
};
use packsim::{SimTime, Variant};
use proptest::prelude::*;

const VARIANTS: [Variant; 5] = [
    Variant::Tahoe,
    Variant::Reno,
    Variant::NewReno,
    Variant::Vegas,
    Variant::Westwood,
];

/// Fate of one packet crossing the link.
#[derive(Debug, Clone, Copy)]
struct Fate {
    drop: bool,
    delay_us: u64,
}

fn fates() -> impl Strategy<Value = Vec<Fate>> {
    prop::collection::vec(
        (prop::bool::weighted(0.08), 2_000u64..40_000).prop_map(|(drop, delay_us)| Fate { drop, delay_us }),
        1..200,
    )
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Arrival {
    Data(u32, SimTime),
    Ack(u32, SimTime),
}

struct Link {
    fates: Vec<Fate>,
    next: usize,
    heap: BinaryHeap<Reverse<(SimTime, u64, Arrival)>>,
    order: u64,
}

impl Link {
    fn send(&mut self, now: SimTime, what: Arrival) {
        let f = self.fates[self.next % self.fates.len()];
        self.next += 1;
        if !f.drop {
            self.order += 1;
            self.heap.push(Reverse((now + SimTime(f.delay_us * 1_000), self.order, what)));
        }
    }
}

/// What the harness saw, for post-run assertions.
#[derive(Default)]
struct Log {
    events: Vec<SenderEvent>,
    delivered_to: u32,
}

fn window(s: &TcpSender, rwnd: u32) -> u32 {
    let c = s.cc.cwnd.floor().max(1.0) as u32;
    if rwnd == 0 { c } else { c.min(rwnd) }
}

/// Invariants that hold after every sender entry point.
fn check_step(s: &mut TcpSender, link: &mut Link, now: SimTime, rwnd: u32) -> Result<(), TestCaseError> {
    prop_assert!(s.snd_una <= s.snd_nxt && s.snd_nxt <= s.snd_max);
    prop_assert!(s.cc.cwnd >= 1.0, "cwnd {}", s.cc.cwnd);
    prop_assert!(s.cc.ssthresh >= 2.0, "ssthresh {}", s.cc.ssthresh);
    let w = window(s, rwnd);
    for tx in s.take_outbox() {
        prop_assert!(tx.seqno >= 1);
        if tx.cause == SendCause::New {
            prop_assert!(tx.seqno < s.snd_una + w, "new seq {} beyond una {} + window {w}", tx.seqno, s.snd_una);
            prop_assert!(!tx.retransmission);
        }
        link.send(now, Arrival::Data(tx.seqno, now));
    }
    Ok(())
}

fn drive(variant: Variant, fates: Vec<Fate>, rwnd: u32) -> Result<Log, TestCaseError> {
    let cfg = TcpConfig {
        rwnd_segments: rwnd,
        ..TcpConfig::default()
    };
    let mut s = TcpSender::new(0, variant, &cfg);
    s.record_events(true);
    let mut r = TcpReceiver::new(0);
    let mut link = Link {
        fates,
        next: 0,
        heap: BinaryHeap::new(),
        order: 0,
    };
    let mut log = Log::default();
    let mut now = SimTime::ZERO;
    s.start(now);
    check_step(&mut s, &mut link, now, rwnd)?;
    let end = SimTime::from_secs(30);
    loop {
        let next_arrival = link.heap.peek().map(|Reverse((t, _, _))| *t);
        let timer = s.rto_deadline;
        let t = match (next_arrival, timer) {
            (Some(a), Some(d)) => a.min(d),
            (Some(a), None) => a,
            (None, Some(d)) => d,
            (None, None) => break,
        };
        if t > end || s.aborted {
            break;
        }
        now = t;
        if timer == Some(t) && next_arrival != Some(t) {
            s.on_timeout(now);
        } else {
            let Reverse((_, _, what)) = link.heap.pop().expect("peeked");
            match what {
                Arrival::Data(seq, sent) => {
                    let out = r.on_data(&TcpSegment::data(0, seq, 1000, sent));
                    prop_assert_eq!(out.delivered.start, log.delivered_to + 1, "delivery skipped or repeated");
                    log.delivered_to = out.delivered.end - 1;
                    link.send(now, Arrival::Ack(out.ack.ack_no, sent));
                }
                Arrival::Ack(ack_no, echo) => s.on_ack(now, &TcpSegment::ack(0, ack_no, echo)),
            }
        }
        check_step(&mut s, &mut link, now, rwnd)?;
        log.events.extend(s.take_events());
    }
    prop_assert!(log.delivered_to < s.snd_max, "delivered beyond what was sent");
    Ok(log)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn window_conservation_and_in_order_delivery(
        v in 0usize..5,
        fates in fates(),
        rwnd in prop_oneof![Just(0u32), 4u32..40],
    ) {
        drive(VARIANTS[v], fates, rwnd)?;
    }

    #[test]
    fn recovery_state_machine(v in 1usize..3, fates in fates()) {
        let variant = VARIANTS[v];
        let log = drive(variant, fates, 0)?;
        let mut in_recovery = false;
        for e in &log.events {
            match *e {
                SenderEvent::LossReaction { cause, cwnd_before, cwnd_after, ssthresh } => {
                    prop_assert!(!in_recovery, "second fast retransmit inside one recovery");
                    prop_assert_eq!(cause, SendCause::FastRetransmit);
                    prop_assert_eq!(ssthresh, (cwnd_before / 2.0).floor().max(2.0));
                    prop_assert_eq!(cwnd_after, ssthresh + 3.0);
                    in_recovery = true;
                }
                SenderEvent::RecoveryExit { cwnd } => {
                    prop_assert!(in_recovery, "exit without entry");
                    prop_assert!(cwnd >= 2.0);
                    in_recovery = false;
                }
                SenderEvent::Timeout { cwnd_after, .. } => {
                    prop_assert_eq!(cwnd_after, 1.0);
                    in_recovery = false;
                }
                _ => {}
            }
        }
    }

    #[test]
    fn tahoe_never_enters_recovery(fates in fates()) {
        let log = drive(Variant::Tahoe, fates, 0)?;
        let exits = log.events.iter().filter(|e| matches!(e, SenderEvent::RecoveryExit { .. })).count();
        prop_assert_eq!(exits, 0);
    }

    #[test]
    fn westwood_estimate_stays_within_samples(
        samples in prop::collection::vec((1u64..200_000, 1u64..500_000_000), 1..100),
        gain in 0.01f64..1.0,
    ) {
        let cfg = TcpConfig { ww_filter_gain: gain, ..TcpConfig::default() };
        let mut cc = CwndState::new(Variant::Westwood, &cfg);
        let mut now = SimTime::from_secs(1);
        cc.mark_start(now);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (bytes, dt) in samples {
            now = now + SimTime(dt);
            let rate = bytes as f64 / SimTime(dt).as_secs_f64();
            lo = lo.min(rate);
            hi = hi.max(rate);
            cc.westwood_sample(bytes, now);
            prop_assert!(cc.bwe >= lo * (1.0 - 1e-9) && cc.bwe <= hi * (1.0 + 1e-9), "bwe {} outside [{lo}, {hi}]", cc.bwe);
            cc.rtt_sample(0.05);
            prop_assert!(cc.westwood_ssthresh() >= 2.0);
        }
    }

    #[test]
    fn vegas_settles_in_band(
        base_ms in 5.0f64..200.0,
        queue_frac in 0.02f64..0.95,
        cwnd0 in 1u32..120,
    ) {
        let cfg = TcpConfig::default();
        let mut cc = CwndState::new(Variant::Vegas, &cfg);
        let base = base_ms / 1e3;
        cc.base_rtt = Some(base);
        cc.srtt = Some(base / (1.0 - queue_frac));
        cc.ssthresh = 2.0;
        cc.cwnd = f64::from(cwnd0).max(2.0);
        // Each step moves cwnd by one toward a band at least two segments wide.
        let bound = 2 + (cfg.vegas_beta / queue_frac) as usize + cwnd0 as usize;
        let mut held = None;
        for step in 0..bound + 5 {
            let adj = cc.vegas_window_update();
            match (adj, held) {
                (VegasAdjust::Hold, None) => held = Some(step),
                (VegasAdjust::Hold, Some(_)) => {}
                (_, Some(_)) => prop_assert!(false, "left the band after settling"),
                _ => {}
            }
        }
        let settled = held.expect("never settled");
        prop_assert!(settled <= bound);
        let diff = (cc.expected_rate - cc.actual_rate) * base;
        prop_assert!(diff <= cfg.vegas_beta + 1e-9);
        prop_assert!(diff >= cfg.vegas_alpha - 1e-9 || cc.cwnd <= 1.0);
    }
}
