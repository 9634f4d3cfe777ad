use std::collections::BTreeSet;
use std::ops::Range;

use crate::packet::{FlowId, SeqNo, TcpSegment};

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiveOutcome {
    pub ack: TcpSegment,
    /// Segments handed to the application by this arrival, in order.
    pub delivered: Range<SeqNo>,
    pub duplicate: bool,
}

/// Receiving half: cumulative acks, one per data segment.
#[derive(Debug, Clone)]
pub struct TcpReceiver {
    pub flow: FlowId,
    pub next_expected: SeqNo,
    buffered: BTreeSet<SeqNo>,
}

impl TcpReceiver {
    pub fn new(flow: FlowId) -> Self {
        TcpReceiver {
            flow,
            next_expected: 1,
            buffered: BTreeSet::new(),
        }
    }

    pub fn is_buffered(&self, seqno: SeqNo) -> bool {
        self.buffered.contains(&seqno)
    }

    pub fn on_data(&mut self, seg: &TcpSegment) -> ReceiveOutcome {
        debug_assert!(!seg.is_ack && seg.seqno >= 1);
        let start = self.next_expected;
        let mut duplicate = false;
        if seg.seqno == self.next_expected {
            self.next_expected += 1;
            while self.buffered.remove(&self.next_expected) {
                self.next_expected += 1;
            }
        } else if seg.seqno > self.next_expected {
            duplicate = !self.buffered.insert(seg.seqno);
        } else {
            duplicate = true;
        }
        ReceiveOutcome {
            ack: TcpSegment::ack(self.flow, self.next_expected - 1, seg.sent_at),
            delivered: start..self.next_expected,
            duplicate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimTime;

    fn data(n: SeqNo) -> TcpSegment {
        TcpSegment::data(0, n, 1000, SimTime::ZERO)
    }

    fn acks(r: &mut TcpReceiver, seqs: &[SeqNo]) -> Vec<SeqNo> {
        seqs.iter().map(|&s| r.on_data(&data(s)).ack.ack_no).collect()
    }

    #[test]
    fn in_order_segments_ack_each() {
        let mut r = TcpReceiver::new(0);
        assert_eq!(acks(&mut r, &[1, 2, 3]), vec![1, 2, 3]);
    }

    #[test]
    fn gap_produces_duplicate_ack() {
        let mut r = TcpReceiver::new(0);
        assert_eq!(acks(&mut r, &[1, 2, 4]), vec![1, 2, 2]);
    }

    #[test]
    fn filling_the_gap_jumps_the_ack() {
        let mut r = TcpReceiver::new(0);
        acks(&mut r, &[1, 2, 4, 5]);
        let out = r.on_data(&data(3));
        assert_eq!(out.ack.ack_no, 5);
        assert_eq!(out.delivered, 3..6);
    }

    #[test]
    fn duplicates_are_not_delivered_twice() {
        let mut r = TcpReceiver::new(0);
        r.on_data(&data(1));
        let out = r.on_data(&data(1));
        assert!(out.duplicate);
        assert!(out.delivered.is_empty());
    }
}
