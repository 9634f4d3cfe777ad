//! Proxy acknowledgements.
//!
//! A proxy node watches the data segments of a connection as they pass
//! through its routing layer. A jump in sequence numbers means segments were
//! lost between the source and the proxy; the proxy then reports the first
//! missing seqno and the size of the gap back to the source (PACK, unicast)
//! and to its own neighbours (OHPACK, one hop), so that whichever node lies
//! on the ack return path can copy the report into an end-to-end ack.

use crate::packet::{FlowId, SeqNo, TcpSegment};
use crate::sim::{NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckOutcome {
    InOrder,
    Missing { first: SeqNo, count: u32 },
    RetransmissionSeen,
    ProxyChanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MissRecord {
    pub miss_seqno: SeqNo,
    pub num_miss_seqno: u32,
    pub detected_at: SimTime,
}

/// Sequence tracking held by the proxy of one connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqCheckerState {
    pub connection: FlowId,
    /// Highest seqno accounted for; 0 before the first segment.
    pub exp_seqno: SeqNo,
    pub now_proxy: Option<NodeId>,
    pub miss_log: Vec<MissRecord>,
}

impl SeqCheckerState {
    pub fn new(connection: FlowId) -> Self {
        SeqCheckerState {
            connection,
            exp_seqno: 0,
            now_proxy: None,
            miss_log: Vec::new(),
        }
    }

    /// Classifies the data segment `cur` seen by proxy `observer`.
    ///
    /// * seqno 1 opens the connection: the observer is recorded as the
    ///   current proxy and counting starts from 1.
    /// * a different observer than the recorded proxy means the proxy moved;
    ///   counting restarts at `cur` with no gap reported.
    /// * otherwise the expectation advances by one and is compared with `cur`.
    pub fn check_sequence(&mut self, cur: SeqNo, observer: NodeId, now: SimTime) -> CheckOutcome {
        assert!(cur >= 1, "data segments are numbered from 1");
        let bound_here = self.now_proxy == Some(observer);
        if cur == 1 && (!bound_here || self.exp_seqno == 0) {
            self.now_proxy = Some(observer);
            self.exp_seqno = 0;
        } else if !bound_here {
            self.now_proxy = Some(observer);
            self.exp_seqno = cur;
            return CheckOutcome::ProxyChanged;
        }

        let expected = self.exp_seqno + 1;
        if cur == expected {
            self.exp_seqno = cur;
            CheckOutcome::InOrder
        } else if cur > expected {
            let count = cur - expected;
            self.miss_log.push(MissRecord {
                miss_seqno: expected,
                num_miss_seqno: count,
                detected_at: now,
            });
            self.exp_seqno = cur;
            CheckOutcome::Missing {
                first: expected,
                count,
            }
        } else {
            // A retransmission: the expectation does not advance.
            self.exp_seqno = self.exp_seqno.max(cur);
            CheckOutcome::RetransmissionSeen
        }
    }
}

/// Miss report stored in a routing entry, waiting to ride on an ack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MissInfo {
    pub flow: FlowId,
    pub miss_seqno: u32,
    pub num_miss_seqno: u16,
}

/// Writes a stored miss report into an ack heading for the source.
///
/// Returns true if the ack was modified; the caller clears its stored report.
/// An ack that already carries a report from further downstream is left as is.
pub fn augment_ack(stored: Option<MissInfo>, ack: &mut TcpSegment) -> bool {
    match stored {
        Some(m) if ack.is_ack && m.flow == ack.flow && m.miss_seqno != 0 && !ack.has_miss() => {
            ack.miss_seqno = m.miss_seqno;
            ack.num_miss_seqno = m.num_miss_seqno;
            true
        }
        _ => false,
    }
}
