use std::collections::{BTreeMap, VecDeque};

use super::{CwndState, TcpConfig, Variant, VegasAdjust};
use crate::packet::{FlowId, SeqNo, TcpSegment};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendCause {
    New,
    FastRetransmit,
    VegasEarly,
    PartialAck,
    Timeout,
    GoBackN,
    Pack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub seqno: SeqNo,
    pub retransmission: bool,
    pub cause: SendCause,
}

/// Observable congestion-control transitions, for probes and tests.
#[derive(Debug, Clone, PartialEq)]
pub enum SenderEvent {
    Ack {
        ack_no: SeqNo,
        cwnd: f64,
        ssthresh: f64,
    },
    DupAck {
        ack_no: SeqNo,
        count: u32,
    },
    LossReaction {
        cause: SendCause,
        cwnd_before: f64,
        cwnd_after: f64,
        ssthresh: f64,
    },
    RecoveryExit {
        cwnd: f64,
    },
    Timeout {
        cwnd_before: f64,
        cwnd_after: f64,
        ssthresh: f64,
        rto: SimTime,
    },
    Vegas(VegasAdjust),
    PackNotice {
        miss_seqno: SeqNo,
        num_miss_seqno: u32,
        queued: u32,
    },
    Reset,
}

/// Sending half of a bulk-transfer connection with an unbounded backlog.
#[derive(Debug, Clone)]
pub struct TcpSender {
    pub flow: FlowId,
    pub cc: CwndState,
    /// Oldest unacknowledged segment.
    pub snd_una: SeqNo,
    /// Next segment to transmit.
    pub snd_nxt: SeqNo,
    /// One past the highest segment ever transmitted.
    pub snd_max: SeqNo,
    rwnd: u32,
    last_sent: Vec<SimTime>,
    tx_count: Vec<u32>,
    retx_queue: VecDeque<SeqNo>,
    /// PACK-triggered retransmissions in flight, with their timer deadline.
    pack_guard: BTreeMap<SeqNo, SimTime>,
    /// Highest seqno outstanding at the last loss reaction; duplicate acks
    /// below it belong to that episode.
    loss_high: SeqNo,
    vegas_marker: Option<SeqNo>,
    pub rto_deadline: Option<SimTime>,
    pub acked_any: bool,
    pub aborted: bool,
    outbox: Vec<Transmission>,
    events: Vec<SenderEvent>,
    record_events: bool,
}

impl TcpSender {
    pub fn new(flow: FlowId, variant: Variant, cfg: &TcpConfig) -> Self {
        TcpSender {
            flow,
            cc: CwndState::new(variant, cfg),
            snd_una: 1,
            snd_nxt: 1,
            snd_max: 1,
            rwnd: cfg.rwnd_segments,
            last_sent: vec![SimTime::ZERO],
            tx_count: vec![0],
            retx_queue: VecDeque::new(),
            pack_guard: BTreeMap::new(),
            loss_high: 0,
            vegas_marker: None,
            rto_deadline: None,
            acked_any: false,
            aborted: false,
            outbox: Vec::new(),
            events: Vec::new(),
            record_events: false,
        }
    }

    pub fn record_events(&mut self, on: bool) {
        self.record_events = on;
    }

    pub fn take_outbox(&mut self) -> Vec<Transmission> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<SenderEvent> {
        std::mem::take(&mut self.events)
    }

    fn event(&mut self, e: SenderEvent) {
        if self.record_events {
            self.events.push(e);
        }
    }

    pub fn outstanding(&self) -> u32 {
        self.snd_nxt - self.snd_una
    }

    pub fn has_unacked(&self) -> bool {
        self.snd_una < self.snd_max
    }

    pub fn transmissions_of(&self, seqno: SeqNo) -> u32 {
        self.tx_count.get(seqno as usize).copied().unwrap_or(0)
    }

    fn window(&self) -> u32 {
        let cwnd = self.cc.cwnd.floor().max(1.0) as u32;
        if self.rwnd == 0 {
            cwnd
        } else {
            cwnd.min(self.rwnd)
        }
    }

    /// Opens the connection and sends the initial window.
    pub fn start(&mut self, now: SimTime) {
        self.cc.mark_start(now);
        self.try_send(now);
    }

    fn emit(&mut self, seqno: SeqNo, cause: SendCause, now: SimTime) {
        let idx = seqno as usize;
        if idx >= self.last_sent.len() {
            self.last_sent.resize(idx + 1, SimTime::ZERO);
            self.tx_count.resize(idx + 1, 0);
        }
        let retransmission = self.tx_count[idx] > 0;
        self.last_sent[idx] = now;
        self.tx_count[idx] += 1;
        self.snd_max = self.snd_max.max(seqno + 1);
        if self.rto_deadline.is_none() {
            self.rto_deadline = Some(now + self.cc.rto);
        }
        self.outbox.push(Transmission {
            seqno,
            retransmission,
            cause,
        });
    }

    fn try_send(&mut self, now: SimTime) {
        if self.aborted {
            return;
        }
        while let Some(s) = self.retx_queue.pop_front() {
            if s >= self.snd_una && s < self.snd_nxt {
                self.emit(s, SendCause::Pack, now);
            }
        }
        let limit = self.snd_una + self.window();
        while self.snd_nxt < limit {
            let s = self.snd_nxt;
            let cause = if s < self.snd_max {
                SendCause::GoBackN
            } else {
                debug_assert!(
                    self.snd_nxt - self.snd_una < self.window(),
                    "window conservation"
                );
                SendCause::New
            };
            self.snd_nxt += 1;
            self.emit(s, cause, now);
        }
    }

    fn loss_reaction(&mut self, cause: SendCause, now: SimTime) {
        let before = self.cc.cwnd;
        let r = self.cc.on_triple_dupack(self.snd_max - 1);
        self.loss_high = self.snd_max - 1;
        self.event(SenderEvent::LossReaction {
            cause,
            cwnd_before: before,
            cwnd_after: self.cc.cwnd,
            ssthresh: self.cc.ssthresh,
        });
        if r.go_back_n {
            self.snd_nxt = self.snd_una + 1;
            self.retx_queue.clear();
        }
        if r.retransmit {
            self.emit(self.snd_una, cause, now);
        }
        self.vegas_marker = None;
    }

    pub fn on_ack(&mut self, now: SimTime, ack: &TcpSegment) {
        if self.aborted || !ack.is_ack {
            return;
        }
        let ack_no = ack.ack_no;
        if ack_no >= self.snd_una && ack_no < self.snd_max {
            let newly = ack_no + 1 - self.snd_una;
            if ack.sent_at > SimTime::ZERO && now >= ack.sent_at {
                self.cc.rtt_sample((now - ack.sent_at).as_secs_f64());
            }
            if self.cc.variant == Variant::Westwood {
                self.cc
                    .westwood_sample(u64::from(newly) * u64::from(self.cc.config().mss_bytes), now);
            }
            self.snd_una = ack_no + 1;
            if self.snd_nxt < self.snd_una {
                self.snd_nxt = self.snd_una;
            }
            if self.cc.in_recovery {
                if self.cc.recovery_ack(ack_no, newly) {
                    self.event(SenderEvent::RecoveryExit { cwnd: self.cc.cwnd });
                } else {
                    // Partial ack: the next hole is lost as well.
                    self.emit(self.snd_una, SendCause::PartialAck, now);
                }
            } else {
                self.cc.ack_growth();
            }
            self.cc.on_progress();
            self.acked_any = true;
            let una = self.snd_una;
            self.pack_guard = self.pack_guard.split_off(&una);
            if self.cc.variant == Variant::Vegas && !self.cc.in_recovery {
                match self.vegas_marker {
                    Some(m) if ack_no < m => {}
                    Some(_) => {
                        let adj = self.cc.vegas_window_update();
                        self.event(SenderEvent::Vegas(adj));
                        self.vegas_marker = Some(self.snd_max - 1);
                    }
                    None => self.vegas_marker = Some(self.snd_max - 1),
                }
            }
            self.rto_deadline = self.has_unacked().then(|| now + self.cc.rto);
            self.event(SenderEvent::Ack {
                ack_no,
                cwnd: self.cc.cwnd,
                ssthresh: self.cc.ssthresh,
            });
        } else if ack_no < self.snd_una && self.has_unacked() {
            self.cc.dupacks += 1;
            let count = self.cc.dupacks;
            self.event(SenderEvent::DupAck { ack_no, count });
            if self.cc.in_recovery {
                self.cc.inflate();
            } else if ack_no >= self.loss_high {
                if count == 3 {
                    self.loss_reaction(SendCause::FastRetransmit, now);
                } else if count < 3 && self.cc.variant == Variant::Vegas {
                    let sent = self.last_sent[self.snd_una as usize];
                    if let Some(fine) = self.cc.fine_rto() {
                        if now.saturating_sub(sent) > fine {
                            self.loss_reaction(SendCause::VegasEarly, now);
                        }
                    }
                }
            }
        }
        if ack.has_miss() {
            self.pack_notice(now, ack.miss_seqno, u32::from(ack.num_miss_seqno));
        }
        self.try_send(now);
    }

    /// Retransmission timer expiry.
    pub fn on_timeout(&mut self, now: SimTime) {
        if self.aborted || !self.has_unacked() {
            self.rto_deadline = None;
            return;
        }
        let before = self.cc.cwnd;
        self.cc.on_timeout();
        if self.cc.backoffs > self.cc.config().max_backoffs {
            self.aborted = true;
            self.rto_deadline = None;
            self.event(SenderEvent::Reset);
            return;
        }
        self.event(SenderEvent::Timeout {
            cwnd_before: before,
            cwnd_after: self.cc.cwnd,
            ssthresh: self.cc.ssthresh,
            rto: self.cc.rto,
        });
        self.loss_high = self.snd_max - 1;
        self.retx_queue.clear();
        self.pack_guard.clear();
        self.vegas_marker = None;
        self.rto_deadline = Some(now + self.cc.rto);
        self.snd_nxt = self.snd_una + 1;
        self.emit(self.snd_una, SendCause::Timeout, now);
        self.try_send(now);
    }

    fn pack_notice(&mut self, now: SimTime, miss_seqno: SeqNo, num: u32) -> u32 {
        let mut queued = 0;
        for s in miss_seqno..miss_seqno.saturating_add(num) {
            if s < self.snd_una || s >= self.snd_nxt {
                continue;
            }
            if self.pack_guard.get(&s).is_some_and(|&deadline| deadline > now) {
                continue;
            }
            self.pack_guard.insert(s, now + self.cc.rto);
            self.retx_queue.push_back(s);
            queued += 1;
        }
        self.event(SenderEvent::PackNotice {
            miss_seqno,
            num_miss_seqno: num,
            queued,
        });
        queued
    }

    /// Miss report delivered by a PACK; queues the still-unacknowledged
    /// segments ahead of new data. Returns how many were queued.
    pub fn on_pack_notification(&mut self, now: SimTime, miss_seqno: SeqNo, num: u32) -> u32 {
        if self.aborted {
            return 0;
        }
        let queued = self.pack_notice(now, miss_seqno, num);
        self.try_send(now);
        queued
    }

    /// Route discovery gave up. A connection that never got going is aborted.
    pub fn on_no_route(&mut self) -> bool {
        if !self.acked_any && !self.aborted {
            self.aborted = true;
            self.rto_deadline = None;
            self.event(SenderEvent::Reset);
            return true;
        }
        false
    }
}
