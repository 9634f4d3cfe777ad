use super::{TcpConfig, Variant};
use crate::packet::SeqNo;
use crate::sim::SimTime;

/// What the sender must do after a loss signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossReaction {
    /// Retransmit the oldest unacknowledged segment now.
    pub retransmit: bool,
    /// Resend everything from the oldest unacknowledged segment (slow-start restart).
    pub go_back_n: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VegasAdjust {
    Increase,
    Decrease,
    Hold,
    LeaveSlowStart,
}

/// Congestion-control state of one connection.
#[derive(Debug, Clone)]
pub struct CwndState {
    pub variant: Variant,
    /// Congestion window in segments.
    pub cwnd: f64,
    pub ssthresh: f64,
    pub dupacks: u32,
    /// Smoothed RTT and deviation, seconds.
    pub srtt: Option<f64>,
    pub rttvar: f64,
    pub rto: SimTime,
    /// Consecutive timeouts without progress.
    pub backoffs: u32,
    pub in_recovery: bool,
    /// Highest seqno outstanding when recovery began.
    pub recover: SeqNo,
    recovery_exit_cwnd: f64,
    // Vegas
    pub base_rtt: Option<f64>,
    pub expected_rate: f64,
    pub actual_rate: f64,
    // Westwood
    /// Bandwidth estimate, bytes per second.
    pub bwe: f64,
    pub rtt_min: Option<f64>,
    last_ack_at: Option<SimTime>,
    cfg: TcpConfig,
}

const CLOCK_GRANULARITY: f64 = 0.001;

impl CwndState {
    pub fn new(variant: Variant, cfg: &TcpConfig) -> Self {
        CwndState {
            variant,
            cwnd: 1.0,
            ssthresh: cfg.initial_ssthresh_segments(),
            dupacks: 0,
            srtt: None,
            rttvar: 0.0,
            rto: SimTime::from_secs_f64(cfg.rto_init_s).max(cfg.rto_min()),
            backoffs: 0,
            in_recovery: false,
            recover: 0,
            recovery_exit_cwnd: 1.0,
            base_rtt: None,
            expected_rate: 0.0,
            actual_rate: 0.0,
            bwe: 0.0,
            rtt_min: None,
            last_ack_at: None,
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &TcpConfig {
        &self.cfg
    }

    pub fn in_slow_start(&self) -> bool {
        self.cwnd < self.ssthresh
    }

    /// Window growth for one ack that advances the cumulative ack point.
    pub fn ack_growth(&mut self) {
        if self.in_slow_start() {
            self.cwnd += 1.0;
        } else if self.variant != Variant::Vegas {
            self.cwnd += 1.0 / self.cwnd;
        }
    }

    pub fn rtt_sample(&mut self, rtt: f64) {
        if rtt <= 0.0 {
            return;
        }
        match self.srtt {
            None => {
                self.srtt = Some(rtt);
                self.rttvar = rtt / 2.0;
            }
            Some(srtt) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (srtt - rtt).abs();
                self.srtt = Some(0.875 * srtt + 0.125 * rtt);
            }
        }
        self.base_rtt = Some(self.base_rtt.map_or(rtt, |b| b.min(rtt)));
        self.rtt_min = Some(self.rtt_min.map_or(rtt, |b| b.min(rtt)));
        self.rto = self.computed_rto();
    }

    fn computed_rto(&self) -> SimTime {
        let srtt = self.srtt.unwrap_or(self.cfg.rto_init_s);
        let raw = srtt + (4.0 * self.rttvar).max(CLOCK_GRANULARITY);
        SimTime::from_secs_f64(raw.clamp(self.cfg.rto_min_s, self.cfg.rto_max_s))
    }

    /// Fine-grained timeout used by Vegas on early duplicate acks (no lower clamp).
    pub fn fine_rto(&self) -> Option<SimTime> {
        self.srtt
            .map(|s| SimTime::from_secs_f64(s + (4.0 * self.rttvar).max(CLOCK_GRANULARITY)))
    }

    /// Progress clears timeout backoff.
    pub fn on_progress(&mut self) {
        self.backoffs = 0;
        self.dupacks = 0;
        self.rto = self.computed_rto();
    }

    /// Once-per-RTT Vegas rule comparing expected and actual rates.
    pub fn vegas_window_update(&mut self) -> VegasAdjust {
        let (Some(base), Some(srtt)) = (self.base_rtt, self.srtt) else {
            return VegasAdjust::Hold;
        };
        self.expected_rate = self.cwnd / base;
        self.actual_rate = self.cwnd / srtt;
        let diff = (self.expected_rate - self.actual_rate) * base;
        if self.in_slow_start() {
            if diff > self.cfg.vegas_gamma {
                self.ssthresh = self.cwnd.floor().max(2.0);
                return VegasAdjust::LeaveSlowStart;
            }
            return VegasAdjust::Hold;
        }
        if diff < self.cfg.vegas_alpha {
            self.cwnd += 1.0;
            VegasAdjust::Increase
        } else if diff > self.cfg.vegas_beta {
            self.cwnd = (self.cwnd - 1.0).max(1.0);
            VegasAdjust::Decrease
        } else {
            VegasAdjust::Hold
        }
    }

    /// Ack-rate bandwidth sample fed through a first-order low-pass filter.
    pub fn westwood_sample(&mut self, acked_bytes: u64, now: SimTime) {
        let Some(prev) = self.last_ack_at else {
            self.last_ack_at = Some(now);
            return;
        };
        if now <= prev {
            return;
        }
        let sample = acked_bytes as f64 / (now - prev).as_secs_f64();
        self.last_ack_at = Some(now);
        if self.bwe == 0.0 {
            self.bwe = sample;
        } else {
            let g = self.cfg.ww_filter_gain;
            self.bwe = (1.0 - g) * self.bwe + g * sample;
        }
    }

    /// Marks the reference point for the first bandwidth sample.
    pub fn mark_start(&mut self, now: SimTime) {
        if self.last_ack_at.is_none() {
            self.last_ack_at = Some(now);
        }
    }

    /// Bandwidth-delay product in segments, at least 2.
    pub fn westwood_ssthresh(&self) -> f64 {
        let rtt = self.rtt_min.unwrap_or(0.0);
        let segs = self.bwe * rtt / f64::from(self.cfg.mss_bytes);
        (segs + 1e-9).floor().max(2.0)
    }

    fn halved(&self) -> f64 {
        (self.cwnd / 2.0).floor().max(2.0)
    }

    /// Loss reaction on the third duplicate ack (or an early Vegas trigger).
    pub fn on_triple_dupack(&mut self, highest_sent: SeqNo) -> LossReaction {
        match self.variant {
            Variant::Tahoe => {
                self.ssthresh = self.halved();
                self.cwnd = 1.0;
                LossReaction {
                    retransmit: true,
                    go_back_n: true,
                }
            }
            Variant::Reno | Variant::NewReno | Variant::Vegas => {
                self.ssthresh = self.halved();
                self.recovery_exit_cwnd = self.ssthresh;
                self.cwnd = self.ssthresh + 3.0;
                self.in_recovery = true;
                self.recover = highest_sent;
                LossReaction {
                    retransmit: true,
                    go_back_n: false,
                }
            }
            Variant::Westwood => {
                self.ssthresh = self.westwood_ssthresh();
                self.cwnd = self.cwnd.min(self.ssthresh);
                self.recovery_exit_cwnd = self.cwnd;
                self.in_recovery = true;
                self.recover = highest_sent;
                LossReaction {
                    retransmit: true,
                    go_back_n: false,
                }
            }
        }
    }

    /// Extra duplicate ack during fast recovery.
    pub fn inflate(&mut self) {
        if self.in_recovery {
            self.cwnd += 1.0;
        }
    }

    /// New ack during recovery. Returns true when recovery ends.
    pub fn recovery_ack(&mut self, ack_no: SeqNo, newly_acked: u32) -> bool {
        debug_assert!(self.in_recovery);
        if self.variant == Variant::NewReno && ack_no < self.recover {
            // Partial ack: deflate by what was acked, keep one new segment going.
            self.cwnd = (self.cwnd - f64::from(newly_acked) + 1.0).max(1.0);
            return false;
        }
        self.cwnd = self.recovery_exit_cwnd;
        self.in_recovery = false;
        true
    }

    pub fn on_timeout(&mut self) {
        self.ssthresh = if self.variant == Variant::Westwood {
            self.westwood_ssthresh()
        } else {
            self.halved()
        };
        self.cwnd = 1.0;
        self.in_recovery = false;
        self.dupacks = 0;
        self.backoffs += 1;
        self.rto = self.rto.saturating_add(self.rto).min(self.cfg.rto_max());
    }
}
