//! Per-flow accounting and the four reported metrics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::packet::{FlowId, SeqNo};
use crate::sim::{NodeId, SimTime};

/// Control packet kinds counted as routing overhead.
pub const CONTROL_KINDS: [&str; 5] = ["rreq", "rrep", "rerr", "pack", "ohpack"];

#[derive(Debug, Clone, Default)]
pub struct FlowMetrics {
    pub src: NodeId,
    pub dst: NodeId,
    pub start: SimTime,
    first_tx: Vec<Option<SimTime>>,
    /// Copies of each segment currently alive in queues, buffers or the air.
    copies: Vec<u32>,
    pub transmissions: u64,
    pub delivered_bytes: u64,
    pub delay_sum: f64,
    pub delay_count: u64,
    /// Seqnos in the order the application received them.
    pub delivery_log: Vec<SeqNo>,
}

impl FlowMetrics {
    fn slot(&mut self, seqno: SeqNo) -> usize {
        let i = seqno as usize;
        if i >= self.first_tx.len() {
            self.first_tx.resize(i + 1, None);
            self.copies.resize(i + 1, 0);
        }
        i
    }

    pub fn sent_unique(&self) -> u64 {
        self.first_tx.iter().filter(|t| t.is_some()).count() as u64
    }

    pub fn delivered(&self) -> u64 {
        self.delivery_log.len() as u64
    }

    fn is_delivered(&self, seqno: SeqNo) -> bool {
        // Deliveries are in order, so the log is exactly 1..=n when healthy.
        (seqno as u64) <= self.delivered()
    }

    pub fn in_flight(&self) -> u64 {
        self.copies
            .iter()
            .enumerate()
            .filter(|&(s, &c)| c > 0 && self.first_tx[s].is_some() && !self.is_delivered(s as SeqNo))
            .count() as u64
    }

    pub fn lost(&self) -> u64 {
        self.sent_unique() - self.delivered() - self.in_flight()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub flows: Vec<FlowMetrics>,
    pub control: BTreeMap<&'static str, u64>,
    pub data_frames: u64,
    pub drops: BTreeMap<&'static str, u64>,
}

impl Metrics {
    pub fn new(endpoints: &[(NodeId, NodeId, SimTime)]) -> Self {
        Metrics {
            flows: endpoints
                .iter()
                .map(|&(src, dst, start)| FlowMetrics {
                    src,
                    dst,
                    start,
                    ..FlowMetrics::default()
                })
                .collect(),
            ..Metrics::default()
        }
    }

    /// The source hands a segment to the network; creates one copy.
    pub fn on_send(&mut self, flow: FlowId, seqno: SeqNo, now: SimTime) {
        let f = &mut self.flows[flow as usize];
        let i = f.slot(seqno);
        f.first_tx[i].get_or_insert(now);
        f.copies[i] += 1;
        f.transmissions += 1;
    }

    pub fn copy_created(&mut self, flow: FlowId, seqno: SeqNo) {
        let f = &mut self.flows[flow as usize];
        let i = f.slot(seqno);
        f.copies[i] += 1;
    }

    pub fn copy_gone(&mut self, flow: FlowId, seqno: SeqNo) {
        let f = &mut self.flows[flow as usize];
        let i = f.slot(seqno);
        assert!(f.copies[i] > 0, "copy count underflow for flow {flow} seq {seqno}");
        f.copies[i] -= 1;
    }

    pub fn on_deliver(&mut self, flow: FlowId, seqno: SeqNo, bytes: u32, now: SimTime) {
        let f = &mut self.flows[flow as usize];
        let i = f.slot(seqno);
        if let Some(t0) = f.first_tx[i] {
            f.delay_sum += (now - t0).as_secs_f64();
            f.delay_count += 1;
        }
        f.delivered_bytes += u64::from(bytes);
        f.delivery_log.push(seqno);
    }

    pub fn on_control_tx(&mut self, kind: &'static str) {
        *self.control.entry(kind).or_default() += 1;
    }

    pub fn on_drop(&mut self, reason: &'static str) {
        *self.drops.entry(reason).or_default() += 1;
    }

    pub fn overhead(&self) -> u64 {
        self.control.values().sum()
    }

    /// Checks that every flow delivered a complete, in-order, duplicate-free
    /// prefix and that sent segments are all accounted for.
    pub fn audit(&self) -> Result<(), String> {
        for (id, f) in self.flows.iter().enumerate() {
            for (k, &s) in f.delivery_log.iter().enumerate() {
                if s as usize != k + 1 {
                    return Err(format!(
                        "flow {id}: delivery #{} was seq {s}, expected {}",
                        k + 1,
                        k + 1
                    ));
                }
                if f.first_tx.get(s as usize).copied().flatten().is_none() {
                    return Err(format!("flow {id}: seq {s} delivered but never sent"));
                }
            }
            let (sent, d, l, i) = (f.sent_unique(), f.delivered(), f.lost(), f.in_flight());
            if sent != d + l + i {
                return Err(format!(
                    "flow {id}: sent {sent} != delivered {d} + lost {l} + in flight {i}"
                ));
            }
            if let Some(max) = f.first_tx.iter().rposition(Option::is_some) {
                if sent != max as u64 {
                    return Err(format!("flow {id}: seqnos sent are not contiguous"));
                }
            }
        }
        Ok(())
    }

    pub fn summarize(&self, end: SimTime) -> RunSummary {
        let flows: Vec<FlowSummary> = self
            .flows
            .iter()
            .map(|f| {
                let dur = end.saturating_sub(f.start).as_secs_f64();
                FlowSummary {
                    src: f.src,
                    dst: f.dst,
                    sent_unique: f.sent_unique(),
                    delivered: f.delivered(),
                    lost: f.lost(),
                    in_flight: f.in_flight(),
                    transmissions: f.transmissions,
                    throughput_bps: (dur > 0.0).then(|| f.delivered_bytes as f64 * 8.0 / dur),
                    avg_delay_s: (f.delay_count > 0).then(|| f.delay_sum / f.delay_count as f64),
                }
            })
            .collect();
        let sent: u64 = flows.iter().map(|f| f.sent_unique).sum();
        let delivered: u64 = flows.iter().map(|f| f.delivered).sum();
        let delay_n: u64 = self.flows.iter().map(|f| f.delay_count).sum();
        let delay_sum: f64 = self.flows.iter().map(|f| f.delay_sum).sum();
        let overhead = self.overhead();
        RunSummary {
            throughput_bps: flows.iter().filter_map(|f| f.throughput_bps).sum(),
            loss_pct: if sent == 0 {
                0.0
            } else {
                100.0 * (sent - delivered) as f64 / sent as f64
            },
            avg_delay_s: (delay_n > 0).then(|| delay_sum / delay_n as f64),
            overhead_pkts: overhead,
            overhead_ratio: if self.data_frames == 0 {
                0.0
            } else {
                overhead as f64 / self.data_frames as f64
            },
            data_frames: self.data_frames,
            control: self.control.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            drops: self.drops.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            flows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub src: NodeId,
    pub dst: NodeId,
    pub sent_unique: u64,
    pub delivered: u64,
    pub lost: u64,
    pub in_flight: u64,
    pub transmissions: u64,
    pub throughput_bps: Option<f64>,
    pub avg_delay_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    /// Sum of per-flow goodput.
    pub throughput_bps: f64,
    /// Unique segments sent but not delivered by the end of the run.
    pub loss_pct: f64,
    pub avg_delay_s: Option<f64>,
    /// Control packet transmissions, counted once per hop.
    pub overhead_pkts: u64,
    pub overhead_ratio: f64,
    pub data_frames: u64,
    pub control: BTreeMap<String, u64>,
    pub drops: BTreeMap<String, u64>,
    pub flows: Vec<FlowSummary>,
}
