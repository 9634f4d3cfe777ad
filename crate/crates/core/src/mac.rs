//! CSMA medium access: carrier sense, random backoff, per-frame retries for
//! unicast, and a drop-tail interface queue with control traffic first.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::packet::{Packet, Payload, BROADCAST};
use crate::radio::{airtime, propagation_delay, TxId, PHY_OVERHEAD};
use crate::sim::{NodeId, SimTime};
use crate::world::{trace, Action, InAir, World};

pub const SLOT: SimTime = SimTime::from_micros(20);
pub const SIFS: SimTime = SimTime::from_micros(10);
pub const DIFS: SimTime = SimTime::from_micros(50);
pub const CW_MIN: u32 = 31;
pub const CW_MAX: u32 = 1023;
/// Link-layer acknowledgement frame size.
pub const ACK_BYTES: u32 = 14;

struct Hop(NodeId);

impl std::fmt::Display for Hop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 == BROADCAST {
            f.write_str("*")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MacState {
    Idle,
    Contending,
    Transmitting,
    AwaitAck,
}

#[derive(Debug)]
pub(crate) struct Frame {
    pub pkt: Packet,
    pub next_hop: NodeId,
    pub sent_once: bool,
}

pub(crate) struct Mac {
    ctrl: VecDeque<Frame>,
    data: VecDeque<Frame>,
    current: Option<Frame>,
    retries: u32,
    cw: u32,
    pub state: MacState,
    tx: Option<TxId>,
    acked: bool,
    rng: ChaCha8Rng,
}

impl Mac {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Mac {
            ctrl: VecDeque::new(),
            data: VecDeque::new(),
            current: None,
            retries: 0,
            cw: CW_MIN,
            state: MacState::Idle,
            tx: None,
            acked: false,
            rng,
        }
    }

    pub fn queued(&self) -> usize {
        self.ctrl.len() + self.data.len()
    }

    fn backoff(&mut self) -> SimTime {
        let slots = self.rng.gen_range(0..=self.cw);
        SimTime(SLOT.nanos() * u64::from(slots))
    }

    /// Removes queued frames for `next_hop`.
    fn pull(&mut self, next_hop: NodeId) -> Vec<Packet> {
        let mut out = Vec::new();
        for q in [&mut self.ctrl, &mut self.data] {
            let (gone, keep): (VecDeque<Frame>, VecDeque<Frame>) =
                q.drain(..).partition(|f| f.next_hop == next_hop);
            *q = keep;
            out.extend(gone.into_iter().map(|f| f.pkt));
        }
        out
    }
}

impl World {
    fn ack_timeout(&self) -> SimTime {
        let rate = self.sc.radio.link_rate_bps;
        let ack = PHY_OVERHEAD + SimTime::from_secs_f64(f64::from(ACK_BYTES) * 8.0 / rate);
        let prop = propagation_delay(self.sc.radio.range_m);
        SIFS + ack + prop + prop
    }

    pub(crate) fn mac_enqueue(&mut self, node: NodeId, pkt: Packet, next_hop: NodeId) {
        let limit = self.sc.radio.ifq_len;
        let mac = &mut self.nodes[node as usize].mac;
        if mac.queued() >= limit {
            self.discard(node, &pkt, "ifq");
            return;
        }
        let control = pkt.payload.is_control();
        let frame = Frame {
            pkt,
            next_hop,
            sent_once: false,
        };
        if control {
            mac.ctrl.push_back(frame);
        } else {
            mac.data.push_back(frame);
        }
        if mac.state == MacState::Idle {
            self.mac_start(node);
        }
    }

    /// Takes the next frame and starts contending for the medium.
    fn mac_start(&mut self, node: NodeId) {
        let mac = &mut self.nodes[node as usize].mac;
        if mac.state != MacState::Idle {
            return;
        }
        if mac.current.is_none() {
            mac.current = mac.ctrl.pop_front().or_else(|| mac.data.pop_front());
            mac.retries = 0;
            mac.cw = CW_MIN;
        }
        if mac.current.is_none() {
            return;
        }
        self.mac_defer(node);
    }

    fn mac_defer(&mut self, node: NodeId) {
        let now = self.now();
        let idle = self.channel.idle_at(node, now);
        let mac = &mut self.nodes[node as usize].mac;
        mac.state = MacState::Contending;
        let at = idle + DIFS + mac.backoff();
        self.q.schedule(at, node, Action::MacAttempt);
    }

    pub(crate) fn mac_attempt(&mut self, node: NodeId) {
        let now = self.now();
        if self.channel.busy(node, now) {
            self.mac_defer(node);
            return;
        }
        let range = self.sc.radio.range_m;
        let cs_range = self.sc.radio.cs_range_m;
        let rate = self.sc.radio.link_rate_bps;
        let here = self.position(node);
        let mut receivers = Vec::new();
        let mut sensers = Vec::new();
        for j in (0..self.nodes.len() as NodeId).filter(|&j| j != node) {
            let d = here.distance(&self.position(j));
            if d <= range {
                receivers.push((j, propagation_delay(d)));
            } else if d <= cs_range {
                sensers.push((j, propagation_delay(d)));
            }
        }
        let mac = &mut self.nodes[node as usize].mac;
        let frame = mac.current.as_mut().expect("contending without a frame");
        let first = !frame.sent_once;
        frame.sent_once = true;
        let pkt = frame.pkt.clone();
        let next_hop = frame.next_hop;
        let air = airtime(pkt.size_bytes(), rate);
        mac.state = MacState::Transmitting;
        mac.acked = false;
        if first {
            match &pkt.payload {
                Payload::Tcp(s) if !s.is_ack => self.metrics.data_frames += 1,
                Payload::Tcp(_) => {}
                p => self.metrics.on_control_tx(p.kind()),
            }
        }
        let tx = self.channel.begin_tx(node, now, air, &receivers);
        for &(j, prop) in &sensers {
            self.channel.sense(j, now + prop, now + air + prop);
        }
        self.nodes[node as usize].mac.tx = Some(tx);
        trace!(
            self,
            node,
            "mac",
            "tx",
            "{} uid={} to={} retry={}",
            pkt.payload.kind(),
            pkt.uid,
            Hop(next_hop),
            self.nodes[node as usize].mac.retries
        );
        for &(r, prop) in &receivers {
            self.q.schedule(now + air + prop, r, Action::RxEnd(tx));
        }
        if !receivers.is_empty() {
            self.air.insert(
                tx,
                InAir {
                    pkt,
                    mac_src: node,
                    mac_dst: next_hop,
                    pending: receivers.len(),
                },
            );
        }
        self.q.schedule(now + air, node, Action::TxEnd);
    }

    pub(crate) fn mac_tx_end(&mut self, node: NodeId) {
        let broadcast = {
            let mac = &self.nodes[node as usize].mac;
            mac.current.as_ref().expect("frame on air").next_hop == BROADCAST
        };
        if broadcast {
            self.mac_finish(node);
            return;
        }
        self.nodes[node as usize].mac.state = MacState::AwaitAck;
        let at = self.now() + self.ack_timeout();
        self.q.schedule(at, node, Action::AckWait);
    }

    fn mac_finish(&mut self, node: NodeId) {
        let mac = &mut self.nodes[node as usize].mac;
        mac.current = None;
        mac.tx = None;
        mac.state = MacState::Idle;
        self.mac_start(node);
    }

    pub(crate) fn mac_ack_wait(&mut self, node: NodeId) {
        let limit = self.sc.radio.mac_retries;
        let mac = &mut self.nodes[node as usize].mac;
        if mac.acked {
            if let Some(Payload::Tcp(s)) = mac.current.as_ref().map(|f| &f.pkt.payload) {
                if !s.is_ack {
                    let (f, q) = (s.flow, s.seqno);
                    self.metrics.copy_gone(f, q);
                }
            }
            self.mac_finish(node);
            return;
        }
        mac.retries += 1;
        if mac.retries > limit {
            let frame = mac.current.take().expect("awaiting ack");
            mac.tx = None;
            mac.state = MacState::Idle;
            let mut lost = vec![frame.pkt];
            lost.extend(mac.pull(frame.next_hop));
            trace!(self, node, "mac", "fail", "next={}", frame.next_hop);
            self.link_break(node, frame.next_hop, lost);
            self.mac_start(node);
            return;
        }
        mac.cw = (mac.cw * 2 + 1).min(CW_MAX);
        self.mac_defer(node);
    }

    pub(crate) fn mac_rx_end(&mut self, node: NodeId, tx: TxId) {
        let intact = self.channel.finish_rx(node, tx).unwrap_or(false);
        let Some(inair) = self.air.get_mut(&tx) else {
            return;
        };
        inair.pending -= 1;
        let (src, dst) = (inair.mac_src, inair.mac_dst);
        let deliver = intact && (dst == BROADCAST || dst == node);
        let pkt = if deliver {
            Some(if inair.pending == 0 {
                self.air.remove(&tx).expect("present").pkt
            } else {
                inair.pkt.clone()
            })
        } else {
            if inair.pending == 0 {
                self.air.remove(&tx);
            }
            None
        };
        let Some(pkt) = pkt else { return };
        if dst == node {
            let smac = &mut self.nodes[src as usize].mac;
            if smac.tx == Some(tx) {
                smac.acked = true;
            }
        }
        self.net_receive(node, src, pkt);
    }
}
