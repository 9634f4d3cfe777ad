//! The simulated network: nodes, flows and the event dispatcher.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mac::Mac;
use crate::metrics::{Metrics, RunSummary};
use crate::pack::{CheckOutcome, MissInfo};
use crate::packet::{FlowId, PackPacket, Packet, Payload, SeqNo, TcpSegment, BROADCAST};
use crate::radio::{place_grid, MobilityState, PlacementError, Position, TxId};
use crate::routing::{ProxyRole, RouteTable};
use crate::scenario::{Layout, Protocol, Scenario, ScenarioError};
use crate::sim::{rng_stream, EventHandle, EventQueue, NodeId, Purpose, RunStats, SimTime};
use crate::tcp::{SenderEvent, TcpReceiver, TcpSender, Transmission};
use crate::trace::{Trace, TraceMode};

/// Hop limit of data and unicast control packets.
pub const DATA_TTL: u32 = 32;

#[derive(Debug)]
pub(crate) enum Action {
    FlowStart(FlowId),
    Rto(FlowId),
    Fallback(FlowId),
    Move,
    MacAttempt,
    TxEnd,
    AckWait,
    RxEnd(TxId),
    /// Delayed broadcast of a forwarded request.
    Jittered(Box<Packet>),
    DiscoveryTimeout(NodeId),
}

/// Packets waiting for a route to one destination.
#[derive(Debug)]
pub(crate) struct Pending {
    pub buffer: VecDeque<Packet>,
    pub attempt: u32,
    pub timer: EventHandle,
    /// Hop count of the broken route, for local repair requests.
    pub repair: Option<u32>,
}

pub(crate) const PENDING_LIMIT: usize = 64;

pub(crate) struct Node {
    pub mobility: MobilityState,
    pub mob_rng: ChaCha8Rng,
    pub jitter_rng: ChaCha8Rng,
    pub mac: Mac,
    pub routes: RouteTable,
    /// Nodes that forward through this node, per destination.
    pub precursors: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub seq: u32,
    pub bcast_id: u32,
    pub seen: HashSet<(NodeId, u32)>,
    pub pending: BTreeMap<NodeId, Pending>,
    /// Proxy roles held, keyed by (source, destination).
    pub roles: BTreeMap<(NodeId, NodeId), ProxyRole>,
    /// MAC source of the latest data frame of each flow.
    pub upstream: BTreeMap<FlowId, NodeId>,
}

pub(crate) struct Flow {
    pub src: NodeId,
    pub dst: NodeId,
    pub sender: TcpSender,
    pub receiver: TcpReceiver,
    pub started: bool,
    rto_timer: Option<(SimTime, EventHandle)>,
    fallback: Fallback,
    fallback_una: SeqNo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fallback {
    Idle,
    Armed(EventHandle),
    /// Fired without progress; re-armed only once acks advance.
    Spent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProxyEvent {
    Assigned {
        at: SimTime,
        node: NodeId,
        origin: NodeId,
        dest: NodeId,
        hops_to_dest: u32,
    },
    Resigned {
        at: SimTime,
        node: NodeId,
        origin: NodeId,
        dest: NodeId,
    },
    Gap {
        at: SimTime,
        node: NodeId,
        flow: FlowId,
        first: SeqNo,
        count: u32,
    },
}

/// Structured observations for tests, recorded when enabled.
#[derive(Debug, Clone, Default)]
pub struct Probe {
    pub tcp: Vec<(SimTime, FlowId, SenderEvent)>,
    pub sends: Vec<(SimTime, FlowId, Transmission)>,
    /// Segments handed to the receiving application, in order of hand-over.
    pub deliveries: Vec<(SimTime, FlowId, SeqNo)>,
    pub proxy: Vec<ProxyEvent>,
    /// (time, node, destination, hop count) of every completed discovery.
    pub routes: Vec<(SimTime, NodeId, NodeId, u32)>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trace: TraceMode,
    pub probe: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error("trace: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub audit: Result<(), String>,
    pub trace_hash: Option<String>,
    pub probe: Option<Probe>,
    pub stats: RunStats,
}

/// One usable routing-table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteView {
    pub node: NodeId,
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
}

pub(crate) struct InAir {
    pub pkt: Packet,
    pub mac_src: NodeId,
    pub mac_dst: NodeId,
    pub pending: usize,
}

pub struct World {
    pub(crate) sc: Scenario,
    pub(crate) q: EventQueue<Action>,
    pub(crate) nodes: Vec<Node>,
    pub(crate) channel: crate::radio::Channel,
    pub(crate) air: HashMap<TxId, InAir>,
    pub(crate) flows: Vec<Flow>,
    pub(crate) metrics: Metrics,
    pub(crate) trace: Trace,
    pub(crate) probe: Option<Probe>,
    arrivals: BTreeMap<(FlowId, SeqNo, NodeId), u32>,
    pub(crate) lifetime: SimTime,
    end: SimTime,
    next_uid: u64,
}

macro_rules! trace {
    ($w:expr, $node:expr, $layer:expr, $kind:expr, $($arg:tt)*) => {
        if $w.trace.enabled() {
            let now = $w.q.now();
            $w.trace.record(now, $node, $layer, $kind, format_args!($($arg)*));
        }
    };
}
pub(crate) use trace;

impl World {
    pub fn new(sc: &Scenario, opts: &RunOptions) -> Result<World, SimError> {
        sc.validate()?;
        let n = sc.node_count();
        let area = sc.area();
        let positions: Vec<Position> = match sc.nodes.layout {
            Layout::Grid => place_grid(sc.nodes.rows, sc.nodes.cols, sc.nodes.spacing_m, area)?,
            Layout::Random => (0..n as NodeId)
                .map(|k| area.random_point(&mut rng_stream(sc.seed, k, Purpose::Placement)))
                .collect(),
        };
        let params = sc.waypoint_params();
        let mut q = EventQueue::new();
        let nodes: Vec<Node> = positions
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                let id = k as NodeId;
                let mut mob_rng = rng_stream(sc.seed, id, Purpose::Mobility);
                let mobility = MobilityState::initial(p, &params, area, &mut mob_rng);
                if mobility.is_moving() {
                    q.schedule(mobility.arrive_at, id, Action::Move);
                }
                Node {
                    mobility,
                    mob_rng,
                    jitter_rng: rng_stream(sc.seed, id, Purpose::Jitter),
                    mac: Mac::new(rng_stream(sc.seed, id, Purpose::MacBackoff)),
                    routes: RouteTable::new(),
                    precursors: BTreeMap::new(),
                    seq: 0,
                    bcast_id: 0,
                    seen: HashSet::new(),
                    pending: BTreeMap::new(),
                    roles: BTreeMap::new(),
                    upstream: BTreeMap::new(),
                }
            })
            .collect();
        let mut flows = Vec::with_capacity(sc.flows.len());
        let mut endpoints = Vec::with_capacity(sc.flows.len());
        for (i, f) in sc.flows.iter().enumerate() {
            let id = i as FlowId;
            let start = SimTime::from_secs_f64(f.start_s);
            let mut sender = TcpSender::new(id, sc.variant, &sc.tcp);
            sender.record_events(opts.probe);
            flows.push(Flow {
                src: f.src,
                dst: f.dst,
                sender,
                receiver: TcpReceiver::new(id),
                started: false,
                rto_timer: None,
                fallback: Fallback::Idle,
                fallback_una: 0,
            });
            endpoints.push((f.src, f.dst, start));
            q.schedule(start, f.src, Action::FlowStart(id));
        }
        Ok(World {
            trace: Trace::new(&opts.trace, sc)?,
            sc: sc.clone(),
            q,
            channel: crate::radio::Channel::new(n),
            air: HashMap::new(),
            nodes,
            flows,
            metrics: Metrics::new(&endpoints),
            probe: opts.probe.then(Probe::default),
            arrivals: BTreeMap::new(),
            lifetime: SimTime::from_secs_f64(sc.aodv.route_lifetime_s),
            end: SimTime::from_secs_f64(sc.duration_s),
            next_uid: 0,
        })
    }

    /// Dispatches every event due at or before `t`, capped at the run end.
    pub fn run_until(&mut self, t: SimTime) {
        let t = t.min(self.end);
        while let Some(ev) = self.q.pop_until(t) {
            self.dispatch(ev.target, ev.action);
        }
        self.q.advance_to(t);
    }

    pub fn clock(&self) -> SimTime {
        self.q.now()
    }

    /// Every usable route at this instant, by node then destination.
    pub fn route_snapshot(&self) -> Vec<RouteView> {
        let now = self.now();
        let mut out = Vec::new();
        for (k, n) in self.nodes.iter().enumerate() {
            for e in n.routes.iter().filter(|e| e.usable(now)) {
                out.push(RouteView {
                    node: k as NodeId,
                    dest: e.dest,
                    next_hop: e.next_hop,
                    hop_count: e.hop_count,
                });
            }
        }
        out.sort_by_key(|r| (r.node, r.dest));
        out
    }

    /// Proxy roles held right now as (holder, source, destination, hops to
    /// destination at assignment).
    pub fn proxy_roles(&self) -> Vec<(NodeId, NodeId, NodeId, u32)> {
        let mut out = Vec::new();
        for (k, n) in self.nodes.iter().enumerate() {
            for (&(o, d), role) in &n.roles {
                out.push((k as NodeId, o, d, role.hops_to_dest));
            }
        }
        out
    }

    /// Runs to the scenario end and summarizes.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        self.run_until(self.end);
        let summary = self.metrics.summarize(self.end);
        let audit = self.metrics.audit();
        let stats = self.q.stats();
        Ok(RunOutput {
            summary,
            audit,
            trace_hash: self.trace.finish()?,
            probe: self.probe,
            stats,
        })
    }

    fn dispatch(&mut self, node: NodeId, action: Action) {
        match action {
            Action::FlowStart(f) => {
                self.flows[f as usize].started = true;
                let now = self.now();
                self.flows[f as usize].sender.start(now);
                self.sync_flow(f);
            }
            Action::Rto(f) => self.on_rto(f),
            Action::Fallback(f) => self.on_fallback(f),
            Action::Move => self.on_move(node),
            Action::MacAttempt => self.mac_attempt(node),
            Action::TxEnd => self.mac_tx_end(node),
            Action::AckWait => self.mac_ack_wait(node),
            Action::RxEnd(tx) => self.mac_rx_end(node, tx),
            Action::Jittered(pkt) => self.mac_enqueue(node, *pkt, BROADCAST),
            Action::DiscoveryTimeout(dest) => self.on_discovery_timeout(node, dest),
        }
    }

    pub(crate) fn now(&self) -> SimTime {
        self.q.now()
    }

    pub(crate) fn uid(&mut self) -> u64 {
        self.next_uid += 1;
        self.next_uid
    }

    pub(crate) fn part(&self) -> bool {
        self.sc.routing == Protocol::Part
    }

    pub(crate) fn position(&self, node: NodeId) -> Position {
        self.nodes[node as usize].mobility.position_at(self.now())
    }

    fn on_move(&mut self, node: NodeId) {
        let now = self.now();
        let params = self.sc.waypoint_params();
        let area = self.sc.area();
        let n = &mut self.nodes[node as usize];
        n.mobility = crate::radio::step_random_waypoint(&n.mobility, now, &params, area, &mut n.mob_rng);
        if n.mobility.is_moving() {
            let at = n.mobility.arrive_at;
            self.q.schedule(at, node, Action::Move);
        }
    }

    /// A flow's source node that has an active connection toward `dest`.
    pub(crate) fn active_flow_to(&self, node: NodeId, dest: NodeId) -> bool {
        self.flows
            .iter()
            .any(|f| f.src == node && f.dst == dest && f.started && !f.sender.aborted)
    }

    /// Drops a packet that will never be forwarded again.
    pub(crate) fn discard(&mut self, node: NodeId, pkt: &Packet, reason: &'static str) {
        if let Payload::Tcp(s) = &pkt.payload {
            if !s.is_ack {
                self.metrics.copy_gone(s.flow, s.seqno);
            }
        }
        self.metrics.on_drop(reason);
        trace!(self, node, "net", "drop", "{} uid={} reason={reason}", pkt.payload.kind(), pkt.uid);
    }

    // ---- transport ----

    /// Moves a sender's queued transmissions into the network and keeps its
    /// timers in step with its state.
    fn sync_flow(&mut self, f: FlowId) {
        let now = self.now();
        let fl = &mut self.flows[f as usize];
        let out = fl.sender.take_outbox();
        let events = fl.sender.take_events();
        let (src, dst) = (fl.src, fl.dst);
        let mss = self.sc.tcp.mss_bytes;
        if let Some(p) = &mut self.probe {
            p.tcp.extend(events.into_iter().map(|e| (now, f, e)));
            p.sends.extend(out.iter().map(|t| (now, f, *t)));
        }
        for t in out {
            self.metrics.on_send(f, t.seqno, now);
            trace!(self, src, "tcp", "send", "flow={f} seq={} cause={:?}", t.seqno, t.cause);
            let pkt = Packet {
                uid: self.uid(),
                src,
                dst,
                ttl: DATA_TTL,
                proxy: None,
                payload: Payload::Tcp(TcpSegment::data(f, t.seqno, mss, now)),
            };
            self.route_out(src, pkt);
        }
        self.sync_rto(f);
        self.sync_fallback(f);
    }

    fn sync_rto(&mut self, f: FlowId) {
        let fl = &mut self.flows[f as usize];
        let want = fl.sender.rto_deadline;
        if fl.rto_timer.map(|(t, _)| t) == want {
            return;
        }
        if let Some((_, h)) = fl.rto_timer.take() {
            self.q.cancel(h);
        }
        if let Some(t) = want {
            let src = fl.src;
            let h = self.q.schedule(t, src, Action::Rto(f));
            self.flows[f as usize].rto_timer = Some((t, h));
        }
    }

    fn on_rto(&mut self, f: FlowId) {
        let now = self.now();
        let fl = &mut self.flows[f as usize];
        fl.rto_timer = None;
        if fl.sender.rto_deadline == Some(now) {
            fl.sender.on_timeout(now);
            trace!(self, self.flows[f as usize].src, "tcp", "rto", "flow={f}");
        }
        self.sync_flow(f);
    }

    /// Keeps the PART source fallback timer armed while acks make progress.
    fn sync_fallback(&mut self, f: FlowId) {
        if !self.part() {
            return;
        }
        let now = self.now();
        let factor = self.sc.part.fallback_rto_factor;
        let fl = &mut self.flows[f as usize];
        let una = fl.sender.snd_una;
        let progressed = una != fl.fallback_una;
        fl.fallback_una = una;
        let idle = fl.sender.aborted || !fl.sender.has_unacked();
        let arm = match fl.fallback {
            _ if idle => false,
            Fallback::Idle => true,
            Fallback::Armed(_) | Fallback::Spent => progressed,
        };
        if idle || arm {
            if let Fallback::Armed(h) = fl.fallback {
                self.q.cancel(h);
            }
            fl.fallback = Fallback::Idle;
        }
        if arm {
            let at = now + fl.sender.cc.rto.mul_f64(factor);
            let src = fl.src;
            fl.fallback = Fallback::Armed(self.q.schedule(at, src, Action::Fallback(f)));
        }
    }

    fn on_fallback(&mut self, f: FlowId) {
        let fl = &mut self.flows[f as usize];
        fl.fallback = Fallback::Spent;
        let (src, dst) = (fl.src, fl.dst);
        if !fl.sender.has_unacked() || fl.sender.aborted {
            return;
        }
        let via_proxy = self.nodes[src as usize]
            .routes
            .get(dst)
            .is_some_and(|e| e.valid && e.now_proxy.is_some());
        if via_proxy {
            trace!(self, src, "rt", "fallback", "flow={f}");
            self.nodes[src as usize].routes.invalidate(dst);
            self.start_discovery(src, dst);
        }
    }

    fn transport_receive(&mut self, node: NodeId, pkt: Packet) {
        let Payload::Tcp(seg) = pkt.payload else {
            unreachable!("transport gets TCP only")
        };
        let now = self.now();
        let f = seg.flow;
        if seg.is_ack {
            if self.flows[f as usize].src != node {
                self.metrics.on_drop("stray-ack");
                return;
            }
            self.flows[f as usize].sender.on_ack(now, &seg);
            self.sync_flow(f);
            return;
        }
        self.metrics.copy_gone(f, seg.seqno);
        let fl = &mut self.flows[f as usize];
        if fl.dst != node {
            self.metrics.on_drop("stray-data");
            return;
        }
        let out = fl.receiver.on_data(&seg);
        let src = fl.src;
        for s in out.delivered.clone() {
            self.metrics.on_deliver(f, s, seg.payload, now);
        }
        if let Some(p) = &mut self.probe {
            p.deliveries.extend(out.delivered.clone().map(|s| (now, f, s)));
        }
        trace!(self, node, "tcp", "recv", "flow={f} seq={} ack={}", seg.seqno, out.ack.ack_no);
        let ack = Packet {
            uid: self.uid(),
            src: node,
            dst: src,
            ttl: DATA_TTL,
            proxy: None,
            payload: Payload::Tcp(out.ack),
        };
        self.route_out(node, ack);
    }

    // ---- network layer ----

    /// Hands an intact frame addressed to `node` up the stack.
    pub(crate) fn net_receive(&mut self, node: NodeId, from: NodeId, mut pkt: Packet) {
        match &pkt.payload {
            Payload::Tcp(seg) => {
                if !seg.is_ack {
                    let (f, s) = (seg.flow, seg.seqno);
                    self.metrics.copy_created(f, s);
                    if self.fault_hits(f, s, node) {
                        self.discard(node, &pkt, "fault");
                        return;
                    }
                    self.nodes[node as usize].upstream.insert(f, from);
                    if node != pkt.dst {
                        self.observe_data(node, &pkt, f, s);
                    }
                }
                if node == pkt.dst {
                    self.transport_receive(node, pkt);
                } else {
                    self.forward(node, from, pkt);
                }
            }
            Payload::Rreq(_) => self.handle_rreq(node, from, pkt),
            Payload::Rrep(_) => self.handle_rrep(node, from, pkt),
            Payload::Rerr(_) => self.handle_rerr(node, from, pkt),
            Payload::Pack(p) => {
                let p = *p;
                self.handle_pack(node, &mut pkt, p);
            }
            Payload::Ohpack(p) => {
                let p = *p;
                self.handle_ohpack(node, p);
            }
        }
    }

    fn fault_hits(&mut self, f: FlowId, s: SeqNo, node: NodeId) -> bool {
        if self.sc.faults.is_empty() {
            return false;
        }
        let k = self.arrivals.entry((f, s, node)).or_default();
        *k += 1;
        let k = *k;
        self.sc
            .faults
            .iter()
            .any(|x| x.flow == f && x.seqno == s && x.at_node == node && x.transmission == k)
    }

    fn forward(&mut self, node: NodeId, from: NodeId, mut pkt: Packet) {
        if pkt.ttl <= 1 {
            self.discard(node, &pkt, "ttl");
            return;
        }
        pkt.ttl -= 1;
        let dst = pkt.dst;
        self.nodes[node as usize]
            .precursors
            .entry(dst)
            .or_default()
            .insert(from);
        self.route_out(node, pkt);
    }

    /// Sends a packet toward `pkt.dst` from `node`, buffering or repairing
    /// when no route is known.
    pub(crate) fn route_out(&mut self, node: NodeId, mut pkt: Packet) {
        let now = self.now();
        let expires = now + self.lifetime;
        let dst = pkt.dst;
        let n = &mut self.nodes[node as usize];
        let Some(e) = n.routes.lookup(dst, now) else {
            if pkt.payload.is_control() {
                self.discard(node, &pkt, "no-route");
            } else if pkt.src == node {
                self.buffer_for_route(node, pkt);
            } else if self.part() {
                self.start_local_repair(node, pkt);
            } else {
                self.discard(node, &pkt, "no-route");
                self.send_rerr(node, vec![(dst, self.dest_seq(node, dst))]);
            }
            return;
        };
        let next = e.next_hop;
        let src = pkt.src;
        let is_data = pkt.is_data();
        if is_data && src == node && self.sc.routing == Protocol::Part {
            pkt.proxy = e.now_proxy;
        }
        n.routes.refresh(dst, expires, now);
        if src != node {
            n.routes.refresh(src, expires, now);
        }
        if let Payload::Tcp(seg) = &mut pkt.payload {
            if seg.is_ack {
                let entry = n.routes.get_mut(dst).expect("looked up");
                if crate::pack::augment_ack(entry.miss, seg) {
                    entry.miss = None;
                }
            }
        }
        self.mac_enqueue(node, pkt, next);
    }

    pub(crate) fn dest_seq(&self, node: NodeId, dest: NodeId) -> u32 {
        self.nodes[node as usize]
            .routes
            .get(dest)
            .map_or(0, |e| e.dest_seq)
    }

    // ---- proxy acknowledgements ----

    /// Proxy duty on a data segment passing through `node`.
    fn observe_data(&mut self, node: NodeId, pkt: &Packet, f: FlowId, s: SeqNo) {
        let Some(stamp) = pkt.proxy else { return };
        let key = (pkt.src, pkt.dst);
        let now = self.now();
        if stamp != node {
            if self.nodes[node as usize].roles.remove(&key).is_some() {
                self.proxy_event(ProxyEvent::Resigned {
                    at: now,
                    node,
                    origin: key.0,
                    dest: key.1,
                });
            }
            return;
        }
        if !self.sc.pack_enabled {
            return;
        }
        let Some(role) = self.nodes[node as usize].roles.get_mut(&key) else {
            return;
        };
        let outcome = role.checker(f).check_sequence(s, node, now);
        trace!(self, node, "pack", "check", "flow={f} seq={s} {outcome:?}");
        if let CheckOutcome::Missing { first, count } = outcome {
            self.proxy_event(ProxyEvent::Gap {
                at: now,
                node,
                flow: f,
                first,
                count,
            });
            self.send_pack(node, f, pkt.src, first, count);
        }
    }

    pub(crate) fn proxy_event(&mut self, e: ProxyEvent) {
        if let Some(p) = &mut self.probe {
            p.proxy.push(e);
        }
    }

    fn send_pack(&mut self, node: NodeId, f: FlowId, src: NodeId, first: SeqNo, count: u32) {
        let Some(&up) = self.nodes[node as usize].upstream.get(&f) else {
            self.metrics.on_drop("pack-no-upstream");
            return;
        };
        let info = MissInfo {
            flow: f,
            miss_seqno: first,
            num_miss_seqno: count.min(u32::from(u16::MAX)) as u16,
        };
        let routes = &mut self.nodes[node as usize].routes;
        if let Some(e) = routes.get_mut(src) {
            if e.valid {
                e.next_hop = up;
            }
        }
        routes.entry_or_placeholder(src).miss = Some(info);
        let body = PackPacket {
            flow: f,
            miss_seqno: first,
            num_miss_seqno: info.num_miss_seqno,
            toward: src,
        };
        trace!(self, node, "pack", "pack", "flow={f} miss={first} num={count} up={up}");
        let pack = Packet {
            uid: self.uid(),
            src: node,
            dst: src,
            ttl: DATA_TTL,
            proxy: None,
            payload: Payload::Pack(body),
        };
        self.mac_enqueue(node, pack, up);
        let oh = Packet {
            uid: self.uid(),
            src: node,
            dst: BROADCAST,
            ttl: 1,
            proxy: None,
            payload: Payload::Ohpack(body),
        };
        self.mac_enqueue(node, oh, BROADCAST);
    }

    fn notify_source(&mut self, node: NodeId, p: PackPacket) {
        let f = p.flow;
        if self.flows.get(f as usize).map(|fl| fl.src) != Some(node) {
            return;
        }
        let now = self.now();
        self.flows[f as usize].sender.on_pack_notification(
            now,
            p.miss_seqno,
            u32::from(p.num_miss_seqno),
        );
        self.sync_flow(f);
    }

    fn handle_pack(&mut self, node: NodeId, pkt: &mut Packet, p: PackPacket) {
        if node == p.toward {
            self.notify_source(node, p);
            return;
        }
        let now = self.now();
        let n = &mut self.nodes[node as usize];
        n.routes.entry_or_placeholder(p.toward).miss = Some(MissInfo {
            flow: p.flow,
            miss_seqno: p.miss_seqno,
            num_miss_seqno: p.num_miss_seqno,
        });
        let next = n
            .upstream
            .get(&p.flow)
            .copied()
            .or_else(|| n.routes.lookup(p.toward, now).map(|e| e.next_hop));
        match next {
            Some(next) if pkt.ttl > 1 => {
                let mut fwd = pkt.clone();
                fwd.ttl -= 1;
                self.mac_enqueue(node, fwd, next);
            }
            _ => self.discard(node, pkt, "pack-no-route"),
        }
    }

    fn handle_ohpack(&mut self, node: NodeId, p: PackPacket) {
        if node == p.toward {
            self.notify_source(node, p);
            return;
        }
        self.nodes[node as usize]
            .routes
            .entry_or_placeholder(p.toward)
            .miss = Some(MissInfo {
            flow: p.flow,
            miss_seqno: p.miss_seqno,
            num_miss_seqno: p.num_miss_seqno,
        });
    }

    /// Sources are told when discovery gives up on their destination.
    pub(crate) fn notify_no_route(&mut self, node: NodeId, dest: NodeId) {
        for i in 0..self.flows.len() {
            let fl = &mut self.flows[i];
            if fl.src == node && fl.dst == dest && fl.started && fl.sender.on_no_route() {
                trace!(self, node, "tcp", "abort", "flow={i}");
                self.sync_flow(i as FlowId);
            }
        }
    }

    pub(crate) fn assign_proxy(&mut self, node: NodeId, origin: NodeId, dest: NodeId, hops: u32) {
        let now = self.now();
        self.nodes[node as usize]
            .roles
            .entry((origin, dest))
            .and_modify(|r| r.hops_to_dest = hops)
            .or_insert_with(|| ProxyRole::new(hops, now));
        self.proxy_event(ProxyEvent::Assigned {
            at: now,
            node,
            origin,
            dest,
            hops_to_dest: hops,
        });
        trace!(self, node, "rt", "proxy", "origin={origin} dest={dest} phc={hops}");
    }
}

/// One-shot simulation of a scenario.
pub fn simulate(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, SimError> {
    World::new(sc, opts)?.run()
}
