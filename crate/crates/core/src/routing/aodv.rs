//! Route discovery, replies, errors and local repair as node behaviour.
//!
//! Full discoveries are answered by the destination only. Local-repair
//! requests (PART) are scoped by TTL and may be answered by any node holding
//! a strictly shorter route that does not lead back through the requester.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;

use super::part::{assigns_proxy, compute_phc, decide_proxy_use, ProxyVerdict};
use super::table::Update;
use crate::packet::{Packet, Payload, Rerr, Rrep, Rreq, BROADCAST};
use crate::sim::{EventHandle, NodeId, SimTime};
use crate::world::{trace, Action, Pending, ProxyEvent, World, DATA_TTL, PENDING_LIMIT};

const MAX_JITTER_US: u64 = 10_000;


impl World {
    fn offer_neighbor(&mut self, node: NodeId, nb: NodeId) {
        let now = self.now();
        let expires = now + self.lifetime;
        let routes = &mut self.nodes[node as usize].routes;
        let seq = routes.get(nb).map_or(0, |e| e.dest_seq);
        routes.offer(nb, nb, 1, seq, expires, now);
    }

    /// Buffers a locally originated packet until a route to its destination exists.
    pub(crate) fn buffer_for_route(&mut self, node: NodeId, pkt: Packet) {
        let dest = pkt.dst;
        self.start_discovery(node, dest);
        let p = self.nodes[node as usize]
            .pending
            .get_mut(&dest)
            .expect("discovery pending");
        if p.buffer.len() < PENDING_LIMIT {
            p.buffer.push_back(pkt);
        } else {
            self.discard(node, &pkt, "buffer");
        }
    }

    pub(crate) fn start_discovery(&mut self, node: NodeId, dest: NodeId) {
        if self.nodes[node as usize].pending.contains_key(&dest) {
            return;
        }
        let timer = self.send_rreq(node, dest, None, 0);
        self.nodes[node as usize].pending.insert(
            dest,
            Pending {
                buffer: VecDeque::new(),
                attempt: 0,
                timer,
                repair: None,
            },
        );
    }

    pub(crate) fn start_local_repair(&mut self, node: NodeId, pkt: Packet) {
        let dest = pkt.dst;
        if let Some(p) = self.nodes[node as usize].pending.get_mut(&dest) {
            if p.buffer.len() < PENDING_LIMIT {
                p.buffer.push_back(pkt);
            } else {
                self.discard(node, &pkt, "buffer");
            }
            return;
        }
        let old = self.nodes[node as usize]
            .routes
            .get(dest)
            .map_or(0, |e| e.hop_count);
        let max_hops = if old == 0 { self.sc.aodv.rreq_ttl } else { old };
        trace!(self, node, "rt", "repair", "dest={dest} max_hops={max_hops}");
        let timer = self.send_rreq(node, dest, Some(max_hops), 0);
        self.nodes[node as usize].pending.insert(
            dest,
            Pending {
                buffer: VecDeque::from([pkt]),
                attempt: 0,
                timer,
                repair: Some(max_hops),
            },
        );
    }

    fn send_rreq(
        &mut self,
        node: NodeId,
        dest: NodeId,
        repair: Option<u32>,
        attempt: u32,
    ) -> EventHandle {
        let part = self.part();
        let wants_proxy =
            part && repair.is_none() && self.flows.iter().any(|f| f.src == node && f.dst == dest);
        let dest_seq = self.dest_seq(node, dest);
        let (ttl, timeout) = match repair {
            Some(_) => (
                self.sc.part.repair_ttl,
                SimTime::from_secs_f64(self.sc.part.repair_timeout_s),
            ),
            None => (
                self.sc.aodv.rreq_ttl,
                SimTime::from_secs_f64(self.sc.aodv.rreq_timeout_s * f64::from(1u32 << attempt.min(16))),
            ),
        };
        let n = &mut self.nodes[node as usize];
        n.seq += 1;
        n.bcast_id += 1;
        let rreq = Rreq {
            origin: node,
            origin_seq: n.seq,
            dest,
            dest_seq,
            bcast_id: n.bcast_id,
            hop_count: 0,
            wants_proxy,
            repair_max_hops: repair,
        };
        n.seen.insert((node, rreq.bcast_id));
        trace!(self, node, "rt", "rreq", "dest={dest} attempt={attempt} ttl={ttl}");
        let pkt = Packet {
            uid: self.uid(),
            src: node,
            dst: BROADCAST,
            ttl,
            proxy: None,
            payload: Payload::Rreq(rreq),
        };
        self.mac_enqueue(node, pkt, BROADCAST);
        self.q
            .schedule(self.now() + timeout, node, Action::DiscoveryTimeout(dest))
    }

    pub(crate) fn on_discovery_timeout(&mut self, node: NodeId, dest: NodeId) {
        let Some(p) = self.nodes[node as usize].pending.get_mut(&dest) else {
            return;
        };
        let retries = match p.repair {
            Some(_) => self.sc.part.repair_retries,
            None => self.sc.aodv.rreq_retries,
        };
        if p.attempt < retries {
            p.attempt += 1;
            let (attempt, repair) = (p.attempt, p.repair);
            let timer = self.send_rreq(node, dest, repair, attempt);
            if let Some(p) = self.nodes[node as usize].pending.get_mut(&dest) {
                p.timer = timer;
            }
            return;
        }
        let p = self.nodes[node as usize]
            .pending
            .remove(&dest)
            .expect("present");
        let reason = if p.repair.is_some() { "repair-failed" } else { "no-route" };
        for pkt in &p.buffer {
            self.discard(node, pkt, reason);
        }
        if p.repair.is_some() {
            trace!(self, node, "rt", "repair-failed", "dest={dest}");
            let seq = self.dest_seq(node, dest);
            self.send_rerr(node, vec![(dest, seq)]);
        } else {
            trace!(self, node, "rt", "unreachable", "dest={dest}");
            self.notify_no_route(node, dest);
        }
    }

    fn discovery_complete(&mut self, node: NodeId, dest: NodeId) {
        let Some(p) = self.nodes[node as usize].pending.remove(&dest) else {
            return;
        };
        self.q.cancel(p.timer);
        let hc = self.nodes[node as usize]
            .routes
            .get(dest)
            .map_or(0, |e| e.hop_count);
        let now = self.now();
        if let Some(pr) = &mut self.probe {
            pr.routes.push((now, node, dest, hc));
        }
        trace!(self, node, "rt", "found", "dest={dest} hops={hc}");
        for pkt in p.buffer {
            self.route_out(node, pkt);
        }
    }

    pub(crate) fn handle_rreq(&mut self, node: NodeId, from: NodeId, pkt: Packet) {
        let Payload::Rreq(r) = &pkt.payload else {
            unreachable!()
        };
        let now = self.now();
        let expires = now + self.lifetime;
        let n = &mut self.nodes[node as usize];
        if r.origin == node || !n.seen.insert((r.origin, r.bcast_id)) {
            return;
        }
        let hc = r.hop_count + 1;
        n.routes.offer(r.origin, from, hc, r.origin_seq, expires, now);
        self.offer_neighbor(node, from);
        let n = &mut self.nodes[node as usize];
        if r.dest == node {
            n.seq = n.seq.max(r.dest_seq) + 1;
            let min_hc = self.sc.part.min_allowable_hc;
            let phc = if self.sc.routing == crate::scenario::Protocol::Part
                && r.wants_proxy
                && decide_proxy_use(hc, min_hc)
            {
                compute_phc(hc, self.sc.part.phc_rounding)
            } else {
                0
            };
            let rrep = Rrep {
                origin: r.origin,
                dest: node,
                dest_seq: n.seq,
                hop_count: 0,
                phc,
                proxy: None,
            };
            self.send_rrep(node, from, rrep);
            return;
        }
        if let Some(max) = r.repair_max_hops {
            let n = &mut self.nodes[node as usize];
            if let Some(e) = n.routes.lookup(r.dest, now) {
                // The request carries the requester's number bumped by the
                // break. A reply at least as fresh as the broken route and
                // no longer than it keeps (seq, -hops) increasing along every
                // next-hop chain, which is what rules out loops.
                let fresh = e.dest_seq.wrapping_add(1) >= r.dest_seq;
                let short_enough = e.hop_count + hc <= max;
                if fresh && short_enough && e.next_hop != r.origin && e.next_hop != from {
                    let rrep = Rrep {
                        origin: r.origin,
                        dest: r.dest,
                        dest_seq: e.dest_seq,
                        hop_count: e.hop_count,
                        phc: 0,
                        proxy: None,
                    };
                    n.precursors.entry(r.dest).or_default().insert(from);
                    self.send_rrep(node, from, rrep);
                    return;
                }
            }
        }
        if pkt.ttl > 1 {
            let mut fwd = pkt.clone();
            fwd.ttl -= 1;
            if let Payload::Rreq(f) = &mut fwd.payload {
                f.hop_count = hc;
            }
            let jitter = &mut self.nodes[node as usize].jitter_rng;
            let delay = SimTime::from_micros(jitter.gen_range(0..MAX_JITTER_US));
            self.q.schedule(now + delay, node, Action::Jittered(Box::new(fwd)));
        }
    }

    fn send_rrep(&mut self, node: NodeId, next: NodeId, rrep: Rrep) {
        trace!(
            self,
            node,
            "rt",
            "rrep",
            "origin={} dest={} hops={} phc={}",
            rrep.origin,
            rrep.dest,
            rrep.hop_count,
            rrep.phc
        );
        let pkt = Packet {
            uid: self.uid(),
            src: node,
            dst: rrep.origin,
            ttl: DATA_TTL,
            proxy: None,
            payload: Payload::Rrep(rrep),
        };
        self.mac_enqueue(node, pkt, next);
    }

    pub(crate) fn handle_rrep(&mut self, node: NodeId, from: NodeId, pkt: Packet) {
        let Payload::Rrep(mut r) = pkt.payload.clone() else {
            unreachable!()
        };
        let now = self.now();
        let expires = now + self.lifetime;
        let hc = r.hop_count + 1;
        let update = self.nodes[node as usize]
            .routes
            .offer(r.dest, from, hc, r.dest_seq, expires, now);
        self.offer_neighbor(node, from);
        if update == Update::Ignored && node != r.origin {
            // Forwarding a reply this node did not adopt would splice the
            // requester onto an unrelated route.
            self.discard(node, &pkt, "rrep-stale");
            return;
        }
        r.hop_count = hc;
        if self.part() && node != r.origin && assigns_proxy(r.phc, hc) {
            self.assign_proxy(node, r.origin, r.dest, hc);
            r.proxy = Some(node);
        }
        let n = &mut self.nodes[node as usize];
        if let Some(e) = n.routes.get_mut(r.dest) {
            if e.valid && e.next_hop == from {
                e.now_proxy = r.proxy;
            }
        }
        if node == r.origin {
            self.discovery_complete(node, r.dest);
            return;
        }
        let Some(next) = n.routes.lookup(r.origin, now).map(|e| e.next_hop) else {
            self.discard(node, &pkt, "rrep-no-route");
            return;
        };
        if pkt.ttl <= 1 {
            self.discard(node, &pkt, "ttl");
            return;
        }
        n.precursors.entry(r.dest).or_default().insert(next);
        let fwd = Packet {
            ttl: pkt.ttl - 1,
            payload: Payload::Rrep(r),
            ..pkt
        };
        self.mac_enqueue(node, fwd, next);
    }

    /// Broadcasts a route error for the destinations some neighbour routes
    /// through this node.
    pub(crate) fn send_rerr(&mut self, node: NodeId, unreachable: Vec<(NodeId, u32)>) {
        let n = &mut self.nodes[node as usize];
        let list: Vec<(NodeId, u32)> = unreachable
            .into_iter()
            .filter(|(d, _)| n.precursors.remove(d).is_some_and(|p| !p.is_empty()))
            .collect();
        if list.is_empty() {
            return;
        }
        trace!(self, node, "rt", "rerr", "dests={list:?}");
        let pkt = Packet {
            uid: self.uid(),
            src: node,
            dst: BROADCAST,
            ttl: 1,
            proxy: None,
            payload: Payload::Rerr(Rerr {
                unreachable: list,
                reset: false,
            }),
        };
        self.mac_enqueue(node, pkt, BROADCAST);
    }

    fn send_reset(&mut self, node: NodeId, origin: NodeId, dest: NodeId) {
        let seq = self.dest_seq(node, dest);
        trace!(self, node, "rt", "reset", "origin={origin} dest={dest}");
        let pkt = Packet {
            uid: self.uid(),
            src: node,
            dst: origin,
            ttl: DATA_TTL,
            proxy: None,
            payload: Payload::Rerr(Rerr {
                unreachable: vec![(dest, seq)],
                reset: true,
            }),
        };
        self.route_out(node, pkt);
    }

    /// Counts a route error against each proxy role toward `dests`; resigns
    /// roles that see too many. Returns the destinations given up.
    fn proxy_errors(&mut self, node: NodeId, dests: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        let now = self.now();
        let window = SimTime::from_secs_f64(self.sc.part.proxy_error_window_s);
        let threshold = self.sc.part.proxy_error_threshold;
        let mut resigned = Vec::new();
        for (&(origin, dest), role) in self.nodes[node as usize].roles.iter_mut() {
            if dests.contains(&dest) && role.errors.record(now, window, threshold) == ProxyVerdict::Resign {
                resigned.push((origin, dest));
            }
        }
        let mut gone = BTreeSet::new();
        for (origin, dest) in resigned {
            self.nodes[node as usize].roles.remove(&(origin, dest));
            self.proxy_event(ProxyEvent::Resigned {
                at: now,
                node,
                origin,
                dest,
            });
            self.send_reset(node, origin, dest);
            gone.insert(dest);
        }
        gone
    }

    pub(crate) fn handle_rerr(&mut self, node: NodeId, from: NodeId, pkt: Packet) {
        let Payload::Rerr(e) = &pkt.payload else {
            unreachable!()
        };
        if e.reset {
            if pkt.dst != node {
                if pkt.ttl > 1 {
                    let mut fwd = pkt.clone();
                    fwd.ttl -= 1;
                    self.route_out(node, fwd);
                }
                return;
            }
            for &(d, _) in &e.unreachable {
                let routes = &mut self.nodes[node as usize].routes;
                routes.invalidate(d);
                if let Some(x) = routes.get_mut(d) {
                    x.now_proxy = None;
                }
                if self.active_flow_to(node, d) {
                    self.start_discovery(node, d);
                }
            }
            return;
        }
        let mut lost = Vec::new();
        for &(d, seq) in &e.unreachable {
            let routes = &mut self.nodes[node as usize].routes;
            if routes.get(d).is_some_and(|x| x.valid && x.next_hop == from) {
                routes.invalidate(d);
                lost.push((d, seq.max(self.dest_seq(node, d))));
            }
        }
        if lost.is_empty() {
            return;
        }
        if self.part() {
            let dests = lost.iter().map(|&(d, _)| d).collect();
            self.proxy_errors(node, &dests);
        }
        for &(d, _) in &lost {
            if self.active_flow_to(node, d) {
                self.start_discovery(node, d);
            }
        }
        self.send_rerr(node, lost);
    }

    /// The MAC gave up on `next_hop`; `pkts` are the frames it was holding for it.
    pub(crate) fn link_break(&mut self, node: NodeId, next_hop: NodeId, pkts: Vec<Packet>) {
        let lost = self.nodes[node as usize].routes.invalidate_via(next_hop);
        let part = self.part();
        let resigned = if part {
            let dests = lost.iter().map(|&(d, _)| d).collect();
            self.proxy_errors(node, &dests)
        } else {
            BTreeSet::new()
        };
        let mut repairing = BTreeSet::new();
        for pkt in pkts {
            let control = pkt.payload.is_control();
            if !control && pkt.src == node {
                self.buffer_for_route(node, pkt);
            } else if !control && part && pkt.dst != next_hop && !resigned.contains(&pkt.dst) {
                // Repair targets the hop beyond the break; a lost destination
                // has none, so it is reported like any AODV break.
                repairing.insert(pkt.dst);
                self.start_local_repair(node, pkt);
            } else {
                self.discard(node, &pkt, "link-break");
            }
        }
        for &(d, _) in &lost {
            if self.active_flow_to(node, d) {
                self.start_discovery(node, d);
            }
        }
        let report = lost
            .into_iter()
            .filter(|(d, _)| !repairing.contains(d))
            .collect();
        self.send_rerr(node, report);
    }
}
