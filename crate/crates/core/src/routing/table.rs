use std::collections::BTreeMap;

use crate::pack::MissInfo;
use crate::sim::{NodeId, SimTime};

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
    /// Expiry time of the entry.
    pub lifetime: SimTime,
    pub valid: bool,
    /// Proxy of the connection toward `dest`, when one was assigned.
    pub now_proxy: Option<NodeId>,
    /// Pending miss report for acks heading to `dest`.
    pub miss: Option<MissInfo>,
}

impl RouteEntry {
    pub fn miss_seqno(&self) -> u32 {
        self.miss.map_or(0, |m| m.miss_seqno)
    }

    pub fn num_miss_seqno(&self) -> u16 {
        self.miss.map_or(0, |m| m.num_miss_seqno)
    }

    pub fn usable(&self, now: SimTime) -> bool {
        self.valid && self.lifetime > now && self.hop_count >= 1
    }
}

/// Outcome of offering a new path to the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    Installed,
    Refreshed,
    Ignored,
}

#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    entries: BTreeMap<NodeId, RouteEntry>,
}

impl RouteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    pub fn get_mut(&mut self, dest: NodeId) -> Option<&mut RouteEntry> {
        self.entries.get_mut(&dest)
    }

    /// A valid, unexpired route.
    pub fn lookup(&self, dest: NodeId, now: SimTime) -> Option<&RouteEntry> {
        self.entries.get(&dest).filter(|e| e.usable(now))
    }

    /// Offers a path learned from a control packet.
    ///
    /// Accepted when the entry is missing or unusable, when the sequence
    /// number is fresher, or when it is equally fresh and shorter.
    pub fn offer(
        &mut self,
        dest: NodeId,
        next_hop: NodeId,
        hop_count: u32,
        dest_seq: u32,
        expires: SimTime,
        now: SimTime,
    ) -> Update {
        match self.entries.get_mut(&dest) {
            None => {
                self.entries.insert(
                    dest,
                    RouteEntry {
                        dest,
                        next_hop,
                        hop_count,
                        dest_seq,
                        lifetime: expires,
                        valid: true,
                        now_proxy: None,
                        miss: None,
                    },
                );
                Update::Installed
            }
            Some(e) => {
                let dead = !e.usable(now);
                let better = dead
                    || dest_seq > e.dest_seq
                    || (dest_seq == e.dest_seq && hop_count < e.hop_count);
                if better {
                    if e.next_hop != next_hop {
                        e.now_proxy = None;
                    }
                    e.next_hop = next_hop;
                    e.hop_count = hop_count;
                    // A dead entry adopts the offered number as is: keeping a
                    // bumped one would advertise an old path as the freshest.
                    e.dest_seq = if dead { dest_seq } else { e.dest_seq.max(dest_seq) };
                    e.lifetime = e.lifetime.max(expires);
                    e.valid = true;
                    Update::Installed
                } else if e.next_hop == next_hop && hop_count == e.hop_count {
                    e.lifetime = e.lifetime.max(expires);
                    Update::Refreshed
                } else {
                    Update::Ignored
                }
            }
        }
    }

    /// Pushes the expiry of a usable route forward; returns whether it exists.
    pub fn refresh(&mut self, dest: NodeId, expires: SimTime, now: SimTime) -> bool {
        match self.entries.get_mut(&dest) {
            Some(e) if e.usable(now) => {
                e.lifetime = e.lifetime.max(expires);
                true
            }
            _ => false,
        }
    }

    pub fn invalidate(&mut self, dest: NodeId) -> bool {
        match self.entries.get_mut(&dest) {
            Some(e) if e.valid => {
                e.valid = false;
                e.dest_seq = e.dest_seq.wrapping_add(1);
                true
            }
            _ => false,
        }
    }

    /// Invalidates every route using `next_hop`; returns `(dest, seq)` of each.
    pub fn invalidate_via(&mut self, next_hop: NodeId) -> Vec<(NodeId, u32)> {
        let mut lost = Vec::new();
        for e in self.entries.values_mut() {
            if e.valid && e.next_hop == next_hop {
                e.valid = false;
                e.dest_seq = e.dest_seq.wrapping_add(1);
                lost.push((e.dest, e.dest_seq));
            }
        }
        lost
    }

    /// Entry for `dest`, creating an unusable placeholder if needed.
    pub fn entry_or_placeholder(&mut self, dest: NodeId) -> &mut RouteEntry {
        self.entries.entry(dest).or_insert_with(|| RouteEntry {
            dest,
            next_hop: dest,
            hop_count: 0,
            dest_seq: 0,
            lifetime: SimTime::ZERO,
            valid: false,
            now_proxy: None,
            miss: None,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }
}
