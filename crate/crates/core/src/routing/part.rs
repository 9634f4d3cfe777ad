//! Proxy selection and proxy failure rules.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::pack::SeqCheckerState;
use crate::packet::FlowId;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhcRounding {
    #[default]
    Ceil,
    Floor,
}

/// A proxy is used only on paths strictly longer than `min_allowable_hc`.
pub fn decide_proxy_use(hc: u32, min_allowable_hc: u32) -> bool {
    hc > min_allowable_hc
}

/// Distance, in hops from the destination, of the node that becomes proxy.
pub fn compute_phc(hc: u32, rounding: PhcRounding) -> u32 {
    match rounding {
        PhcRounding::Ceil => hc.div_ceil(2),
        PhcRounding::Floor => hc / 2,
    }
}

/// Does the RREP forwarder at `hops_from_dest` take the proxy role?
pub fn assigns_proxy(phc: u32, hops_from_dest: u32) -> bool {
    phc > 0 && hops_from_dest == phc
}

/// Sliding-window count of route errors seen by a proxy.
#[derive(Debug, Clone, Default)]
pub struct ErrorMonitor {
    recent: VecDeque<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyVerdict {
    /// Keep the role and try a local repair.
    Repair,
    /// Give the role up and send a RESET to the source.
    Resign,
}

impl ErrorMonitor {
    /// Records one error; resigns once more than `threshold` errors fall
    /// within `window`.
    pub fn record(&mut self, now: SimTime, window: SimTime, threshold: u32) -> ProxyVerdict {
        self.recent.push_back(now);
        while let Some(&first) = self.recent.front() {
            if now.saturating_sub(first) > window {
                self.recent.pop_front();
            } else {
                break;
            }
        }
        if self.recent.len() as u32 > threshold {
            ProxyVerdict::Resign
        } else {
            ProxyVerdict::Repair
        }
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }
}

/// Proxy duty for one (source, destination) pair.
#[derive(Debug, Clone)]
pub struct ProxyRole {
    pub hops_to_dest: u32,
    pub assigned_at: SimTime,
    pub checkers: BTreeMap<FlowId, SeqCheckerState>,
    pub errors: ErrorMonitor,
}

impl ProxyRole {
    pub fn new(hops_to_dest: u32, now: SimTime) -> Self {
        ProxyRole {
            hops_to_dest,
            assigned_at: now,
            checkers: BTreeMap::new(),
            errors: ErrorMonitor::default(),
        }
    }

    pub fn checker(&mut self, flow: FlowId) -> &mut SeqCheckerState {
        self.checkers
            .entry(flow)
            .or_insert_with(|| SeqCheckerState::new(flow))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_only_beyond_three_hops() {
        assert!(!decide_proxy_use(1, 3));
        assert!(!decide_proxy_use(3, 3));
        assert!(decide_proxy_use(4, 3));
    }

    /// Independent check: enumerate the nodes of an `hc`-hop chain and pick
    /// the one at distance PHC from the destination.
    #[test]
    fn phc_is_path_middle() {
        for hc in 4..=12u32 {
            let path: Vec<u32> = (0..=hc).collect(); // source = 0, dest = hc
            let phc = compute_phc(hc, PhcRounding::Ceil);
            let proxy = path[(hc - phc) as usize];
            let to_dest = hc - proxy;
            let to_src = proxy;
            assert_eq!(to_dest, phc);
            // Middle node; odd paths lean toward the source.
            assert!(to_dest >= to_src && to_dest - to_src <= 1, "hc={hc}");
        }
        assert_eq!(compute_phc(6, PhcRounding::Ceil), 3);
        assert_eq!(compute_phc(7, PhcRounding::Ceil), 4);
        assert_eq!(compute_phc(4, PhcRounding::Ceil), 2);
        assert_eq!(compute_phc(7, PhcRounding::Floor), 3);
    }

    #[test]
    fn rrep_hop_counter_selects_proxy() {
        // RREP leaves the destination with hop_count 0; each forwarder is one
        // hop further away.
        let phc = compute_phc(6, PhcRounding::Ceil);
        let chosen: Vec<u32> = (1..6).filter(|&h| assigns_proxy(phc, h)).collect();
        assert_eq!(chosen, vec![3]);
        assert!((1..6).all(|h| !assigns_proxy(0, h)));
    }

    #[test]
    fn four_errors_in_a_second_resign() {
        let mut m = ErrorMonitor::default();
        let w = SimTime::from_secs(2);
        let verdicts: Vec<_> = (0..4)
            .map(|i| m.record(SimTime::from_millis(250 * i), w, 3))
            .collect();
        assert_eq!(
            verdicts,
            vec![
                ProxyVerdict::Repair,
                ProxyVerdict::Repair,
                ProxyVerdict::Repair,
                ProxyVerdict::Resign
            ]
        );
    }

    #[test]
    fn spread_out_errors_do_not_resign() {
        let mut m = ErrorMonitor::default();
        let w = SimTime::from_secs(2);
        for s in [0, 15, 30, 45] {
            assert_eq!(m.record(SimTime::from_secs(s), w, 3), ProxyVerdict::Repair);
        }
        assert_eq!(m.len(), 1);
    }
}
