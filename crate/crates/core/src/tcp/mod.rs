//! Segment-indexed TCP with five congestion-control variants.

mod cc;
mod receiver;
mod sender;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cc::{CwndState, LossReaction, VegasAdjust};
pub use receiver::{ReceiveOutcome, TcpReceiver};
pub use sender::{SendCause, SenderEvent, TcpSender, Transmission};

use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tahoe,
    Reno,
    NewReno,
    Vegas,
    Westwood,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Tahoe,
        Variant::Reno,
        Variant::NewReno,
        Variant::Vegas,
        Variant::Westwood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tahoe => "tahoe",
            Variant::Reno => "reno",
            Variant::NewReno => "newreno",
            Variant::Vegas => "vegas",
            Variant::Westwood => "westwood",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown TCP variant `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcpConfig {
    pub mss_bytes: u32,
    pub init_ssthresh_bytes: u32,
    /// Receiver-advertised window, segments. 0 means unlimited.
    pub rwnd_segments: u32,
    pub vegas_alpha: f64,
    pub vegas_beta: f64,
    pub vegas_gamma: f64,
    pub ww_filter_gain: f64,
    pub rto_init_s: f64,
    pub rto_min_s: f64,
    pub rto_max_s: f64,
    /// Consecutive timeouts tolerated before the connection is reset.
    pub max_backoffs: u32,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            mss_bytes: 1000,
            init_ssthresh_bytes: 65536,
            rwnd_segments: 20,
            vegas_alpha: 2.0,
            vegas_beta: 4.0,
            vegas_gamma: 1.0,
            ww_filter_gain: 0.1,
            rto_init_s: 1.0,
            rto_min_s: 0.2,
            rto_max_s: 60.0,
            max_backoffs: 12,
        }
    }
}

impl TcpConfig {
    pub fn initial_ssthresh_segments(&self) -> f64 {
        (f64::from(self.init_ssthresh_bytes) / f64::from(self.mss_bytes))
            .floor()
            .max(2.0)
    }

    pub fn rto_min(&self) -> SimTime {
        SimTime::from_secs_f64(self.rto_min_s)
    }

    pub fn rto_max(&self) -> SimTime {
        SimTime::from_secs_f64(self.rto_max_s)
    }
}
