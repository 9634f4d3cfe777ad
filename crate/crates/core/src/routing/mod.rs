//! On-demand routing: the AODV baseline and its proxy-assisted extension.

mod aodv;
mod part;
mod table;

pub use part::{
    assigns_proxy, compute_phc, decide_proxy_use, ErrorMonitor, PhcRounding, ProxyRole,
    ProxyVerdict,
};
pub use table::{RouteEntry, RouteTable, Update};
