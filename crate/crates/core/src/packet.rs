//! Layered packet model: a routing-layer envelope carrying either a TCP
//! segment or a routing control message.

use crate::sim::{NodeId, SimTime};

pub type FlowId = u32;
pub type SeqNo = u32;

pub const BROADCAST: NodeId = NodeId::MAX;

pub const IP_HEADER_BYTES: u32 = 20;
pub const TCP_HEADER_BYTES: u32 = 20;

/// A TCP segment. Data segments are indexed from 1; pure acks carry seqno 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSegment {
    pub flow: FlowId,
    pub seqno: SeqNo,
    /// Highest in-order segment received (acks only).
    pub ack_no: SeqNo,
    pub is_ack: bool,
    /// Proxy-acknowledgement fields; zero when unset.
    pub miss_seqno: u32,
    pub num_miss_seqno: u16,
    /// Transmission time for data; echoed transmission time for acks.
    pub sent_at: SimTime,
    /// Payload bytes (MSS for data, 0 for acks).
    pub payload: u32,
}

impl TcpSegment {
    pub fn data(flow: FlowId, seqno: SeqNo, payload: u32, sent_at: SimTime) -> Self {
        debug_assert!(seqno >= 1);
        TcpSegment {
            flow,
            seqno,
            ack_no: 0,
            is_ack: false,
            miss_seqno: 0,
            num_miss_seqno: 0,
            sent_at,
            payload,
        }
    }

    pub fn ack(flow: FlowId, ack_no: SeqNo, echo: SimTime) -> Self {
        TcpSegment {
            flow,
            seqno: 0,
            ack_no,
            is_ack: true,
            miss_seqno: 0,
            num_miss_seqno: 0,
            sent_at: echo,
            payload: 0,
        }
    }

    pub fn has_miss(&self) -> bool {
        self.miss_seqno != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rreq {
    pub origin: NodeId,
    pub origin_seq: u32,
    pub dest: NodeId,
    pub dest_seq: u32,
    pub bcast_id: u32,
    /// Hops travelled so far; the originator sends 0.
    pub hop_count: u32,
    /// Discovery for a TCP data flow: the destination may pick a proxy.
    pub wants_proxy: bool,
    /// Set for local-repair requests: intermediate nodes whose route to
    /// `dest` is strictly shorter than this may answer.
    pub repair_max_hops: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rrep {
    pub origin: NodeId,
    pub dest: NodeId,
    pub dest_seq: u32,
    /// Hops from `dest` to the node that sent this copy.
    pub hop_count: u32,
    /// Proxy hop count; 0 when no proxy is requested.
    pub phc: u32,
    /// Filled in by the node that takes the proxy role.
    pub proxy: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rerr {
    pub unreachable: Vec<(NodeId, u32)>,
    /// Sent by a proxy that gives up its role; asks the source to rediscover.
    pub reset: bool,
}

/// Proxy acknowledgement: tells the data source which segments went missing
/// upstream of the proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackPacket {
    pub flow: FlowId,
    pub miss_seqno: u32,
    pub num_miss_seqno: u16,
    /// The TCP data source the notice is addressed to.
    pub toward: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Tcp(TcpSegment),
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr(Rerr),
    Pack(PackPacket),
    Ohpack(PackPacket),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Tcp(s) if s.is_ack => "ack",
            Payload::Tcp(_) => "data",
            Payload::Rreq(_) => "rreq",
            Payload::Rrep(_) => "rrep",
            Payload::Rerr(_) => "rerr",
            Payload::Pack(_) => "pack",
            Payload::Ohpack(_) => "ohpack",
        }
    }

    /// Routing-layer control traffic, counted as routing overhead.
    pub fn is_control(&self) -> bool {
        !matches!(self, Payload::Tcp(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub uid: u64,
    /// Network-layer originator.
    pub src: NodeId,
    /// Network-layer destination or [`BROADCAST`].
    pub dst: NodeId,
    pub ttl: u32,
    /// Proxy of the connection, stamped by a PART source on data segments.
    pub proxy: Option<NodeId>,
    pub payload: Payload,
}

impl Packet {
    pub fn size_bytes(&self) -> u32 {
        IP_HEADER_BYTES
            + match &self.payload {
                Payload::Tcp(s) => TCP_HEADER_BYTES + s.payload + if s.has_miss() { 8 } else { 0 },
                Payload::Rreq(_) => 24,
                Payload::Rrep(_) => 24,
                Payload::Rerr(e) => 4 + 8 * e.unreachable.len() as u32,
                Payload::Pack(_) | Payload::Ohpack(_) => 16,
            }
    }

    pub fn tcp(&self) -> Option<&TcpSegment> {
        match &self.payload {
            Payload::Tcp(s) => Some(s),
            _ => None,
        }
    }

    /// Data segment (not an ack)?
    pub fn is_data(&self) -> bool {
        matches!(&self.payload, Payload::Tcp(s) if !s.is_ack)
    }
}
