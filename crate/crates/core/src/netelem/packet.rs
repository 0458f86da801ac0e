use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

/// Address of a VM. Rendered as 10.x.y.z on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VmAddr(pub u32);

impl VmAddr {
    pub fn ipv4(self) -> [u8; 4] {
        let b = self.0.to_be_bytes();
        [10, b[1], b[2], b[3]]
    }

    pub fn from_ipv4(ip: [u8; 4]) -> Self {
        VmAddr(u32::from_be_bytes([0, ip[1], ip[2], ip[3]]))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VmAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.ipv4();
        write!(f, "{a}.{b}.{c}.{d}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Proto {
    Tcp,
    Udp,
    /// Explicit congestion feedback between hypervisors.
    Feedback,
    /// Controller to shim congestion notification.
    CtrlMsg,
}

impl Proto {
    pub fn ip_number(self) -> u8 {
        match self {
            Proto::Tcp => 6,
            Proto::Udp => 17,
            Proto::Feedback => FEEDBACK_IP_PROTO,
            Proto::CtrlMsg => CTRLMSG_IP_PROTO,
        }
    }
}

pub const FEEDBACK_IP_PROTO: u8 = 253;
pub const CTRLMSG_IP_PROTO: u8 = 254;

/// Ethernet (14) + IPv4 (20).
pub const HEADER_BYTES: u32 = 34;
pub const DATA_PACKET_BYTES: u32 = 1500;
pub const MSS: u32 = DATA_PACKET_BYTES - HEADER_BYTES;
pub const CONTROL_PAYLOAD_BYTES: u32 = 2;
pub const CONTROL_PACKET_BYTES: u32 = HEADER_BYTES + CONTROL_PAYLOAD_BYTES;
/// Pure TCP acknowledgement on the wire (headers plus a 20-byte TCP header).
pub const ACK_PACKET_BYTES: u32 = 54;
pub const REQUEST_PAYLOAD_BYTES: u32 = 100;

/// TCP segment roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Data,
    Ack,
    /// Mice request (client to server).
    Request,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub src: VmAddr,
    pub dst: VmAddr,
    pub proto: Proto,
    pub segment: Segment,
    pub ect: bool,
    pub ce: bool,
    pub ipr: bool,
    pub ident: u16,
    pub payload_len: u32,
    pub header_len: u32,
    pub flow_id: u32,
    /// Data: first payload byte. Ack: highest in-order byte + 1 (cumulative).
    pub seq: u64,
    /// Ack only: first byte of the segment that triggered this ack (one SACK block).
    pub sack: u64,
    pub ecn_echo: bool,
    /// Send timestamp, echoed in acks for RTT sampling.
    pub ts: SimTime,
    /// Value carried by FEEDBACK / CTRLMSG payloads.
    pub ctrl_value: u16,
}

impl Packet {
    pub fn size_bytes(&self) -> u32 {
        self.header_len + self.payload_len
    }

    pub fn data(flow_id: u32, src: VmAddr, dst: VmAddr, proto: Proto, seq: u64, payload_len: u32) -> Self {
        Packet {
            src,
            dst,
            proto,
            segment: Segment::Data,
            ect: false,
            ce: false,
            ipr: false,
            ident: (seq / MSS as u64) as u16,
            payload_len,
            header_len: HEADER_BYTES,
            flow_id,
            seq,
            sack: 0,
            ecn_echo: false,
            ts: SimTime::ZERO,
            ctrl_value: 0,
        }
    }

    pub fn ack(flow_id: u32, src: VmAddr, dst: VmAddr, cum_ack: u64, sack: u64, ecn_echo: bool, ts: SimTime) -> Self {
        Packet {
            src,
            dst,
            proto: Proto::Tcp,
            segment: Segment::Ack,
            ect: false,
            ce: false,
            ipr: false,
            ident: 0,
            payload_len: 0,
            header_len: ACK_PACKET_BYTES,
            flow_id,
            seq: cum_ack,
            sack,
            ecn_echo,
            ts,
            ctrl_value: 0,
        }
    }

    pub fn request(flow_id: u32, src: VmAddr, dst: VmAddr) -> Self {
        Packet {
            segment: Segment::Request,
            ..Packet::data(flow_id, src, dst, Proto::Tcp, 0, REQUEST_PAYLOAD_BYTES)
        }
    }

    /// 36-byte FEEDBACK or CTRLMSG packet; `value` also mirrored into the ident field.
    pub fn control(proto: Proto, src: VmAddr, dst: VmAddr, value: u16) -> Self {
        debug_assert!(matches!(proto, Proto::Feedback | Proto::CtrlMsg));
        Packet {
            src,
            dst,
            proto,
            segment: Segment::Data,
            ect: false,
            ce: false,
            ipr: false,
            ident: value,
            payload_len: CONTROL_PAYLOAD_BYTES,
            header_len: HEADER_BYTES,
            flow_id: u32::MAX,
            seq: 0,
            sack: 0,
            ecn_echo: false,
            ts: SimTime::ZERO,
            ctrl_value: value,
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self.proto, Proto::Feedback | Proto::CtrlMsg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let d = Packet::data(0, VmAddr(1), VmAddr(2), Proto::Tcp, 0, MSS);
        assert_eq!(d.size_bytes(), 1500);
        assert_eq!(MSS, 1466);
        let f = Packet::control(Proto::Feedback, VmAddr(1), VmAddr(2), 7);
        assert_eq!(f.size_bytes(), 36);
        assert_eq!(f.header_len, 34);
        assert_eq!(f.payload_len, 2);
        assert_eq!(f.ident, 7);
    }

    #[test]
    fn addr_roundtrip() {
        let a = VmAddr(0x0001_0203);
        assert_eq!(a.to_string(), "10.1.2.3");
        assert_eq!(VmAddr::from_ipv4(a.ipv4()), a);
    }
}
