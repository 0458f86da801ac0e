//! Byte-level encoding of the 36-byte FEEDBACK and CTRLMSG packets.
//!
//! Layout: 14-byte Ethernet II header, 20-byte IPv4 header (no options),
//! 2-byte big-endian mark count. The mark count is mirrored into the IPv4
//! identification field. The reserved IPv4 flag bit carries the IPR mark.

use thiserror::Error;

use super::packet::{
    Packet, Proto, VmAddr, CONTROL_PACKET_BYTES, CTRLMSG_IP_PROTO, FEEDBACK_IP_PROTO,
};

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const IP_RESERVED_FLAG: u16 = 0x8000;
const TTL: u8 = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("frame too short: {0} bytes")]
    Truncated(usize),
    #[error("not an IPv4 frame (ethertype {0:#06x})")]
    NotIpv4(u16),
    #[error("bad IPv4 version/IHL byte {0:#04x}")]
    BadVersion(u8),
    #[error("IPv4 header checksum mismatch")]
    Checksum,
    #[error("unexpected IP protocol {0}")]
    Protocol(u8),
    #[error("control payload must be 2 bytes, got {0}")]
    PayloadLength(usize),
}

fn mac_for(addr: VmAddr) -> [u8; 6] {
    let [_, b, c, d] = addr.ipv4();
    [0x02, 0x00, 0x0a, b, c, d]
}

fn ecn_bits(p: &Packet) -> u8 {
    match (p.ect, p.ce) {
        (_, true) => 0b11,
        (true, false) => 0b10,
        (false, false) => 0b00,
    }
}

/// RFC 1071 ones'-complement sum over the IPv4 header.
pub fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Encodes a FEEDBACK or CTRLMSG packet. Panics on data packets.
pub fn encode_control(p: &Packet) -> [u8; CONTROL_PACKET_BYTES as usize] {
    assert!(p.is_control(), "only control packets have a fixed wire image");
    let mut buf = [0u8; CONTROL_PACKET_BYTES as usize];
    buf[0..6].copy_from_slice(&mac_for(p.dst));
    buf[6..12].copy_from_slice(&mac_for(p.src));
    buf[12..14].copy_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip = &mut buf[14..34];
    ip[0] = 0x45;
    ip[1] = ecn_bits(p);
    ip[2..4].copy_from_slice(&22u16.to_be_bytes());
    ip[4..6].copy_from_slice(&p.ctrl_value.to_be_bytes());
    let flags = if p.ipr { IP_RESERVED_FLAG } else { 0 };
    ip[6..8].copy_from_slice(&flags.to_be_bytes());
    ip[8] = TTL;
    ip[9] = p.proto.ip_number();
    ip[12..16].copy_from_slice(&p.src.ipv4());
    ip[16..20].copy_from_slice(&p.dst.ipv4());
    let csum = ipv4_checksum(ip);
    ip[10..12].copy_from_slice(&csum.to_be_bytes());

    buf[34..36].copy_from_slice(&p.ctrl_value.to_be_bytes());
    buf
}

pub fn decode_control(frame: &[u8]) -> Result<Packet, WireError> {
    if frame.len() < 34 {
        return Err(WireError::Truncated(frame.len()));
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype != ETHERTYPE_IPV4 {
        return Err(WireError::NotIpv4(ethertype));
    }
    let ip = &frame[14..34];
    if ip[0] != 0x45 {
        return Err(WireError::BadVersion(ip[0]));
    }
    if ipv4_checksum(ip) != 0 {
        return Err(WireError::Checksum);
    }
    let proto = match ip[9] {
        FEEDBACK_IP_PROTO => Proto::Feedback,
        CTRLMSG_IP_PROTO => Proto::CtrlMsg,
        other => return Err(WireError::Protocol(other)),
    };
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    let payload = total_len.saturating_sub(20);
    if payload != 2 || frame.len() < 36 {
        return Err(WireError::PayloadLength(payload));
    }
    let src = VmAddr::from_ipv4([ip[12], ip[13], ip[14], ip[15]]);
    let dst = VmAddr::from_ipv4([ip[16], ip[17], ip[18], ip[19]]);
    let value = u16::from_be_bytes([frame[34], frame[35]]);
    let mut p = Packet::control(proto, src, dst, value);
    p.ident = u16::from_be_bytes([ip[4], ip[5]]);
    p.ipr = u16::from_be_bytes([ip[6], ip[7]]) & IP_RESERVED_FLAG != 0;
    p.ect = ip[1] & 0b10 != 0;
    p.ce = ip[1] & 0b11 == 0b11;
    Ok(p)
}

/// Lower-case hex of the wire image, as written to trace logs.
pub fn hex(frame: &[u8]) -> String {
    frame.iter().map(|b| format!("{b:02x}")).collect()
}
