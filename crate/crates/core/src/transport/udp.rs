use crate::netelem::packet::{Packet, Proto, VmAddr, DATA_PACKET_BYTES, HEADER_BYTES};
use crate::time::SimTime;

/// Constant-bit-rate sender. Never reacts to loss or marks.
#[derive(Debug, Clone)]
pub struct UdpCbr {
    flow_id: u32,
    src: VmAddr,
    dst: VmAddr,
    pub rate_bps: u64,
    pub packet_size: u32,
    start: SimTime,
    sent: u64,
}

impl UdpCbr {
    pub fn new(flow_id: u32, src: VmAddr, dst: VmAddr, rate_bps: u64, start: SimTime) -> Self {
        assert!(rate_bps > 0, "CBR rate must be positive");
        UdpCbr {
            flow_id,
            src,
            dst,
            rate_bps,
            packet_size: DATA_PACKET_BYTES,
            start,
            sent: 0,
        }
    }

    /// Emission time of the k-th packet: start + k * bits / rate, floored to
    /// the nanosecond. Computed from k directly so rounding never accumulates.
    pub fn emission_time(&self, k: u64) -> SimTime {
        let bits = self.packet_size as u128 * 8;
        let ns = (k as u128 * bits * 1_000_000_000) / self.rate_bps as u128;
        self.start + SimTime(ns as u64)
    }

    pub fn next_tx(&self) -> SimTime {
        self.emission_time(self.sent)
    }

    pub fn packets_sent(&self) -> u64 {
        self.sent
    }

    /// Emits one packet and returns it with the time of the next emission.
    pub fn tick(&mut self) -> (Packet, SimTime) {
        let payload = self.packet_size - HEADER_BYTES;
        let seq = self.sent * payload as u64;
        let p = Packet::data(self.flow_id, self.src, self.dst, Proto::Udp, seq, payload);
        self.sent += 1;
        (p, self.next_tx())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gigabit_spacing_is_12us() {
        let mut u = UdpCbr::new(0, VmAddr(1), VmAddr(2), 1_000_000_000, SimTime::ZERO);
        let (p, next) = u.tick();
        assert_eq!(p.size_bytes(), 1500);
        assert!(!p.ect);
        assert_eq!(next, SimTime::from_micros(12));
    }

    #[test]
    fn emissions_form_an_exact_progression() {
        // 3 * 12000 bits at 71.4 Mb/s is not a whole number of ns
        let mut u = UdpCbr::new(0, VmAddr(1), VmAddr(2), 71_400_000, SimTime::from_secs(1));
        let mut times = vec![u.next_tx()];
        for _ in 0..10_000 {
            times.push(u.tick().1);
        }
        for (k, t) in times.iter().enumerate() {
            let exact = 1e9 + k as f64 * 12_000.0 / 71.4e6 * 1e9;
            assert!((t.as_nanos() as f64 - exact).abs() < 1.0, "k={k}");
        }
    }
}
