//! Baseline endpoints: NewReno (ECN on or off), DCTCP, UDP CBR, mice
//! request/response, and goodput accounting at the sinks.

pub mod tcp;
pub mod udp;

pub use tcp::{CcVariant, DctcpState, TcpConfig, TcpReceiver, TcpSender};
pub use udp::UdpCbr;

use crate::time::SimTime;

/// Payload bytes delivered per flow, binned by arrival time.
#[derive(Debug, Clone)]
pub struct GoodputLedger {
    bin_width: SimTime,
    bins: Vec<u64>,
    total: u64,
}

impl GoodputLedger {
    pub fn new(bin_width: SimTime, duration: SimTime) -> Self {
        assert!(bin_width > SimTime::ZERO);
        let n = duration.as_nanos().div_ceil(bin_width.as_nanos()) as usize;
        GoodputLedger {
            bin_width,
            bins: vec![0; n.max(1)],
            total: 0,
        }
    }

    pub fn credit(&mut self, now: SimTime, bytes: u64) {
        if bytes == 0 {
            return;
        }
        let idx = ((now.as_nanos() / self.bin_width.as_nanos()) as usize).min(self.bins.len() - 1);
        self.bins[idx] += bytes;
        self.total += bytes;
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn bin_width(&self) -> SimTime {
        self.bin_width
    }

    pub fn total_bytes(&self) -> u64 {
        self.total
    }

    /// Goodput of bin `i` in bits per second.
    pub fn bin_bps(&self, i: usize) -> f64 {
        self.bins[i] as f64 * 8.0 / self.bin_width.as_secs_f64()
    }

    /// Mean goodput over [from, to) in bits per second, from whole bins.
    pub fn mean_bps(&self, from: SimTime, to: SimTime) -> f64 {
        let w = self.bin_width.as_nanos();
        let a = (from.as_nanos() / w) as usize;
        let b = (to.as_nanos().div_ceil(w) as usize).min(self.bins.len());
        if b <= a {
            return 0.0;
        }
        let bytes: u64 = self.bins[a..b].iter().sum();
        bytes as f64 * 8.0 / (SimTime((b - a) as u64 * w)).as_secs_f64()
    }
}

/// Lifecycle of one mice request/response exchange.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MiceFlow {
    pub response_size: u64,
    pub start: Option<SimTime>,
    pub completion: Option<SimTime>,
    pub requests_sent: u32,
}

impl MiceFlow {
    pub fn new(response_size: u64) -> Self {
        MiceFlow {
            response_size,
            ..Default::default()
        }
    }

    pub fn fct(&self) -> Option<SimTime> {
        Some(self.completion? - self.start?)
    }
}

/// Default mice response: an 11.5 KB page.
pub const MICE_RESPONSE_BYTES: u64 = 11_776;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netelem::packet::MSS;

    #[test]
    fn ledger_credits_current_bin() {
        let mut g = GoodputLedger::new(SimTime::from_millis(100), SimTime::from_secs(1));
        assert_eq!(g.bins().len(), 10);
        g.credit(SimTime::from_millis(150), MSS as u64);
        assert_eq!(g.bins()[1], 1466);
        assert_eq!(g.bin_bps(0), 0.0);
        assert!((g.bin_bps(1) - 1466.0 * 8.0 / 0.1).abs() < 1e-9);
        g.credit(SimTime::from_millis(150), 0);
        assert_eq!(g.total_bytes(), 1466);
    }

    #[test]
    fn mean_over_window() {
        let mut g = GoodputLedger::new(SimTime::from_millis(100), SimTime::from_secs(2));
        for i in 0..20 {
            g.credit(SimTime::from_millis(i * 100 + 1), 12_500_000 / 10 * (i % 2 + 1));
        }
        // alternate 100 and 200 Mb/s
        let m = g.mean_bps(SimTime::ZERO, SimTime::from_secs(2));
        assert!((m - 150e6).abs() < 1e-3);
        let m = g.mean_bps(SimTime::from_secs(1), SimTime::from_millis(1100));
        assert!((m - 100e6).abs() < 1e-3);
    }

    #[test]
    fn mice_size_is_nine_segments() {
        assert_eq!(MICE_RESPONSE_BYTES.div_ceil(MSS as u64), 9);
        let mut m = MiceFlow::new(MICE_RESPONSE_BYTES);
        assert_eq!(m.fct(), None);
        m.start = Some(SimTime::from_secs(10));
        m.completion = Some(SimTime::from_secs(10) + SimTime::from_micros(350));
        assert_eq!(m.fct(), Some(SimTime::from_micros(350)));
    }
}
