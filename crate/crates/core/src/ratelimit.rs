//! Per-VM token bucket shared by every enforcement variant.

use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    /// Fill rate in bits per second.
    pub rate_bps: f64,
    /// Depth in bytes.
    pub depth: f64,
    /// Available tokens in bytes.
    pub tokens: f64,
    /// Time of the last refill.
    pub refilled_at: SimTime,
}

impl TokenBucket {
    /// A bucket that starts full.
    pub fn new(rate_bps: f64, depth: f64, now: SimTime) -> Self {
        TokenBucket {
            rate_bps,
            depth,
            tokens: depth,
            refilled_at: now,
        }
    }

    /// Adds rate * elapsed worth of tokens, capped at the depth.
    pub fn replenish(&mut self, now: SimTime) {
        if now > self.refilled_at {
            let ns = (now - self.refilled_at).as_nanos() as f64;
            self.tokens += self.rate_bps * ns / 8e9;
            self.refilled_at = now;
        }
        if self.tokens > self.depth {
            self.tokens = self.depth;
        }
    }

    /// Refills, then takes `bytes` if available. Returns whether the packet may go.
    pub fn try_consume(&mut self, now: SimTime, bytes: u32) -> bool {
        self.replenish(now);
        if self.tokens >= bytes as f64 {
            self.tokens -= bytes as f64;
            true
        } else {
            false
        }
    }

    /// Earliest time `bytes` tokens will be available, assuming no other use.
    pub fn ready_at(&self, bytes: u32) -> Option<SimTime> {
        let missing = bytes as f64 - self.tokens;
        if missing <= 0.0 {
            return Some(self.refilled_at);
        }
        if self.rate_bps <= 0.0 || bytes as f64 > self.depth {
            return None;
        }
        let ns = (missing * 8e9 / self.rate_bps).ceil();
        Some(self.refilled_at + SimTime(ns as u64))
    }

    /// Changes rate and depth, trimming tokens to the new depth.
    pub fn reconfigure(&mut self, now: SimTime, rate_bps: f64, depth: f64) {
        self.replenish(now);
        self.rate_bps = rate_bps.max(0.0);
        self.depth = depth;
        if self.tokens > depth {
            self.tokens = depth;
        }
    }
}

/// Bucket depth: `intervals` control periods worth of bytes at `rate_bps`,
/// never less than two full-size packets.
pub fn bucket_depth(rate_bps: f64, interval: SimTime, intervals: f64) -> f64 {
    let bytes = rate_bps * interval.as_secs_f64() * intervals / 8.0;
    bytes.max(2.0 * crate::netelem::packet::DATA_PACKET_BYTES as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn replenish_48us_at_250mbps_is_1500_bytes() {
        let mut b = TokenBucket::new(250e6, 100_000.0, SimTime::ZERO);
        b.tokens = 0.0;
        b.replenish(SimTime::from_micros(48));
        assert_eq!(b.tokens, 1500.0);
    }

    #[test]
    fn insufficient_tokens_drop() {
        let mut b = TokenBucket::new(250e6, 100_000.0, SimTime::ZERO);
        b.tokens = 1000.0;
        assert!(!b.try_consume(SimTime::ZERO, 1500));
        assert_eq!(b.tokens, 1000.0);
    }

    #[test]
    fn sufficient_tokens_deduct() {
        let mut b = TokenBucket::new(250e6, 100_000.0, SimTime::ZERO);
        b.tokens = 3000.0;
        assert!(b.try_consume(SimTime::ZERO, 1500));
        assert_eq!(b.tokens, 1500.0);
    }

    #[test]
    fn replenish_is_capped() {
        let mut b = TokenBucket::new(1e9, 3000.0, SimTime::ZERO);
        b.tokens = 0.0;
        b.replenish(SimTime::from_secs(1));
        assert_eq!(b.tokens, 3000.0);
    }

    #[test]
    fn ready_at_predicts_refill() {
        let mut b = TokenBucket::new(1e9, 3000.0, SimTime::ZERO);
        b.tokens = 0.0;
        let t = b.ready_at(1500).unwrap();
        assert_eq!(t, SimTime::from_micros(12));
        assert!(b.try_consume(t, 1500));
        assert_eq!(b.ready_at(4000), None);
    }

    #[test]
    fn depth_floor() {
        assert_eq!(bucket_depth(1e6, SimTime::from_micros(500), 2.0), 3000.0);
        assert_eq!(bucket_depth(1e9, SimTime::from_micros(500), 2.0), 125_000.0);
    }

    proptest! {
        // Bytes admitted over [0, t] never exceed initial depth + rate * t.
        #[test]
        fn admitted_bytes_bounded(
            rate_mbps in 1u32..2000,
            gaps in proptest::collection::vec(0u64..200_000, 1..400),
            sizes in proptest::collection::vec(prop_oneof![Just(54u32), Just(1500u32), Just(36u32)], 400),
        ) {
            let rate = rate_mbps as f64 * 1e6;
            let depth = bucket_depth(rate, SimTime::from_micros(500), 2.0);
            let mut b = TokenBucket::new(rate, depth, SimTime::ZERO);
            let mut now = SimTime::ZERO;
            let mut sent = 0.0;
            for (gap, size) in gaps.iter().zip(sizes.iter().cycle()) {
                now += SimTime(*gap);
                if b.try_consume(now, *size) {
                    sent += *size as f64;
                }
                let bound = depth + rate * now.as_secs_f64() / 8.0;
                prop_assert!(sent <= bound + 1e-6);
                prop_assert!(b.tokens >= 0.0 && b.tokens <= b.depth);
            }
        }
    }
}
