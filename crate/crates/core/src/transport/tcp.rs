//! Behavioural NewReno / DCTCP sender and a cumulative-ack receiver.
//!
//! Loss recovery uses a scoreboard fed by one SACK block per ack (the segment
//! that triggered it), so multiple losses in a window are repaired in one
//! recovery episode. No delayed acks, no Nagle, no handshake.

use std::collections::{BTreeMap, BTreeSet};

use crate::netelem::packet::{Packet, Proto, VmAddr, MSS};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CcVariant {
    NewReno,
    Dctcp { g: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcpConfig {
    pub mss: u32,
    pub init_cwnd_segs: u32,
    pub rto_min: SimTime,
    pub rto_init: SimTime,
    pub rto_max: SimTime,
    pub rwnd_bytes: u64,
    pub ecn_enabled: bool,
    pub variant: CcVariant,
    pub dupthresh: u32,
    /// Lower the duplicate threshold when fewer than four segments are outstanding.
    pub early_retransmit: bool,
    /// Probe with one segment after two smoothed RTTs without acknowledgements.
    pub tail_loss_probe: bool,
    pub tlp_min: SimTime,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            mss: MSS,
            init_cwnd_segs: 10,
            rto_min: SimTime::from_millis(200),
            rto_init: SimTime::from_millis(200),
            rto_max: SimTime::from_secs(60),
            rwnd_bytes: 256 * 1024,
            ecn_enabled: false,
            variant: CcVariant::NewReno,
            dupthresh: 3,
            early_retransmit: true,
            tail_loss_probe: true,
            tlp_min: SimTime::from_millis(1),
        }
    }
}

impl TcpConfig {
    pub fn dctcp() -> Self {
        TcpConfig {
            ecn_enabled: true,
            variant: CcVariant::Dctcp { g: 1.0 / 16.0 },
            ..Default::default()
        }
    }

    /// DCTCP packets always carry ECT; NewReno only with ECN enabled.
    pub fn sends_ect(&self) -> bool {
        self.ecn_enabled || matches!(self.variant, CcVariant::Dctcp { .. })
    }
}

/// Per-window DCTCP estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DctcpState {
    pub alpha: f64,
    pub g: f64,
    pub acked_bytes: u64,
    pub marked_bytes: u64,
    pub window_end: u64,
}

impl DctcpState {
    pub fn new(g: f64) -> Self {
        assert!((0.0..=1.0).contains(&g));
        DctcpState {
            alpha: 0.0,
            g,
            acked_bytes: 0,
            marked_bytes: 0,
            window_end: 0,
        }
    }

    /// Folds the finished window into alpha and returns the new cwnd.
    /// The window is cut by alpha/2 only if it carried at least one mark.
    pub fn on_window_end(&mut self, cwnd: f64, min_cwnd: f64) -> f64 {
        let frac = if self.acked_bytes > 0 {
            (self.marked_bytes as f64 / self.acked_bytes as f64).min(1.0)
        } else {
            0.0
        };
        self.alpha = ((1.0 - self.g) * self.alpha + self.g * frac).clamp(0.0, 1.0);
        let marked = self.marked_bytes > 0;
        self.acked_bytes = 0;
        self.marked_bytes = 0;
        if marked {
            (cwnd * (1.0 - self.alpha / 2.0)).max(min_cwnd)
        } else {
            cwnd
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Seg {
    len: u32,
    sacked: bool,
    lost: bool,
    retx: bool,
    /// Ordinal of the latest transmission of this segment.
    xmit: u64,
}

impl Seg {
    fn in_pipe(&self) -> bool {
        !self.sacked && (!self.lost || self.retx)
    }
}

#[derive(Debug, Clone)]
pub struct TcpSender {
    pub cfg: TcpConfig,
    flow_id: u32,
    src: VmAddr,
    dst: VmAddr,
    proto: Proto,
    total_bytes: Option<u64>,

    snd_una: u64,
    snd_nxt: u64,
    cwnd: f64,
    ssthresh: f64,
    srtt: Option<f64>,
    rttvar: f64,
    rto: SimTime,
    backoff: u32,

    dup_acks: u32,
    in_recovery: bool,
    recovery_point: u64,
    /// ECN reductions are suppressed until snd_una passes this point.
    ecn_hold_until: u64,

    scoreboard: BTreeMap<u64, Seg>,
    to_retx: BTreeSet<u64>,
    pipe: u64,
    high_sack_end: u64,
    lost_scan_from: u64,
    xmit_count: u64,
    /// Highest transmission ordinal known to have reached the receiver.
    delivered_xmit: u64,
    /// Outstanding retransmissions by transmission ordinal.
    retx_out: BTreeMap<u64, u64>,

    dctcp: Option<DctcpState>,
    rto_deadline: Option<SimTime>,
    tlp_deadline: Option<SimTime>,
    /// A probe is outstanding; no further probe until new data is acknowledged.
    tlp_out: bool,
    stopped: bool,
    pub retransmits: u64,
    pub timeouts: u64,
    pub probes: u64,
}

impl TcpSender {
    pub fn new(cfg: TcpConfig, flow_id: u32, src: VmAddr, dst: VmAddr, total_bytes: Option<u64>) -> Self {
        let cwnd = (cfg.init_cwnd_segs * cfg.mss) as f64;
        let dctcp = match cfg.variant {
            CcVariant::Dctcp { g } => Some(DctcpState::new(g)),
            CcVariant::NewReno => None,
        };
        TcpSender {
            cfg,
            flow_id,
            src,
            dst,
            proto: Proto::Tcp,
            total_bytes,
            snd_una: 0,
            snd_nxt: 0,
            cwnd,
            ssthresh: f64::INFINITY,
            srtt: None,
            rttvar: 0.0,
            rto: cfg.rto_init.max(cfg.rto_min),
            backoff: 0,
            dup_acks: 0,
            in_recovery: false,
            recovery_point: 0,
            ecn_hold_until: 0,
            scoreboard: BTreeMap::new(),
            to_retx: BTreeSet::new(),
            pipe: 0,
            high_sack_end: 0,
            lost_scan_from: 0,
            xmit_count: 0,
            delivered_xmit: 0,
            retx_out: BTreeMap::new(),
            dctcp,
            rto_deadline: None,
            tlp_deadline: None,
            tlp_out: false,
            stopped: false,
            retransmits: 0,
            timeouts: 0,
            probes: 0,
        }
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> f64 {
        self.ssthresh
    }

    pub fn set_cwnd(&mut self, bytes: f64) {
        self.cwnd = bytes.max(self.cfg.mss as f64);
    }

    pub fn set_ssthresh(&mut self, bytes: f64) {
        self.ssthresh = bytes;
    }

    pub fn alpha(&self) -> Option<f64> {
        self.dctcp.map(|d| d.alpha)
    }

    pub fn dctcp_mut(&mut self) -> Option<&mut DctcpState> {
        self.dctcp.as_mut()
    }

    pub fn rto(&self) -> SimTime {
        self.rto
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    pub fn in_recovery(&self) -> bool {
        self.in_recovery
    }

    /// Bytes sent and not yet cumulatively acknowledged.
    pub fn flight(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    /// Earliest pending timer: tail-loss probe or retransmission timeout.
    pub fn timer_deadline(&self) -> Option<SimTime> {
        match (self.tlp_deadline, self.rto_deadline) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Fires whichever timer is due at `now`.
    pub fn on_timer(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        if self.tlp_deadline.is_some_and(|t| t <= now) {
            self.tlp_deadline = None;
            self.probe(now, out);
        } else if self.rto_deadline.is_some_and(|t| t <= now) {
            self.on_rto(now, out);
        }
    }

    pub fn is_complete(&self) -> bool {
        self.total_bytes.is_some_and(|t| self.snd_una >= t)
    }

    pub fn stop(&mut self) {
        self.stopped = true;
        self.rto_deadline = None;
        self.tlp_deadline = None;
    }

    fn mss(&self) -> f64 {
        self.cfg.mss as f64
    }

    fn min_cwnd(&self) -> f64 {
        2.0 * self.mss()
    }

    fn window(&self) -> u64 {
        (self.cwnd as u64).min(self.cfg.rwnd_bytes)
    }

    /// Length of the next new segment if window and receiver allow it now.
    fn next_new_len(&self, ignore_cwnd: bool) -> Option<u32> {
        let remaining = match self.total_bytes {
            Some(t) => t.saturating_sub(self.snd_nxt),
            None => u64::MAX,
        };
        if remaining == 0 {
            return None;
        }
        let len = remaining.min(self.cfg.mss as u64) as u32;
        if !ignore_cwnd && self.pipe + len as u64 > self.window() {
            return None;
        }
        if self.snd_nxt + len as u64 > self.snd_una + self.cfg.rwnd_bytes {
            return None;
        }
        Some(len)
    }

    fn dupthresh(&self) -> u32 {
        let mss = self.cfg.mss as u64;
        let outstanding = self.flight().div_ceil(mss);
        if self.cfg.early_retransmit && outstanding < 4 && self.next_new_len(false).is_none() {
            (outstanding as u32).saturating_sub(1).max(1).min(self.cfg.dupthresh)
        } else {
            self.cfg.dupthresh
        }
    }

    fn make_segment(&self, now: SimTime, seq: u64, len: u32) -> Packet {
        let mut p = Packet::data(self.flow_id, self.src, self.dst, self.proto, seq, len);
        p.ect = self.cfg.sends_ect();
        p.ts = now;
        p
    }

    /// Emits everything the window allows: repairs first, then new data.
    pub fn send_available(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        if self.stopped {
            return;
        }
        let window = self.window();
        loop {
            if let Some(&seq) = self.to_retx.iter().next() {
                let seg = self.scoreboard[&seq];
                if self.pipe + seg.len as u64 > window && self.pipe > 0 {
                    break;
                }
                self.to_retx.remove(&seq);
                self.retransmit(now, seq, out);
                continue;
            }
            let Some(len) = self.next_new_len(false) else { break };
            self.send_new(now, len, out);
        }
        if self.snd_nxt > self.snd_una && self.rto_deadline.is_none() {
            self.rto_deadline = Some(now + self.rto);
        }
    }

    fn send_new(&mut self, now: SimTime, len: u32, out: &mut Vec<Packet>) {
        {
            let seq = self.snd_nxt;
            self.xmit_count += 1;
            self.scoreboard.insert(
                seq,
                Seg {
                    len,
                    sacked: false,
                    lost: false,
                    retx: false,
                    xmit: self.xmit_count,
                },
            );
            self.snd_nxt += len as u64;
            self.pipe += len as u64;
            out.push(self.make_segment(now, seq, len));
        }
    }

    /// Tail-loss probe: one new segment if the receiver allows, otherwise the
    /// highest unacknowledged one again.
    fn probe(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        if self.stopped || self.snd_una >= self.snd_nxt {
            return;
        }
        self.tlp_out = true;
        self.probes += 1;
        if let Some(len) = self.next_new_len(true) {
            self.send_new(now, len, out);
        } else if let Some((&seq, _)) = self.scoreboard.iter().rev().find(|(_, s)| !s.sacked) {
            if self.scoreboard[&seq].in_pipe() {
                let len = self.scoreboard[&seq].len as u64;
                self.pipe -= len;
            }
            self.to_retx.remove(&seq);
            self.retransmit(now, seq, out);
        }
        self.rto_deadline = Some(now + self.rto);
    }

    fn arm_tlp(&mut self, now: SimTime) {
        self.tlp_deadline = None;
        if !self.cfg.tail_loss_probe || self.tlp_out || self.stopped || self.snd_una >= self.snd_nxt {
            return;
        }
        let Some(srtt) = self.srtt else { return };
        let pto = SimTime((2.0 * srtt) as u64).max(self.cfg.tlp_min);
        let at = now + pto;
        if self.rto_deadline.is_none_or(|r| at < r) {
            self.tlp_deadline = Some(at);
        }
    }

    fn sample_rtt(&mut self, rtt: SimTime) {
        let r = rtt.as_nanos() as f64;
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2.0;
            }
            Some(s) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (s - r).abs();
                self.srtt = Some(0.875 * s + 0.125 * r);
            }
        }
        let rto = SimTime((self.srtt.unwrap() + 4.0 * self.rttvar).ceil() as u64);
        self.rto = rto.max(self.cfg.rto_min).min(self.cfg.rto_max);
    }

    fn mark_lost(&mut self, seq: u64) {
        if let Some(s) = self.scoreboard.get_mut(&seq) {
            if !s.sacked && !s.lost {
                let was_in_pipe = s.in_pipe();
                s.lost = true;
                s.retx = false;
                if was_in_pipe {
                    self.pipe -= s.len as u64;
                }
                self.to_retx.insert(seq);
            }
        }
    }

    /// A segment is presumed lost once `dupthresh` segments' worth of data
    /// above it has been selectively acknowledged.
    fn detect_losses(&mut self) -> bool {
        let reach = (self.dupthresh() as u64).saturating_sub(1) * self.cfg.mss as u64;
        let start = self.lost_scan_from.max(self.snd_una);
        let mut newly = Vec::new();
        for (&seq, s) in self.scoreboard.range(start..) {
            if seq + s.len as u64 + reach > self.high_sack_end {
                break;
            }
            if !s.sacked && !s.lost {
                newly.push(seq);
            }
            self.lost_scan_from = seq + s.len as u64;
        }
        let any = !newly.is_empty();
        for seq in newly {
            self.mark_lost(seq);
        }
        any
    }

    fn enter_recovery(&mut self) {
        self.in_recovery = true;
        self.recovery_point = self.snd_nxt;
        self.ssthresh = (self.cwnd / 2.0).max(self.min_cwnd());
        self.cwnd = self.ssthresh;
        // a loss response also counts as this RTT's ECN reduction
        self.ecn_hold_until = self.snd_nxt;
    }

    /// Processes one acknowledgement. New transmissions are appended to `out`.
    pub fn on_ack(&mut self, now: SimTime, ack: &Packet, out: &mut Vec<Packet>) {
        if self.stopped {
            return;
        }
        let cum = ack.seq.min(self.snd_nxt);
        let newly_acked = cum.saturating_sub(self.snd_una);

        // SACK block
        if ack.sack >= cum {
            if let Some(s) = self.scoreboard.get_mut(&ack.sack) {
                if !s.sacked {
                    if s.in_pipe() {
                        self.pipe -= s.len as u64;
                    }
                    s.sacked = true;
                    self.delivered_xmit = self.delivered_xmit.max(s.xmit);
                    self.tlp_out = false;
                    self.to_retx.remove(&ack.sack);
                    self.high_sack_end = self.high_sack_end.max(ack.sack + s.len as u64);
                }
            }
        }

        if newly_acked > 0 {
            let keys: Vec<u64> = self.scoreboard.range(..cum).map(|(k, _)| *k).collect();
            for k in keys {
                let s = self.scoreboard.remove(&k).expect("present");
                if s.in_pipe() {
                    self.pipe -= s.len as u64;
                }
                if !s.sacked {
                    self.delivered_xmit = self.delivered_xmit.max(s.xmit);
                }
                self.to_retx.remove(&k);
            }
            self.snd_una = cum;
            self.dup_acks = 0;
            self.tlp_out = false;
            self.backoff = 0;
            if ack.ts > SimTime::ZERO && now >= ack.ts {
                self.sample_rtt(now - ack.ts);
            }
            self.rto_deadline = if self.snd_una < self.snd_nxt {
                Some(now + self.rto)
            } else {
                None
            };
        } else if self.snd_una < self.snd_nxt && ack.sack >= cum {
            self.dup_acks += 1;
        }

        let ece = ack.ecn_echo && self.cfg.ecn_enabled;
        if let Some(d) = self.dctcp.as_mut() {
            // Dup acks still carry marks; count them as one segment.
            let credited = if newly_acked > 0 { newly_acked } else { self.cfg.mss as u64 };
            d.acked_bytes += credited;
            if ack.ecn_echo {
                d.marked_bytes += credited;
            }
        }

        let was_in_recovery = self.in_recovery;
        if self.in_recovery && self.snd_una >= self.recovery_point {
            self.in_recovery = false;
            self.cwnd = self.ssthresh.max(self.min_cwnd());
        }

        let lost = self.detect_losses() | self.detect_lost_retransmissions();
        let dupthresh = self.dupthresh();
        if !self.in_recovery && (self.dup_acks >= dupthresh || lost) && self.snd_una < self.snd_nxt {
            if self.snd_una >= self.recovery_point || !was_in_recovery {
                if self.dup_acks >= dupthresh {
                    let first = self.snd_una;
                    self.mark_lost(first);
                }
                self.enter_recovery();
                self.fast_retransmit(now, out);
            }
        }

        if !self.in_recovery && newly_acked > 0 {
            self.grow(newly_acked);
        }

        if self.dctcp.is_some() {
            let window_end = self.dctcp.as_ref().unwrap().window_end;
            if self.snd_una >= window_end {
                let cwnd = self.cwnd;
                let min = self.min_cwnd();
                let in_rec = self.in_recovery;
                let d = self.dctcp.as_mut().unwrap();
                let new_cwnd = d.on_window_end(cwnd, min);
                d.window_end = self.snd_nxt.max(self.snd_una + 1);
                if !in_rec && new_cwnd < cwnd {
                    self.cwnd = new_cwnd;
                    self.ssthresh = new_cwnd;
                }
            }
        } else if ece && !self.in_recovery && self.snd_una >= self.ecn_hold_until {
            self.ecn_reduce();
        }

        self.send_available(now, out);
        self.arm_tlp(now);
    }

    /// Sends the first hole immediately on entering recovery, whatever the pipe.
    fn fast_retransmit(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        if let Some(seq) = self.to_retx.pop_first() {
            self.retransmit(now, seq, out);
        }
    }

    fn retransmit(&mut self, now: SimTime, seq: u64, out: &mut Vec<Packet>) {
        self.xmit_count += 1;
        let xmit = self.xmit_count;
        let s = self.scoreboard.get_mut(&seq).expect("scoreboard entry");
        s.retx = true;
        s.xmit = xmit;
        let len = s.len;
        self.pipe += len as u64;
        self.retransmits += 1;
        self.retx_out.insert(xmit, seq);
        out.push(self.make_segment(now, seq, len));
    }

    /// A retransmission is presumed lost once any later transmission has been
    /// delivered; paths never reorder.
    fn detect_lost_retransmissions(&mut self) -> bool {
        let mut any = false;
        let horizon = self.delivered_xmit.saturating_sub(1);
        while let Some((&xmit, &seq)) = self.retx_out.first_key_value() {
            if xmit > horizon {
                break;
            }
            self.retx_out.pop_first();
            let Some(s) = self.scoreboard.get_mut(&seq) else { continue };
            if s.xmit != xmit || s.sacked || !s.retx {
                continue;
            }
            s.retx = false;
            self.pipe -= s.len as u64;
            self.to_retx.insert(seq);
            any = true;
        }
        any
    }

    /// Halve once per RTT in response to ECN-Echo.
    pub fn ecn_reduce(&mut self) {
        self.ssthresh = (self.cwnd / 2.0).max(self.min_cwnd());
        self.cwnd = self.ssthresh;
        self.ecn_hold_until = self.snd_nxt.max(self.snd_una + 1);
    }

    fn grow(&mut self, acked: u64) {
        let mss = self.mss();
        if self.cwnd < self.ssthresh {
            self.cwnd += (acked as f64).min(mss);
        } else {
            self.cwnd += mss * mss / self.cwnd;
        }
        // no point growing past what the receiver will ever allow
        let cap = self.cfg.rwnd_bytes as f64 + mss;
        if self.cwnd > cap {
            self.cwnd = cap;
        }
    }

    /// Retransmission timeout. Everything outstanding is presumed lost.
    pub fn on_rto(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        if self.stopped || self.snd_una >= self.snd_nxt {
            self.rto_deadline = None;
            return;
        }
        self.timeouts += 1;
        let flight = self.flight() as f64;
        self.ssthresh = (flight / 2.0).max(self.min_cwnd());
        self.cwnd = self.mss();
        self.in_recovery = false;
        self.recovery_point = self.snd_nxt;
        self.dup_acks = 0;
        self.ecn_hold_until = self.snd_nxt;
        for (&seq, s) in self.scoreboard.iter_mut() {
            if !s.sacked {
                s.lost = true;
                s.retx = false;
                self.to_retx.insert(seq);
            }
        }
        self.pipe = 0;
        self.retx_out.clear();
        self.tlp_out = false;
        self.tlp_deadline = None;
        self.lost_scan_from = self.snd_nxt;
        self.backoff += 1;
        let doubled = self.rto.as_nanos().saturating_mul(2);
        self.rto = SimTime(doubled).min(self.cfg.rto_max);
        self.rto_deadline = None;
        self.send_available(now, out);
        self.rto_deadline = Some(now + self.rto);
    }
}

/// Cumulative-ack receiver with an out-of-order interval buffer.
#[derive(Debug, Clone, Default)]
pub struct TcpReceiver {
    rcv_nxt: u64,
    ooo: BTreeMap<u64, u64>,
}

impl TcpReceiver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    /// Returns the number of bytes that became in-order (the goodput credit)
    /// and the acknowledgement to send back.
    pub fn on_data(&mut self, p: &Packet) -> (u64, Packet) {
        let start = p.seq;
        let end = p.seq + p.payload_len as u64;
        let before = self.rcv_nxt;
        if end > self.rcv_nxt {
            if start <= self.rcv_nxt {
                self.rcv_nxt = end;
                // pull in any buffered ranges that are now contiguous
                while let Some((&s, &e)) = self.ooo.iter().next() {
                    if s > self.rcv_nxt {
                        break;
                    }
                    self.ooo.remove(&s);
                    self.rcv_nxt = self.rcv_nxt.max(e);
                }
            } else {
                let e = self.ooo.entry(start).or_insert(end);
                *e = (*e).max(end);
            }
        }
        let ack = Packet::ack(p.flow_id, p.dst, p.src, self.rcv_nxt, p.seq, p.ce, p.ts);
        (self.rcv_nxt - before, ack)
    }
}
