//! Derived statistics: period means, Jain's fairness index, FCT summaries.

use serde::Serialize;

use crate::time::SimTime;

/// Jain's fairness index over non-negative allocations; 1.0 is perfectly fair.
/// An empty or all-zero set counts as fair.
pub fn jain(xs: &[f64]) -> f64 {
    let sum: f64 = xs.iter().sum();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if xs.is_empty() || sq == 0.0 {
        return 1.0;
    }
    sum * sum / (xs.len() as f64 * sq)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Whole-bin index range covering [from, to).
pub fn bin_range(bin_width: SimTime, from: SimTime, to: SimTime, nbins: usize) -> std::ops::Range<usize> {
    let w = bin_width.as_nanos();
    let a = ((from.as_nanos() / w) as usize).min(nbins);
    let b = (to.as_nanos().div_ceil(w) as usize).min(nbins);
    a..b.max(a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMetrics {
    pub name: String,
    pub kind: &'static str,
    pub tagged: bool,
    #[serde(skip)]
    pub start: SimTime,
    #[serde(skip)]
    pub stop: SimTime,
    /// Goodput per bin, bits per second.
    #[serde(skip)]
    pub bins_bps: Vec<f64>,
    pub delivered_bytes: u64,
    pub shim_drops: u64,
    #[serde(skip)]
    pub fct: Option<SimTime>,
}

impl FlowMetrics {
    /// Mean goodput over [from, to) in bits per second, idle bins included.
    pub fn mean_bps(&self, bin_width: SimTime, from: SimTime, to: SimTime) -> f64 {
        let r = bin_range(bin_width, from, to, self.bins_bps.len());
        if r.is_empty() {
            return 0.0;
        }
        let n = r.len() as f64;
        self.bins_bps[r].iter().sum::<f64>() / n
    }

    pub fn is_mice(&self) -> bool {
        self.kind == "mice"
    }

    /// Whether the flow was active over the whole of [from, to).
    pub fn covers(&self, from: SimTime, to: SimTime) -> bool {
        self.start <= from && self.stop >= to
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FctSummary {
    pub count: usize,
    pub completed: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl FctSummary {
    pub fn from_fcts(total: usize, fcts_ms: &[f64]) -> FctSummary {
        let (mean_ms, stddev_ms) = mean_std(fcts_ms);
        FctSummary {
            count: total,
            completed: fcts_ms.len(),
            mean_ms,
            stddev_ms,
            min_ms: if fcts_ms.is_empty() {
                0.0
            } else {
                fcts_ms.iter().copied().fold(f64::INFINITY, f64::min)
            },
            max_ms: fcts_ms.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jain_bounds() {
        assert_eq!(jain(&[5.0, 5.0, 5.0]), 1.0);
        assert!((jain(&[1.0, 0.0, 0.0, 0.0]) - 0.25).abs() < 1e-12);
        assert_eq!(jain(&[]), 1.0);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn fct_summary() {
        let s = FctSummary::from_fcts(3, &[1.0, 3.0]);
        assert_eq!((s.count, s.completed, s.mean_ms, s.stddev_ms, s.min_ms, s.max_ms), (3, 2, 2.0, 1.0, 1.0, 3.0));
        let s = FctSummary::from_fcts(1, &[]);
        assert_eq!((s.min_ms, s.max_ms), (0.0, 0.0));
    }

    #[test]
    fn whole_bins() {
        let w = SimTime::from_millis(100);
        assert_eq!(bin_range(w, SimTime::from_secs(10), SimTime::from_secs(20), 300), 100..200);
        assert_eq!(bin_range(w, SimTime::from_secs(10), SimTime::from_secs(40), 300), 100..300);
    }
}
