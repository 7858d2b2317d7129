//! Evaluation counters, per-attempt logs, step-location histograms and their CSV/JSON forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One accept/reject decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// Start of the attempted step.
    pub t: f64,
    pub dt: f64,
    pub error_ratio: f64,
    pub accepted: bool,
    /// Field evaluations so far, including this attempt's.
    pub cumulative_nfe: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nfe: u64,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub attempts: Vec<Attempt>,
    /// Seconds; zero where no clock is available.
    pub wall_time: f64,
}

impl SolveStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_attempt(&mut self, t: f64, dt: f64, error_ratio: f64, accepted: bool) {
        if accepted {
            self.steps_accepted += 1;
        } else {
            self.steps_rejected += 1;
        }
        self.attempts.push(Attempt {
            t,
            dt,
            error_ratio,
            accepted,
            cumulative_nfe: self.nfe,
        });
    }

    pub fn proportion_rejected(&self) -> f64 {
        let total = self.steps_accepted + self.steps_rejected;
        if total == 0 {
            0.0
        } else {
            self.steps_rejected as f64 / total as f64
        }
    }

    /// Counters agree with the attempt log: accepted/rejected tallies, monotone
    /// cumulative NFE bounded by the total, and the accept ⟺ r ≤ 1 rule.
    pub fn replay_consistent(&self) -> bool {
        let acc = self.attempts.iter().filter(|a| a.accepted).count() as u64;
        let rej = self.attempts.len() as u64 - acc;
        let nfe_ok = self
            .attempts
            .windows(2)
            .all(|w| w[0].cumulative_nfe <= w[1].cumulative_nfe)
            && self
                .attempts
                .last()
                .is_none_or(|a| a.cumulative_nfe <= self.nfe);
        let rule_ok = self
            .attempts
            .iter()
            .all(|a| a.accepted == (a.error_ratio <= 1.0));
        acc == self.steps_accepted && rej == self.steps_rejected && nfe_ok && rule_ok
    }

    /// Appends a later solve (e.g. the next backward segment), offsetting its cumulative counts.
    pub fn merge(&mut self, other: &SolveStats) {
        let base = self.nfe;
        self.attempts.extend(other.attempts.iter().map(|a| Attempt {
            cumulative_nfe: a.cumulative_nfe + base,
            ..*a
        }));
        self.nfe += other.nfe;
        self.steps_accepted += other.steps_accepted;
        self.steps_rejected += other.steps_rejected;
        self.wall_time += other.wall_time;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationHistogram {
    pub accepted: Vec<u64>,
    pub rejected: Vec<u64>,
    pub all: Vec<u64>,
}

/// Bins attempt start times over `t_span` (either orientation). Times outside the
/// span are clamped into the end bins so totals always match the attempt count.
pub fn step_location_histogram(
    stats: &SolveStats,
    n_bins: usize,
    t_span: (f64, f64),
) -> Result<LocationHistogram> {
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let (lo, hi) = if t_span.0 <= t_span.1 {
        t_span
    } else {
        (t_span.1, t_span.0)
    };
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(Error::invalid(
            "histogram span must be non-empty and finite",
        ));
    }
    let mut hist = LocationHistogram {
        accepted: vec![0; n_bins],
        rejected: vec![0; n_bins],
        all: vec![0; n_bins],
    };
    for a in &stats.attempts {
        let frac = (a.t - lo) / (hi - lo);
        let bin = ((frac * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
        hist.all[bin] += 1;
        if a.accepted {
            hist.accepted[bin] += 1;
        } else {
            hist.rejected[bin] += 1;
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: [&str; 5] = ["t", "dt", "error_ratio", "accepted", "cumulative_nfe"];

pub fn serialize_stats(stats: &SolveStats, format: StatsFormat) -> Vec<u8> {
    match format {
        StatsFormat::Json => {
            serde_json::to_vec_pretty(stats).expect("stats are always JSON-serializable")
        }
        StatsFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for a in &stats.attempts {
                w.serialize(a).expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
    }
}

/// Inverse of [`serialize_stats`]. The CSV form carries only the attempt log, so
/// counters are rebuilt from it and `wall_time` comes back as zero.
pub fn parse_stats(bytes: &[u8], format: StatsFormat) -> Result<SolveStats> {
    match format {
        StatsFormat::Json => {
            serde_json::from_slice(bytes).map_err(|e| Error::invalid(format!("stats json: {e}")))
        }
        StatsFormat::Csv => {
            let mut r = csv::Reader::from_reader(bytes);
            let attempts = r
                .deserialize()
                .collect::<std::result::Result<Vec<Attempt>, _>>()
                .map_err(|e| Error::invalid(format!("stats csv: {e}")))?;
            let steps_accepted = attempts.iter().filter(|a| a.accepted).count() as u64;
            Ok(SolveStats {
                nfe: attempts.last().map_or(0, |a| a.cumulative_nfe),
                steps_accepted,
                steps_rejected: attempts.len() as u64 - steps_accepted,
                attempts,
                wall_time: 0.0,
            })
        }
    }
}
