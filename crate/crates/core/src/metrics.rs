//! Evaluation metrics over episode traces.
//!
//! PF is reported in nats. The geometric mean of the final cumulative rates
//! is `exp(PF / I)` and is what the comparison tables show.

use crate::error::MetricError;
use crate::linalg::{inner, norm_sqr};
use crate::protocol::EpisodeTrace;
use num_complex::Complex64;
use serde::Serialize;

/// `sum_i ln R_i`.
pub fn proportional_fairness(rates: &[f64]) -> Result<f64, MetricError> {
    rates
        .iter()
        .enumerate()
        .try_fold(0.0, |acc, (user, &value)| {
            if value > 0.0 {
                Ok(acc + value.ln())
            } else {
                Err(MetricError::NonPositiveRate { user, value })
            }
        })
}

/// `(prod_i R_i)^(1/I)`, computed through the log sum.
pub fn geometric_mean(rates: &[f64]) -> Result<f64, MetricError> {
    if rates.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok((proportional_fairness(rates)? / rates.len() as f64).exp())
}

/// Smallest chordal distance between the channel subspaces of a user set.
///
/// Sets with fewer than two users have distance one by convention.
pub fn min_chordal_distance(channels: &[&[Complex64]], set: &[usize]) -> Result<f64, MetricError> {
    for &i in set {
        if norm_sqr(channels[i]) == 0.0 {
            return Err(MetricError::ZeroChannel(i));
        }
    }
    let mut best: f64 = 1.0;
    for (a, &i) in set.iter().enumerate() {
        for &j in &set[a + 1..] {
            let hi = channels[i];
            let hj = channels[j];
            let overlap = inner(hi, hj).norm_sqr() / (norm_sqr(hi) * norm_sqr(hj));
            best = best.min((1.0 - overlap).max(0.0).sqrt());
        }
    }
    Ok(best)
}

/// Empirical CDF as `(value, cumulative probability)`, values ascending,
/// probabilities `k / n` for `k = 1..=n`.
pub fn rate_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(k, v)| (v, (k + 1) as f64 / n))
        .collect()
}

/// Nearest-rank percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub pf_nats: f64,
    pub geo_mean: f64,
    pub mean_selected: f64,
    /// Mean over slots serving at least two users; NaN when there were none.
    pub mean_min_chordal: f64,
    pub median_slot_time_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub scheduler: String,
    pub episodes: usize,
    pub pf_mean: f64,
    pub pf_std: f64,
    pub geo_mean_mean: f64,
    pub mean_selected: f64,
    pub mean_min_chordal: f64,
    pub time_p50_us: f64,
    pub time_p90_us: f64,
    pub time_p99_us: f64,
    pub time_mean_us: f64,
    #[serde(skip)]
    pub rows: Vec<EpisodeRow>,
}

impl MetricReport {
    /// Aggregates traces; rows are ordered by episode index so the result does
    /// not depend on the order the traces arrive in.
    pub fn from_traces(scheduler: &str, traces: &[EpisodeTrace]) -> Result<Self, MetricError> {
        if traces.is_empty() {
            return Err(MetricError::Empty);
        }
        let mut rows = traces
            .iter()
            .map(EpisodeRow::from_trace)
            .collect::<Result<Vec<_>, _>>()?;
        rows.sort_by_key(|r| r.episode);
        let mut times: Vec<f64> = traces
            .iter()
            .flat_map(|t| t.slot_times_us.iter().copied())
            .collect();
        times.sort_by(f64::total_cmp);
        let chordal: Vec<f64> = {
            let mut v: Vec<(usize, f64)> = traces
                .iter()
                .flat_map(|t| t.min_chordal.iter().flatten().map(move |&d| (t.episode, d)))
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            v.into_iter().map(|(_, d)| d).collect()
        };
        let pf_mean = mean(rows.iter().map(|r| r.pf_nats));
        let pf_var = mean(rows.iter().map(|r| (r.pf_nats - pf_mean).powi(2)));
        let selected_total: usize = traces
            .iter()
            .map(|t| t.selected_counts.iter().sum::<usize>())
            .sum();
        let slot_total: usize = traces.iter().map(|t| t.selected_counts.len()).sum();
        Ok(Self {
            scheduler: scheduler.to_string(),
            episodes: rows.len(),
            pf_mean,
            pf_std: pf_var.sqrt(),
            geo_mean_mean: mean(rows.iter().map(|r| r.geo_mean)),
            mean_selected: selected_total as f64 / slot_total.max(1) as f64,
            mean_min_chordal: mean(chordal),
            time_p50_us: percentile(&times, 50.0),
            time_p90_us: percentile(&times, 90.0),
            time_p99_us: percentile(&times, 99.0),
            time_mean_us: mean(times.iter().copied()),
            rows,
        })
    }

    pub fn geo_mean_cdf(&self) -> Vec<(f64, f64)> {
        rate_cdf(&self.rows.iter().map(|r| r.geo_mean).collect::<Vec<_>>())
    }
}

impl EpisodeRow {
    pub fn from_trace(t: &EpisodeTrace) -> Result<Self, MetricError> {
        let pf = proportional_fairness(&t.final_rates)?;
        Ok(Self {
            episode: t.episode,
            pf_nats: pf,
            geo_mean: (pf / t.final_rates.len() as f64).exp(),
            mean_selected: mean(t.selected_counts.iter().map(|&c| c as f64)),
            mean_min_chordal: mean(t.min_chordal.iter().flatten().copied()),
            median_slot_time_us: percentile(&t.slot_times_us, 50.0),
        })
    }
}
