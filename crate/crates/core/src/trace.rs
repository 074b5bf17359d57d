//! RTT traces: CSV ingestion, standardization, splitting and supervised windowing.
//!
//! The on-disk format is a headerless CSV with one `timestamp_ms,rtt_ms` record per
//! line. Timestamps only carry the sampling interval; sample order is file order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL_MS: f64 = 500.0;

/// Ordered RTT samples in milliseconds with a fixed sampling interval.
#[derive(Clone, Debug, PartialEq)]
pub struct RttTrace {
    samples: Vec<f64>,
    interval_ms: f64,
    context: String,
}

impl RttTrace {
    pub fn new(samples: Vec<f64>, interval_ms: f64, context: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v <= 0.0)
        {
            return Err(Error::Validation(format!(
                "sample {i} has rtt {v}; RTTs must be finite and > 0"
            )));
        }
        if !(interval_ms.is_finite() && interval_ms > 0.0) {
            return Err(Error::Validation(format!(
                "sampling interval {interval_ms} must be finite and > 0"
            )));
        }
        Ok(Self {
            samples,
            interval_ms,
            context: context.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn interval_ms(&self) -> f64 {
        self.interval_ms
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = context.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time covered by the trace, `len · interval`.
    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * self.interval_ms
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Parses a trace-csv document.
pub fn parse_trace(document: &[u8]) -> Result<RttTrace> {
    let text = std::str::from_utf8(document).map_err(|e| Error::Parse {
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;

    let mut timestamps = Vec::new();
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (ts, rtt) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `timestamp_ms,rtt_ms`, got {line:?}"),
        })?;
        let ts: f64 = ts.trim().parse().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad timestamp {ts:?}: {e}"),
        })?;
        let rtt: f64 = rtt.trim().parse().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad rtt {rtt:?}: {e}"),
        })?;
        if !ts.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("timestamp {ts} is not finite"),
            });
        }
        if !rtt.is_finite() || rtt <= 0.0 {
            return Err(Error::Validation(format!(
                "line {line_no}: rtt {rtt} must be finite and > 0"
            )));
        }
        if let Some(&prev) = timestamps.last() {
            if ts < prev {
                return Err(Error::Validation(format!(
                    "line {line_no}: timestamp {ts} precedes {prev}"
                )));
            }
        }
        timestamps.push(ts);
        samples.push(rtt);
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let interval = modal_delta(&timestamps).unwrap_or(DEFAULT_INTERVAL_MS);
    RttTrace::new(samples, interval, "")
}

/// Most frequent positive timestamp delta; ties go to the smaller delta.
fn modal_delta(timestamps: &[f64]) -> Option<f64> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for w in timestamps.windows(2) {
        let d = w[1] - w[0];
        if d > 0.0 {
            // positive finite f64 bit patterns sort like the values
            *counts.entry(d.to_bits()).or_default() += 1;
        }
    }
    let mut best: Option<(u64, usize)> = None;
    for (bits, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((bits, count));
        }
    }
    best.map(|(bits, _)| f64::from_bits(bits))
}

/// Writes the trace as trace-csv with timestamps `k · interval`.
pub fn serialize_trace(trace: &RttTrace) -> String {
    let mut out = String::with_capacity(trace.len() * 16);
    for (k, v) in trace.samples.iter().enumerate() {
        let ts = k as f64 * trace.interval_ms;
        // f64 Display is the shortest representation that round-trips
        let _ = writeln!(out, "{ts},{v}");
    }
    out
}

/// Mean and population standard deviation used to (de)standardize a series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err(Error::Validation(format!(
                "standardizer needs finite mean and std > 0 (got mean={mean}, std={std})"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Fits mean and population std. Constant and too-short series are rejected.
    pub fn fit(series: &[f64]) -> Result<Self> {
        if series.len() < 2 {
            return Err(Error::Degenerate(format!(
                "standardization needs at least 2 samples, got {}",
                series.len()
            )));
        }
        if series.iter().all(|&v| v == series[0]) {
            return Err(Error::Degenerate(
                "constant series has zero standard deviation".into(),
            ));
        }
        let (mean, std) = mean_and_population_std(series);
        Self::new(mean, std)
    }

    pub fn apply(&self, series: &[f64]) -> Vec<f64> {
        series.iter().map(|&v| self.apply_one(v)).collect()
    }

    pub fn apply_one(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }

    pub fn invert(&self, series: &[f64]) -> Vec<f64> {
        series.iter().map(|&v| self.invert_one(v)).collect()
    }

    pub fn invert_one(&self, value: f64) -> f64 {
        value * self.std + self.mean
    }
}

/// Two-pass mean and population (divide-by-n) standard deviation.
pub fn mean_and_population_std(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn standardize(series: &[f64]) -> Result<(Vec<f64>, Standardizer)> {
    let s = Standardizer::fit(series)?;
    Ok((s.apply(series), s))
}

pub fn destandardize(series: &[f64], standardizer: &Standardizer) -> Vec<f64> {
    standardizer.invert(series)
}

/// Temporal train/test split fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl SplitSpec {
    pub const DEFAULT: SplitSpec = SplitSpec { train_fraction: 0.8 };

    pub fn new(train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Argument(format!(
                "train fraction {train_fraction} outside (0, 1)"
            )));
        }
        Ok(Self { train_fraction })
    }

    /// Length of the training prefix for a series of `len` samples.
    pub fn train_len(&self, len: usize) -> usize {
        (self.train_fraction * len as f64).floor() as usize
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Splits into `(train, test)`; train is the first `⌊fraction · len⌋` samples.
pub fn split<T>(series: &[T], spec: SplitSpec) -> Result<(&[T], &[T])> {
    SplitSpec::new(spec.train_fraction)?;
    if series.len() < 2 {
        return Err(Error::Argument(format!(
            "cannot split a series of length {}",
            series.len()
        )));
    }
    let p = spec.train_len(series.len());
    if p == 0 || p == series.len() {
        return Err(Error::Argument(format!(
            "fraction {} of {} samples leaves an empty side",
            spec.train_fraction,
            series.len()
        )));
    }
    Ok(series.split_at(p))
}

/// One-step-ahead `(x_i, x_{i+1})` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedSeries {
    pairs: Vec<(f64, f64)>,
}

impl SupervisedSeries {
    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn inputs(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

pub fn to_supervised(series: &[f64]) -> Result<SupervisedSeries> {
    if series.len() < 2 {
        return Err(Error::Degenerate(format!(
            "supervised shift needs at least 2 samples, got {}",
            series.len()
        )));
    }
    Ok(SupervisedSeries {
        pairs: series.windows(2).map(|w| (w[0], w[1])).collect(),
    })
}

/// Median; even lengths average the two middle values.
pub fn median(series: &[f64]) -> Option<f64> {
    if series.is_empty() {
        return None;
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_line_file() {
        let t = parse_trace(b"0,42.0\n500,43.5").unwrap();
        assert_eq!(t.samples(), &[42.0, 43.5]);
        assert_eq!(t.interval_ms(), 500.0);
    }

    #[test]
    fn rejects_non_positive_rtt() {
        assert!(matches!(
            parse_trace(b"0,42.0\n500,-1"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_trace(b"0,42.0\n500,0"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_trace(b"0,NaN\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn empty_and_malformed() {
        assert!(matches!(parse_trace(b""), Err(Error::EmptyInput)));
        assert!(matches!(parse_trace(b"\n\n"), Err(Error::EmptyInput)));
        match parse_trace(b"0,1\n500;2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_trace(b"0,1\n500,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_decreasing_timestamps() {
        assert!(matches!(
            parse_trace(b"500,1\n0,2\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn modal_interval() {
        let t = parse_trace(b"0,1\n500,1\n1000,1\n1600,1\n2100,1\n").unwrap();
        assert_eq!(t.interval_ms(), 500.0);
        let single = parse_trace(b"0,7\n").unwrap();
        assert_eq!(single.interval_ms(), DEFAULT_INTERVAL_MS);
    }

    #[test]
    fn thirty_thousand_lines() {
        let mut doc = String::new();
        for k in 0..30000 {
            doc.push_str(&format!("{},{}\n", k * 500, 40.0 + (k % 7) as f64));
        }
        let t = parse_trace(doc.as_bytes()).unwrap();
        assert_eq!(t.len(), 30000);
        assert_eq!(t.duration_ms(), 15_000_000.0);
    }

    #[test]
    fn standardize_hand_values() {
        let (z, s) = standardize(&[1.0, 2.0, 3.0]).unwrap();
        let std = (2.0f64 / 3.0).sqrt();
        assert!((s.mean - 2.0).abs() < 1e-15);
        assert!((s.std - std).abs() < 1e-15);
        assert!((s.std - 0.816496580927726).abs() < 1e-12);
        assert!((z[0] + 1.224744871391589).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            standardize(&[5.0, 5.0, 5.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(standardize(&[5.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn destandardize_examples() {
        let s = Standardizer::new(2.0, 0.8165).unwrap();
        assert_eq!(destandardize(&[0.0], &s), vec![2.0]);
        let s = Standardizer::new(10.0, 2.0).unwrap();
        assert_eq!(destandardize(&[1.0, -1.0], &s), vec![12.0, 8.0]);
        assert!(Standardizer::new(1.0, 0.0).is_err());
    }

    #[test]
    fn split_examples() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        let (a, b) = split(&v, SplitSpec::new(0.8).unwrap()).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let v = vec![1.0; 30000];
        let (a, b) = split(&v, SplitSpec::DEFAULT).unwrap();
        assert_eq!((a.len(), b.len()), (24000, 6000));
        let (a, b) = split(&v, SplitSpec::new(0.2).unwrap()).unwrap();
        assert_eq!((a.len(), b.len()), (6000, 24000));
        for f in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(SplitSpec::new(f).is_err());
            assert!(split(&v, SplitSpec { train_fraction: f }).is_err());
        }
    }

    #[test]
    fn supervised_examples() {
        let s = to_supervised(&[5.0, 6.0, 7.0]).unwrap();
        assert_eq!(s.pairs(), &[(5.0, 6.0), (6.0, 7.0)]);
        assert!(to_supervised(&[1.0]).is_err());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    fn positive_series() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.1f64..1000.0, 2..200)
            .prop_filter("non-constant", |v| v.iter().any(|&x| x != v[0]))
    }

    proptest! {
        #[test]
        fn standardize_round_trip(v in positive_series()) {
            let (z, s) = standardize(&v).unwrap();
            let (m, sd) = mean_and_population_std(&z);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);
            let back = destandardize(&z, &s);
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs());
            }
            // re-standardizing standardized data is (nearly) a no-op
            let (_, s2) = standardize(&z).unwrap();
            prop_assert!(s2.mean.abs() < 1e-9);
            prop_assert!((s2.std - 1.0).abs() < 1e-9);
        }

        #[test]
        fn csv_round_trip(v in prop::collection::vec(1e-3f64..1e4, 1..100),
                          interval in prop::sample::select(vec![1.0, 100.0, 250.5, 500.0])) {
            let t = RttTrace::new(v, interval, "").unwrap();
            let back = parse_trace(serialize_trace(&t).as_bytes()).unwrap();
            prop_assert_eq!(back.samples(), t.samples());
            if t.len() > 1 {
                prop_assert_eq!(back.interval_ms(), t.interval_ms());
            }
        }

        #[test]
        fn split_and_shift_preserve_order(v in prop::collection::vec(-10f64..10.0, 2..100),
                                          f in 0.05f64..0.95) {
            if let Ok((a, b)) = split(&v, SplitSpec::new(f).unwrap()) {
                let joined: Vec<f64> = a.iter().chain(b).copied().collect();
                prop_assert_eq!(&joined, &v);
            }
            let s = to_supervised(&v).unwrap();
            prop_assert_eq!(s.len(), v.len() - 1);
            for w in s.pairs().windows(2) {
                prop_assert_eq!(w[0].1, w[1].0);
            }
        }
    }
}
