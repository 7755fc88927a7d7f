//! Line-delimited JSON report: one object per sampled frame, then one per
//! merged event.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{AnomalyEvent, AnomalyRecord};
use crate::error::{Error, Result};

const MIN_SIGNIFICANT_DIGITS: usize = 9;

/// Shortest round-trip decimal, padded with trailing zeros to at least nine
/// significant digits. Never uses exponent notation.
pub fn format_float(x: f64) -> String {
    assert!(x.is_finite(), "report values must be finite");
    let mut s = format!("{x}");
    if !s.contains('.') {
        s.push('.');
    }
    let digits = s.bytes().filter(u8::is_ascii_digit);
    let significant = digits.skip_while(|&b| b == b'0').count();
    if significant == 0 {
        return format!("0.{}", "0".repeat(MIN_SIGNIFICANT_DIGITS));
    }
    for _ in significant..MIN_SIGNIFICANT_DIGITS {
        s.push('0');
    }
    s
}

fn record_line(r: &AnomalyRecord) -> String {
    format!(
        "{{\"frame\":{},\"t\":{},\"score\":{},\"anomalous\":{},\"nearest_benchmark\":{}}}",
        r.frame_index,
        format_float(r.timestamp_s),
        format_float(r.score),
        r.anomalous,
        r.nearest_benchmark
    )
}

fn event_line(e: &AnomalyEvent) -> String {
    format!(
        "{{\"event\":{{\"first\":{},\"last\":{},\"peak\":{},\"count\":{}}}}}",
        e.first_frame,
        e.last_frame,
        format_float(e.peak_score),
        e.record_count
    )
}

pub fn render_report(records: &[AnomalyRecord], events: &[AnomalyEvent]) -> String {
    let mut out = String::new();
    for line in records.iter().map(record_line).chain(events.iter().map(event_line)) {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_report(records: &[AnomalyRecord], events: &[AnomalyEvent], path: &Path) -> Result<()> {
    if records.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
        return Err(Error::invalid("report records must be in ascending frame order"));
    }
    fs::write(path, render_report(records, events)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    frame: usize,
    t: f64,
    score: f64,
    anomalous: bool,
    nearest_benchmark: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventBody {
    first: usize,
    last: usize,
    peak: f64,
    count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventJson {
    event: EventBody,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LineJson {
    Record(RecordJson),
    Event(EventJson),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportLine {
    Record(AnomalyRecord),
    Event(AnomalyEvent),
}

/// Parses a report produced by [`write_report`].
pub fn parse_report(text: &str) -> Result<Vec<ReportLine>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let parsed: LineJson = serde_json::from_str(line)
                .map_err(|e| Error::invalid(format!("report line {}: {e}", n + 1)))?;
            Ok(match parsed {
                LineJson::Record(r) => ReportLine::Record(AnomalyRecord {
                    frame_index: r.frame,
                    timestamp_s: r.t,
                    score: r.score,
                    anomalous: r.anomalous,
                    nearest_benchmark: r.nearest_benchmark,
                }),
                LineJson::Event(EventJson { event: e }) => ReportLine::Event(AnomalyEvent {
                    first_frame: e.first,
                    last_frame: e.last,
                    peak_score: e.peak,
                    record_count: e.count,
                }),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn significant(s: &str) -> usize {
        s.bytes().filter(u8::is_ascii_digit).skip_while(|&b| b == b'0').count()
    }

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(0.5), "0.500000000");
        assert_eq!(format_float(1.0), "1.00000000");
        assert_eq!(format_float(0.0), "0.000000000");
        assert_eq!(format_float(10.0 / 3.0), "3.3333333333333335");
        assert_eq!(format_float(0.1), "0.100000000");
        assert_eq!(format_float(250.0), "250.000000");
    }

    #[test]
    fn empty_report_is_empty() {
        assert_eq!(render_report(&[], &[]), "");
    }

    #[test]
    fn single_record_line() {
        let r = AnomalyRecord {
            frame_index: 3,
            timestamp_s: 0.1,
            score: 0.25,
            anomalous: false,
            nearest_benchmark: 2,
        };
        let text = render_report(std::slice::from_ref(&r), &[]);
        assert_eq!(text.lines().count(), 1);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let v: serde_json::Value = serde_json::from_str(text.trim_end()).unwrap();
        assert_eq!(v["anomalous"], serde_json::Value::Bool(false));
        assert_eq!(v.as_object().unwrap().len(), 5);
        assert_eq!(parse_report(&text).unwrap(), vec![ReportLine::Record(r)]);
    }

    #[test]
    fn write_rejects_unordered_records() {
        let r = |i| AnomalyRecord { frame_index: i, timestamp_s: 0.0, score: 0.0, anomalous: false, nearest_benchmark: 0 };
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(&[r(3), r(0)], &[], &dir.path().join("r.jsonl")).is_err());
    }

    proptest! {
        #[test]
        fn formatted_floats_round_trip(x in -1e6f64..1e6) {
            let s = format_float(x);
            prop_assert!(significant(&s) >= 9 || x == 0.0);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), (x + 0.0).to_bits());
        }

        #[test]
        fn report_round_trips(
            rows in proptest::collection::vec((0.0f64..=1.0, any::<bool>(), 0usize..8), 0..40),
            peak in 0.0f64..=1.0,
        ) {
            let records: Vec<_> = rows
                .iter()
                .enumerate()
                .map(|(i, &(score, anomalous, nb))| AnomalyRecord {
                    frame_index: 3 * i,
                    timestamp_s: (3 * i) as f64 / 30.0,
                    score,
                    anomalous,
                    nearest_benchmark: nb,
                })
                .collect();
            let events = vec![AnomalyEvent { first_frame: 0, last_frame: 9, peak_score: peak, record_count: 4 }];
            let parsed = parse_report(&render_report(&records, &events)).unwrap();
            let expected: Vec<_> = records
                .into_iter()
                .map(ReportLine::Record)
                .chain(events.into_iter().map(ReportLine::Event))
                .collect();
            prop_assert_eq!(parsed, expected);
        }
    }
}
