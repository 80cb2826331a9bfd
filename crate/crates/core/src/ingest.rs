//! Session-log ingestion: read session-level CSV, aggregate to user level,
//! and turn a required user count into a traffic recommendation.
//!
//! Input format: headered CSV `user_id,session_id,metric`, UTF-8, comma
//! delimited, `.` decimal point. `session_id` is optional (column may be
//! absent or empty). Aggregates serialize as `user_id,n_sessions,metric_sum`
//! with exact integers for binary metrics.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustered::{MetricMode, UserAggregate};
use crate::error::{Error, Result};

/// One session row from the historical log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub user_id: String,
    pub session_id: Option<String>,
    pub metric: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RawSession {
    user_id: String,
    #[serde(default)]
    session_id: Option<String>,
    metric: f64,
}

fn validate_row(raw: &RawSession, mode: MetricMode, line: u64) -> Result<()> {
    if raw.user_id.trim().is_empty() {
        return Err(Error::Validation(format!("line {line}: empty user_id")));
    }
    if !raw.metric.is_finite() {
        return Err(Error::Validation(format!(
            "line {line}: metric {} is not finite",
            raw.metric
        )));
    }
    if mode == MetricMode::Binary && raw.metric != 0.0 && raw.metric != 1.0 {
        return Err(Error::Validation(format!(
            "line {line}: binary metric must be 0 or 1, got {}",
            raw.metric
        )));
    }
    Ok(())
}

fn normalize(raw: RawSession) -> SessionRecord {
    SessionRecord {
        user_id: raw.user_id,
        session_id: raw.session_id.filter(|s| !s.is_empty()),
        metric: raw.metric,
    }
}

/// Read and validate every session row of a log file.
pub fn read_sessions(path: &Path, mode: MetricMode) -> Result<Vec<SessionRecord>> {
    read_sessions_from(File::open(path)?, mode)
}

/// As [`read_sessions`], from any reader.
pub fn read_sessions_from<R: Read>(reader: R, mode: MetricMode) -> Result<Vec<SessionRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (idx, row) in rdr.deserialize::<RawSession>().enumerate() {
        let line = idx as u64 + 2; // 1-based, after the header
        let raw = row.map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        validate_row(&raw, mode, line)?;
        out.push(normalize(raw));
    }
    Ok(out)
}

/// Diagnostics from an aggregation pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregationSummary {
    pub rows: u64,
    pub users: u64,
    /// Rows whose (user_id, session_id) pair was already seen. Duplicates
    /// are kept (aggregation counts rows) but reported for diagnosis.
    pub duplicate_session_pairs: u64,
}

#[derive(Default)]
struct Aggregator {
    per_user: HashMap<String, (u64, f64)>,
    seen_sessions: HashSet<u64>,
    summary: AggregationSummary,
}

impl Aggregator {
    fn push(&mut self, user_id: &str, session_id: Option<&str>, metric: f64) {
        self.summary.rows += 1;
        if let Some(sid) = session_id {
            let mut hasher = DefaultHasher::new();
            user_id.hash(&mut hasher);
            sid.hash(&mut hasher);
            if !self.seen_sessions.insert(hasher.finish()) {
                self.summary.duplicate_session_pairs += 1;
            }
        }
        let slot = self.per_user.entry(user_id.to_string()).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += metric;
    }

    fn finish(mut self) -> (Vec<UserAggregate>, AggregationSummary) {
        let mut aggregates: Vec<UserAggregate> = self
            .per_user
            .drain()
            .map(|(user_id, (n_sessions, metric_sum))| UserAggregate {
                user_id,
                n_sessions,
                metric_sum,
            })
            .collect();
        // Deterministic output regardless of input order or map iteration.
        aggregates.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        self.summary.users = aggregates.len() as u64;
        (aggregates, self.summary)
    }
}

/// Aggregate already-parsed session records to user level.
///
/// One aggregate per distinct user, `n_sessions` = row count and
/// `metric_sum` = metric total; output is sorted by user id, so the result
/// does not depend on input order.
pub fn aggregate(records: &[SessionRecord]) -> (Vec<UserAggregate>, AggregationSummary) {
    let mut agg = Aggregator::default();
    for r in records {
        agg.push(&r.user_id, r.session_id.as_deref(), r.metric);
    }
    agg.finish()
}

/// Stream a session CSV straight into user aggregates in a single pass,
/// holding one entry per distinct user rather than the whole log.
pub fn aggregate_sessions_from<R: Read>(
    reader: R,
    mode: MetricMode,
) -> Result<(Vec<UserAggregate>, AggregationSummary)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut agg = Aggregator::default();
    for (idx, row) in rdr.deserialize::<RawSession>().enumerate() {
        let line = idx as u64 + 2;
        let raw = row.map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        validate_row(&raw, mode, line)?;
        let rec = normalize(raw);
        agg.push(&rec.user_id, rec.session_id.as_deref(), rec.metric);
    }
    Ok(agg.finish())
}

/// Write user aggregates as `user_id,n_sessions,metric_sum`. Binary metric
/// sums are exact integers and are written as such.
pub fn write_aggregates<W: Write>(
    writer: W,
    aggregates: &[UserAggregate],
    mode: MetricMode,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "n_sessions", "metric_sum"])?;
    for a in aggregates {
        let metric = match mode {
            MetricMode::Binary => format!("{}", a.metric_sum as i64),
            MetricMode::Continuous => format!("{}", a.metric_sum),
        };
        w.write_record([a.user_id.as_str(), &a.n_sessions.to_string(), &metric])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
struct RawAggregate {
    user_id: String,
    n_sessions: u64,
    metric_sum: f64,
}

/// Read a user-aggregate CSV. Users with zero sessions contribute no
/// analysis rows; they are dropped and counted.
pub fn read_aggregates_from<R: Read>(reader: R) -> Result<(Vec<UserAggregate>, u64)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    let mut dropped_zero_sessions = 0u64;
    for (idx, row) in rdr.deserialize::<RawAggregate>().enumerate() {
        let line = idx as u64 + 2;
        let raw: RawAggregate = row.map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        if raw.user_id.trim().is_empty() {
            return Err(Error::Validation(format!("line {line}: empty user_id")));
        }
        if !raw.metric_sum.is_finite() {
            return Err(Error::Validation(format!(
                "line {line}: metric_sum {} is not finite",
                raw.metric_sum
            )));
        }
        if raw.n_sessions == 0 {
            dropped_zero_sessions += 1;
            continue;
        }
        out.push(UserAggregate {
            user_id: raw.user_id,
            n_sessions: raw.n_sessions,
            metric_sum: raw.metric_sum,
        });
    }
    Ok((out, dropped_zero_sessions))
}

/// Which of the two supported CSV layouts a file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Sessions,
    Aggregates,
}

/// Decide from the header whether a CSV holds session rows or user
/// aggregates.
pub fn detect_csv_kind(path: &Path) -> Result<CsvKind> {
    let mut rdr = csv::Reader::from_reader(File::open(path)?);
    let headers = rdr.headers()?;
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if names.iter().any(|n| n == "n_sessions") {
        Ok(CsvKind::Aggregates)
    } else if names.iter().any(|n| n == "metric") {
        Ok(CsvKind::Sessions)
    } else {
        Err(Error::Validation(format!(
            "unrecognized CSV header {names:?}; expected session columns \
             (user_id,session_id,metric) or aggregate columns (user_id,n_sessions,metric_sum)"
        )))
    }
}

/// Traffic recommendation for a required per-arm user count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficPlan {
    pub required_users_per_arm: u64,
    pub available_users_in_window: u64,
    /// Fraction of the window's users each arm needs.
    pub pct_per_arm: f64,
    pub window_days: u32,
    /// Both arms fit inside the available traffic.
    pub feasible: bool,
    pub recommendation: String,
}

/// Convert a required user count into a per-arm traffic share for the
/// planned window, flagging designs that need more users than exist.
pub fn traffic_plan(
    required_users_per_arm: u64,
    available_users: u64,
    window_days: u32,
) -> Result<TrafficPlan> {
    if required_users_per_arm == 0 {
        return Err(Error::domain(
            "required users per arm must be positive".to_string(),
        ));
    }
    if available_users == 0 {
        return Err(Error::domain(
            "available user count must be positive".to_string(),
        ));
    }
    let pct_per_arm = required_users_per_arm as f64 / available_users as f64;
    let feasible = 2 * required_users_per_arm <= available_users;
    let recommendation = if feasible {
        format!(
            "allocate {:.1}% of traffic to each arm and run for {window_days} days",
            pct_per_arm * 100.0
        )
    } else {
        format!(
            "only {available_users} users were seen in {window_days} days but \
             2x{required_users_per_arm} are needed; plan a longer window, re-estimate \
             the variance kernel over that window, and size again"
        )
    };
    Ok(TrafficPlan {
        required_users_per_arm,
        available_users_in_window: available_users,
        pct_per_arm,
        window_days,
        feasible,
        recommendation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1_CSV: &str = "\
user_id,session_id,metric
A,s1,1
B,s1,1
B,s2,1
B,s3,1
C,s1,1
C,s2,0
C,s3,0
C,s4,0
C,s5,0
D,s1,0
D,s2,0
E,s1,1
E,s2,1
E,s3,1
E,s4,1
E,s5,1
E,s6,1
E,s7,1
E,s8,1
E,s9,0
E,s10,0
";

    #[test]
    fn reads_the_worked_example_fixture() {
        let records = read_sessions_from(TABLE1_CSV.as_bytes(), MetricMode::Binary).unwrap();
        assert_eq!(records.len(), 21);
        assert_eq!(records[0].user_id, "A");
        assert_eq!(records[0].session_id.as_deref(), Some("s1"));
    }

    #[test]
    fn empty_and_header_only_inputs_are_empty() {
        assert!(read_sessions_from("".as_bytes(), MetricMode::Binary)
            .unwrap()
            .is_empty());
        let recs = read_sessions_from("user_id,session_id,metric\n".as_bytes(), MetricMode::Binary)
            .unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn malformed_rows_carry_line_numbers() {
        let bad = "user_id,session_id,metric\nA,s1,1\nB,s1,not_a_number\n";
        let err = read_sessions_from(bad.as_bytes(), MetricMode::Binary).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("line 3")),
            "{err}"
        );

        let nonbinary = "user_id,session_id,metric\nA,s1,0.5\n";
        let err = read_sessions_from(nonbinary.as_bytes(), MetricMode::Binary).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("line 2")),
            "{err}"
        );
        // The same value is fine as a continuous metric.
        assert!(read_sessions_from(nonbinary.as_bytes(), MetricMode::Continuous).is_ok());
    }

    #[test]
    fn aggregates_reproduce_the_worked_example_pairs() {
        let records = read_sessions_from(TABLE1_CSV.as_bytes(), MetricMode::Binary).unwrap();
        let (aggs, summary) = aggregate(&records);
        let pairs: Vec<(&str, u64, f64)> = aggs
            .iter()
            .map(|a| (a.user_id.as_str(), a.n_sessions, a.metric_sum))
            .collect();
        assert_eq!(
            pairs,
            vec![
                ("A", 1, 1.0),
                ("B", 3, 3.0),
                ("C", 5, 1.0),
                ("D", 2, 0.0),
                ("E", 10, 8.0),
            ]
        );
        assert_eq!(summary.rows, 21);
        assert_eq!(summary.users, 5);
        assert_eq!(summary.duplicate_session_pairs, 0);
    }

    #[test]
    fn aggregation_ignores_input_order() {
        let mut records = read_sessions_from(TABLE1_CSV.as_bytes(), MetricMode::Binary).unwrap();
        let (sorted, _) = aggregate(&records);
        records.reverse();
        records.swap(0, 7);
        let (shuffled, _) = aggregate(&records);
        assert_eq!(sorted, shuffled);
    }

    #[test]
    fn aggregation_is_a_pure_fold_over_splits() {
        let records = read_sessions_from(TABLE1_CSV.as_bytes(), MetricMode::Binary).unwrap();
        let (whole, _) = aggregate(&records);
        for split in [1usize, 5, 11, 20] {
            let (left, _) = aggregate(&records[..split]);
            let (right, _) = aggregate(&records[split..]);
            let mut merged: HashMap<String, (u64, f64)> = HashMap::new();
            for a in left.into_iter().chain(right) {
                let slot = merged.entry(a.user_id).or_insert((0, 0.0));
                slot.0 += a.n_sessions;
                slot.1 += a.metric_sum;
            }
            let mut merged: Vec<UserAggregate> = merged
                .into_iter()
                .map(|(user_id, (n, s))| UserAggregate {
                    user_id,
                    n_sessions: n,
                    metric_sum: s,
                })
                .collect();
            merged.sort_by(|a, b| a.user_id.cmp(&b.user_id));
            assert_eq!(merged, whole, "split at {split}");
        }
    }

    #[test]
    fn single_user_three_unit_rows() {
        let csv = "user_id,session_id,metric\nu,a,1\nu,b,1\nu,c,1\n";
        let (aggs, _) = aggregate_sessions_from(csv.as_bytes(), MetricMode::Binary).unwrap();
        assert_eq!(aggs.len(), 1);
        assert_eq!(aggs[0].n_sessions, 3);
        assert_eq!(aggs[0].metric_sum, 3.0);
    }

    #[test]
    fn duplicate_session_pairs_are_kept_but_counted() {
        let csv = "user_id,session_id,metric\nu,a,1\nu,a,1\nv,a,0\n";
        let (aggs, summary) = aggregate_sessions_from(csv.as_bytes(), MetricMode::Binary).unwrap();
        assert_eq!(summary.duplicate_session_pairs, 1);
        assert_eq!(aggs[0].n_sessions, 2); // both rows kept
    }

    #[test]
    fn missing_session_id_column_is_fine() {
        let csv = "user_id,metric\nu,1\nu,0\n";
        let (aggs, summary) = aggregate_sessions_from(csv.as_bytes(), MetricMode::Binary).unwrap();
        assert_eq!(aggs[0].n_sessions, 2);
        assert_eq!(summary.duplicate_session_pairs, 0);
    }

    #[test]
    fn aggregate_roundtrip_through_csv() {
        let records = read_sessions_from(TABLE1_CSV.as_bytes(), MetricMode::Binary).unwrap();
        let (aggs, _) = aggregate(&records);
        let mut buf = Vec::new();
        write_aggregates(&mut buf, &aggs, MetricMode::Binary).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,n_sessions,metric_sum\nA,1,1\n"));
        let (back, dropped) = read_aggregates_from(&buf[..]).unwrap();
        assert_eq!(back, aggs);
        assert_eq!(dropped, 0);
    }

    #[test]
    fn zero_session_aggregates_are_dropped_with_a_count() {
        let csv = "user_id,n_sessions,metric_sum\na,0,0\nb,3,2\n";
        let (aggs, dropped) = read_aggregates_from(csv.as_bytes()).unwrap();
        assert_eq!(aggs.len(), 1);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn traffic_plan_worked_examples() {
        let plan = traffic_plan(949, 9_500, 14).unwrap();
        assert!((plan.pct_per_arm - 0.0999).abs() < 1e-4);
        assert!(plan.feasible);

        let tight = traffic_plan(949, 900, 14).unwrap();
        assert!(!tight.feasible);
        assert!(tight.recommendation.contains("longer window"));

        assert!(traffic_plan(0, 900, 14).is_err());
        assert!(traffic_plan(10, 0, 14).is_err());
    }
}
