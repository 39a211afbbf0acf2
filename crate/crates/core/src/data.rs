//! Observed-data model for discrete-time survival with competing events.
//!
//! A subject is observed as `(X, J, Z)`: an integer event-or-censoring time
//! `X` in `1..=d`, an event label `J` in `0..=m` (0 means censored), and a
//! covariate vector `Z` of length `p`. Grouped continuous data must be
//! discretized by the caller; within a tied interval an event always takes
//! precedence over censoring, so a subject with `J >= 1` at time `t` is an
//! event, never a censoring, at `t`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One subject's observed triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Opaque subject key, unique within a dataset.
    pub id: String,
    /// Observed time `X = min(T, C)`, in `1..=d`.
    pub time: u32,
    /// Event label in `0..=m`; 0 if and only if censored.
    pub event: u16,
    /// Covariate vector of length `p`.
    pub z: Vec<f64>,
}

/// A validated collection of observations with its dimensions.
///
/// Construction is lenient; [`Dataset::validate`] reports rule-by-rule
/// pass/fail and estimation entry points require a valid dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<Observation>,
    p: usize,
    d: u32,
    m: u16,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, p: usize, d: u32, m: u16) -> Self {
        let covariate_names = default_names(p);
        Dataset {
            observations,
            p,
            d,
            m,
            covariate_names,
        }
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.p, "one name per covariate");
        self.covariate_names = names;
        self
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Time horizon `d`: estimation considers periods `1..=d`.
    pub fn d(&self) -> u32 {
        self.d
    }

    /// Number of competing event types `m`.
    pub fn m(&self) -> u16 {
        self.m
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn obs(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.observations[i].z
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_name(&self, k: usize) -> &str {
        &self.covariate_names[k]
    }

    /// Copy one covariate column into a contiguous buffer.
    pub fn column(&self, k: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.observations.iter().map(|o| o.z[k]));
    }

    /// New dataset restricted to the given covariate columns (in order).
    pub fn select_covariates(&self, columns: &[usize]) -> Dataset {
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                id: o.id.clone(),
                time: o.time,
                event: o.event,
                z: columns.iter().map(|&k| o.z[k]).collect(),
            })
            .collect();
        let names = columns
            .iter()
            .map(|&k| self.covariate_names[k].clone())
            .collect();
        Dataset::new(observations, columns.len(), self.d, self.m).with_covariate_names(names)
    }

    /// New dataset keeping the subjects at the given indices (in order).
    pub fn select_subjects(&self, subjects: &[usize]) -> Dataset {
        let observations = subjects
            .iter()
            .map(|&i| self.observations[i].clone())
            .collect();
        Dataset::new(observations, self.p, self.d, self.m)
            .with_covariate_names(self.covariate_names.clone())
    }

    /// Rule-by-rule validation report; never fails, carries failures instead.
    pub fn validate(&self) -> ValidationReport {
        let mut rules = Vec::new();

        let n_ok = !self.observations.is_empty();
        rules.push(Rule::new(
            "nonempty",
            n_ok,
            if n_ok {
                String::new()
            } else {
                "n = 0".to_string()
            },
        ));

        let d_ok = self.d >= 1;
        rules.push(Rule::new(
            "horizon",
            d_ok,
            if d_ok {
                String::new()
            } else {
                "horizon d must be at least 1".to_string()
            },
        ));

        let mut time_bad = Vec::new();
        let mut event_bad = Vec::new();
        let mut dim_bad = Vec::new();
        let mut finite_bad = Vec::new();
        for (i, o) in self.observations.iter().enumerate() {
            if o.time < 1 || o.time > self.d {
                time_bad.push(i);
            }
            if o.event > self.m {
                event_bad.push(i);
            }
            if o.z.len() != self.p {
                dim_bad.push(i);
            } else if o.z.iter().any(|v| !v.is_finite()) {
                finite_bad.push(i);
            }
        }
        rules.push(Rule::subjects(
            "time in 1..=d",
            &time_bad,
            "observed time out of range",
        ));
        rules.push(Rule::subjects(
            "event label in 0..=m",
            &event_bad,
            "event label out of range",
        ));
        rules.push(Rule::subjects(
            "covariate dimension",
            &dim_bad,
            "covariate vector has wrong length",
        ));
        rules.push(Rule::subjects(
            "covariates finite",
            &finite_bad,
            "missing or non-finite covariate entry",
        ));

        ValidationReport { rules }
    }

    /// Person-period expansion: subject `i` contributes one record per period
    /// `t = 1..=X_i`, with the event indicator set only at `t = X_i` when
    /// `J_i >= 1`.
    pub fn expand(&self) -> Vec<ExpandedRecord> {
        let total: usize = self.observations.iter().map(|o| o.time as usize).sum();
        let mut records = Vec::with_capacity(total);
        for (i, o) in self.observations.iter().enumerate() {
            for t in 1..=o.time {
                let event = if t == o.time { o.event } else { 0 };
                records.push(ExpandedRecord {
                    subject: i,
                    t,
                    event,
                });
            }
        }
        records
    }

    /// At-risk and event counts per period.
    pub fn risk_sets(&self) -> RiskSetSummary {
        let d = self.d as usize;
        let m = self.m as usize;
        let mut y = vec![0u64; d + 1];
        let mut nj = vec![0u64; m * (d + 1)];
        for o in &self.observations {
            let x = (o.time as usize).min(d);
            // subject is at risk in periods 1..=x
            y[x] += 1;
            if o.event >= 1 && o.time as usize <= d {
                nj[(o.event as usize - 1) * (d + 1) + o.time as usize] += 1;
            }
        }
        // suffix-sum so y[t] = #(X_i >= t)
        for t in (1..d).rev() {
            y[t] += y[t + 1];
        }
        RiskSetSummary { y, nj, d, m }
    }
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("z{k}")).collect()
}

/// One row of the person-period expansion. Covariates are shared with the
/// source observation (accessed through the dataset by `subject` index), not
/// copied: the expansion can be `d`-fold larger than the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpandedRecord {
    /// Index of the source observation within the dataset.
    pub subject: usize,
    /// Period index, `1..=X_i`.
    pub t: u32,
    /// Event label at this period: 0 except at `t = X_i` when `J_i >= 1`.
    pub event: u16,
}

impl ExpandedRecord {
    pub fn id<'a>(&self, dataset: &'a Dataset) -> &'a str {
        &dataset.obs(self.subject).id
    }

    pub fn z<'a>(&self, dataset: &'a Dataset) -> &'a [f64] {
        dataset.z(self.subject)
    }

    /// The length-`m` 0/1 indicator vector; at most one entry is 1.
    pub fn delta(&self, m: u16) -> Vec<u8> {
        let mut delta = vec![0u8; m as usize];
        if self.event >= 1 {
            delta[self.event as usize - 1] = 1;
        }
        delta
    }
}

/// Per-period at-risk counts `Y.(t)` and per-(event, period) event counts
/// `N_j(t)`, recomputable from the observations alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskSetSummary {
    y: Vec<u64>,
    nj: Vec<u64>,
    d: usize,
    m: usize,
}

impl RiskSetSummary {
    /// Number of subjects with `X_i >= t`.
    pub fn y(&self, t: u32) -> u64 {
        self.y[t as usize]
    }

    /// Number of subjects with `X_i = t` and `J_i = j` (`j` in `1..=m`).
    pub fn nj(&self, j: u16, t: u32) -> u64 {
        self.nj[(j as usize - 1) * (self.d + 1) + t as usize]
    }

    pub fn d(&self) -> u32 {
        self.d as u32
    }

    pub fn m(&self) -> u16 {
        self.m as u16
    }

    /// Total number of observed events of type `j`.
    pub fn total_events(&self, j: u16) -> u64 {
        (1..=self.d).map(|t| self.nj(j, t as u32)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Rule {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Rule {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn subjects(name: &str, bad: &[usize], what: &str) -> Self {
        if bad.is_empty() {
            Rule::new(name, true, String::new())
        } else {
            let shown: Vec<String> = bad.iter().take(5).map(|i| i.to_string()).collect();
            let ellipsis = if bad.len() > 5 { ", ..." } else { "" };
            Rule::new(
                name,
                false,
                format!(
                    "{what} for {} subject(s) (indices {}{})",
                    bad.len(),
                    shown.join(", "),
                    ellipsis
                ),
            )
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rules: Vec<Rule>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.rules.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| !r.passed)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msgs: Vec<String> = self
                .failures()
                .map(|r| format!("{}: {}", r.name, r.detail))
                .collect();
            Err(Error::Validation(msgs.join("; ")))
        }
    }
}

/// Result of loading a CSV, including how many observed times were clamped to
/// an overridden horizon.
#[derive(Debug)]
pub struct CsvLoad {
    pub dataset: Dataset,
    /// Subjects with `X > d` under a `--horizon` override; they are clamped
    /// to `d` and marked censored (administrative censoring at the horizon).
    pub clamped: usize,
}

/// Read a dataset from CSV with header `id,time,event,z1,...,zp`.
///
/// `horizon` overrides the inferred `d = max(time)`; observations beyond it
/// are clamped to `d` with `event = 0`. `events` overrides the inferred
/// `m = max(event)`.
pub fn read_csv<R: Read>(reader: R, horizon: Option<u32>, events: Option<u16>) -> Result<CsvLoad> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "time" || &headers[2] != "event" {
        return Err(Error::validation(
            "CSV header must start with `id,time,event` followed by covariate columns",
        ));
    }
    let names: Vec<String> = headers.iter().skip(3).map(|s| s.to_string()).collect();
    let p = names.len();

    let mut observations = Vec::new();
    let mut max_time = 0u32;
    let mut max_event = 0u16;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != p + 3 {
            return Err(Error::validation(format!(
                "row {}: expected {} fields, found {}",
                line + 2,
                p + 3,
                record.len()
            )));
        }
        let id = record[0].to_string();
        let time: u32 = record[1]
            .parse()
            .map_err(|_| Error::validation(format!("row {}: bad time `{}`", line + 2, &record[1])))?;
        let event: u16 = record[2].parse().map_err(|_| {
            Error::validation(format!("row {}: bad event `{}`", line + 2, &record[2]))
        })?;
        let mut z = Vec::with_capacity(p);
        for k in 0..p {
            let v: f64 = record[3 + k].parse().map_err(|_| {
                Error::validation(format!(
                    "row {}: bad value `{}` in column {}",
                    line + 2,
                    &record[3 + k],
                    names[k]
                ))
            })?;
            z.push(v);
        }
        max_time = max_time.max(time);
        max_event = max_event.max(event);
        observations.push(Observation {
            id,
            time,
            event,
            z,
        });
    }

    let d = horizon.unwrap_or(max_time);
    let m = events.unwrap_or(max_event);
    let mut clamped = 0usize;
    if horizon.is_some() {
        for o in &mut observations {
            if o.time > d {
                o.time = d;
                o.event = 0;
                clamped += 1;
            }
        }
    }

    let dataset = Dataset::new(observations, p, d, m).with_covariate_names(names);
    Ok(CsvLoad { dataset, clamped })
}

pub fn read_csv_path(
    path: impl AsRef<Path>,
    horizon: Option<u32>,
    events: Option<u16>,
) -> Result<CsvLoad> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), horizon, events)
}

/// Write a dataset in the same `id,time,event,z1,...,zp` layout it is read in.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "time".to_string(), "event".to_string()];
    header.extend(dataset.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for o in dataset.observations() {
        let mut row = vec![o.id.clone(), o.time.to_string(), o.event.to_string()];
        row.extend(o.z.iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Debug export of the person-period expansion with header
/// `id,t,j1,...,jM,z1,...,zp`.
pub fn write_expanded_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let m = dataset.m();
    let mut header = vec!["id".to_string(), "t".to_string()];
    header.extend((1..=m).map(|j| format!("j{j}")));
    header.extend(dataset.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for rec in dataset.expand() {
        let mut row = vec![rec.id(dataset).to_string(), rec.t.to_string()];
        row.extend(rec.delta(m).iter().map(|v| v.to_string()));
        row.extend(rec.z(dataset).iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reconstruct per-subject `(X_i, J_i)` from expanded records; used to check
/// that expansion is lossless.
pub fn collapse(records: &[ExpandedRecord]) -> HashMap<usize, (u32, u16)> {
    let mut out: HashMap<usize, (u32, u16)> = HashMap::new();
    for r in records {
        let entry = out.entry(r.subject).or_insert((0, 0));
        if r.t > entry.0 {
            entry.0 = r.t;
        }
        if r.event >= 1 {
            entry.1 = r.event;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three-subject toy: (X=2, J=1), (X=3, J=2), (X=3, censored).
    pub(crate) fn toy() -> Dataset {
        let observations = vec![
            Observation {
                id: "1".into(),
                time: 2,
                event: 1,
                z: vec![0.5],
            },
            Observation {
                id: "2".into(),
                time: 3,
                event: 2,
                z: vec![-0.25],
            },
            Observation {
                id: "3".into(),
                time: 3,
                event: 0,
                z: vec![1.0],
            },
        ];
        Dataset::new(observations, 1, 3, 2)
    }

    #[test]
    fn toy_passes_validation() {
        assert!(toy().validate().is_valid());
    }

    #[test]
    fn out_of_range_label_fails_validation() {
        let mut ds = toy();
        ds.observations[0].event = 3; // m = 2
        let report = ds.validate();
        assert!(!report.is_valid());
        let failed: Vec<_> = report.failures().map(|r| r.name.clone()).collect();
        assert!(failed.iter().any(|n| n.contains("event label")));
    }

    #[test]
    fn empty_dataset_fails_validation() {
        let ds = Dataset::new(vec![], 1, 3, 2);
        let report = ds.validate();
        assert!(!report.is_valid());
        assert!(report.failures().any(|r| r.detail.contains("n = 0")));
    }

    #[test]
    fn missing_covariate_fails_validation() {
        let mut ds = toy();
        ds.observations[1].z = vec![f64::NAN];
        assert!(!ds.validate().is_valid());
    }

    #[test]
    fn expansion_matches_hand_rows() {
        let ds = toy();
        let records = ds.expand();
        assert_eq!(records.len(), 2 + 3 + 3);
        // subject 0: (t=1, none), (t=2, event 1)
        assert_eq!(records[0], ExpandedRecord { subject: 0, t: 1, event: 0 });
        assert_eq!(records[1], ExpandedRecord { subject: 0, t: 2, event: 1 });
        assert_eq!(records[1].delta(2), vec![1, 0]);
        // subject 1: three rows, event 2 only at t=3
        assert_eq!(records[2].delta(2), vec![0, 0]);
        assert_eq!(records[3].delta(2), vec![0, 0]);
        assert_eq!(records[4], ExpandedRecord { subject: 1, t: 3, event: 2 });
        // censored subject: all-zero indicators
        assert!(records[5..8].iter().all(|r| r.event == 0));
    }

    #[test]
    fn expand_collapse_roundtrip() {
        let ds = toy();
        let back = collapse(&ds.expand());
        for (i, o) in ds.observations().iter().enumerate() {
            assert_eq!(back[&i], (o.time, o.event));
        }
    }

    #[test]
    fn risk_sets_match_hand_counts() {
        let ds = toy();
        let rs = ds.risk_sets();
        assert_eq!(rs.y(1), 3);
        assert_eq!(rs.y(2), 3);
        assert_eq!(rs.y(3), 2);
        assert_eq!(rs.nj(1, 2), 1);
        assert_eq!(rs.nj(2, 3), 1);
        for t in 1..=3 {
            for j in 1..=2 {
                if (j, t) != (1, 2) && (j, t) != (2, 3) {
                    assert_eq!(rs.nj(j, t), 0, "N_{j}({t})");
                }
            }
        }
    }

    #[test]
    fn risk_sets_single_subject() {
        let ds = Dataset::new(
            vec![Observation {
                id: "a".into(),
                time: 1,
                event: 1,
                z: vec![],
            }],
            0,
            1,
            1,
        );
        let rs = ds.risk_sets();
        assert_eq!(rs.y(1), 1);
        assert_eq!(rs.nj(1, 1), 1);
    }

    #[test]
    fn risk_set_balance_identity() {
        // Y.(t+1) = Y.(t) - sum_j N_j(t) - censored(t)
        let ds = toy();
        let rs = ds.risk_sets();
        for t in 1..3u32 {
            let censored_at_t = ds
                .observations()
                .iter()
                .filter(|o| o.time == t && o.event == 0)
                .count() as u64;
            let events_at_t: u64 = (1..=2).map(|j| rs.nj(j, t)).sum();
            assert_eq!(rs.y(t + 1), rs.y(t) - events_at_t - censored_at_t);
        }
        let total_events: u64 = (1..=2).map(|j| rs.total_events(j)).sum();
        let censored = ds.observations().iter().filter(|o| o.event == 0).count() as u64;
        assert_eq!(total_events + censored, ds.n() as u64);
    }

    #[test]
    fn csv_roundtrip_and_horizon_clamp() {
        let ds = toy();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,time,event,z1\n"));

        let loaded = read_csv(buf.as_slice(), None, None).unwrap();
        assert_eq!(loaded.dataset.n(), 3);
        assert_eq!(loaded.dataset.d(), 3);
        assert_eq!(loaded.dataset.m(), 2);
        assert_eq!(loaded.clamped, 0);
        assert_eq!(loaded.dataset.obs(0).z, vec![0.5]);

        // horizon override clamps X > d to censored-at-d and reports the count
        let loaded = read_csv(buf.as_slice(), Some(2), None).unwrap();
        assert_eq!(loaded.clamped, 2);
        assert_eq!(loaded.dataset.obs(1).time, 2);
        assert_eq!(loaded.dataset.obs(1).event, 0);
    }

    #[test]
    fn expanded_csv_layout() {
        let ds = toy();
        let mut buf = Vec::new();
        write_expanded_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "id,t,j1,j2,z1");
        assert_eq!(lines.next().unwrap(), "1,1,0,0,0.5");
        assert_eq!(lines.next().unwrap(), "1,2,1,0,0.5");
    }
}
