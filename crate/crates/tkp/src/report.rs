//! JSON metric reports, JSON-lines training logs, feature exports and the
//! tables printed to the terminal.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tkp_core::checks::CheckOutcome;
use tkp_core::eval::{GalleryIndex, MetricsReport};
use tkp_core::train::TrainRecord;

pub const REPORT_TAG: &str = "tkp-report 1";
pub const LOG_TAG: &str = "tkp-log 1";
pub const SWEEP_TAG: &str = "tkp-sweep 1";
pub const FEATURES_TAG: &str = "tkp-features 1";
pub const GRADCHECK_TAG: &str = "tkp-gradcheck 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolScores {
    pub protocol: String,
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    pub map: f64,
    pub num_queries: usize,
    pub cmc: Vec<f64>,
}

impl From<&MetricsReport> for ProtocolScores {
    fn from(r: &MetricsReport) -> Self {
        ProtocolScores {
            protocol: r.protocol.name().to_string(),
            top1: r.top(1),
            top5: r.top(5),
            top10: r.top(10),
            map: r.map,
            num_queries: r.num_queries,
            cmc: r.cmc.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub config_sha256: String,
    pub protocols: Vec<ProtocolScores>,
}

impl EvalReport {
    pub fn new(config_sha256: String, reports: &[MetricsReport]) -> Self {
        EvalReport {
            format: REPORT_TAG.to_string(),
            config_sha256,
            protocols: reports.iter().map(ProtocolScores::from).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap() + "\n"
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<8}{:>8}{:>8}{:>8}{:>8}{:>9}\n",
            "protocol", "top-1", "top-5", "top-10", "mAP", "queries"
        );
        for p in &self.protocols {
            writeln!(
                s,
                "{:<8}{:>8.3}{:>8.3}{:>8.3}{:>8.3}{:>9}",
                p.protocol, p.top1, p.top5, p.top10, p.map, p.num_queries
            )
            .unwrap();
        }
        s
    }
}

#[derive(Serialize)]
struct LogHeader<'a> {
    format: &'a str,
    config_sha256: &'a str,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub phase: String,
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub losses: BTreeMap<String, f64>,
    pub total: f64,
}

impl From<&TrainRecord> for LogLine {
    fn from(r: &TrainRecord) -> Self {
        LogLine {
            phase: r.phase.name().to_string(),
            epoch: r.epoch,
            batch: r.batch,
            lr: r.lr,
            losses: r
                .losses
                .iter()
                .map(|(t, v)| (t.name().to_string(), *v))
                .collect(),
            total: r.total,
        }
    }
}

/// A header line with the format tag and config digest, then one JSON object
/// per batch.
pub fn write_log(config_sha256: &str, records: &[TrainRecord]) -> String {
    let mut out = serde_json::to_string(&LogHeader {
        format: LOG_TAG,
        config_sha256,
    })
    .unwrap();
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(&LogLine::from(r)).unwrap());
        out.push('\n');
    }
    out
}

/// Mean total loss of each (phase, epoch), in log order.
pub fn epoch_summary(records: &[TrainRecord]) -> String {
    let mut s = String::new();
    let mut i = 0;
    while i < records.len() {
        let (phase, epoch) = (records[i].phase, records[i].epoch);
        let group: Vec<&TrainRecord> = records[i..]
            .iter()
            .take_while(|r| r.phase == phase && r.epoch == epoch)
            .collect();
        let mean = group.iter().map(|r| r.total).sum::<f64>() / group.len() as f64;
        writeln!(
            s,
            "{:<13} epoch {:>3}  lr {:.2e}  mean loss {:.4}",
            phase.name(),
            epoch,
            group[0].lr,
            mean
        )
        .unwrap();
        i += group.len();
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub protocol: String,
    pub top1: f64,
    pub map: f64,
    /// Per-seed top-1, in seed order.
    pub top1_per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub scores: Vec<SweepCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub format: String,
    pub axis: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap() + "\n"
    }

    /// Seed-averaged top-1 and mAP per protocol, one row per axis value.
    pub fn table(&self) -> String {
        let mut s = format!("{:<16}", self.axis);
        if let Some(row) = self.rows.first() {
            for c in &row.scores {
                write!(s, "{:>10}{:>10}", format!("{} top1", c.protocol), format!("{} mAP", c.protocol)).unwrap();
            }
        }
        s.push('\n');
        for row in &self.rows {
            write!(s, "{:<16}", row.value).unwrap();
            for c in &row.scores {
                write!(s, "{:>10.3}{:>10.3}", c.top1, c.map).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckLine {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub format: String,
    pub scope: String,
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    pub checks: Vec<GradCheckLine>,
}

impl GradCheckSummary {
    pub fn new(scope: &str, tolerance: f64, seeds: &[u64], outcomes: &[CheckOutcome]) -> Self {
        GradCheckSummary {
            format: GRADCHECK_TAG.to_string(),
            scope: scope.to_string(),
            tolerance,
            seeds: seeds.to_vec(),
            checks: outcomes
                .iter()
                .map(|o| GradCheckLine {
                    name: o.name.clone(),
                    max_rel_err: o.report.max_rel_err,
                    passed: o.report.passed,
                })
                .collect(),
        }
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap() + "\n"
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            writeln!(
                s,
                "{:<20} {:>10.3e}  {}",
                c.name,
                c.max_rel_err,
                if c.passed { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        s
    }
}

/// ```text
/// tkp-features 1
/// dim <D>
/// <set> <kind> <identity> <camera> <x_1> ... <x_D>
/// ```
///
/// `set` is `query` or `gallery`; `kind` is `image` (image network on the
/// first frame) or `video` (video network over the whole video).
pub fn write_features(dim: usize, blocks: &[(&str, &str, &GalleryIndex)]) -> String {
    let mut out = format!("{FEATURES_TAG}\ndim {dim}\n");
    for (set, kind, index) in blocks {
        for r in 0..index.identities.len() {
            write!(out, "{set} {kind} {} {}", index.identities[r], index.cameras[r]).unwrap();
            for x in index.features.row(r) {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tkp_core::eval::Protocol;
    use tkp_core::losses::LossTerm;
    use tkp_core::train::Phase;
    use tkp_core::Tensor;

    #[test]
    fn log_lines_parse_back() {
        let rec = TrainRecord {
            phase: Phase::Joint,
            epoch: 1,
            batch: 2,
            lr: 1e-3,
            losses: vec![(LossTerm::Classification, 2.5), (LossTerm::TkpFeature, 0.0)],
            total: 2.5,
        };
        let text = write_log("ab", &[rec.clone(), rec]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], r#"{"format":"tkp-log 1","config_sha256":"ab"}"#);
        let l: LogLine = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(l.losses["cls"], 2.5);
        assert_eq!(l.losses["tkp_f"], 0.0);
        assert_eq!(l.phase, "joint");
    }

    #[test]
    fn report_json_round_trips() {
        let m = MetricsReport {
            protocol: Protocol::I2V,
            cmc: (1..=20).map(|k| k as f64 / 20.0).collect(),
            map: 0.4,
            num_queries: 7,
        };
        let r = EvalReport::new("d".into(), &[m]);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!((back.protocols[0].top1, back.protocols[0].top5), (0.05, 0.25));
        assert!(r.table().contains("I2V"));
    }

    #[test]
    fn feature_rows() {
        let g = GalleryIndex {
            features: Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.5]]).unwrap(),
            identities: vec![0, 1],
            cameras: vec![2, 3],
        };
        let text = write_features(2, &[("query", "image", &g)]);
        assert_eq!(text, "tkp-features 1\ndim 2\nquery image 0 2 1 2\nquery image 1 3 3 4.5\n");
    }
}
