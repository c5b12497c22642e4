use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Corpus-level evaluation results.
///
/// Correlation and error fields are `None` when undefined for the corpus,
/// e.g. difficulty metrics without diving instances or a Spearman over fewer
/// than two parsed predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub action_accuracy: f64,
    pub sed_mean: f64,
    pub spearman_score: Option<f64>,
    pub spearman_difficulty: Option<f64>,
    pub rl2_score: Option<f64>,
    pub rl2_difficulty: Option<f64>,
    /// Mean text similarity to reference answers, when a hook is supplied.
    pub content_similarity: Option<f64>,
    pub n_total: usize,
    /// Includes missing predictions.
    pub n_parse_failed: usize,
    pub n_missing: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

const COLUMNS: [&str; 10] = [
    "acc",
    "sed",
    "rho_score",
    "rho_diff",
    "rl2_score",
    "rl2_diff",
    "content",
    "n_total",
    "n_parse_failed",
    "n_missing",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl MetricsReport {
    fn cells(&self) -> [String; 10] {
        [
            cell(Some(self.action_accuracy)),
            cell(Some(self.sed_mean)),
            cell(self.spearman_score),
            cell(self.spearman_difficulty),
            cell(self.rl2_score),
            cell(self.rl2_difficulty),
            cell(self.content_similarity),
            self.n_total.to_string(),
            self.n_parse_failed.to_string(),
            self.n_missing.to_string(),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Header plus one row. Undefined metrics are empty cells.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS).expect("in-memory write");
        let row = self.cells().map(|c| if c == "-" { String::new() } else { c });
        w.write_record(&row).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    /// Aligned text table grouped as action assessment, score assessment
    /// and counts.
    pub fn to_table(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = COLUMNS
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let group_width = |r: std::ops::Range<usize>| widths[r.clone()].iter().sum::<usize>() + 2 * (r.len() - 1);
        let groups = [
            ("Action Assessment", 0..2),
            ("Score Assessment", 2..7),
            ("Counts", 7..10),
        ];
        let mut out = String::new();
        let line = |parts: Vec<String>| parts.join(" | ");
        out += &line(
            groups
                .iter()
                .map(|(name, r)| format!("{name:<w$}", w = group_width(r.clone())))
                .collect(),
        );
        out.push('\n');
        let row = |values: &[String]| {
            line(
                groups
                    .iter()
                    .map(|(_, r)| {
                        r.clone()
                            .map(|i| format!("{:>w$}", values[i], w = widths[i]))
                            .collect::<Vec<_>>()
                            .join("  ")
                    })
                    .collect(),
            )
        };
        let header: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{}", row(&header));
        let _ = writeln!(out, "{}", row(&cells));
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Table => self.to_table(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsReport {
        MetricsReport {
            action_accuracy: 0.75,
            sed_mean: 0.5,
            spearman_score: Some(0.9),
            spearman_difficulty: None,
            rl2_score: Some(0.125),
            rl2_difficulty: None,
            content_similarity: None,
            n_total: 4,
            n_parse_failed: 1,
            n_missing: 0,
        }
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_has_header_and_row() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("acc,sed,rho_score"));
        assert_eq!(lines[1], "0.7500,0.5000,0.9000,,0.1250,,,4,1,0");
    }

    #[test]
    fn table_rows_align() {
        let t = sample().to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Action Assessment"));
        assert_eq!(lines[1].len(), lines[2].len());
        let bars = |s: &str| s.match_indices(" | ").map(|(i, _)| i).collect::<Vec<_>>();
        assert_eq!(bars(lines[1]), bars(lines[2]));
    }
}
