//! Rendering and parsing of campaign tables.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::runner::{EstimatorSummary, McResult, TargetSummary};
use crate::error::{MermError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Text,
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = MermError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            _ => Err(MermError::Unknown {
                kind: "table format".into(),
                name: s.into(),
            }),
        }
    }
}

const CSV_HEADER: [&str; 12] = [
    "design", "reps", "scale", "estimator", "successes", "failures", "target", "truth", "bias", "std", "rmse", "size",
];

/// Renders a result. CSV holds unscaled values at full precision; text and
/// markdown show bias, std and RMSE multiplied by the result's scale and
/// size in percent.
pub fn emit_table(result: &McResult, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => emit_csv(result),
        TableFormat::Text => emit_text(result),
        TableFormat::Markdown => emit_markdown(result),
    }
}

fn emit_csv(result: &McResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for e in &result.estimators {
        for t in &e.targets {
            w.write_record([
                result.design.clone(),
                result.reps.to_string(),
                result.scale.to_string(),
                e.estimator.clone(),
                e.successes.to_string(),
                e.failures.to_string(),
                t.target.clone(),
                t.truth.to_string(),
                t.bias.to_string(),
                t.std.to_string(),
                t.rmse.to_string(),
                t.size.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn scale_note(scale: f64) -> String {
    if scale == 1.0 {
        String::new()
    } else {
        format!(" (bias, std, rmse x {scale})")
    }
}

fn emit_text(result: &McResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "design: {}  replications: {}{}",
        result.design,
        result.reps,
        scale_note(result.scale)
    );
    let _ = writeln!(
        out,
        "{:<10} {:<14} {:>10} {:>10} {:>10} {:>8} {:>6}",
        "estimator", "target", "bias", "std", "rmse", "size%", "fail"
    );
    for e in &result.estimators {
        for t in &e.targets {
            let s = result.scale;
            let _ = writeln!(
                out,
                "{:<10} {:<14} {:>10.4} {:>10.4} {:>10.4} {:>8.2} {:>6}",
                e.estimator,
                t.target,
                t.bias * s,
                t.std * s,
                t.rmse * s,
                t.size * 100.0,
                e.failures
            );
        }
    }
    out
}

fn emit_markdown(result: &McResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "**{}**, R = {}{}\n", result.design, result.reps, scale_note(result.scale));
    let _ = writeln!(out, "| estimator | target | bias | std | rmse | size (%) | failures |");
    let _ = writeln!(out, "|---|---|---:|---:|---:|---:|---:|");
    for e in &result.estimators {
        for t in &e.targets {
            let s = result.scale;
            let _ = writeln!(
                out,
                "| {} | {} | {:.4} | {:.4} | {:.4} | {:.2} | {} |",
                e.estimator,
                t.target,
                t.bias * s,
                t.std * s,
                t.rmse * s,
                t.size * 100.0,
                e.failures
            );
        }
    }
    out
}

fn parse<T: FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| MermError::invalid(format!("line {line}: cannot parse {what} '{field}'")))
}

/// Parses the CSV produced by [`emit_table`] back into a result.
pub fn read_result_csv(text: &str) -> Result<McResult> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| MermError::invalid(format!("result csv: {e}")))?
        .clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(MermError::invalid("result csv: unexpected header"));
    }
    let mut result = McResult {
        design: String::new(),
        reps: 0,
        scale: 1.0,
        estimators: Vec::new(),
    };
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| MermError::invalid(format!("result csv line {line}: {e}")))?;
        result.design = rec[0].to_string();
        result.reps = parse(&rec[1], "reps", line)?;
        result.scale = parse(&rec[2], "scale", line)?;
        let label = &rec[3];
        if result.estimators.last().map(|e| e.estimator != label).unwrap_or(true) {
            result.estimators.push(EstimatorSummary {
                estimator: label.to_string(),
                successes: parse(&rec[4], "successes", line)?,
                failures: parse(&rec[5], "failures", line)?,
                targets: Vec::new(),
            });
        }
        let e = result.estimators.last_mut().expect("just pushed");
        e.targets.push(TargetSummary {
            target: rec[6].to_string(),
            truth: parse(&rec[7], "truth", line)?,
            bias: parse(&rec[8], "bias", line)?,
            std: parse(&rec[9], "std", line)?,
            rmse: parse(&rec[10], "rmse", line)?,
            size: parse(&rec[11], "size", line)?,
        });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> McResult {
        McResult {
            design: "multinomial_logit".into(),
            reps: 10,
            scale: 100.0,
            estimators: vec![EstimatorSummary {
                estimator: "MLE".into(),
                successes: 9,
                failures: 1,
                targets: vec![TargetSummary {
                    target: "dp1/dx".into(),
                    truth: 2.0 / 9.0,
                    bias: -0.0123456789012345,
                    std: 0.1 / 3.0,
                    rmse: 0.035,
                    size: 0.5,
                }],
            }],
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        assert_eq!(read_result_csv(&emit_table(&r, TableFormat::Csv)).unwrap(), r);
    }

    #[test]
    fn scaled_display() {
        let text = emit_table(&sample(), TableFormat::Text);
        assert!(text.contains("-1.2346"), "{text}");
        assert!(text.contains("50.00"));
        let md = emit_table(&sample(), TableFormat::Markdown);
        assert!(md.contains("| MLE | dp1/dx | -1.2346 |"));
    }

    #[test]
    fn empty_result_is_header_only() {
        let r = McResult {
            estimators: vec![],
            ..sample()
        };
        let csv = emit_table(&r, TableFormat::Csv);
        assert_eq!(csv.lines().count(), 1);
        assert!("latex".parse::<TableFormat>().is_err());
    }
}
