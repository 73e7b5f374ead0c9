//! Result tables: wide (one row per model, one column per metric) and
//! long (one row per cohort, model and metric).

use std::path::Path;

use crate::error::Result;
use crate::eval::bootstrap::bootstrap_ci;
use crate::eval::metrics::{compute_metrics, Interval, Metric, MetricReport, DEFAULT_THRESHOLD};

/// Metrics of one prediction vector, with percentile bootstrap intervals
/// when `ci` is `Some((replicates, alpha, seed))`.
pub fn score(probs: &[f64], labels: &[u8], ci: Option<(usize, f64, u64)>) -> Result<MetricReport> {
    let mut r = compute_metrics(probs, labels, DEFAULT_THRESHOLD)?;
    if let Some((b, alpha, seed)) = ci {
        let mut out = Vec::new();
        for m in Metric::ALL {
            out.push((m, bootstrap_ci(probs, labels, m, b, alpha, seed)?.interval));
        }
        r.ci = Some(out);
    }
    Ok(r)
}

fn cell(v: f64, ci: Option<Interval>) -> String {
    match ci {
        Some(i) => format!("{v:.3} [{:.3}, {:.3}]", i.lower, i.upper),
        None => format!("{v:.3}"),
    }
}

/// Table layout: `Model, AUPRC, AUROC, F1 (macro), Specificity,
/// Sensitivity`; cells carry `value [lower, upper]` when intervals exist.
pub fn write_wide(path: &Path, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["Model".to_string()];
    header.extend(Metric::ALL.iter().map(|m| m.header().to_string()));
    w.write_record(&header)?;
    for (name, r) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(Metric::ALL.iter().map(|m| cell(r.get(*m), r.interval(*m))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_long(path: &Path, cohort: &str, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cohort", "model", "metric", "value", "ci_lower", "ci_upper"])?;
    for (name, r) in rows {
        for m in Metric::ALL {
            let (lo, hi) = r
                .interval(m)
                .map_or((String::new(), String::new()), |i| (i.lower.to_string(), i.upper.to_string()));
            w.write_record([cohort, name, m.header(), &r.get(m).to_string(), &lo, &hi])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV file into a header and rows of strings.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

/// Markdown rendering of a table.
pub fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n", header.join(" | "));
    s.push_str(&format!("|{}\n", " --- |".repeat(header.len())));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_cells_follow_the_interval_format() {
        let dir = tempfile::tempdir().unwrap();
        let probs = [0.9, 0.8, 0.3, 0.2, 0.7, 0.1, 0.6, 0.4, 0.55, 0.35, 0.65, 0.15];
        let labels = [1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 1, 0];
        let r = score(&probs, &labels, Some((200, 0.05, 1))).unwrap();
        let p = dir.path().join("wide.csv");
        write_wide(&p, &[("IF".into(), r)]).unwrap();
        let (h, rows) = read_table(&p).unwrap();
        assert_eq!(h, ["Model", "AUPRC", "AUROC", "F1 (macro)", "Specificity", "Sensitivity"]);
        let re = regex::Regex::new(r"^\d\.\d{3} \[\d\.\d{3}, \d\.\d{3}\]$").unwrap();
        assert!(rows[0][1..].iter().all(|c| re.is_match(c)), "{:?}", rows[0]);
    }

    #[test]
    fn long_rows_per_metric() {
        let dir = tempfile::tempdir().unwrap();
        let r = score(&[0.9, 0.1, 0.8, 0.3], &[1, 0, 1, 0], None).unwrap();
        let p = dir.path().join("long.csv");
        write_long(&p, "lung-like", &[("LF".into(), r)]).unwrap();
        let (_, rows) = read_table(&p).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0][..4], ["lung-like", "LF", "AUPRC", "1"]);
        assert_eq!(rows[0][4], "");
    }
}
