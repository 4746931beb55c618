//! Summaries of sweep CSVs: per-model speedup series, plot-ready data
//! files and flagged rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::SweepRow;

/// TTFT speedups outside this band are flagged.
pub const TTFT_BAND: (f64, f64) = (2.0, 4.0);
/// Largest acceptable max/min TTFT speedup across models at one prefill length.
pub const CROSS_MODEL_LIMIT: f64 = 1.25;

/// A sweep row with the CSV line it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub line: u64,
    pub row: SweepRow,
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<Located>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(parse_error(e)),
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: SweepRow = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        out.push(Located { line, row });
    }
    Ok(out)
}

fn parse_error(e: csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line()),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub prefill_len: u64,
    pub decode_len: u64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anomaly {
    pub line: u64,
    pub model: String,
    pub prefill_len: u64,
    pub decode_len: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossModel {
    pub prefill_len: u64,
    pub models: usize,
    pub max_over_min: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub rows: usize,
    pub ttft: BTreeMap<String, Vec<Point>>,
    pub ttlt: BTreeMap<String, Vec<Point>>,
    pub ttft_min: Option<f64>,
    pub ttft_max: Option<f64>,
    pub ttlt_min: Option<f64>,
    pub ttlt_max: Option<f64>,
    pub cross_model: Vec<CrossModel>,
    pub anomalies: Vec<Anomaly>,
}

fn fold(acc: Option<f64>, x: f64, f: fn(f64, f64) -> f64) -> Option<f64> {
    Some(acc.map_or(x, |a| f(a, x)))
}

pub fn summarize(rows: &[Located]) -> Summary {
    let mut s = Summary {
        rows: rows.len(),
        ..Default::default()
    };
    let flag = |l: &Located, reason: String| Anomaly {
        line: l.line,
        model: l.row.model.clone(),
        prefill_len: l.row.prefill_len,
        decode_len: l.row.decode_len,
        reason,
    };
    let mut anomalies = Vec::new();
    let mut by_prefill: BTreeMap<u64, BTreeMap<String, f64>> = BTreeMap::new();

    for l in rows {
        let r = &l.row;
        s.ttft.entry(r.model.clone()).or_default().push(Point {
            prefill_len: r.prefill_len,
            decode_len: r.decode_len,
            speedup: r.ttft_speedup,
        });
        s.ttft_min = fold(s.ttft_min, r.ttft_speedup, f64::min);
        s.ttft_max = fold(s.ttft_max, r.ttft_speedup, f64::max);
        by_prefill
            .entry(r.prefill_len)
            .or_default()
            .insert(r.model.clone(), r.ttft_speedup);

        if !(TTFT_BAND.0..=TTFT_BAND.1).contains(&r.ttft_speedup) {
            anomalies.push(flag(
                l,
                format!(
                    "ttft speedup {:.3} outside [{}, {}]",
                    r.ttft_speedup, TTFT_BAND.0, TTFT_BAND.1
                ),
            ));
        }
        if r.baseline_prefill_s == r.umdam_prefill_s && r.umdam_prefill_s > 0.0 {
            let identity = 1.0 + r.relayout_to_npu_s / r.umdam_prefill_s;
            if (identity - r.ttft_speedup).abs() > 1e-9 * identity {
                anomalies.push(flag(
                    l,
                    format!(
                        "ttft speedup {} != 1 + relayout/prefill = {identity}",
                        r.ttft_speedup
                    ),
                ));
            }
        }
        if r.decode_len > 0 {
            s.ttlt.entry(r.model.clone()).or_default().push(Point {
                prefill_len: r.prefill_len,
                decode_len: r.decode_len,
                speedup: r.ttlt_speedup,
            });
            s.ttlt_min = fold(s.ttlt_min, r.ttlt_speedup, f64::min);
            s.ttlt_max = fold(s.ttlt_max, r.ttlt_speedup, f64::max);
        }
        if r.ttlt_speedup < 1.0 {
            anomalies.push(flag(
                l,
                format!("ttlt speedup {:.4} below 1", r.ttlt_speedup),
            ));
        }
    }

    // TTLT speedup must not grow with decode length at fixed (model, P).
    let mut groups: BTreeMap<(String, u64), Vec<&Located>> = BTreeMap::new();
    for l in rows.iter().filter(|l| l.row.decode_len > 0) {
        groups
            .entry((l.row.model.clone(), l.row.prefill_len))
            .or_default()
            .push(l);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|l| l.row.decode_len);
        for w in g.windows(2) {
            if w[1].row.ttlt_speedup > w[0].row.ttlt_speedup * (1.0 + 1e-12) {
                anomalies.push(flag(
                    w[1],
                    format!(
                        "ttlt speedup rises from {:.4} at D={} to {:.4}",
                        w[0].row.ttlt_speedup, w[0].row.decode_len, w[1].row.ttlt_speedup
                    ),
                ));
            }
        }
    }

    for (p, models) in by_prefill {
        let max = models.values().copied().fold(f64::MIN, f64::max);
        let min = models.values().copied().fold(f64::MAX, f64::min);
        s.cross_model.push(CrossModel {
            prefill_len: p,
            models: models.len(),
            max_over_min: max / min,
        });
    }
    for series in s.ttft.values_mut().chain(s.ttlt.values_mut()) {
        series.sort_by_key(|p| (p.prefill_len, p.decode_len));
    }
    anomalies.sort_by_key(|a| a.line);
    s.anomalies = anomalies;
    s
}

/// Aligned plain-text rendering of a summary.
pub fn render_text(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rows: {}", s.rows);
    if s.rows == 0 {
        return out;
    }
    let _ = writeln!(out, "\nTTFT speedup");
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>8} {:>9}",
        "model", "prefill", "decode", "speedup"
    );
    for (m, pts) in &s.ttft {
        for p in pts {
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>8} {:>9.3}",
                m, p.prefill_len, p.decode_len, p.speedup
            );
        }
    }
    if !s.ttlt.is_empty() {
        let _ = writeln!(out, "\nTTLT speedup");
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>9}",
            "model", "prefill", "decode", "speedup"
        );
        for (m, pts) in &s.ttlt {
            for p in pts {
                let _ = writeln!(
                    out,
                    "{:<12} {:>8} {:>8} {:>9.3}",
                    m, p.prefill_len, p.decode_len, p.speedup
                );
            }
        }
    }
    if let (Some(lo), Some(hi)) = (s.ttft_min, s.ttft_max) {
        let _ = writeln!(out, "\nttft speedup range: {lo:.3} .. {hi:.3}");
    }
    if let (Some(lo), Some(hi)) = (s.ttlt_min, s.ttlt_max) {
        let _ = writeln!(out, "ttlt speedup range: {lo:.3} .. {hi:.3}");
    }
    for c in s.cross_model.iter().filter(|c| c.models > 1) {
        let _ = writeln!(
            out,
            "cross-model ttft max/min at P={}: {:.3} over {} models{}",
            c.prefill_len,
            c.max_over_min,
            c.models,
            if c.max_over_min > CROSS_MODEL_LIMIT {
                " (spread above limit)"
            } else {
                ""
            }
        );
    }
    let _ = writeln!(out, "\nanomalies: {}", s.anomalies.len());
    for a in &s.anomalies {
        let _ = writeln!(
            out,
            "  line {} ({} P={} D={}): {}",
            a.line, a.model, a.prefill_len, a.decode_len, a.reason
        );
    }
    out
}

fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    let name = stem
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    stem.with_file_name(format!("{name}.{suffix}"))
}

/// Writes `<stem>.ttft.csv`, `<stem>.ttlt.csv` and `<stem>.summary.json`
/// next to `csv_path`, returning the paths written.
pub fn write_outputs(csv_path: &Path, rows: &[Located], summary: &Summary) -> Result<Vec<PathBuf>> {
    let ttft = sibling(csv_path, "ttft.csv");
    let mut w = csv::Writer::from_path(&ttft)?;
    w.write_record([
        "model",
        "prefill_len",
        "decode_len",
        "baseline_ttft_s",
        "umdam_ttft_s",
        "ttft_speedup",
    ])?;
    for l in rows {
        let r = &l.row;
        w.write_record([
            r.model.clone(),
            r.prefill_len.to_string(),
            r.decode_len.to_string(),
            r.baseline_ttft_s.to_string(),
            r.umdam_ttft_s.to_string(),
            r.ttft_speedup.to_string(),
        ])?;
    }
    w.flush()?;

    let ttlt = sibling(csv_path, "ttlt.csv");
    let mut w = csv::Writer::from_path(&ttlt)?;
    w.write_record([
        "model",
        "prefill_len",
        "decode_len",
        "baseline_ttlt_s",
        "umdam_ttlt_s",
        "ttlt_speedup",
    ])?;
    for l in rows.iter().filter(|l| l.row.decode_len > 0) {
        let r = &l.row;
        w.write_record([
            r.model.clone(),
            r.prefill_len.to_string(),
            r.decode_len.to_string(),
            r.baseline_ttlt_s.to_string(),
            r.umdam_ttlt_s.to_string(),
            r.ttlt_speedup.to_string(),
        ])?;
    }
    w.flush()?;

    let json = sibling(csv_path, "summary.json");
    std::fs::write(&json, serde_json::to_string_pretty(summary)?)?;
    Ok(vec![ttft, ttlt, json])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{write_sweep_csv, RelayoutPolicy};

    fn row(model: &str, p: u64, d: u64, ttft: f64, ttlt: f64) -> SweepRow {
        let prefill = 1.0;
        SweepRow {
            model: model.into(),
            prefill_len: p,
            decode_len: d,
            include_attention: true,
            relayout_policy: RelayoutPolicy::BothTransitions,
            relayout_to_npu_s: ttft - 1.0,
            relayout_to_pim_s: 0.0,
            baseline_prefill_s: prefill,
            baseline_decode_s: 0.0,
            baseline_ttft_s: ttft,
            baseline_ttlt_s: ttlt,
            umdam_prefill_s: prefill,
            umdam_decode_s: 0.0,
            umdam_ttft_s: prefill,
            umdam_ttlt_s: 1.0,
            ttft_speedup: ttft,
            ttlt_speedup: ttlt,
        }
    }

    fn csv_of(rows: &[SweepRow]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_sweep_csv(rows, &mut buf).unwrap();
        buf
    }

    #[test]
    fn empty_input_gives_empty_summary() {
        let rows = read_rows(&b""[..]).unwrap();
        let s = summarize(&rows);
        assert_eq!(s.rows, 0);
        assert!(s.ttft.is_empty() && s.anomalies.is_empty());
        assert!(render_text(&s).starts_with("rows: 0"));
    }

    #[test]
    fn figure3_shape_gives_one_series_per_model() {
        let mut rows = Vec::new();
        for m in ["a", "b", "c", "d"] {
            for p in [128, 256, 512, 1024] {
                rows.push(row(m, p, 0, 3.0, 3.0));
            }
        }
        let s = summarize(&read_rows(&csv_of(&rows)[..]).unwrap());
        assert_eq!(s.ttft.len(), 4);
        assert!(s.ttft.values().all(|v| v.len() == 4));
        assert!(s.ttlt.is_empty());
        assert!(s.anomalies.is_empty(), "{:?}", s.anomalies);
        assert_eq!(s.cross_model.len(), 4);
    }

    #[test]
    fn slow_ttlt_is_flagged_with_its_line() {
        let rows = vec![row("a", 128, 64, 3.0, 1.2), row("a", 128, 128, 3.0, 0.9)];
        let s = summarize(&read_rows(&csv_of(&rows)[..]).unwrap());
        assert_eq!(s.anomalies.len(), 1);
        assert_eq!(s.anomalies[0].line, 3);
        assert!(s.anomalies[0].reason.contains("below 1"));
    }

    #[test]
    fn rising_ttlt_and_out_of_band_ttft_flagged() {
        let rows = vec![row("a", 128, 64, 5.0, 1.2), row("a", 128, 128, 5.0, 1.3)];
        let s = summarize(&read_rows(&csv_of(&rows)[..]).unwrap());
        let reasons: Vec<_> = s.anomalies.iter().map(|a| a.reason.as_str()).collect();
        assert_eq!(reasons.iter().filter(|r| r.contains("outside")).count(), 2);
        assert!(reasons.iter().any(|r| r.contains("rises")));
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = String::from_utf8(csv_of(&[row("a", 128, 0, 3.0, 3.0)])).unwrap();
        text.push_str("a,notanumber,0\n");
        match read_rows(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn outputs_written() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let path = dir.join("fig.csv");
        let rows =
            read_rows(&csv_of(&[row("a", 128, 0, 3.0, 3.0), row("a", 128, 64, 3.0, 1.5)])[..])
                .unwrap();
        let s = summarize(&rows);
        let written = write_outputs(&path, &rows, &s).unwrap();
        let names: Vec<_> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["fig.ttft.csv", "fig.ttlt.csv", "fig.summary.json"]);
        let ttlt = std::fs::read_to_string(dir.join("fig.ttlt.csv")).unwrap();
        assert_eq!(ttlt.lines().count(), 2);
    }
}
