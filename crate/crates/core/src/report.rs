//! Comparison tables over several metric reports.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

const SUMMARY_METRICS: [&str; 7] = [
    "map_s",
    "nds_s",
    "ate_s",
    "ase_s",
    "aoe_s",
    "aae_s",
    "ave_offline",
];

fn metric(r: &MetricReport, name: &str) -> f64 {
    match name {
        "map_s" => r.map_s,
        "nds_s" => r.nds_s,
        "ate_s" => r.ate_s,
        "ase_s" => r.ase_s,
        "aoe_s" => r.aoe_s,
        "aae_s" => r.aae_s,
        "ave_offline" => r.ave_offline,
        _ => unreachable!("unknown metric {name}"),
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One summary row per labelled report.
pub fn summary_table(reports: &[(String, MetricReport)]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::NoReports);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["report", "profile", "seed", "contention_factor"];
    header.extend(SUMMARY_METRICS);
    w.write_record(&header)?;
    for (label, r) in reports {
        let m = &r.metadata;
        let mut row = vec![
            label.clone(),
            opt(&m.profile),
            opt(&m.seed),
            opt(&m.contention_factor),
        ];
        row.extend(SUMMARY_METRICS.iter().map(|k| metric(r, k).to_string()));
        w.write_record(&row)?;
    }
    finish(w)
}

/// mAP-S and NDS-S per contention factor, averaged over reports sharing a
/// factor, in ascending factor order. Reports without a factor count as 1.
pub fn contention_pivot(reports: &[(String, MetricReport)]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::NoReports);
    }
    let mut groups: BTreeMap<u64, (f64, f64, f64, usize)> = BTreeMap::new();
    for (_, r) in reports {
        let f = r.metadata.contention_factor.unwrap_or(1.0);
        let g = groups.entry(f.to_bits()).or_insert((f, 0.0, 0.0, 0));
        g.1 += r.map_s;
        g.2 += r.nds_s;
        g.3 += 1;
    }
    let mut rows: Vec<_> = groups.into_values().collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["contention_factor", "map_s", "nds_s", "reports"])?;
    for (f, map, nds, n) in rows {
        w.write_record([
            f.to_string(),
            (map / n as f64).to_string(),
            (nds / n as f64).to_string(),
            n.to_string(),
        ])?;
    }
    finish(w)
}

/// `metric, a, b, b - a` for every summary metric.
pub fn compare_reports(a: &MetricReport, b: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "a", "b", "delta"])?;
    for k in SUMMARY_METRICS {
        let (x, y) = (metric(a, k), metric(b, k));
        w.write_record([
            k.to_string(),
            x.to_string(),
            y.to_string(),
            (y - x).to_string(),
        ])?;
    }
    finish(w)
}
