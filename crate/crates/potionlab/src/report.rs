//! Plot-ready aggregation of benchmark result CSVs.
//!
//! Three views over the raw rows: `summary` (mean ± sample std of healing
//! and damage per method), `curves` (one series point per method ×
//! discovery cell, x = realised |S_f|/|S_m|), and `times` (mean phase
//! timings per method). Everything is emitted as CSV text or a plain
//! aligned table — rendering is left to external tools.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{Method, CSV_COLUMNS};
use crate::poison::Discovery;
use crate::stats;

/// One parsed line of the results CSV; optional columns come back as `None`
/// when the field was empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario_id: String,
    pub method: Method,
    pub attack: String,
    pub sm_size: usize,
    pub discovery: String,
    pub healed_pct: f64,
    pub damage_pts: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub modified_count: Option<usize>,
    pub iterations: Option<usize>,
    pub t_importance_s: f64,
    pub t_search_s: f64,
    pub t_total_s: f64,
    pub seed_train: u64,
    pub seed_poison: u64,
    pub seed_discovery: u64,
    pub seed_search: u64,
}

fn field_err(line: usize, column: &str, value: &str) -> Error {
    Error::Config(format!(
        "results csv line {line}: bad value '{value}' in column {column}"
    ))
}

fn parse_num<T: std::str::FromStr>(line: usize, column: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| field_err(line, column, value))
}

fn parse_opt<T: std::str::FromStr>(line: usize, column: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse_num(line, column, value).map(Some)
    }
}

/// Parses the text of a results CSV written by the harness. The header must
/// match the fixed column order exactly.
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<&str> = reader
        .headers()
        .map_err(|e| Error::Config(format!("results csv: {e}")))?
        .iter()
        .collect();
    if text.trim().is_empty() {
        return Err(Error::Config("results csv is empty".into()));
    }
    if header != CSV_COLUMNS {
        return Err(Error::Config(format!(
            "results csv header mismatch: got '{}'",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let f = record.map_err(|e| Error::Config(format!("results csv: {e}")))?;
        let n = f
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rows.len() + 2);
        if f.len() != CSV_COLUMNS.len() {
            return Err(Error::Config(format!(
                "results csv line {n}: {} fields, expected {}",
                f.len(),
                CSV_COLUMNS.len()
            )));
        }
        rows.push(ResultRow {
            scenario_id: f[0].to_string(),
            method: f[1].parse()?,
            attack: f[2].to_string(),
            sm_size: parse_num(n, "sm_size", &f[3])?,
            discovery: f[4].to_string(),
            healed_pct: parse_num(n, "healed_pct", &f[5])?,
            damage_pts: parse_num(n, "damage_pts", &f[6])?,
            alpha: parse_opt(n, "alpha", &f[7])?,
            lambda: parse_opt(n, "lambda", &f[8])?,
            modified_count: parse_opt(n, "modified_count", &f[9])?,
            iterations: parse_opt(n, "iterations", &f[10])?,
            t_importance_s: parse_num(n, "t_importance_s", &f[11])?,
            t_search_s: parse_num(n, "t_search_s", &f[12])?,
            t_total_s: parse_num(n, "t_total_s", &f[13])?,
            seed_train: parse_num(n, "seed_train", &f[14])?,
            seed_poison: parse_num(n, "seed_poison", &f[15])?,
            seed_discovery: parse_num(n, "seed_discovery", &f[16])?,
            seed_search: parse_num(n, "seed_search", &f[17])?,
        });
    }
    Ok(rows)
}

/// Reads and parses a results CSV file.
pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}

fn method_rank(m: Method) -> usize {
    Method::ALL.iter().position(|&x| x == m).expect("known method")
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

/// Per-method aggregate of the two headline metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub n: usize,
    pub healed_mean: f64,
    pub healed_std: f64,
    pub damage_mean: f64,
    pub damage_std: f64,
}

/// Groups rows by method (in canonical method order) and reports
/// mean ± sample standard deviation; a single row gets std 0.
pub fn summary(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let entry = groups.entry(method_rank(row.method)).or_default();
        entry.0.push(row.healed_pct);
        entry.1.push(row.damage_pts);
    }
    groups
        .into_iter()
        .map(|(rank, (healed, damage))| SummaryRow {
            method: Method::ALL[rank],
            n: healed.len(),
            healed_mean: stats::mean(&healed),
            healed_std: stats::sample_std(&healed),
            damage_mean: stats::mean(&damage),
            damage_std: stats::sample_std(&damage),
        })
        .collect()
}

/// CSV form of the summary (plot-ready).
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,n,healed_mean,healed_std,damage_mean,damage_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.n, r.healed_mean, r.healed_std, r.damage_mean, r.damage_std
        ));
    }
    out
}

/// Aligned text table of the summary, for terminals.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>4} {:>22} {:>22}\n",
        "method", "n", "healed %", "damage pts"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:>4} {:>13.2} ± {:>6.2} {:>13.2} ± {:>6.2}\n",
            r.method.id(),
            r.n,
            r.healed_mean,
            r.healed_std,
            r.damage_mean,
            r.damage_std
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

/// One point of a healing/damage-vs-discovery curve: a (method, discovery
/// cell, |S_m|) group with its realised forget fraction as the x value.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub method: Method,
    pub discovery: String,
    pub sm_size: usize,
    pub x_fraction: f64,
    pub n: usize,
    pub healed_mean: f64,
    pub healed_std: f64,
    pub damage_mean: f64,
    pub damage_std: f64,
}

/// Groups rows by (method, discovery, |S_m|), computes the realised
/// |S_f|/|S_m| for the x axis, and sorts by method then x then |S_m|.
pub fn curves(rows: &[ResultRow]) -> Result<Vec<CurveRow>> {
    let mut groups: BTreeMap<(usize, String, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let key = (method_rank(row.method), row.discovery.clone(), row.sm_size);
        let entry = groups.entry(key).or_default();
        entry.0.push(row.healed_pct);
        entry.1.push(row.damage_pts);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((rank, discovery, sm_size), (healed, damage)) in groups {
        let x_fraction = Discovery::from_label(&discovery)?.realised_fraction(sm_size)?;
        out.push(CurveRow {
            method: Method::ALL[rank],
            discovery,
            sm_size,
            x_fraction,
            n: healed.len(),
            healed_mean: stats::mean(&healed),
            healed_std: stats::sample_std(&healed),
            damage_mean: stats::mean(&damage),
            damage_std: stats::sample_std(&damage),
        });
    }
    out.sort_by(|a, b| {
        method_rank(a.method)
            .cmp(&method_rank(b.method))
            .then(a.x_fraction.total_cmp(&b.x_fraction))
            .then(a.sm_size.cmp(&b.sm_size))
    });
    Ok(out)
}

/// CSV form of the curves (plot-ready series).
pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(
        "method,discovery,sm_size,x_fraction,n,healed_mean,healed_std,damage_mean,damage_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.discovery,
            r.sm_size,
            r.x_fraction,
            r.n,
            r.healed_mean,
            r.healed_std,
            r.damage_mean,
            r.damage_std
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Times
// ---------------------------------------------------------------------------

/// Mean phase timings per method.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeRow {
    pub method: Method,
    pub n: usize,
    pub importance_mean_s: f64,
    pub search_mean_s: f64,
    pub total_mean_s: f64,
}

/// Groups rows by method and averages the three wall-clock phases.
pub fn times(rows: &[ResultRow]) -> Vec<TimeRow> {
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let entry = groups.entry(method_rank(row.method)).or_default();
        entry.0.push(row.t_importance_s);
        entry.1.push(row.t_search_s);
        entry.2.push(row.t_total_s);
    }
    groups
        .into_iter()
        .map(|(rank, (imp, search, total))| TimeRow {
            method: Method::ALL[rank],
            n: imp.len(),
            importance_mean_s: stats::mean(&imp),
            search_mean_s: stats::mean(&search),
            total_mean_s: stats::mean(&total),
        })
        .collect()
}

/// CSV form of the timings.
pub fn times_csv(rows: &[TimeRow]) -> String {
    let mut out = String::from("method,n,importance_mean_s,search_mean_s,total_mean_s\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.n, r.importance_mean_s, r.search_mean_s, r.total_mean_s
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        CSV_COLUMNS.join(",")
    }

    fn sample_csv() -> String {
        // Two eu rows, one ptn_xlf row, one none row; awkward float values
        // so the recompute check below exercises real rounding.
        let mut s = header();
        s.push('\n');
        s.push_str("id1,eu,badnet,10,frac:0.5,80.5,-0.125,,,,,0,1.5,2,1,2,3,4\n");
        s.push_str("id2,eu,badnet,10,frac:0.5,90.25,-1,,,,,0,1.25,2.5,5,6,7,8\n");
        s.push_str("id3,ptn_xlf,badnet,10,frac:0.5,99.5,-0.5,12.5,1,4,70,0.75,3,4,1,2,3,4\n");
        s.push_str("id4,none,badnet,50,count:1,18,0,,,,,0,0,1,1,2,3,4\n");
        s
    }

    #[test]
    fn parses_the_fixed_schema_with_empty_optionals() {
        let rows = parse_results(&sample_csv()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].method, Method::Eu);
        assert_eq!(rows[0].alpha, None);
        assert_eq!(rows[0].healed_pct, 80.5);
        assert_eq!(rows[2].method, Method::PtnXlf);
        assert_eq!(rows[2].alpha, Some(12.5));
        assert_eq!(rows[2].modified_count, Some(4));
        assert_eq!(rows[2].iterations, Some(70));
        assert_eq!(rows[3].discovery, "count:1");
        assert_eq!(rows[3].seed_search, 4);
    }

    #[test]
    fn rejects_bad_headers_rows_and_values() {
        assert!(parse_results("").is_err());
        assert!(parse_results("a,b,c\n").is_err());
        let short = format!("{}\nid1,eu,badnet,10\n", header());
        let err = parse_results(&short).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let bad = format!(
            "{}\nid1,eu,badnet,10,frac:0.5,NOTANUMBER,0,,,,,0,0,1,1,2,3,4\n",
            header()
        );
        let err = parse_results(&bad).unwrap_err().to_string();
        assert!(err.contains("healed_pct"), "{err}");
        let badm = format!(
            "{}\nid1,retrain,badnet,10,frac:0.5,1,0,,,,,0,0,1,1,2,3,4\n",
            header()
        );
        assert!(parse_results(&badm).is_err());
    }

    #[test]
    fn summary_matches_hand_computed_statistics() {
        let rows = parse_results(&sample_csv()).unwrap();
        let s = summary(&rows);
        // Canonical method order: none, eu, ..., ptn_xlf.
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].method, Method::None);
        assert_eq!(s[1].method, Method::Eu);
        assert_eq!(s[2].method, Method::PtnXlf);
        // eu: healed mean (80.5+90.25)/2 = 85.375; sample std
        // sqrt(((80.5-85.375)^2+(90.25-85.375)^2)/1) = 4.875*sqrt(2).
        assert_eq!(s[1].n, 2);
        assert!((s[1].healed_mean - 85.375).abs() <= 1e-12);
        assert!((s[1].healed_std - 4.875 * 2f64.sqrt()).abs() <= 1e-12);
        assert!((s[1].damage_mean - (-0.5625)).abs() <= 1e-12);
        // Singletons get std 0 exactly.
        assert_eq!(s[2].n, 1);
        assert_eq!(s[2].healed_std, 0.0);
        assert_eq!(s[2].damage_std, 0.0);
    }

    #[test]
    fn summary_survives_an_independent_recompute() {
        // Recompute the means with a different accumulation order (reversed,
        // pairwise) and require agreement to 1e-9 — the report's numbers
        // must not depend on private summation quirks.
        let mut csv = header();
        csv.push('\n');
        let mut values = Vec::new();
        let mut x = 17.3081;
        for i in 0..101 {
            x = (x * 1.37 + 0.11) % 100.0;
            values.push(x);
            csv.push_str(&format!(
                "id{i},ptn_lf,badnet,10,frac:1,{x},{},,,,,0,0,1,1,2,3,4\n",
                -x / 7.0
            ));
        }
        let rows = parse_results(&csv).unwrap();
        let s = summary(&rows);
        assert_eq!(s.len(), 1);
        let n = values.len() as f64;
        let mean_rev: f64 = values.iter().rev().sum::<f64>() / n;
        assert!((s[0].healed_mean - mean_rev).abs() <= 1e-9);
        let var_rev: f64 = values
            .iter()
            .rev()
            .map(|v| (v - mean_rev).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((s[0].healed_std - var_rev.sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn curves_use_realised_fractions_and_sort_by_x() {
        let mut csv = header();
        csv.push('\n');
        csv.push_str("a,eu,badnet,10,frac:1,100,0,,,,,0,0,1,1,2,3,4\n");
        csv.push_str("b,eu,badnet,10,count:1,30,0,,,,,0,0,1,1,2,3,4\n");
        csv.push_str("c,eu,badnet,10,frac:0.5,60,0,,,,,0,0,1,5,6,7,8\n");
        csv.push_str("d,eu,badnet,10,frac:0.5,70,0,,,,,0,0,1,9,10,11,12\n");
        csv.push_str("e,none,badnet,50,count:1,18,0,,,,,0,0,1,1,2,3,4\n");
        let rows = parse_results(&csv).unwrap();
        let c = curves(&rows).unwrap();
        assert_eq!(c.len(), 4);
        // none sorts before eu; within eu, x ascending: 0.1, 0.5, 1.0.
        assert_eq!(c[0].method, Method::None);
        assert!((c[0].x_fraction - 0.02).abs() <= 1e-15); // count:1 of 50
        assert_eq!(c[1].method, Method::Eu);
        assert!((c[1].x_fraction - 0.1).abs() <= 1e-15);
        assert!((c[2].x_fraction - 0.5).abs() <= 1e-15);
        assert_eq!(c[2].n, 2);
        assert!((c[2].healed_mean - 65.0).abs() <= 1e-12);
        assert!((c[3].x_fraction - 1.0).abs() <= 1e-15);
        let text = curves_csv(&c);
        assert!(text.starts_with("method,discovery,sm_size,x_fraction,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn times_average_per_method() {
        let rows = parse_results(&sample_csv()).unwrap();
        let t = times(&rows);
        assert_eq!(t.len(), 3);
        let eu = t.iter().find(|r| r.method == Method::Eu).unwrap();
        assert_eq!(eu.n, 2);
        assert!((eu.importance_mean_s - 0.0).abs() <= 1e-15);
        assert!((eu.search_mean_s - 1.375).abs() <= 1e-12);
        assert!((eu.total_mean_s - 2.25).abs() <= 1e-12);
        let text = times_csv(&t);
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn summary_csv_and_table_render() {
        let rows = parse_results(&sample_csv()).unwrap();
        let s = summary(&rows);
        let csv = summary_csv(&s);
        assert!(csv.starts_with("method,n,healed_mean,"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("eu,2,85.375,"));
        let table = summary_table(&s);
        assert!(table.contains("eu"));
        assert!(table.contains("±"));
    }
}
