use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pass_core::simlab::RESULTS_HEADER;
use serde::Deserialize;

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ResultRow {
    pub function: String,
    pub policy: String,
    pub epsilon: f64,
    pub pi_d: f64,
    pub delta: f64,
    pub kind: String,
    pub arl1_mean: f64,
    pub arl1_se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    pub censored: usize,
    pub discarded_false_alarms: u64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.function,
            self.policy,
            self.epsilon,
            self.pi_d,
            self.delta,
            self.kind,
            self.arl1_mean,
            self.arl1_se,
            self.ci_lo,
            self.ci_hi,
            self.n,
            self.censored,
            self.discarded_false_alarms
        )
    }
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let first = text.lines().next().unwrap_or_default();
    if first.trim_end() != RESULTS_HEADER {
        bail!("line 1: unexpected results header {first:?}");
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let row: ResultRow = rec.with_context(|| format!("line {}", i + 2))?;
        rows.push(row);
    }
    Ok(rows)
}

type GroupKey = (String, String, String, u64, u64);

fn group_key(r: &ResultRow) -> GroupKey {
    (
        r.function.clone(),
        r.policy.clone(),
        r.kind.clone(),
        r.pi_d.to_bits(),
        r.delta.to_bits(),
    )
}

/// Marks, for every (function, policy, kind, pi_d, delta) group, the row
/// whose epsilon has the smallest mean ARL1. Ties go to the first row.
pub fn best_eps_flags(rows: &[ResultRow]) -> Vec<bool> {
    let mut best: BTreeMap<GroupKey, usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        best.entry(group_key(r))
            .and_modify(|b| {
                if r.arl1_mean < rows[*b].arl1_mean {
                    *b = i;
                }
            })
            .or_insert(i);
    }
    let mut flags = vec![false; rows.len()];
    for i in best.into_values() {
        flags[i] = true;
    }
    flags
}

pub fn summary_table(rows: &[ResultRow]) -> String {
    let flags = best_eps_flags(rows);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<11} {:<15} {:>7} {:>6} {:>6} {:<12} {:>10} {:>8} {:>21} {:>4}",
        "function", "policy", "eps", "pi_d", "delta", "kind", "ARL1", "SE", "95% CI", "best"
    );
    for (r, best) in rows.iter().zip(flags) {
        let ci = format!("[{:.2}, {:.2}]", r.ci_lo, r.ci_hi);
        let _ = writeln!(
            out,
            "{:<11} {:<15} {:>7} {:>6} {:>6} {:<12} {:>10.2} {:>8.2} {:>21} {:>4}",
            r.function,
            r.policy,
            r.epsilon,
            r.pi_d,
            r.delta,
            r.kind,
            r.arl1_mean,
            r.arl1_se,
            ci,
            if best { "*" } else { "" }
        );
    }
    out
}

/// Per-function series sorted by policy, kind, pi_d, epsilon, then delta.
pub fn series_csvs(rows: &[ResultRow]) -> BTreeMap<String, String> {
    let flags = best_eps_flags(rows);
    let mut by_fn: BTreeMap<String, Vec<(&ResultRow, bool)>> = BTreeMap::new();
    for (r, f) in rows.iter().zip(flags) {
        by_fn.entry(r.function.clone()).or_default().push((r, f));
    }
    by_fn
        .into_iter()
        .map(|(name, mut v)| {
            v.sort_by(|(a, _), (b, _)| {
                (&a.policy, &a.kind)
                    .cmp(&(&b.policy, &b.kind))
                    .then(a.pi_d.total_cmp(&b.pi_d))
                    .then(a.epsilon.total_cmp(&b.epsilon))
                    .then(a.delta.total_cmp(&b.delta))
            });
            let mut out =
                String::from("policy,kind,pi_d,epsilon,delta,arl1_mean,arl1_se,ci_lo,ci_hi,best_eps\n");
            for (r, best) in v {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.policy,
                    r.kind,
                    r.pi_d,
                    r.epsilon,
                    r.delta,
                    r.arl1_mean,
                    r.arl1_se,
                    r.ci_lo,
                    r.ci_hi,
                    best as u8
                );
            }
            (name, out)
        })
        .collect()
}

/// Writes `summary.txt` and `series_<function>.csv`; returns the table.
pub fn report(results: &Path, out: &Path) -> Result<String> {
    let text = std::fs::read_to_string(results)
        .with_context(|| format!("reading {}", results.display()))?;
    let rows = parse_results(&text).with_context(|| format!("in {}", results.display()))?;
    std::fs::create_dir_all(out)?;
    let table = summary_table(&rows);
    std::fs::write(out.join("summary.txt"), &table)?;
    for (name, csv) in series_csvs(&rows) {
        std::fs::write(out.join(format!("series_{name}.csv")), csv)?;
    }
    Ok(table)
}
