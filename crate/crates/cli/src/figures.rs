//! Plot-ready CSV families built from finished runs.
//!
//! * `cost_vs_n.csv`: `N,policy_kind,cost,stderr`
//! * `stage_mean_std.csv`: `N,policy,stage,time,species,mean,std`
//! * `occupancy_N<n>.csv`: `x1,x2,…,count_of_sets_containing`, the number
//!   of stage sets holding each state

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::experiments::Summary;

/// Finished runs: summaries plus any stage-set dumps keyed by `N`.
#[derive(Debug, Default)]
pub struct ResultSet {
    pub summaries: Vec<Summary>,
    pub stage_sets: BTreeMap<u64, String>,
}

impl ResultSet {
    /// Collects `summary.json` and `stage_sets_N*.csv` from run directories.
    pub fn load(dirs: &[PathBuf]) -> CliResult<Self> {
        let mut set = ResultSet::default();
        for d in dirs {
            let sp = d.join("summary.json");
            if sp.exists() {
                let text = fs::read_to_string(&sp)?;
                let s: Summary = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", sp.display())))?;
                set.summaries.push(s);
            }
            let mut names: Vec<PathBuf> = fs::read_dir(d)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            names.sort();
            for p in names {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if let Some(n) = name.strip_prefix("stage_sets_N").and_then(|r| r.strip_suffix(".csv")) {
                    if let Ok(n) = n.parse() {
                        set.stage_sets.insert(n, fs::read_to_string(&p)?);
                    }
                }
            }
        }
        Ok(set)
    }
}

/// States of a `stage,<species…>` dump with the number of stages listing them.
pub fn occupancy(csv: &str) -> (usize, Vec<(Vec<i64>, usize)>) {
    let mut lines = csv.lines();
    let dim = lines.next().map_or(0, |h| h.split(',').count().saturating_sub(1));
    let mut counts: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let x: Vec<i64> = l.split(',').skip(1).filter_map(|v| v.trim().parse().ok()).collect();
        *counts.entry(x).or_insert(0) += 1;
    }
    (dim, counts.into_iter().collect())
}

fn coords_header(dim: usize) -> String {
    (1..=dim).map(|i| format!("x{i},")).collect()
}

/// Writes the figure families into `out` and returns the written paths.
pub fn emit_figure_data(results: &ResultSet, out: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();

    let mut cost = String::from("N,policy_kind,cost,stderr\n");
    for s in &results.summaries {
        for c in &s.costs {
            cost.push_str(&format!("{},{},{:?},{:?}\n", c.n, c.policy_kind, c.cost, c.stderr));
        }
    }
    let p = out.join("cost_vs_n.csv");
    fs::write(&p, cost)?;
    written.push(p);

    let mut ms = String::from("N,policy,stage,time,species,mean,std\n");
    for s in &results.summaries {
        for r in &s.stage_stats {
            for (i, name) in s.species.iter().enumerate() {
                ms.push_str(&format!(
                    "{},\"{}\",{},{:?},{},{:?},{:?}\n",
                    r.n, r.policy, r.stage, r.time, name, r.mean[i], r.std[i]
                ));
            }
        }
    }
    let p = out.join("stage_mean_std.csv");
    fs::write(&p, ms)?;
    written.push(p);

    if results.stage_sets.is_empty() {
        let p = out.join("occupancy.csv");
        fs::write(&p, format!("{}count_of_sets_containing\n", coords_header(2)))?;
        written.push(p);
    }
    for (n, csv) in &results.stage_sets {
        let (dim, occ) = occupancy(csv);
        let mut text = format!("{}count_of_sets_containing\n", coords_header(dim));
        for (x, c) in occ {
            for v in x {
                text.push_str(&format!("{v},"));
            }
            text.push_str(&format!("{c}\n"));
        }
        let p = out.join(format!("occupancy_N{n}.csv"));
        fs::write(&p, text)?;
        written.push(p);
    }
    Ok(written)
}
