//! Parameter sweeps: every combination of grid values, several seeds each,
//! run in parallel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::metrics::MetricsReport;
use crate::sim::run;

/// One swept field, addressed by a dotted path into the config
/// (e.g. `params.m_tr` or `adversary_plan.colluder_fraction`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub field: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("the sweep grid has no cells")]
    EmptyGrid,
    #[error("seeds_per_cell must be at least 1")]
    NoSeeds,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    /// Position in the flattened grid.
    pub cell: usize,
    pub replicate: usize,
    pub assignment: Vec<(String, toml::Value)>,
    pub seed: u64,
    pub outcome: Result<MetricsReport, String>,
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| format!("`{path}` does not name a table field"))?;
        if i + 1 == parts.len() {
            table.insert(p.to_string(), value);
            return Ok(());
        }
        cur = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(format!("empty field path `{path}`"))
}

/// Applies one assignment to a copy of `template`.
pub fn assign(template: &ScenarioConfig, assignment: &[(String, toml::Value)]) -> Result<ScenarioConfig, String> {
    let mut v = toml::Value::try_from(template).map_err(|e| e.to_string())?;
    for (path, value) in assignment {
        set_path(&mut v, path, value.clone())?;
    }
    let cfg: ScenarioConfig = v.try_into().map_err(|e: toml::de::Error| e.message().to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// All combinations, last axis varying fastest.
pub fn cells(grid: &[GridAxis]) -> Vec<Vec<(String, toml::Value)>> {
    let mut out = vec![Vec::new()];
    for axis in grid {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut a = prefix.clone();
                    a.push((axis.field.clone(), v.clone()));
                    a
                })
            })
            .collect();
    }
    out
}

/// Runs every cell `seeds_per_cell` times. Run `i` of the flattened list uses
/// seed `template.seed ^ i`. A cell that fails to configure or run is
/// reported as failed; the others still complete.
pub fn sweep(template: &ScenarioConfig, grid: &[GridAxis], seeds_per_cell: usize) -> Result<Vec<CellResult>, SweepError> {
    if seeds_per_cell == 0 {
        return Err(SweepError::NoSeeds);
    }
    let assignments = cells(grid);
    if grid.iter().any(|a| a.values.is_empty()) || assignments.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    let jobs: Vec<(usize, usize)> =
        (0..assignments.len()).flat_map(|c| (0..seeds_per_cell).map(move |r| (c, r))).collect();
    Ok(jobs
        .into_par_iter()
        .enumerate()
        .map(|(i, (cell, replicate))| {
            let seed = template.seed ^ i as u64;
            let assignment = assignments[cell].clone();
            let outcome = assign(template, &assignment).and_then(|mut cfg| {
                cfg.seed = seed;
                run(&cfg).map(|o| o.report).map_err(|e| e.to_string())
            });
            CellResult { cell, replicate, assignment, seed, outcome }
        })
        .collect())
}

/// Mean of `f` over the successful replicates of each cell.
pub fn cell_means(results: &[CellResult], f: impl Fn(&MetricsReport) -> Option<f64>) -> Vec<Option<f64>> {
    let cells = results.iter().map(|r| r.cell + 1).max().unwrap_or(0);
    let mut sums = vec![(0.0, 0usize); cells];
    for r in results {
        if let Ok(rep) = &r.outcome {
            if let Some(x) = f(rep) {
                sums[r.cell].0 += x;
                sums[r.cell].1 += 1;
            }
        }
    }
    sums.into_iter().map(|(s, k)| (k > 0).then(|| s / k as f64)).collect()
}
