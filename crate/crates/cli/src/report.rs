//! Output files: CSV tables and the human-readable results table.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::runner::ResultRow;
use crate::RunError;

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn optional(value: Option<f64>, precision: usize) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.precision$}"))
}

/// Fixed-width table; `*` marks rows within 3% of the upper bound.
pub fn render_table(config: &ExperimentConfig, rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "domain {}  setting (N,S,K,rho,T) = {}  mode {}  episodes {}",
        config.domain.family.name(),
        config.setting,
        config.mode(),
        config.n_episodes
    );
    let _ = writeln!(out, "* gap to the upper bound is less than 3% of the bound\n");
    let _ = writeln!(
        out,
        "{:>8}  {:<17} {:>24}  {:>12}  {:>10}  {:>10}",
        "seed", "policy", "mean ± ci95", "upper_bound", "normalized", "runtime_ms"
    );
    for r in rows {
        let mark = if r.near_optimal() { '*' } else { ' ' };
        let reward = format!("{:.3} ± {:.3}{mark}", r.mean_reward, r.ci95);
        let _ = writeln!(
            out,
            "{:>8}  {:<17} {:>24}  {:>12.3}  {:>10}  {:>10}",
            r.instance_seed,
            r.policy,
            reward,
            r.upper_bound,
            optional(r.normalized, 4),
            optional(r.runtime_ms, 2)
        );
    }
    out
}
