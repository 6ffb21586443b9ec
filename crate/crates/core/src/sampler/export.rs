//! Per-chain draw tables.
//!
//! Each chain is written to `chain_<k>.csv` (1-based) with one column per
//! natural parameter followed by `lp__`, `divergent__` and `treedepth__`.
//! Values are printed in shortest round-trip form, so reading a table back
//! reproduces the draws exactly.

use std::path::{Path, PathBuf};

use super::{DrawStats, PosteriorDraws};
use crate::model::{natural_names, ModelDims};
use crate::{Error, Result};

const TRAILER: [&str; 3] = ["lp__", "divergent__", "treedepth__"];

pub fn chain_file(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{}.csv", chain + 1))
}

pub fn write_draws(dir: &Path, draws: &PosteriorDraws) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(draws.n_chains());
    for c in 0..draws.n_chains() {
        let path = chain_file(dir, c);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e.to_string()))?;
        let header: Vec<&str> = draws.names().iter().map(String::as_str).chain(TRAILER).collect();
        w.write_record(&header)
            .map_err(|e| Error::parse(&path, e.to_string()))?;
        for d in 0..draws.n_draws() {
            let st = draws.stats(c, d);
            let row: Vec<String> = draws
                .draw(c, d)
                .iter()
                .map(|v| v.to_string())
                .chain([
                    st.lp.to_string(),
                    u8::from(st.divergent).to_string(),
                    st.depth.to_string(),
                ])
                .collect();
            w.write_record(&row).map_err(|e| Error::parse(&path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    Ok(files)
}

/// Reads `chain_1.csv`, `chain_2.csv`, … from `dir` until one is missing.
pub fn read_draws(dir: &Path, dims: ModelDims) -> Result<PosteriorDraws> {
    let names = natural_names(dims);
    let k = names.len();
    let mut values = Vec::new();
    let mut stats = Vec::new();
    let mut n_chains = 0;
    let mut n_draws = None;
    loop {
        let path = chain_file(dir, n_chains);
        if !path.exists() {
            break;
        }
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::parse(&path, e.to_string()))?;
        let header = r.headers().map_err(|e| Error::parse(&path, e.to_string()))?.clone();
        let expected: Vec<&str> = names.iter().map(String::as_str).chain(TRAILER).collect();
        if header.iter().ne(expected.iter().copied()) {
            return Err(Error::Mismatch(format!(
                "{}: column names do not match the model ({} columns expected)",
                path.display(),
                expected.len()
            )));
        }
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::parse(&path, e.to_string()))?;
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(&path, format!("row {}: bad number {s:?}", rows + 2)))
            };
            for v in rec.iter().take(k) {
                values.push(parse(v)?);
            }
            let depth = parse(&rec[k + 2])? as usize;
            stats.push(DrawStats {
                lp: parse(&rec[k])?,
                divergent: parse(&rec[k + 1])? != 0.0,
                depth,
                step_size: f64::NAN,
                accept_stat: f64::NAN,
                n_leapfrog: 0,
            });
            rows += 1;
        }
        if *n_draws.get_or_insert(rows) != rows {
            return Err(Error::Mismatch(format!(
                "{}: chains have unequal lengths",
                path.display()
            )));
        }
        n_chains += 1;
    }
    if n_chains == 0 {
        return Err(Error::Mismatch(format!("no chain_1.csv under {}", dir.display())));
    }
    PosteriorDraws::from_parts(dims, n_chains, n_draws.unwrap_or(0), values, stats)
}
