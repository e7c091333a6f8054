use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retained draws of a single chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// Iteration number of each retained draw.
    pub iters: Vec<usize>,
    /// One row per retained draw, columns as in [`PosteriorDraws::names`].
    pub draws: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    /// Post-burn-in acceptance rate of every sampled coordinate.
    pub acceptance: Vec<(String, f64)>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.draws.iter().map(|r| r[idx]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_pooled(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Per-chain series of one parameter.
    pub fn chain_columns(&self, idx: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.column(idx)).collect()
    }

    /// All chains concatenated for one parameter.
    pub fn pooled(&self, idx: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.column(idx)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(|c| c.draws.iter().map(|r| r.as_slice()))
    }

    /// Write `chain_<k>.csv` files (`iter,<params>,log_post`) into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, chain) in self.chains.iter().enumerate() {
            let path = dir.join(format!("chain_{}.csv", k + 1));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            let mut header = vec!["iter".to_string()];
            header.extend(self.names.iter().cloned());
            header.push("log_post".to_string());
            w.write_record(&header)?;
            let mut rec = Vec::with_capacity(header.len());
            for ((it, row), lp) in chain.iters.iter().zip(&chain.draws).zip(&chain.log_post) {
                rec.clear();
                rec.push(it.to_string());
                rec.extend(row.iter().map(|v| v.to_string()));
                rec.push(lp.to_string());
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Read back the files written by [`PosteriorDraws::write_dir`].
    /// Acceptance rates are not stored in the CSVs and come back empty.
    pub fn read_dir(dir: &Path) -> Result<PosteriorDraws> {
        let mut names: Option<Vec<String>> = None;
        let mut chains = Vec::new();
        for k in 1.. {
            let path = dir.join(format!("chain_{k}.csv"));
            if !path.exists() {
                break;
            }
            let mut r = csv::Reader::from_path(&path)?;
            let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
            if header.len() < 2 || header[0] != "iter" || header.last().unwrap() != "log_post" {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("{}: unexpected draws header", path.display()),
                });
            }
            let these = header[1..header.len() - 1].to_vec();
            match &names {
                Some(n) if *n != these => {
                    return Err(Error::DimensionMismatch(format!(
                        "{} has different columns than chain 1",
                        path.display()
                    )))
                }
                None => names = Some(these.clone()),
                _ => {}
            }
            let mut chain = ChainDraws {
                iters: Vec::new(),
                draws: Vec::new(),
                log_post: Vec::new(),
                acceptance: Vec::new(),
            };
            for (i, rec) in r.records().enumerate() {
                let rec = rec?;
                let line = i as u64 + 2;
                let bad = |m: String| Error::Parse { line, message: m };
                let mut vals = Vec::with_capacity(rec.len());
                for cell in rec.iter().skip(1) {
                    vals.push(cell.parse::<f64>().map_err(|e| bad(format!("{cell:?}: {e}")))?);
                }
                chain.iters.push(rec[0].parse().map_err(|e| bad(format!("iter: {e}")))?);
                chain.log_post.push(vals.pop().unwrap_or(f64::NAN));
                chain.draws.push(vals);
            }
            chains.push(chain);
        }
        let names = names.ok_or_else(|| {
            Error::InvalidInput(format!("no chain_*.csv files in {}", dir.display()))
        })?;
        Ok(PosteriorDraws { names, chains })
    }
}
