//! Samples directory layout: `manifest.json` plus one header-less CSV per
//! chain, one draw per row.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChainSet, Provenance};
use crate::error::{Error, Result};
use crate::model::Coordinate;
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerInfo {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_burnin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acceptance_rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proposal_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_names: Option<Vec<String>>,
    pub chain_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerInfo>,
    /// Sampling coordinate of each parameter (linear or log10).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec<Coordinate>>,
}

/// Writes `cs` into `dir` (created if missing), one `chain_NNN.csv` per chain.
pub fn write_chains<F: Scalar>(cs: &ChainSet<F>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(cs.n_chains());
    for c in 0..cs.n_chains() {
        let name = format!("chain_{c:03}.csv");
        let path = dir.join(&name);
        let mut out = String::with_capacity(cs.chain_len(c) * cs.dimension() * 24);
        for draw in cs.chain_draws(c) {
            for (j, v) in draw.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                // 17 significant digits round-trips any f64
                out.push_str(&format!("{:.16e}", v.as_f64()));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))?;
        files.push(name);
    }
    let p = cs.provenance();
    let manifest = Manifest {
        dimension: cs.dimension(),
        parameter_names: cs.parameter_names().map(|n| n.to_vec()),
        chain_files: files,
        seed: p.seed,
        sampler: p.sampler.clone(),
        coordinates: p.coordinates.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads a samples directory written by [`write_chains`] or any producer of the same layout.
pub fn read_chains<F: Scalar>(dir: impl AsRef<Path>) -> Result<ChainSet<F>> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.is_file() {
        return Err(Error::format(&mpath, None, "no manifest: not a samples directory"));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&mpath, Some(e.line()), e.to_string()))?;
    if manifest.dimension == 0 {
        return Err(Error::format(&mpath, None, "dimension must be positive"));
    }
    if manifest.chain_files.is_empty() {
        return Err(Error::format(&mpath, None, "manifest lists no chain files"));
    }
    if let Some(names) = &manifest.parameter_names {
        if names.len() != manifest.dimension {
            return Err(Error::format(
                &mpath,
                None,
                format!("{} parameter names for dimension {}", names.len(), manifest.dimension),
            ));
        }
    }
    let d = manifest.dimension;
    let mut chains = Vec::with_capacity(manifest.chain_files.len());
    for file in &manifest.chain_files {
        let path = dir.join(file);
        if !path.is_file() {
            return Err(Error::format(&path, None, "chain file listed in manifest is missing"));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(&path)
            .map_err(|e| Error::format(&path, None, e.to_string()))?;
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let line = Some(row + 1);
            let record = record.map_err(|e| Error::format(&path, line, e.to_string()))?;
            if record.len() != d {
                return Err(Error::format(
                    &path,
                    line,
                    format!("expected {d} columns, found {}", record.len()),
                ));
            }
            for field in record.iter() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::format(&path, line, format!("cannot parse {field:?} as a number")))?;
                if !v.is_finite() {
                    return Err(Error::format(&path, line, "non-finite value"));
                }
                values.push(F::lit(v));
            }
        }
        if values.is_empty() {
            return Err(Error::format(&path, None, "chain file is empty"));
        }
        chains.push(values);
    }
    let mut cs = ChainSet::new(d, chains)?.with_provenance(Provenance {
        seed: manifest.seed,
        sampler: manifest.sampler,
        coordinates: manifest.coordinates,
    });
    if let Some(names) = manifest.parameter_names {
        cs = cs.with_parameter_names(names)?;
    }
    Ok(cs)
}
