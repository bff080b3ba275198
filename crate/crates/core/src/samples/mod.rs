//! Multi-chain posterior draws, their on-disk format and importance resampling.

mod io;
mod resample;

pub use io::{read_chains, write_chains, Manifest, SamplerInfo, MANIFEST_FILE};
pub(crate) use resample::partition;
pub use resample::{resample_indices, sir_resample, ResampleResult, ResampleScheme};

use crate::error::{Error, Result};
use crate::model::Coordinate;
use crate::scalar::Scalar;

/// Where a set of draws came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub sampler: Option<SamplerInfo>,
    pub coordinates: Option<Vec<Coordinate>>,
}

/// Ordered per-chain draw matrices sharing one dimension.
///
/// Each chain is stored row-major (`draws x dimension`). Draws are addressed
/// either by `(chain, index)` or by a pooled index running over chains in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet<F> {
    dimension: usize,
    chains: Vec<Vec<F>>,
    offsets: Vec<usize>,
    parameter_names: Option<Vec<String>>,
    provenance: Provenance,
}

impl<F: Scalar> ChainSet<F> {
    /// Builds a set from flat row-major chains.
    pub fn new(dimension: usize, chains: Vec<Vec<F>>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        if chains.is_empty() {
            return Err(Error::input("a chain set needs at least one chain"));
        }
        for (c, chain) in chains.iter().enumerate() {
            if chain.is_empty() {
                return Err(Error::input(format!("chain {c} has no draws")));
            }
            if chain.len() % dimension != 0 {
                return Err(Error::input(format!(
                    "chain {c} has {} values, not a multiple of dimension {dimension}",
                    chain.len()
                )));
            }
            if let Some(pos) = chain.iter().position(|v| !v.is_finite()) {
                return Err(Error::input(format!(
                    "chain {c} draw {} has a non-finite coordinate",
                    pos / dimension
                )));
            }
        }
        let mut offsets = Vec::with_capacity(chains.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for chain in &chains {
            total += chain.len() / dimension;
            offsets.push(total);
        }
        Ok(ChainSet {
            dimension,
            chains,
            offsets,
            parameter_names: None,
            provenance: Provenance::default(),
        })
    }

    /// Builds a set from nested `chain -> draw -> coordinate` vectors.
    pub fn from_draws(chains: Vec<Vec<Vec<F>>>) -> Result<Self> {
        let dimension = chains
            .iter()
            .flat_map(|c| c.first())
            .map(|d| d.len())
            .next()
            .ok_or_else(|| Error::input("a chain set needs at least one draw"))?;
        let mut flat = Vec::with_capacity(chains.len());
        for (c, chain) in chains.into_iter().enumerate() {
            let mut v = Vec::with_capacity(chain.len() * dimension);
            for draw in chain {
                if draw.len() != dimension {
                    return Err(Error::input(format!(
                        "chain {c} mixes dimensions {dimension} and {}",
                        draw.len()
                    )));
                }
                v.extend(draw);
            }
            flat.push(v);
        }
        Self::new(dimension, flat)
    }

    pub fn with_parameter_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: names.len(),
            });
        }
        self.parameter_names = Some(names);
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    /// Total draw count over all chains.
    pub fn n_draws(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn chain_len(&self, chain: usize) -> usize {
        self.chains[chain].len() / self.dimension
    }

    pub fn chain_lengths(&self) -> Vec<usize> {
        (0..self.n_chains()).map(|c| self.chain_len(c)).collect()
    }

    /// Pooled index of the first draw of each chain, plus the total at the end.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn parameter_names(&self) -> Option<&[String]> {
        self.parameter_names.as_deref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn chain_data(&self, chain: usize) -> &[F] {
        &self.chains[chain]
    }

    pub fn draw(&self, chain: usize, index: usize) -> &[F] {
        let d = self.dimension;
        &self.chains[chain][index * d..(index + 1) * d]
    }

    /// Draw at a pooled index.
    pub fn pooled(&self, index: usize) -> &[F] {
        let chain = self.offsets.partition_point(|&o| o <= index) - 1;
        self.draw(chain, index - self.offsets[chain])
    }

    pub fn chain_draws(&self, chain: usize) -> impl Iterator<Item = &[F]> + '_ {
        self.chains[chain].chunks_exact(self.dimension)
    }

    /// All draws in pooled order.
    pub fn iter(&self) -> impl Iterator<Item = &[F]> + '_ {
        self.chains
            .iter()
            .flat_map(move |c| c.chunks_exact(self.dimension))
    }

    /// New set made of the given pooled draws, split into chains of the given sizes.
    pub fn gather(&self, pooled_indices: &[usize], chain_sizes: &[usize]) -> Result<Self> {
        let total: usize = chain_sizes.iter().sum();
        if total != pooled_indices.len() {
            return Err(Error::input(format!(
                "chain sizes add to {total} but {} indices were given",
                pooled_indices.len()
            )));
        }
        let n = self.n_draws();
        if let Some(&bad) = pooled_indices.iter().find(|&&i| i >= n) {
            return Err(Error::input(format!("index {bad} out of range for {n} draws")));
        }
        let mut chains = Vec::with_capacity(chain_sizes.len());
        let mut cursor = 0;
        for &size in chain_sizes {
            let mut v = Vec::with_capacity(size * self.dimension);
            for &i in &pooled_indices[cursor..cursor + size] {
                v.extend_from_slice(self.pooled(i));
            }
            cursor += size;
            chains.push(v);
        }
        let mut out = Self::new(self.dimension, chains)?;
        out.parameter_names = self.parameter_names.clone();
        Ok(out)
    }

    /// Sample mean of every coordinate over all draws.
    pub fn mean(&self) -> Vec<F> {
        let mut m = vec![F::zero(); self.dimension];
        for draw in self.iter() {
            for (acc, &v) in m.iter_mut().zip(draw) {
                *acc += v;
            }
        }
        let n = F::lit(self.n_draws() as f64);
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}
