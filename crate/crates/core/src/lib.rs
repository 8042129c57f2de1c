//! Hierarchical Bayesian matrix completion for sparse binary-mixture property
//! matrices.
//!
//! The pipeline has four stages:
//!
//! 1. fit a latent-factor model ([`smcm`]) on the observed entries with
//!    mean-field Gaussian variational inference ([`vi`]);
//! 2. complete the matrix and cluster solutes (rows) and solvents (columns)
//!    by their predicted profiles with complete-linkage agglomerative
//!    clustering ([`clustering`]);
//! 3. cut both dendrograms into a fixed number of classes;
//! 4. refit with class-level latent vectors acting as shrinkage priors
//!    ([`hmcm`]).
//!
//! [`eval`] runs the whole pipeline under leave-one-out and ships a synthetic
//! corpus generator with known ground truth.

pub mod cli;
pub mod clustering;
pub mod config;
pub mod error;
pub mod eval;
pub mod hmcm;
pub mod ingest;
pub mod io;
pub mod kernels;
pub mod pipeline;
pub mod smcm;
pub mod vi;

pub use error::{Error, Result};

/// Dense row-major matrix used for completed matrices and factor blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows in dense matrix"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic 64-bit mixer (splitmix64 finalizer) used to derive child seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
