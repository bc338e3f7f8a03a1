//! Square interaction matrices `A^t` of the linear dynamic mixing law.
//!
//! Entry `(i, j)` is the loss decrease on group `i` per unit of proportion
//! placed on group `j`, accumulated over `horizon` trainer steps. Rows index the
//! evaluated group, columns the trained-on group.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct InteractionMatrix {
    m: usize,
    /// Row-major entries.
    entries: Vec<f64>,
    /// Trainer steps the matrix was estimated over, when known.
    horizon: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    m: usize,
    entries: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<u64>,
}

impl TryFrom<RawMatrix> for InteractionMatrix {
    type Error = Error;

    fn try_from(r: RawMatrix) -> Result<Self> {
        let mut a = Self::from_row_major(r.m, r.entries)?;
        a.horizon = r.horizon;
        Ok(a)
    }
}

impl From<InteractionMatrix> for RawMatrix {
    fn from(a: InteractionMatrix) -> Self {
        Self { m: a.m, entries: a.entries, horizon: a.horizon }
    }
}

impl InteractionMatrix {
    pub fn zeros(m: usize) -> Self {
        Self { m, entries: alloc::vec![0.0; m * m], horizon: None }
    }

    pub fn identity(m: usize) -> Self {
        let mut a = Self::zeros(m);
        for i in 0..m {
            a.set(i, i, 1.0);
        }
        a
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut a = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            a.set(i, i, v);
        }
        a
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let mut entries = Vec::with_capacity(m * m);
        for r in rows {
            if r.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: r.len() });
            }
            entries.extend_from_slice(r);
        }
        Self::from_row_major(m, entries)
    }

    pub fn from_row_major(m: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != m * m {
            return Err(Error::DimensionMismatch { expected: m * m, got: entries.len() });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("interaction matrix"));
        }
        Ok(Self { m, entries, horizon: None })
    }

    pub fn with_horizon(mut self, steps: u64) -> Self {
        self.horizon = Some(steps);
        self
    }

    pub fn horizon(&self) -> Option<u64> {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.m + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `1^T A`: the per-column totals that drive the EGD direction.
    pub fn column_sums(&self) -> Vec<f64> {
        self.weighted_column_sums(None)
    }

    /// `sum_i b_i A_ij`, or plain column sums when `b` is absent.
    pub fn weighted_column_sums(&self, b: Option<&[f64]>) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.m];
        for i in 0..self.m {
            let w = b.map_or(1.0, |b| b[i]);
            for (j, o) in out.iter_mut().enumerate() {
                *o += w * self.get(i, j);
            }
        }
        out
    }

    /// `A p`.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: p.len() });
        }
        Ok((0..self.m)
            .map(|i| self.row(i).iter().zip(p).map(|(a, x)| a * x).sum())
            .collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.entries.iter().map(|x| x * x).sum())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            m: self.m,
            entries: self.entries.iter().map(|x| x * k).collect(),
            horizon: self.horizon,
        }
    }

    /// Entrywise `self + k * other`.
    pub fn add_scaled(&self, other: &Self, k: f64) -> Result<Self> {
        if other.m != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: other.m });
        }
        Ok(Self {
            m: self.m,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + k * b).collect(),
            horizon: self.horizon,
        })
    }

    /// Scales row `i` by `factors[i]`.
    pub fn scale_rows(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: factors.len() });
        }
        let mut out = self.clone();
        for i in 0..self.m {
            for j in 0..self.m {
                out.set(i, j, self.get(i, j) * factors[i]);
            }
        }
        Ok(out)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.m).all(|i| (0..self.m).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Arithmetic mean of equally sized matrices.
    pub fn mean<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a InteractionMatrix>,
    {
        let mut acc: Option<Self> = None;
        let mut n = 0usize;
        for a in items {
            acc = Some(match acc {
                None => a.clone(),
                Some(s) => s.add_scaled(a, 1.0)?,
            });
            n += 1;
        }
        let acc = acc.ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
        Ok(acc.scaled(1.0 / n as f64))
    }
}
