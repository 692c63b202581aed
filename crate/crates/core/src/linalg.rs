//! Small dense complex Hermitian matrices backed by nalgebra.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// A Hermitian operator in frequency units (Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    m: CMatrix,
}

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            m: CMatrix::zeros(dim, dim),
        }
    }

    /// Wraps `m` after checking that it is square and Hermitian to `rel_tol`
    /// of its largest entry.
    pub fn from_matrix(m: CMatrix, rel_tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidParameter(format!(
                "matrix is {}x{}, not square",
                m.nrows(),
                m.ncols()
            )));
        }
        let h = Self { m };
        if !h.is_hermitian(rel_tol) {
            return Err(Error::InvalidParameter("matrix is not Hermitian".into()));
        }
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.m[(i, j)]
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.m
    }

    /// Adds `v` at (i, j) and its conjugate at (j, i).
    pub(crate) fn add_hermitian(&mut self, i: usize, j: usize, v: Complex64) {
        if i == j {
            self.m[(i, i)] += Complex64::new(v.re, 0.0);
        } else {
            self.m[(i, j)] += v;
            self.m[(j, i)] += v.conj();
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().fold(0.0, |a, z| a.max(z.norm()))
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let n = self.dim();
        (0..n).all(|i| {
            (i..n).all(|j| (self.m[(i, j)] - self.m[(j, i)].conj()).norm() <= rel_tol * scale)
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.m[(i, i)].re).sum()
    }

    pub fn eigh(&self) -> Eigh {
        let se = SymmetricEigen::new(self.m.clone());
        let n = self.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
        let values = order.iter().map(|&k| se.eigenvalues[k]).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| se.eigenvectors[(r, order[c])]);
        Eigh { values, vectors }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(self.m.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// exp(−i·2π·H·dt) with the trace part dropped (a global phase).
    ///
    /// Also returns the largest per-step phase 2π·max|λ|·dt of the traceless
    /// operator, which callers use to judge step size.
    pub fn propagator(&self, dt: f64) -> (CMatrix, f64) {
        let n = self.dim();
        let shift = self.trace() / n as f64;
        let e = self.eigh();
        let mut max_phase = 0.0f64;
        let phases: Vec<Complex64> = e
            .values
            .iter()
            .map(|&l| {
                let ph = TAU * (l - shift) * dt;
                max_phase = max_phase.max(ph.abs());
                Complex64::from_polar(1.0, -ph)
            })
            .collect();
        let mut scaled = e.vectors.clone();
        for (c, p) in phases.iter().enumerate() {
            for r in 0..n {
                scaled[(r, c)] *= p;
            }
        }
        (scaled * e.vectors.adjoint(), max_phase)
    }
}
