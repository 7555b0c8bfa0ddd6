//! Periodic 2D transforms on torus grids (row-major, index i·n2 + j).

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::field::GridSpec;

#[derive(Clone)]
pub(crate) struct Fft2 {
    n1: usize,
    n2: usize,
    fwd1: Arc<dyn Fft<f64>>,
    inv1: Arc<dyn Fft<f64>>,
    fwd2: Arc<dyn Fft<f64>>,
    inv2: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.n1, self.n2)
    }
}

impl Fft2 {
    pub fn new(n1: usize, n2: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            n1,
            n2,
            fwd1: p.plan_fft_forward(n1),
            inv1: p.plan_fft_inverse(n1),
            fwd2: p.plan_fft_forward(n2),
            inv2: p.plan_fft_inverse(n2),
        }
    }

    fn apply(&self, data: &mut [Complex64], along1: &Arc<dyn Fft<f64>>, along2: &Arc<dyn Fft<f64>>) {
        let (n1, n2) = (self.n1, self.n2);
        data.par_chunks_mut(n2).for_each(|row| along2.process(row));
        let mut t = vec![Complex64::default(); n1 * n2];
        t.par_chunks_mut(n1).enumerate().for_each(|(j, col)| {
            for i in 0..n1 {
                col[i] = data[i * n2 + j];
            }
            along1.process(col);
        });
        data.par_chunks_mut(n2).enumerate().for_each(|(i, row)| {
            for j in 0..n2 {
                row[j] = t[j * n1 + i];
            }
        });
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.fwd1, &self.fwd2);
    }

    /// Normalized inverse.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.inv1, &self.inv2);
        let s = 1.0 / (self.n1 * self.n2) as f64;
        data.par_iter_mut().for_each(|z| *z *= s);
    }
}

/// Symbol of the 5-point −Δ on a torus grid.
pub(crate) fn laplacian_symbol(g: &GridSpec) -> Vec<f64> {
    let (h1, h2) = g.spacing();
    let s1: Vec<f64> =
        (0..g.n1).map(|k| (2.0 - 2.0 * (std::f64::consts::TAU * k as f64 / g.n1 as f64).cos()) / (h1 * h1)).collect();
    let s2: Vec<f64> =
        (0..g.n2).map(|k| (2.0 - 2.0 * (std::f64::consts::TAU * k as f64 / g.n2 as f64).cos()) / (h2 * h2)).collect();
    let mut out = Vec::with_capacity(g.len());
    for a in &s1 {
        for b in &s2 {
            out.push(a + b);
        }
    }
    out
}
