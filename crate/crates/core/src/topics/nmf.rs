//! Multiplicative-update NMF (Frobenius loss) over a sparse nonnegative matrix.
//!
//! Both updates carry the same small constant in numerator and denominator,
//! `H <- H * (W^T M + eps) / (W^T W H + eps)`, which keeps the auxiliary-function
//! bound valid so the objective stays non-increasing.

use super::{PpmiMatrix, TopicModel};
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

pub const DEFAULT_RANK: usize = 40;
pub const DEFAULT_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-5;

const UPDATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfConfig {
    pub rank: usize,
    pub iters: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            iters: DEFAULT_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfReport {
    pub iterations: usize,
    /// `||M - WH||_F` at initialisation and after every iteration.
    pub objectives: Vec<f64>,
    pub relative_error: f64,
}

/// Stepwise solver; exposes the factors between iterations.
pub struct NmfSolver<'m> {
    m: &'m PpmiMatrix,
    w: Tensor,
    h: Tensor,
    m_sq: f64,
}

impl<'m> NmfSolver<'m> {
    pub fn new(m: &'m PpmiMatrix, rank: usize, seed: u64) -> Result<Self> {
        let n = m.dim();
        if rank == 0 || rank > n {
            return Err(Error::Config(format!(
                "NMF rank must be in 1..={n} (content vocabulary size), got {rank}"
            )));
        }
        let mut rng = SeededRng::new(seed);
        // uniform in (0, 1]
        let mut init = |r, c| {
            let data = (0..r * c).map(|_| 1.0 - rng.uniform()).collect();
            Tensor::new(vec![r, c], data).unwrap()
        };
        let w = init(n, rank);
        let h = init(rank, n);
        Ok(Self {
            m,
            w,
            h,
            m_sq: m.squared_norm(),
        })
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn h(&self) -> &Tensor {
        &self.h
    }

    /// `||M - WH||_F`, evaluated without densifying `M`.
    pub fn objective(&self) -> f64 {
        let wtw = self.w.transpose().matmul(&self.w).unwrap();
        let hht = self.h.matmul(&self.h.transpose()).unwrap();
        let approx_sq: f64 = wtw.data().iter().zip(hht.data()).map(|(a, b)| a * b).sum();
        let p = self.w.cols();
        let mut cross = 0.0;
        for i in 0..self.m.dim() {
            let wi = self.w.row_slice(i);
            for &(j, v) in self.m.row(i) {
                let wh: f64 = (0..p).map(|k| wi[k] * self.h.get(k, j)).sum();
                cross += v * wh;
            }
        }
        (self.m_sq - 2.0 * cross + approx_sq).max(0.0).sqrt()
    }

    /// One H update followed by one W update.
    pub fn step(&mut self) {
        let n = self.m.dim();
        let p = self.w.cols();

        // H <- H * (W^T M) / (W^T W H)
        let mut mtw = Tensor::zeros(n, p); // (M^T W), i.e. (W^T M)^T
        for i in 0..n {
            let wi = self.w.row_slice(i).to_vec();
            for &(j, v) in self.m.row(i) {
                let dst = &mut mtw.data_mut()[j * p..(j + 1) * p];
                for (d, w) in dst.iter_mut().zip(&wi) {
                    *d += v * w;
                }
            }
        }
        let wtw = self.w.transpose().matmul(&self.w).unwrap();
        let wtwh = wtw.matmul(&self.h).unwrap();
        for k in 0..p {
            for j in 0..n {
                let num = mtw.get(j, k) + UPDATE_EPS;
                let den = wtwh.get(k, j) + UPDATE_EPS;
                let cur = self.h.get(k, j);
                self.h.set(k, j, cur * num / den);
            }
        }

        // W <- W * (M H^T) / (W H H^T)
        let ht = self.h.transpose();
        let mut mht = Tensor::zeros(n, p);
        for i in 0..n {
            let dst_row: Vec<f64> = {
                let mut acc = vec![0.0; p];
                for &(j, v) in self.m.row(i) {
                    for (a, h) in acc.iter_mut().zip(ht.row_slice(j)) {
                        *a += v * h;
                    }
                }
                acc
            };
            mht.data_mut()[i * p..(i + 1) * p].copy_from_slice(&dst_row);
        }
        let hht = self.h.matmul(&ht).unwrap();
        let whht = self.w.matmul(&hht).unwrap();
        for (k, w) in self.w.data_mut().iter_mut().enumerate() {
            *w *= (mht.data()[k] + UPDATE_EPS) / (whht.data()[k] + UPDATE_EPS);
        }
    }

    pub fn into_factors(self) -> (Tensor, Tensor) {
        (self.w, self.h)
    }
}

/// Factorizes `M ~ W H` with `W` of shape `|V_w| x rank`.
pub fn nmf_factorize(m: &PpmiMatrix, cfg: &NmfConfig) -> Result<(TopicModel, NmfReport)> {
    let mut solver = NmfSolver::new(m, cfg.rank, cfg.seed)?;
    let mut objectives = vec![solver.objective()];
    let mut iterations = 0;
    while iterations < cfg.iters {
        solver.step();
        iterations += 1;
        let cur = solver.objective();
        let prev = *objectives.last().unwrap();
        objectives.push(cur);
        if prev <= 0.0 || (prev - cur) / prev < cfg.tol {
            break;
        }
    }
    let norm = m.squared_norm().sqrt();
    let last = *objectives.last().unwrap();
    let relative_error = if norm > 0.0 { last / norm } else { 0.0 };
    let (w, h) = solver.into_factors();
    let model = TopicModel::new(m.words().to_vec(), w, h)?;
    Ok((
        model,
        NmfReport {
            iterations,
            objectives,
            relative_error,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_objective(m: &Tensor, w: &Tensor, h: &Tensor) -> f64 {
        let wh = w.matmul(h).unwrap();
        m.data()
            .iter()
            .zip(wh.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn sparse_from_dense(t: &Tensor) -> PpmiMatrix {
        let n = t.rows();
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| t.get(i, j) > 0.0)
                    .map(|j| (j, t.get(i, j)))
                    .collect()
            })
            .collect();
        PpmiMatrix::from_parts((0..n).map(|i| format!("w{i}")).collect(), rows).unwrap()
    }

    #[test]
    fn objective_matches_dense_recomputation() {
        let mut rng = SeededRng::new(8);
        let dense = Tensor::new(vec![6, 6], (0..36).map(|_| rng.uniform()).collect()).unwrap();
        let m = sparse_from_dense(&dense);
        let mut s = NmfSolver::new(&m, 2, 1).unwrap();
        for _ in 0..5 {
            s.step();
            let d = dense_objective(&dense, s.w(), s.h());
            assert!((s.objective() - d).abs() < 1e-9 * (1.0 + d));
        }
    }

    #[test]
    fn all_zero_matrix_drives_product_to_zero() {
        let m = PpmiMatrix::from_parts(vec!["a".into(), "b".into(), "c".into()], vec![vec![]; 3]).unwrap();
        let cfg = NmfConfig {
            rank: 2,
            iters: 200,
            tol: 0.0,
            seed: 3,
        };
        let (model, report) = nmf_factorize(&m, &cfg).unwrap();
        assert!(report.objectives.last().unwrap() < &1e-6);
        let wh = model.w().matmul(model.h()).unwrap();
        assert!(wh.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn rank_above_dimension_is_config_error() {
        let m = PpmiMatrix::from_parts(vec!["a".into()], vec![vec![]]).unwrap();
        assert!(matches!(NmfSolver::new(&m, 2, 0), Err(Error::Config(_))));
        assert!(matches!(NmfSolver::new(&m, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn factors_stay_nonnegative() {
        let mut rng = SeededRng::new(21);
        let dense = Tensor::new(vec![10, 10], (0..100).map(|_| rng.uniform()).collect()).unwrap();
        let m = sparse_from_dense(&dense);
        let mut s = NmfSolver::new(&m, 3, 2).unwrap();
        for _ in 0..50 {
            s.step();
            assert!(s.w().data().iter().chain(s.h().data()).all(|&v| v >= 0.0));
        }
    }
}
