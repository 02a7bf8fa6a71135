//! Convolution quadrature for the memory integral and the per-level history
//! of cached memory data.
//!
//! The memory integral at `t_n` is approximated by
//! `dt * sum_{i=1..n} w_{ni} B(U^i, v)` with right-rectangle weights
//! `w_{ni} = K(t_n - t_i)`. The rule is fully implicit: `w_{nn} = K(0)` must not vanish.

use thiserror::Error;

use crate::problem::Kernel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("kernel vanishes at zero, so the current level drops out of the memory sum")]
    VanishingDiagonalWeight,
    #[error("kernel value at t = {t} is not finite")]
    NonFiniteWeight { t: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("step index must be at least 1")]
    ZeroStep,
    #[error("history has no entry for level {index}")]
    MissingEntry { index: usize },
    #[error("history entry {index} written out of order (expected level {expected})")]
    OutOfOrder { index: usize, expected: usize },
    #[error("history entry has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Quadrature weight rule for the memory integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightRule {
    /// `w_{ni} = K(t_n - t_i)`.
    #[default]
    RightRectangle,
}

/// Memory quadrature weights for a fixed kernel and time step.
#[derive(Clone)]
pub struct MemoryWeights {
    rule: WeightRule,
    kernel: Kernel,
    dt: f64,
    bound: f64,
}

impl std::fmt::Debug for MemoryWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryWeights")
            .field("rule", &self.rule)
            .field("dt", &self.dt)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl MemoryWeights {
    pub fn new(kernel: Kernel, dt: f64) -> Result<Self, MemoryError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(MemoryError::InvalidStep(dt));
        }
        let k0 = kernel(0.0);
        if !k0.is_finite() {
            return Err(MemoryError::NonFiniteWeight { t: 0.0 });
        }
        if k0 == 0.0 {
            return Err(MemoryError::VanishingDiagonalWeight);
        }
        Ok(Self { rule: WeightRule::RightRectangle, kernel, dt, bound: k0.abs() })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn rule(&self) -> WeightRule {
        self.rule
    }

    /// Largest `|w_{ni}|` handed out so far (the running weight bound `K_1`).
    pub fn observed_bound(&self) -> f64 {
        self.bound
    }

    /// Weights `w_{n1}, ..., w_{nn}` for step `n`.
    pub fn weights_for_step(&mut self, n: usize) -> Result<Vec<f64>, MemoryError> {
        if n == 0 {
            return Err(MemoryError::ZeroStep);
        }
        let mut w = Vec::with_capacity(n);
        for i in 1..=n {
            let lag = (n - i) as f64 * self.dt;
            let k = match self.rule {
                WeightRule::RightRectangle => (self.kernel)(lag),
            };
            if !k.is_finite() {
                return Err(MemoryError::NonFiniteWeight { t: lag });
            }
            self.bound = self.bound.max(k.abs());
            w.push(k);
        }
        if w[n - 1] == 0.0 {
            return Err(MemoryError::VanishingDiagonalWeight);
        }
        Ok(w)
    }
}

/// What a history stores per level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryMode {
    /// Assembled memory vectors on the fine grid, one per level.
    FineHistory,
    /// Coarse-grid data only; the fine grid keeps nothing but the latest solution.
    CoarseOnly,
}

/// Append-only per-level store of memory data. Entry `i` holds level `i`
/// (levels start at 1) and never changes once written.
#[derive(Debug, Clone)]
pub struct MemoryHistory {
    mode: HistoryMode,
    dim: usize,
    entries: Vec<Vec<f64>>,
    peak_bytes: usize,
}

impl MemoryHistory {
    pub fn new(mode: HistoryMode, dim: usize) -> Self {
        Self { mode, dim, entries: Vec::new(), peak_bytes: 0 }
    }

    pub fn mode(&self) -> HistoryMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bytes currently held by entries.
    pub fn bytes(&self) -> usize {
        self.entries.len() * self.dim * std::mem::size_of::<f64>()
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    pub fn entry(&self, level: usize) -> Result<&[f64], MemoryError> {
        level
            .checked_sub(1)
            .and_then(|i| self.entries.get(i))
            .map(Vec::as_slice)
            .ok_or(MemoryError::MissingEntry { index: level })
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }

    /// Appends the entry for `level`, which must be the next level.
    pub fn push(&mut self, level: usize, entry: Vec<f64>) -> Result<(), MemoryError> {
        let expected = self.entries.len() + 1;
        if level != expected {
            return Err(MemoryError::OutOfOrder { index: level, expected });
        }
        if entry.len() != self.dim {
            return Err(MemoryError::LengthMismatch { expected: self.dim, got: entry.len() });
        }
        self.entries.push(entry);
        self.peak_bytes = self.peak_bytes.max(self.bytes());
        Ok(())
    }

    /// `dt * sum_{i=1..upto} weights[i-1] * entry_i`, a pure linear combination
    /// of cached vectors.
    pub fn accumulate_memory(&self, weights: &[f64], upto: usize, dt: f64) -> Result<Vec<f64>, MemoryError> {
        let mut out = vec![0.0; self.dim];
        for level in 1..=upto {
            let e = self.entry(level)?;
            let c = dt * weights[level - 1];
            for (o, x) in out.iter_mut().zip(e) {
                *o += c * x;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn exp_kernel() -> Kernel {
        Arc::new(|t: f64| (-t).exp())
    }

    #[test]
    fn diagonal_weight_is_kernel_at_zero() {
        let mut mw = MemoryWeights::new(exp_kernel(), 0.1).unwrap();
        for n in 1..6 {
            assert_eq!(*mw.weights_for_step(n).unwrap().last().unwrap(), 1.0);
        }
        assert_eq!(mw.observed_bound(), 1.0);
    }

    #[test]
    fn two_step_weights() {
        let mut mw = MemoryWeights::new(exp_kernel(), 0.25).unwrap();
        let w = mw.weights_for_step(2).unwrap();
        assert_eq!(w, vec![(-0.25f64).exp(), 1.0]);
        assert_eq!(mw.weights_for_step(0), Err(MemoryError::ZeroStep));
    }

    #[test]
    fn rejects_kernel_vanishing_at_zero() {
        let k: Kernel = Arc::new(|t: f64| t * (-t).exp());
        assert_eq!(MemoryWeights::new(k, 0.1).unwrap_err(), MemoryError::VanishingDiagonalWeight);
        assert!(matches!(MemoryWeights::new(exp_kernel(), 0.0), Err(MemoryError::InvalidStep(_))));
    }

    #[test]
    fn accumulate_edge_cases() {
        let mut h = MemoryHistory::new(HistoryMode::FineHistory, 3);
        assert_eq!(h.accumulate_memory(&[], 0, 0.5).unwrap(), vec![0.0; 3]);
        h.push(1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(h.accumulate_memory(&[1.0], 1, 1.0).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(h.accumulate_memory(&[1.0, 1.0], 2, 1.0), Err(MemoryError::MissingEntry { index: 2 }));
        assert_eq!(h.push(3, vec![0.0; 3]), Err(MemoryError::OutOfOrder { index: 3, expected: 2 }));
        assert_eq!(h.push(2, vec![0.0; 2]), Err(MemoryError::LengthMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn accumulate_three_levels() {
        let dt = 0.5;
        let mut mw = MemoryWeights::new(exp_kernel(), dt).unwrap();
        let mut h = MemoryHistory::new(HistoryMode::FineHistory, 4);
        for level in 1..=3 {
            h.push(level, vec![1.0; 4]).unwrap();
        }
        let w = mw.weights_for_step(3).unwrap();
        let got = h.accumulate_memory(&w, 3, dt).unwrap();
        let expected = dt * ((-1.0f64).exp() + (-0.5f64).exp() + 1.0);
        assert!(got.iter().all(|&x| (x - expected).abs() < 1e-15));
        assert_eq!(h.bytes(), 3 * 4 * 8);
        assert_eq!(h.peak_bytes(), h.bytes());
    }
}
