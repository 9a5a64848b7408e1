//! Field coefficients frozen at a given time, and tables of them sampled on
//! the half-step grid so the integrators never re-evaluate envelopes.

use num_complex::Complex64 as C64;
use smallvec::SmallVec;

use crate::envelope::{FieldState, TAIL_EPS};
use crate::grid::TimeGrid;

/// Envelope values at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Drive {
    /// `[ξ(t)]` for a photon combination, `[α_0(t), α_1(t), …]` for a mixture.
    pub amps: SmallVec<[C64; 2]>,
    /// False once the single-photon tail integral has dropped below `TAIL_EPS`.
    pub live: bool,
}

impl Drive {
    pub fn at(fs: &FieldState, t: f64) -> Drive {
        match fs {
            FieldState::PhotonCombo { xi, .. } => Drive {
                amps: smallvec::smallvec![xi.value(t)],
                live: xi.tail_integral(t) >= TAIL_EPS,
            },
            FieldState::CoherentMixture { alphas, .. } => Drive {
                amps: alphas.iter().map(|a| a.value(t)).collect(),
                live: true,
            },
        }
    }

    #[inline]
    pub fn xi(&self) -> C64 {
        self.amps[0]
    }

    pub(crate) fn scaled(&self, factor: f64) -> Drive {
        Drive {
            amps: self.amps.iter().map(|a| a * factor).collect(),
            live: self.live,
        }
    }
}

/// Drives at `t = j·dt/2`, `j = 0..=2·n_steps`.
#[derive(Clone, Debug)]
pub struct DriveTable {
    grid: TimeGrid,
    samples: Vec<Drive>,
}

impl DriveTable {
    pub fn new(fs: &FieldState, grid: TimeGrid) -> Self {
        let h = 0.5 * grid.dt();
        let samples = (0..=2 * grid.n_steps()).map(|j| Drive::at(fs, j as f64 * h)).collect();
        DriveTable { grid, samples }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Drives at the start, midpoint and end of step `n`.
    #[inline]
    pub fn step(&self, n: usize) -> [&Drive; 3] {
        [&self.samples[2 * n], &self.samples[2 * n + 1], &self.samples[2 * n + 2]]
    }

    #[inline]
    pub fn node(&self, n: usize) -> &Drive {
        &self.samples[2 * n]
    }

    /// Every amplitude multiplied by `factor` (used to corrupt a run on purpose).
    pub fn scaled(&self, factor: f64) -> Self {
        DriveTable {
            grid: self.grid,
            samples: self.samples.iter().map(|d| d.scaled(factor)).collect(),
        }
    }
}
