use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_n = n·dt`, `n = 0..=n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Smallest grid with step `dt` reaching `horizon`.
    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!("T must be positive, got {horizon}")));
        }
        let n_steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
        Ok(TimeGrid { dt, n_steps })
    }

    pub fn with_steps(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || n_steps == 0 {
            return Err(Error::InvalidGrid(format!("need dt > 0 and at least one step (dt={dt}, n={n_steps})")));
        }
        Ok(TimeGrid { dt, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|n| self.time(n))
    }

    /// Same horizon at half the step.
    pub fn refined(&self) -> Self {
        TimeGrid {
            dt: 0.5 * self.dt,
            n_steps: 2 * self.n_steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_horizon() {
        let g = TimeGrid::new(1e-3, 12.0).unwrap();
        assert_eq!(g.n_steps(), 12000);
        assert!((g.horizon() - 12.0).abs() < 1e-9);
        let g = TimeGrid::new(0.3, 1.0).unwrap();
        assert_eq!(g.n_steps(), 4);
        assert!(g.horizon() >= 1.0);
        assert_eq!(g.times().count(), 5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TimeGrid::new(0.0, 1.0).is_err());
        assert!(TimeGrid::new(1e-3, -1.0).is_err());
        assert!(TimeGrid::new(f64::NAN, 1.0).is_err());
        assert!(TimeGrid::with_steps(0.1, 0).is_err());
    }

    #[test]
    fn refinement_keeps_nodes() {
        let g = TimeGrid::new(0.01, 2.0).unwrap();
        let f = g.refined();
        assert_eq!(f.n_steps(), 2 * g.n_steps());
        assert_eq!(f.time(2 * 37), g.time(37));
    }
}
