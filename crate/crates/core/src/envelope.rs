//! Temporal profiles of the input field and the field-state descriptions
//! built from them.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Tail integrals below this are treated as zero: λ(t) is clamped to 0 and
/// the auxiliary filter matrices are dropped.
pub const TAIL_EPS: f64 = 1e-12;

/// Gaussian pulses are normalized by quadrature over `[0, t_c + NORM_SPAN/Ω]`.
const NORM_SPAN: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeMode {
    /// Single-photon envelope, `∫₀^∞|ξ|² = 1`.
    UnitNorm,
    /// Coherent amplitude `(2Ω²/π)^¼ exp[−Ω²(t−t_c)²/4]`, carrying two photons on the full line.
    Coherent,
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Gaussian {
        omega: f64,
        t_c: f64,
        mode: AmplitudeMode,
        peak: f64,
    },
    Tabulated {
        grid: Vec<f64>,
        values: Vec<C64>,
        // tail[i] = ∫_{grid[i]}^∞ |ξ|²
        tail: Vec<f64>,
    },
}

/// Time profile ξ(t) or α(t).
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    shape: Shape,
    norm: f64,
}

impl Envelope {
    pub fn gaussian(omega: f64, t_c: f64, mode: AmplitudeMode) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidEnvelope(format!("Ω must be positive, got {omega}")));
        }
        if !t_c.is_finite() {
            return Err(Error::InvalidEnvelope("t_c must be finite".into()));
        }
        let peak = match mode {
            AmplitudeMode::Coherent => (2.0 * omega * omega / PI).powf(0.25),
            AmplitudeMode::UnitNorm => {
                let base = (omega * omega / (2.0 * PI)).powf(0.25);
                let upper = (t_c + NORM_SPAN / omega).max(0.0);
                let norm_sq = (omega * omega / (2.0 * PI)).sqrt()
                    * quadrature::integrate(
                        |s| (-0.5 * omega * omega * (s - t_c).powi(2)).exp(),
                        0.0,
                        upper,
                        1e-15,
                    );
                if norm_sq <= 0.0 {
                    return Err(Error::InvalidEnvelope(
                        "pulse has no weight on t ≥ 0".into(),
                    ));
                }
                base / norm_sq.sqrt()
            }
        };
        let mut env = Envelope {
            shape: Shape::Gaussian {
                omega,
                t_c,
                mode,
                peak,
            },
            norm: 0.0,
        };
        env.norm = env.tail_integral(0.0);
        Ok(env)
    }

    /// Piecewise-linear profile through `(grid[i], values[i])`, zero outside the grid.
    pub fn tabulated(grid: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::InvalidEnvelope(format!(
                "grid has {} points but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        if grid[0] < 0.0 || grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidEnvelope("grid must be finite and start at t ≥ 0".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidEnvelope("grid must be strictly increasing".into()));
        }
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidEnvelope("values must be finite".into()));
        }
        let n = grid.len();
        let mut tail = vec![0.0; n];
        for i in (0..n.saturating_sub(1)).rev() {
            tail[i] = tail[i + 1] + segment_tail(grid[i + 1] - grid[i], values[i], values[i + 1], 0.0);
        }
        let norm = tail[0];
        Ok(Envelope {
            shape: Shape::Tabulated { grid, values, tail },
            norm,
        })
    }

    /// Same profile rescaled to `∫₀^∞|ξ|² = 1`.
    pub fn normalized(&self) -> Result<Self> {
        if self.norm <= 0.0 {
            return Err(Error::InvalidEnvelope("cannot normalize a zero envelope".into()));
        }
        match &self.shape {
            Shape::Gaussian { omega, t_c, .. } => Self::gaussian(*omega, *t_c, AmplitudeMode::UnitNorm),
            Shape::Tabulated { grid, values, .. } => {
                let s = 1.0 / self.norm.sqrt();
                Self::tabulated(grid.clone(), values.iter().map(|z| z * s).collect())
            }
        }
    }

    /// `∫₀^∞|ξ|²`, computed at construction.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_unit_norm(&self) -> bool {
        (self.norm - 1.0).abs() <= 1e-6
    }

    /// Latest time at which the profile carries weight (∞ for Gaussians).
    pub fn support_end(&self) -> f64 {
        match &self.shape {
            Shape::Gaussian { .. } => f64::INFINITY,
            Shape::Tabulated { grid, .. } => *grid.last().unwrap(),
        }
    }

    /// Centre and width of a Gaussian profile.
    pub fn gaussian_params(&self) -> Option<(f64, f64, AmplitudeMode)> {
        match &self.shape {
            Shape::Gaussian { omega, t_c, mode, .. } => Some((*omega, *t_c, *mode)),
            Shape::Tabulated { .. } => None,
        }
    }

    pub fn tabulated_points(&self) -> Option<(&[f64], &[C64])> {
        match &self.shape {
            Shape::Tabulated { grid, values, .. } => Some((grid, values)),
            Shape::Gaussian { .. } => None,
        }
    }

    /// ξ(t) or α(t).
    pub fn eval(&self, t: f64) -> Result<C64> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        Ok(self.value(t))
    }

    /// Unchecked evaluation; negative times give the formula value.
    #[inline]
    pub(crate) fn value(&self, t: f64) -> C64 {
        match &self.shape {
            Shape::Gaussian {
                omega, t_c, peak, ..
            } => {
                let x = t - t_c;
                C64::from(peak * (-0.25 * omega * omega * x * x).exp())
            }
            Shape::Tabulated { grid, values, .. } => match locate(grid, t) {
                Some((i, u)) => values[i] + (values[i + 1] - values[i]) * u,
                None if t == grid[grid.len() - 1] => values[values.len() - 1],
                None => C64::new(0.0, 0.0),
            },
        }
    }

    /// `∫_t^∞|ξ(s)|² ds`.
    pub fn tail_integral(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match &self.shape {
            Shape::Gaussian {
                omega, t_c, peak, ..
            } => {
                // ∫_t^∞ exp(−Ω²(s−t_c)²/2) ds = √(π/2)/Ω · erfc(Ω(t−t_c)/√2)
                let z = omega * (t - t_c) / std::f64::consts::SQRT_2;
                peak * peak * (PI / 2.0).sqrt() / omega * libm::erfc(z)
            }
            Shape::Tabulated { grid, values, tail } => {
                if t <= grid[0] {
                    return tail[0];
                }
                match locate(grid, t) {
                    Some((i, u)) => {
                        tail[i + 1] + segment_tail(grid[i + 1] - grid[i], values[i], values[i + 1], u)
                    }
                    None => 0.0,
                }
            }
        }
    }

    /// `λ(t) = ξ(t)/√(∫_t^∞|ξ|²)`, zero where ξ vanishes or the tail is below `eps`.
    pub fn lambda_coupling(&self, t: f64, eps: f64) -> C64 {
        let xi = self.value(t.max(0.0));
        let tail = self.tail_integral(t);
        if xi.norm() == 0.0 || tail < eps {
            return C64::new(0.0, 0.0);
        }
        xi / tail.sqrt()
    }
}

/// Segment index and fractional position, `None` outside `[grid[0], grid[last])`.
fn locate(grid: &[f64], t: f64) -> Option<(usize, f64)> {
    if grid.len() < 2 || t < grid[0] || t >= grid[grid.len() - 1] {
        return None;
    }
    let i = grid.partition_point(|&g| g <= t) - 1;
    Some((i, (t - grid[i]) / (grid[i + 1] - grid[i])))
}

/// `∫_{u0}^1 |a + (b−a)u|² du · h` for the linear interpolant on one segment.
fn segment_tail(h: f64, a: C64, b: C64, u0: f64) -> f64 {
    let d = b - a;
    let cross = (a.conj() * d).re;
    h * (a.norm_sqr() * (1.0 - u0)
        + cross * (1.0 - u0 * u0)
        + d.norm_sqr() * (1.0 - u0 * u0 * u0) / 3.0)
}

/// 2×2 coefficient matrix of the vacuum/single-photon combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaMatrix {
    pub g00: f64,
    pub g11: f64,
    /// γ₀₁; γ₁₀ is its conjugate.
    pub g01: C64,
}

impl GammaMatrix {
    pub fn new(g00: f64, g11: f64, g01: C64) -> Result<Self> {
        let g = GammaMatrix { g00, g11, g01 };
        g.validate()?;
        Ok(g)
    }

    pub fn vacuum() -> Self {
        GammaMatrix {
            g00: 1.0,
            g11: 0.0,
            g01: C64::new(0.0, 0.0),
        }
    }

    pub fn single_photon() -> Self {
        GammaMatrix {
            g00: 0.0,
            g11: 1.0,
            g01: C64::new(0.0, 0.0),
        }
    }

    pub fn g10(&self) -> C64 {
        self.g01.conj()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.g00.is_finite() && self.g11.is_finite() && self.g01.re.is_finite() && self.g01.im.is_finite();
        if !finite {
            return Err(Error::InvalidField("γ has non-finite entries".into()));
        }
        if self.g00 < 0.0 || self.g11 < 0.0 {
            return Err(Error::InvalidField("γ₀₀ and γ₁₁ must be non-negative".into()));
        }
        if (self.g00 + self.g11 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidField(format!(
                "γ₀₀ + γ₁₁ must equal 1, got {}",
                self.g00 + self.g11
            )));
        }
        let det = self.g00 * self.g11 - self.g01.norm_sqr();
        if det < -1e-12 {
            return Err(Error::InvalidField(format!(
                "γ is not positive semidefinite (γ₀₀γ₁₁ − |γ₀₁|² = {det:e})"
            )));
        }
        Ok(())
    }
}

/// State of the input field.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldState {
    /// `γ₀₀|vac⟩⟨vac| + γ₀₁|1_ξ⟩⟨vac| + γ₁₀|vac⟩⟨1_ξ| + γ₁₁|1_ξ⟩⟨1_ξ|`
    PhotonCombo { gamma: GammaMatrix, xi: Envelope },
    /// `Σ_i w_i |α_i⟩⟨α_i|`
    CoherentMixture { weights: Vec<f64>, alphas: Vec<Envelope> },
}

impl FieldState {
    pub fn photon_combo(gamma: GammaMatrix, xi: Envelope) -> Result<Self> {
        gamma.validate()?;
        if !xi.is_unit_norm() {
            return Err(Error::InvalidField(format!(
                "single-photon envelope must be unit norm, ∫|ξ|² = {}",
                xi.norm()
            )));
        }
        Ok(FieldState::PhotonCombo { gamma, xi })
    }

    pub fn coherent_mixture(weights: Vec<f64>, alphas: Vec<Envelope>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidField("coherent mixture needs at least one component".into()));
        }
        if weights.len() != alphas.len() {
            return Err(Error::InvalidField(format!(
                "{} weights for {} amplitudes",
                weights.len(),
                alphas.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidField("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidField(format!("weights must sum to 1, got {total}")));
        }
        Ok(FieldState::CoherentMixture { weights, alphas })
    }

    pub fn components(&self) -> usize {
        match self {
            FieldState::PhotonCombo { .. } => 1,
            FieldState::CoherentMixture { weights, .. } => weights.len(),
        }
    }

    /// Mean input photon flux: `γ₁₁|ξ(t)|²` or `Σ_i w_i|α_i(t)|²`.
    pub fn photon_flux(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        Ok(match self {
            FieldState::PhotonCombo { gamma, xi } => gamma.g11 * xi.value(t).norm_sqr(),
            FieldState::CoherentMixture { weights, alphas } => weights
                .iter()
                .zip(alphas)
                .map(|(w, a)| w * a.value(t).norm_sqr())
                .sum(),
        })
    }

    /// Time after which every envelope has (numerically) passed.
    pub fn pulse_end(&self) -> f64 {
        let end = |e: &Envelope| match e.gaussian_params() {
            Some((omega, t_c, _)) => t_c + 9.0 / omega,
            None => e.support_end(),
        };
        match self {
            FieldState::PhotonCombo { xi, .. } => end(xi),
            FieldState::CoherentMixture { alphas, .. } => alphas.iter().map(end).fold(0.0, f64::max),
        }
    }
}
