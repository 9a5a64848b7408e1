//! Unconditional reduced dynamics driven by a non-classical input field.
//!
//! A photon combination is carried either as the Fock-block family
//! `(ρ⁰⁰, ρ⁰¹, ρ¹⁰, ρ¹¹)` or in cascade form `(ρ_S, ρ⁻, ρ⁺, ρ∓)`; a coherent
//! mixture as one matrix per component, each started at `w_i ρ(0)` so that
//! the physical state is their plain sum.

use num_complex::Complex64 as C64;

use crate::drive::{Drive, DriveTable};
use crate::envelope::{Envelope, FieldState, GammaMatrix};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::operator::{Operator, SystemModel};

pub const FOCK_00: usize = 0;
pub const FOCK_01: usize = 1;
pub const FOCK_10: usize = 2;
pub const FOCK_11: usize = 3;

pub const RHO_S: usize = 0;
pub const RHO_MINUS: usize = 1;
pub const RHO_PLUS: usize = 2;
pub const RHO_MP: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Fock,
    Cascade,
    Mixture,
}

/// Family of d×d matrices evolved jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyState {
    layout: Layout,
    mats: Vec<Operator>,
}

/// Vector-space operations needed by the fixed-step integrators.
pub trait OdeState: Clone {
    /// `self += a·x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn is_finite(&self) -> bool;
}

impl OdeState for Operator {
    fn axpy(&mut self, a: f64, x: &Self) {
        Operator::axpy(self, C64::from(a), x);
    }

    fn is_finite(&self) -> bool {
        Operator::is_finite(self)
    }
}

impl OdeState for HierarchyState {
    fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.mats.len(), x.mats.len());
        let a = C64::from(a);
        for (y, v) in self.mats.iter_mut().zip(&x.mats) {
            y.axpy(a, v);
        }
    }

    fn is_finite(&self) -> bool {
        self.mats.iter().all(Operator::is_finite)
    }
}

impl HierarchyState {
    pub fn new(layout: Layout, mats: Vec<Operator>) -> Result<Self> {
        let Some(first) = mats.first() else {
            return Err(Error::VariantMismatch("empty hierarchy".into()));
        };
        let d = first.dim();
        if let Some(bad) = mats.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.dim(),
            });
        }
        if matches!(layout, Layout::Fock | Layout::Cascade) && mats.len() != 4 {
            return Err(Error::VariantMismatch(format!(
                "{layout:?} layout needs 4 matrices, got {}",
                mats.len()
            )));
        }
        Ok(HierarchyState { layout, mats })
    }

    /// `ρ⁰⁰ = ρ¹¹ = ρ(0)`, `ρ⁰¹ = ρ¹⁰ = 0`.
    pub fn fock_initial(rho0: &Operator) -> Self {
        let z = Operator::zeros(rho0.dim());
        HierarchyState {
            layout: Layout::Fock,
            mats: vec![rho0.clone(), z.clone(), z, rho0.clone()],
        }
    }

    /// `(ρ(0), γ₀₁ρ(0), γ₁₀ρ(0), γ₁₁ρ(0))`.
    pub fn cascade_initial(rho0: &Operator, gamma: &GammaMatrix) -> Self {
        HierarchyState {
            layout: Layout::Cascade,
            mats: vec![
                rho0.clone(),
                rho0.scale(gamma.g01),
                rho0.scale(gamma.g10()),
                rho0.scale(C64::from(gamma.g11)),
            ],
        }
    }

    /// `ρ^{ii}(0) = w_i ρ(0)`.
    pub fn mixture_initial(rho0: &Operator, weights: &[f64]) -> Self {
        HierarchyState {
            layout: Layout::Mixture,
            mats: weights.iter().map(|&w| rho0.scale(C64::from(w))).collect(),
        }
    }

    /// Cascade form for a photon combination, component form for a mixture.
    pub fn initial(fs: &FieldState, rho0: &Operator) -> Self {
        match fs {
            FieldState::PhotonCombo { gamma, .. } => Self::cascade_initial(rho0, gamma),
            FieldState::CoherentMixture { weights, .. } => Self::mixture_initial(rho0, weights),
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.mats[0].dim()
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn matrices(&self) -> &[Operator] {
        &self.mats
    }

    pub fn matrices_mut(&mut self) -> &mut [Operator] {
        &mut self.mats
    }

    pub fn labels(&self) -> Vec<String> {
        match self.layout {
            Layout::Fock => ["rho00", "rho01", "rho10", "rho11"].map(String::from).to_vec(),
            Layout::Cascade => ["rho_S", "rho_minus", "rho_plus", "rho_mp"].map(String::from).to_vec(),
            Layout::Mixture => (0..self.mats.len()).map(|i| format!("rho_{i}{i}")).collect(),
        }
    }

    /// Physical reduced state of the system.
    pub fn system_state(&self, gamma: Option<&GammaMatrix>) -> Result<Operator> {
        match self.layout {
            Layout::Cascade => Ok(self.mats[RHO_S].clone()),
            Layout::Mixture => {
                let mut out = self.mats[0].clone();
                for m in &self.mats[1..] {
                    out += m;
                }
                Ok(out)
            }
            Layout::Fock => {
                let g = gamma.ok_or_else(|| {
                    Error::VariantMismatch("the Fock form needs γ to form the physical state".into())
                })?;
                let mut out = self.mats[FOCK_00].scale(C64::from(g.g00));
                out.axpy(g.g01, &self.mats[FOCK_10]);
                out.axpy(g.g10(), &self.mats[FOCK_01]);
                out.axpy(C64::from(g.g11), &self.mats[FOCK_11]);
                Ok(out)
            }
        }
    }

    /// Fock blocks to cascade form:
    /// `ρ⁻ = γ₁₁ρ⁰¹ + γ₀₁ρ⁰⁰`, `ρ⁺ = γ₁₁ρ¹⁰ + γ₁₀ρ⁰⁰`, `ρ∓ = γ₁₁ρ⁰⁰`.
    pub fn fock_to_cascade(&self, gamma: &GammaMatrix) -> Result<Self> {
        if self.layout != Layout::Fock {
            return Err(Error::VariantMismatch(format!("expected Fock layout, got {:?}", self.layout)));
        }
        let m = &self.mats;
        let g11 = C64::from(gamma.g11);
        let rho_s = self.system_state(Some(gamma))?;
        let mut minus = m[FOCK_01].scale(g11);
        minus.axpy(gamma.g01, &m[FOCK_00]);
        let mut plus = m[FOCK_10].scale(g11);
        plus.axpy(gamma.g10(), &m[FOCK_00]);
        let mp = m[FOCK_00].scale(g11);
        Ok(HierarchyState {
            layout: Layout::Cascade,
            mats: vec![rho_s, minus, plus, mp],
        })
    }

    /// Trace of the physical state (ρ_S, or Σ_i ρ^{ii}).
    pub fn system_trace(&self) -> f64 {
        match self.layout {
            Layout::Mixture => self.mats.iter().map(|m| m.trace().re).sum(),
            _ => self.mats[0].trace().re,
        }
    }

    /// Number of complex entries across the family.
    pub(crate) fn flat_len(&self) -> usize {
        self.mats.len() * self.dim() * self.dim()
    }

    pub(crate) fn flat_get(&self, k: usize) -> C64 {
        let dd = self.dim() * self.dim();
        self.mats[k / dd].entries()[k % dd]
    }

    pub(crate) fn flat_set(&mut self, k: usize, z: C64) {
        let dd = self.dim() * self.dim();
        self.mats[k / dd].entries_mut()[k % dd] = z;
    }

    pub(crate) fn flat_copy(&self) -> smallvec::SmallVec<[C64; 32]> {
        let mut x = smallvec::SmallVec::new();
        for a in &self.mats {
            x.extend_from_slice(a.entries());
        }
        x
    }

    /// Overwrite the family from `f(k)` for every flat index `k`.
    #[inline]
    pub(crate) fn flat_fill(&mut self, mut f: impl FnMut(usize) -> C64) {
        let mut k = 0;
        for op in &mut self.mats {
            for z in op.entries_mut() {
                *z = f(k);
                k += 1;
            }
        }
    }

    pub(crate) fn scale_all(&mut self, c: f64) {
        for m in &mut self.mats {
            *m *= c;
        }
    }

    pub(crate) fn zero_auxiliaries(&mut self) {
        if self.layout == Layout::Cascade {
            for m in &mut self.mats[1..] {
                *m = Operator::zeros(m.dim());
            }
        }
    }

    /// Largest entrywise deviation over all matrices.
    pub fn max_diff(&self, other: &HierarchyState) -> f64 {
        self.mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| a.max_diff(b))
            .fold(0.0, f64::max)
    }

    fn check(&self, layout: Layout, model: &SystemModel, count: Option<usize>) -> Result<()> {
        if self.layout != layout {
            return Err(Error::VariantMismatch(format!("expected {layout:?} layout, got {:?}", self.layout)));
        }
        if let Some(n) = count {
            if n != self.mats.len() {
                return Err(Error::VariantMismatch(format!(
                    "{} component matrices for {n} field components",
                    self.mats.len()
                )));
            }
        }
        if self.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: self.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_field(&self, fs: &FieldState, model: &SystemModel) -> Result<()> {
        match fs {
            FieldState::PhotonCombo { .. } => self.check(Layout::Cascade, model, None),
            FieldState::CoherentMixture { weights, .. } => self.check(Layout::Mixture, model, Some(weights.len())),
        }
    }
}

/// `[S x, L†] = S x L† − L†S x`
#[inline]
pub(crate) fn comm_sx_ldag(model: &SystemModel, x: &Operator) -> Operator {
    model.s().matmul(x).matmul(model.l_dag()) - &model.l_dag_s().matmul(x)
}

/// `[L, x S†] = L x S† − x S†L`
#[inline]
pub(crate) fn comm_l_xsdag(model: &SystemModel, x: &Operator) -> Operator {
    model.l().matmul(x).matmul(model.s_dag()) - &x.matmul(model.s_dag_l())
}

/// `S x S† − x`
#[inline]
pub(crate) fn scatter(model: &SystemModel, x: &Operator) -> Operator {
    model.s().matmul(x).matmul(model.s_dag()) - x
}

pub(crate) fn fock_rhs_at(model: &SystemModel, d: &Drive, st: &HierarchyState) -> HierarchyState {
    let xi = d.xi();
    let m = &st.mats;
    let d00 = model.lindblad(&m[FOCK_00]);
    let mut d10 = model.lindblad(&m[FOCK_10]);
    let mut d01 = model.lindblad(&m[FOCK_01]);
    let mut d11 = model.lindblad(&m[FOCK_11]);
    if xi != C64::new(0.0, 0.0) {
        d10.axpy(xi, &comm_sx_ldag(model, &m[FOCK_00]));
        d01.axpy(xi.conj(), &comm_l_xsdag(model, &m[FOCK_00]));
        d11.axpy(xi, &comm_sx_ldag(model, &m[FOCK_01]));
        d11.axpy(xi.conj(), &comm_l_xsdag(model, &m[FOCK_10]));
        d11.axpy(C64::from(xi.norm_sqr()), &scatter(model, &m[FOCK_00]));
    }
    HierarchyState {
        layout: Layout::Fock,
        mats: vec![d00, d01, d10, d11],
    }
}

pub(crate) fn cascade_rhs_at(model: &SystemModel, d: &Drive, st: &HierarchyState) -> HierarchyState {
    let xi = d.xi();
    let m = &st.mats;
    let mut ds = model.lindblad(&m[RHO_S]);
    let mut dm = model.lindblad(&m[RHO_MINUS]);
    let mut dp = model.lindblad(&m[RHO_PLUS]);
    let dmp = model.lindblad(&m[RHO_MP]);
    if xi != C64::new(0.0, 0.0) {
        ds.axpy(xi, &comm_sx_ldag(model, &m[RHO_MINUS]));
        ds.axpy(xi.conj(), &comm_l_xsdag(model, &m[RHO_PLUS]));
        ds.axpy(C64::from(xi.norm_sqr()), &scatter(model, &m[RHO_MP]));
        dm.axpy(xi.conj(), &comm_l_xsdag(model, &m[RHO_MP]));
        dp.axpy(xi, &comm_sx_ldag(model, &m[RHO_MP]));
    }
    HierarchyState {
        layout: Layout::Cascade,
        mats: vec![ds, dm, dp, dmp],
    }
}

pub(crate) fn mixture_rhs_at(model: &SystemModel, d: &Drive, st: &HierarchyState) -> HierarchyState {
    let mats = st
        .mats
        .iter()
        .zip(&d.amps)
        .map(|(rho, &a)| {
            let mut out = model.lindblad(rho);
            if a != C64::new(0.0, 0.0) {
                out.axpy(a, &comm_sx_ldag(model, rho));
                out.axpy(a.conj(), &comm_l_xsdag(model, rho));
                out.axpy(C64::from(a.norm_sqr()), &scatter(model, rho));
            }
            out
        })
        .collect();
    HierarchyState {
        layout: Layout::Mixture,
        mats,
    }
}

/// Unconditional generator for whichever layout `st` carries.
pub(crate) fn master_rhs_at(model: &SystemModel, d: &Drive, st: &HierarchyState) -> HierarchyState {
    match st.layout {
        Layout::Fock => fock_rhs_at(model, d, st),
        Layout::Cascade => cascade_rhs_at(model, d, st),
        Layout::Mixture => mixture_rhs_at(model, d, st),
    }
}

/// Time derivative of the Fock-block family `(ρ⁰⁰, ρ⁰¹, ρ¹⁰, ρ¹¹)`.
pub fn rhs_fock_hierarchy(
    state: &HierarchyState,
    t: f64,
    model: &SystemModel,
    xi: &Envelope,
) -> Result<HierarchyState> {
    state.check(Layout::Fock, model, None)?;
    let d = Drive {
        amps: smallvec::smallvec![xi.eval(t)?],
        live: true,
    };
    Ok(fock_rhs_at(model, &d, state))
}

/// Time derivative of the cascade family `(ρ_S, ρ⁻, ρ⁺, ρ∓)`.
pub fn rhs_cascade_hierarchy(
    state: &HierarchyState,
    t: f64,
    model: &SystemModel,
    xi: &Envelope,
) -> Result<HierarchyState> {
    state.check(Layout::Cascade, model, None)?;
    let d = Drive {
        amps: smallvec::smallvec![xi.eval(t)?],
        live: true,
    };
    Ok(cascade_rhs_at(model, &d, state))
}

/// Time derivative of the per-component coherent family.
pub fn rhs_coherent_mixture(
    state: &HierarchyState,
    t: f64,
    model: &SystemModel,
    alphas: &[Envelope],
    weights: &[f64],
) -> Result<HierarchyState> {
    if alphas.len() != weights.len() {
        return Err(Error::VariantMismatch(format!(
            "{} amplitudes for {} weights",
            alphas.len(),
            weights.len()
        )));
    }
    state.check(Layout::Mixture, model, Some(alphas.len()))?;
    let amps = alphas.iter().map(|a| a.eval(t)).collect::<Result<_>>()?;
    Ok(mixture_rhs_at(model, &Drive { amps, live: true }, state))
}

/// One classic RK4 step; `f(stage, y)` is called with stage 0 (start), 1 (midpoint, twice) and 2 (end).
#[inline]
pub(crate) fn rk4_step<S: OdeState>(y: &S, dt: f64, mut f: impl FnMut(usize, &S) -> S) -> S {
    let k1 = f(0, y);
    let mut tmp = y.clone();
    tmp.axpy(0.5 * dt, &k1);
    let k2 = f(1, &tmp);
    tmp = y.clone();
    tmp.axpy(0.5 * dt, &k2);
    let k3 = f(1, &tmp);
    tmp = y.clone();
    tmp.axpy(dt, &k3);
    let k4 = f(2, &tmp);
    let mut out = y.clone();
    out.axpy(dt / 6.0, &k1);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    out
}

/// Classic RK4 on a uniform grid; returns the state at every node.
///
/// `rhs(t, y)` is evaluated at `t_n`, `t_n + dt/2` and `t_n + dt`.
pub fn integrate_deterministic<S: OdeState>(
    mut rhs: impl FnMut(f64, &S) -> Result<S>,
    state0: S,
    grid: &TimeGrid,
) -> Result<Vec<S>> {
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.n_nodes());
    out.push(state0);
    for n in 0..grid.n_steps() {
        let t = grid.time(n);
        let times = [t, t + 0.5 * dt, t + dt];
        let mut err = None;
        let next = rk4_step(&out[n], dt, |stage, y| match rhs(times[stage], y) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                y.clone()
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if !next.is_finite() {
            return Err(Error::NonFinite { t: t + dt });
        }
        out.push(next);
    }
    Ok(out)
}

/// Unconditional evolution of `fs` on `grid`, from the system state `rho0`.
pub fn evolve(model: &SystemModel, fs: &FieldState, rho0: &Operator, grid: &TimeGrid) -> Result<Vec<HierarchyState>> {
    let table = DriveTable::new(fs, *grid);
    evolve_with_table(model, &HierarchyState::initial(fs, rho0), &table, false)
}

/// With `clamp`, auxiliaries are dropped at every node where the photon tail
/// is exhausted, the convention shared with the filters and the oracle.
pub(crate) fn evolve_with_table(
    model: &SystemModel,
    state0: &HierarchyState,
    table: &DriveTable,
    clamp: bool,
) -> Result<Vec<HierarchyState>> {
    let grid = *table.grid();
    if state0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: state0.dim(),
        });
    }
    let mut out = Vec::with_capacity(grid.n_nodes());
    out.push(state0.clone());
    for n in 0..grid.n_steps() {
        let drives = table.step(n);
        if clamp && !drives[0].live && out[n].layout() == Layout::Cascade {
            out[n].zero_auxiliaries();
        }
        let next = rk4_step(&out[n], grid.dt(), |stage, y| master_rhs_at(model, drives[stage], y));
        if !next.is_finite() {
            return Err(Error::NonFinite { t: grid.time(n + 1) });
        }
        out.push(next);
    }
    Ok(out)
}

/// `Σ` over components of `Tr(C_i†C_i ρ_i)`-type output intensities, shared by
/// the deterministic rates and the counting filter.
pub(crate) fn intensity_at(model: &SystemModel, d: &Drive, st: &HierarchyState) -> C64 {
    let m = &st.mats;
    match st.layout {
        Layout::Cascade => {
            let xi = d.xi();
            let mut k = model.l_dag_l().matmul(&m[RHO_S]).trace();
            k += xi * model.l_dag_s().matmul(&m[RHO_MINUS]).trace();
            k += xi.conj() * model.s_dag_l().matmul(&m[RHO_PLUS]).trace();
            k += xi.norm_sqr() * m[RHO_MP].trace();
            k
        }
        Layout::Mixture => m
            .iter()
            .zip(&d.amps)
            .map(|(rho, &a)| {
                // (L + aS)†(L + aS) = L†L + a L†S + a* S†L + |a|²
                let mut c = model.l_dag_l().clone();
                c.axpy(a, model.l_dag_s());
                c.axpy(a.conj(), model.s_dag_l());
                c.matmul(rho).trace() + a.norm_sqr() * rho.trace()
            })
            .sum(),
        Layout::Fock => unreachable!("intensity is defined on cascade or mixture layouts"),
    }
}

/// Posterior/ensemble quadrature rate `v`.
pub(crate) fn quadrature_at(model: &SystemModel, d: &Drive, st: &HierarchyState) -> C64 {
    let m = &st.mats;
    let l_plus = |rho: &Operator| model.l().matmul(rho).trace() + model.l_dag().matmul(rho).trace();
    match st.layout {
        Layout::Cascade => {
            let xi = d.xi();
            l_plus(&m[RHO_S])
                + xi * model.s().matmul(&m[RHO_MINUS]).trace()
                + xi.conj() * m[RHO_PLUS].matmul(model.s_dag()).trace()
        }
        Layout::Mixture => m
            .iter()
            .zip(&d.amps)
            .map(|(rho, &a)| {
                let srho = model.s().matmul(rho).trace();
                l_plus(rho) + a * srho + a.conj() * srho.conj()
            })
            .sum(),
        Layout::Fock => unreachable!("quadrature rate is defined on cascade or mixture layouts"),
    }
}

fn as_rate_state(state: &HierarchyState, fs: &FieldState, model: &SystemModel) -> Result<HierarchyState> {
    match (fs, state.layout) {
        (FieldState::PhotonCombo { gamma, .. }, Layout::Fock) => {
            state.check(Layout::Fock, model, None)?;
            state.fock_to_cascade(gamma)
        }
        _ => {
            state.check_field(fs, model)?;
            Ok(state.clone())
        }
    }
}

/// Mean photon flux leaving the system.
pub fn expected_count_rate(state: &HierarchyState, t: f64, model: &SystemModel, fs: &FieldState) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let st = as_rate_state(state, fs, model)?;
    Ok(intensity_at(model, &Drive::at(fs, t), &st).re.max(0.0))
}

/// Mean rate of the output quadrature `dY/dt`.
pub fn expected_quadrature_rate(state: &HierarchyState, t: f64, model: &SystemModel, fs: &FieldState) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let st = as_rate_state(state, fs, model)?;
    Ok(quadrature_at(model, &Drive::at(fs, t), &st).re)
}
