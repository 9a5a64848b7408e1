//! Conditional (filtered) dynamics under photon counting and homodyne
//! detection of the output field, and the no-count probability system.
//!
//! Filter states are stored normalized: every matrix of the family is
//! divided by the trace of the physical system state. Between counts the
//! state follows the linear no-count flow and is renormalized after each
//! step, which is the same trajectory as the normalized nonlinear drift.

use num_complex::Complex64 as C64;

use crate::drive::Drive;
use crate::envelope::FieldState;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::hierarchy::{
    intensity_at, master_rhs_at, quadrature_at, rk4_step, HierarchyState, Layout, OdeState, RHO_MINUS, RHO_MP,
    RHO_PLUS, RHO_S,
};
use crate::operator::{Operator, SystemModel};

/// Jumps are refused below this intensity.
pub const JUMP_THRESHOLD: f64 = 1e-14;

/// Normalized a-posteriori family.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    inner: HierarchyState,
    normalized: bool,
}

impl FilterState {
    /// Prior state for the field variant, with the system starting in `rho0`.
    pub fn new(fs: &FieldState, rho0: &Operator) -> Result<Self> {
        let mut st = FilterState {
            inner: HierarchyState::initial(fs, rho0),
            normalized: false,
        };
        st.renormalize(0.0)?;
        Ok(st)
    }

    pub fn from_hierarchy(inner: HierarchyState) -> Self {
        FilterState {
            inner,
            normalized: false,
        }
    }

    pub fn hierarchy(&self) -> &HierarchyState {
        &self.inner
    }

    pub fn into_hierarchy(self) -> HierarchyState {
        self.inner
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Conditional state of the system.
    pub fn system_state(&self) -> Operator {
        self.inner.system_state(None).expect("filter states are never in Fock form")
    }

    /// Divide the family by the system trace.
    pub fn renormalize(&mut self, t: f64) -> Result<()> {
        let tr = self.inner.system_trace();
        if !(tr > 0.0 && tr.is_finite()) || !self.inner.is_finite() {
            return Err(Error::NonFinite { t });
        }
        self.inner.scale_all(1.0 / tr);
        self.normalized = true;
        Ok(())
    }

    /// Drop ρ̂⁻, ρ̂⁺, ρ̂∓ once the photon has passed; the system trace is unchanged.
    pub(crate) fn zero_auxiliaries(&mut self) {
        self.inner.zero_auxiliaries();
    }

    fn check(&self, fs: &FieldState, model: &SystemModel) -> Result<()> {
        self.inner.check_field(fs, model)
    }
}

/// Unnormalized family whose system trace is the probability of no count so far.
#[derive(Clone, Debug, PartialEq)]
pub struct NoCountState {
    inner: HierarchyState,
}

impl NoCountState {
    pub fn new(fs: &FieldState, rho0: &Operator) -> Self {
        NoCountState {
            inner: HierarchyState::initial(fs, rho0),
        }
    }

    pub fn from_hierarchy(inner: HierarchyState) -> Self {
        NoCountState { inner }
    }

    pub fn hierarchy(&self) -> &HierarchyState {
        &self.inner
    }

    /// Probability of no count in `(0, t]`.
    pub fn survival(&self) -> f64 {
        self.inner.system_trace()
    }
}

/// Raw (unclamped) posterior intensity.
#[inline]
pub(crate) fn intensity_raw(model: &SystemModel, d: &Drive, st: &HierarchyState) -> f64 {
    intensity_at(model, d, st).re
}

/// Numerators of the jump map: `Lρ_SL† + ξSρ⁻L† + ξ*Lρ⁺S† + |ξ|²Sρ∓S†` and
/// its auxiliary analogues, or `C_i ρ_i C_i†` with `C_i = L + α_i S`.
pub(crate) fn jump_numerators(model: &SystemModel, d: &Drive, st: &HierarchyState) -> HierarchyState {
    let (l, l_dag, s, s_dag) = (model.l(), model.l_dag(), model.s(), model.s_dag());
    let m = st.matrices();
    match st.layout() {
        Layout::Cascade => {
            let xi = d.xi();
            let xc = xi.conj();
            let s_mp = s.matmul(&m[RHO_MP]);
            let mp_sdag = m[RHO_MP].matmul(s_dag);
            let mut js = l.matmul(&m[RHO_S]).matmul(l_dag);
            js.axpy(xi, &s.matmul(&m[RHO_MINUS]).matmul(l_dag));
            js.axpy(xc, &l.matmul(&m[RHO_PLUS]).matmul(s_dag));
            js.axpy(C64::from(xi.norm_sqr()), &s_mp.matmul(s_dag));
            let mut jm = l.matmul(&m[RHO_MINUS]).matmul(l_dag);
            jm.axpy(xc, &l.matmul(&mp_sdag));
            let mut jp = l.matmul(&m[RHO_PLUS]).matmul(l_dag);
            jp.axpy(xi, &s_mp.matmul(l_dag));
            let jmp = l.matmul(&m[RHO_MP]).matmul(l_dag);
            HierarchyState::new(Layout::Cascade, vec![js, jm, jp, jmp]).expect("shape preserved")
        }
        Layout::Mixture => {
            let mats = m
                .iter()
                .zip(&d.amps)
                .map(|(rho, &a)| {
                    let mut c = l.clone();
                    c.axpy(a, s);
                    c.sandwich(rho)
                })
                .collect();
            HierarchyState::new(Layout::Mixture, mats).expect("shape preserved")
        }
        Layout::Fock => unreachable!("filters run on cascade or mixture layouts"),
    }
}

/// Linear no-count generator (unconditional generator minus the jump numerators).
pub(crate) fn nocount_at(model: &SystemModel, d: &Drive, st: &HierarchyState) -> HierarchyState {
    let m = st.matrices();
    let neg_nj = |x: &Operator| -&model.no_jump(x);
    match st.layout() {
        Layout::Cascade => {
            let xi = d.xi();
            let xc = xi.conj();
            let mut ns = neg_nj(&m[RHO_S]);
            let mut nm = neg_nj(&m[RHO_MINUS]);
            let mut np = neg_nj(&m[RHO_PLUS]);
            let nmp = neg_nj(&m[RHO_MP]);
            if xi != C64::new(0.0, 0.0) {
                ns.axpy(-xi, &model.l_dag_s().matmul(&m[RHO_MINUS]));
                ns.axpy(-xc, &m[RHO_PLUS].matmul(model.s_dag_l()));
                ns.axpy(C64::from(-xi.norm_sqr()), &m[RHO_MP]);
                nm.axpy(-xc, &m[RHO_MP].matmul(model.s_dag_l()));
                np.axpy(-xi, &model.l_dag_s().matmul(&m[RHO_MP]));
            }
            HierarchyState::new(Layout::Cascade, vec![ns, nm, np, nmp]).expect("shape preserved")
        }
        Layout::Mixture => {
            let mats = m
                .iter()
                .zip(&d.amps)
                .map(|(rho, &a)| {
                    let mut out = neg_nj(rho);
                    if a != C64::new(0.0, 0.0) {
                        out.axpy(-a, &model.l_dag_s().matmul(rho));
                        out.axpy(-a.conj(), &rho.matmul(model.s_dag_l()));
                        out.axpy(C64::from(-a.norm_sqr()), rho);
                    }
                    out
                })
                .collect();
            HierarchyState::new(Layout::Mixture, mats).expect("shape preserved")
        }
        Layout::Fock => unreachable!("filters run on cascade or mixture layouts"),
    }
}

/// Homodyne diffusion coefficients for a given `v`.
pub(crate) fn diffusion_at(model: &SystemModel, d: &Drive, st: &HierarchyState, v: f64) -> HierarchyState {
    let (l, l_dag, s, s_dag) = (model.l(), model.l_dag(), model.s(), model.s_dag());
    let m = st.matrices();
    let v = C64::from(-v);
    let base = |x: &Operator| {
        let mut out = l.matmul(x) + &x.matmul(l_dag);
        out.axpy(v, x);
        out
    };
    match st.layout() {
        Layout::Cascade => {
            let xi = d.xi();
            let mut bs = base(&m[RHO_S]);
            bs.axpy(xi, &s.matmul(&m[RHO_MINUS]));
            bs.axpy(xi.conj(), &m[RHO_PLUS].matmul(s_dag));
            let mut bm = base(&m[RHO_MINUS]);
            bm.axpy(xi.conj(), &m[RHO_MP].matmul(s_dag));
            let mut bp = base(&m[RHO_PLUS]);
            bp.axpy(xi, &s.matmul(&m[RHO_MP]));
            let bmp = base(&m[RHO_MP]);
            HierarchyState::new(Layout::Cascade, vec![bs, bm, bp, bmp]).expect("shape preserved")
        }
        Layout::Mixture => {
            let mats = m
                .iter()
                .zip(&d.amps)
                .map(|(rho, &a)| {
                    let mut out = base(rho);
                    out.axpy(a, &s.matmul(rho));
                    out.axpy(a.conj(), &rho.matmul(s_dag));
                    out
                })
                .collect();
            HierarchyState::new(Layout::Mixture, mats).expect("shape preserved")
        }
        Layout::Fock => unreachable!("filters run on cascade or mixture layouts"),
    }
}

/// Apply the jump map; errors if the intensity is below the jump threshold.
pub(crate) fn jump_at(model: &SystemModel, d: &Drive, st: &HierarchyState, t: f64) -> Result<HierarchyState> {
    let k = intensity_raw(model, d, st);
    if !(k >= JUMP_THRESHOLD) {
        return Err(Error::VanishingIntensity { k, t });
    }
    let mut out = jump_numerators(model, d, st);
    out.scale_all(1.0 / k);
    Ok(out)
}

/// Unnormalized no-count flow over one step.
#[inline]
pub(crate) fn nocount_flow(model: &SystemModel, drives: [&Drive; 3], st: &HierarchyState, dt: f64) -> HierarchyState {
    rk4_step(st, dt, |stage, y| nocount_at(model, drives[stage], y))
}

/// One counting step from `t`: optional jump at `t`, then the no-count flow
/// over `[t, t + dt]` and renormalization. Auxiliaries are dropped first if
/// the single-photon tail is exhausted.
pub(crate) fn counting_step_at(
    model: &SystemModel,
    drives: [&Drive; 3],
    st: &mut FilterState,
    t: f64,
    dt: f64,
    jump: bool,
) -> Result<()> {
    if !drives[0].live {
        st.zero_auxiliaries();
    }
    if jump {
        st.inner = jump_at(model, drives[0], &st.inner, t)?;
    }
    st.inner = nocount_flow(model, drives, &st.inner, dt);
    st.renormalize(t + dt)
}

/// One homodyne step from `t`: diffusion kick `x + B(x)·dW` with coefficients
/// at `t`, then the drift flow over `[t, t + dt]` and renormalization.
/// Returns `v(t)`.
pub(crate) fn homodyne_step_at(
    model: &SystemModel,
    drives: [&Drive; 3],
    st: &mut FilterState,
    t: f64,
    dt: f64,
    dw: f64,
) -> Result<f64> {
    if !drives[0].live {
        st.zero_auxiliaries();
    }
    let v = quadrature_at(model, drives[0], &st.inner).re;
    homodyne_advance(model, drives, st, t, dt, dw, v)?;
    Ok(v)
}

/// Master-equation flow over one step.
#[inline]
pub(crate) fn drift_flow(model: &SystemModel, drives: [&Drive; 3], st: &HierarchyState, dt: f64) -> HierarchyState {
    rk4_step(st, dt, |stage, y| master_rhs_at(model, drives[stage], y))
}

/// Kick and drift of a homodyne step whose auxiliaries are already
/// settled and whose `v(t)` is known.
pub(crate) fn homodyne_advance(
    model: &SystemModel,
    drives: [&Drive; 3],
    st: &mut FilterState,
    t: f64,
    dt: f64,
    dw: f64,
    v: f64,
) -> Result<()> {
    if dw != 0.0 {
        let b = diffusion_at(model, drives[0], &st.inner, v);
        st.inner.axpy(dw, &b);
    }
    st.inner = drift_flow(model, drives, &st.inner, dt);
    st.renormalize(t + dt)
}

fn drive_checked(fs: &FieldState, t: f64) -> Result<Drive> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    Ok(Drive::at(fs, t))
}

/// Posterior intensity `k_t` of the counting process; tiny negative
/// round-off is clamped to zero.
pub fn counting_intensity(state: &FilterState, t: f64, model: &SystemModel, fs: &FieldState) -> Result<f64> {
    state.check(fs, model)?;
    Ok(intensity_raw(model, &drive_checked(fs, t)?, &state.inner).max(0.0))
}

/// Between-count derivative of the normalized filter: no-count generator plus `k_t·state`.
pub fn counting_drift(state: &FilterState, t: f64, model: &SystemModel, fs: &FieldState) -> Result<HierarchyState> {
    state.check(fs, model)?;
    let d = drive_checked(fs, t)?;
    let k = intensity_raw(model, &d, &state.inner);
    let mut out = nocount_at(model, &d, &state.inner);
    out.axpy(k, &state.inner);
    Ok(out)
}

/// Posterior state right after a count at `t`.
pub fn counting_jump(state: &FilterState, t: f64, model: &SystemModel, fs: &FieldState) -> Result<FilterState> {
    state.check(fs, model)?;
    let d = drive_checked(fs, t)?;
    let mut out = FilterState::from_hierarchy(jump_at(model, &d, &state.inner, t)?);
    out.normalized = true;
    Ok(out)
}

/// Time derivative of the unnormalized no-count family.
pub fn nocount_rhs(state: &NoCountState, t: f64, model: &SystemModel, fs: &FieldState) -> Result<HierarchyState> {
    state.inner.check_field(fs, model)?;
    Ok(nocount_at(model, &drive_checked(fs, t)?, &state.inner))
}

/// Probability of no count in `(0, t_n]` at every node of `grid`. The photon
/// channel is dropped once its tail is exhausted, as in the counting filter.
pub fn survival_curve(model: &SystemModel, fs: &FieldState, rho0: &Operator, grid: &TimeGrid) -> Result<Vec<f64>> {
    let table = crate::drive::DriveTable::new(fs, *grid);
    let mut st = NoCountState::new(fs, rho0);
    st.inner.check_field(fs, model)?;
    let mut out = Vec::with_capacity(grid.n_nodes());
    out.push(st.survival());
    for n in 0..grid.n_steps() {
        if !table.node(n).live {
            st.inner.zero_auxiliaries();
        }
        st.inner = nocount_flow(model, table.step(n), &st.inner, grid.dt());
        if !st.inner.is_finite() {
            return Err(Error::NonFinite { t: grid.time(n + 1) });
        }
        out.push(st.survival());
    }
    Ok(out)
}

/// Posterior mean of the quadrature rate `v_t`.
pub fn homodyne_vt(state: &FilterState, t: f64, model: &SystemModel, fs: &FieldState) -> Result<f64> {
    state.check(fs, model)?;
    Ok(quadrature_at(model, &drive_checked(fs, t)?, &state.inner).re)
}

/// Euler–Maruyama increment `drift·dt + diffusion·dW` of the homodyne filter.
pub fn homodyne_rhs(
    state: &FilterState,
    t: f64,
    model: &SystemModel,
    fs: &FieldState,
    dt: f64,
    dw: f64,
) -> Result<HierarchyState> {
    state.check(fs, model)?;
    if !dw.is_finite() {
        return Err(Error::NonFinite { t });
    }
    let d = drive_checked(fs, t)?;
    let v = quadrature_at(model, &d, &state.inner).re;
    let mut out = master_rhs_at(model, &d, &state.inner);
    out.scale_all(dt);
    out.axpy(dw, &diffusion_at(model, &d, &state.inner, v));
    Ok(out)
}

fn step_drives(fs: &FieldState, t: f64, dt: f64) -> Result<[Drive; 3]> {
    Ok([drive_checked(fs, t)?, Drive::at(fs, t + 0.5 * dt), Drive::at(fs, t + dt)])
}

/// One counting step `[t, t + dt]`; returns the new state and `k_t`.
pub fn counting_step(
    state: &FilterState,
    t: f64,
    dt: f64,
    jump: bool,
    model: &SystemModel,
    fs: &FieldState,
) -> Result<(FilterState, f64)> {
    state.check(fs, model)?;
    let [a, b, c] = step_drives(fs, t, dt)?;
    let mut st = state.clone();
    if !a.live {
        st.inner.zero_auxiliaries();
    }
    let k = intensity_raw(model, &a, &st.inner).max(0.0);
    counting_step_at(model, [&a, &b, &c], &mut st, t, dt, jump)?;
    Ok((st, k))
}

/// One homodyne step `[t, t + dt]` driven by the innovation `dW`; returns the new state and `v_t`.
pub fn homodyne_step(
    state: &FilterState,
    t: f64,
    dt: f64,
    dw: f64,
    model: &SystemModel,
    fs: &FieldState,
) -> Result<(FilterState, f64)> {
    state.check(fs, model)?;
    if !dw.is_finite() {
        return Err(Error::NonFinite { t });
    }
    let [a, b, c] = step_drives(fs, t, dt)?;
    let mut st = state.clone();
    let v = homodyne_step_at(model, [&a, &b, &c], &mut st, t, dt, dw)?;
    Ok((st, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{AmplitudeMode, Envelope, GammaMatrix};
    use crate::hierarchy::cascade_rhs_at;
    use crate::random::*;
    use proptest::prelude::*;

    fn fig1_xi() -> Envelope {
        Envelope::gaussian(1.46, 3.0, AmplitudeMode::UnitNorm).unwrap()
    }

    fn photon(g: GammaMatrix) -> FieldState {
        FieldState::photon_combo(g, fig1_xi()).unwrap()
    }

    fn coherent_pair() -> FieldState {
        let a0 = Envelope::gaussian(2.4, 3.0, AmplitudeMode::Coherent).unwrap();
        let a1 = Envelope::gaussian(2.4, 5.0, AmplitudeMode::Coherent).unwrap();
        FieldState::coherent_mixture(vec![0.5, 0.5], vec![a0, a1]).unwrap()
    }

    /// Random normalized filter state (not necessarily reachable, but of the right shape).
    fn random_filter(seed: u64, fs: &FieldState, model_dim: usize) -> FilterState {
        let mut rng = seeded(seed);
        let mats = (0..match fs {
            FieldState::PhotonCombo { .. } => 4,
            FieldState::CoherentMixture { weights, .. } => weights.len(),
        })
            .map(|_| random_density(&mut rng, model_dim))
            .collect::<Vec<_>>();
        let layout = match fs {
            FieldState::PhotonCombo { .. } => Layout::Cascade,
            FieldState::CoherentMixture { .. } => Layout::Mixture,
        };
        let mut mats = mats;
        if layout == Layout::Cascade {
            // ρ⁺ = (ρ⁻)† with a non-Hermitian ρ⁻
            mats[RHO_MINUS] = random_ginibre(&mut rng, model_dim);
            mats[RHO_PLUS] = mats[RHO_MINUS].dag();
        }
        let mut st = FilterState::from_hierarchy(HierarchyState::new(layout, mats).unwrap());
        st.renormalize(0.0).unwrap();
        st
    }

    #[test]
    fn intensity_special_cases() {
        let free = SystemModel::new(Operator::zeros(2), Operator::zeros(2), Operator::identity(2)).unwrap();
        let fs = photon(GammaMatrix::single_photon());
        let st = random_filter(1, &fs, 2);
        let k = counting_intensity(&st, 2.0, &free, &fs).unwrap();
        let xi = fig1_xi().value(2.0);
        let want = xi.norm_sqr() * st.hierarchy().matrices()[RHO_MP].trace().re;
        assert!((k - want).abs() < 1e-14);

        let model = SystemModel::two_level_decay(1.0).unwrap();
        let vac = photon(GammaMatrix::vacuum());
        let rho = Operator::diag(&[C64::from(0.4), C64::from(0.6)]);
        let st = FilterState::new(&vac, &rho).unwrap();
        assert!((counting_intensity(&st, 1.0, &model, &vac).unwrap() - 0.6).abs() < 1e-15);

        let a = Envelope::gaussian(2.4, 3.0, AmplitudeMode::Coherent).unwrap();
        let one = FieldState::coherent_mixture(vec![1.0], vec![a.clone()]).unwrap();
        let st = FilterState::new(&one, &Operator::ket_bra(2, 0, 0)).unwrap();
        let k = counting_intensity(&st, 2.7, &model, &one).unwrap();
        assert!((k - a.value(2.7).norm_sqr()).abs() < 1e-14);
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let st = FilterState::new(&coherent_pair(), &Operator::ket_bra(2, 0, 0)).unwrap();
        let fs = photon(GammaMatrix::single_photon());
        assert!(matches!(counting_intensity(&st, 1.0, &model, &fs), Err(Error::VariantMismatch(_))));
        assert!(homodyne_vt(&st, 1.0, &model, &fs).is_err());
        assert!(counting_drift(&st, 1.0, &model, &fs).is_err());
    }

    #[test]
    fn vacuum_drift_is_standard_form() {
        let mut rng = seeded(8);
        let model = random_model(&mut rng, 3);
        let rho = random_density(&mut rng, 3);
        let vac = photon(GammaMatrix::vacuum());
        let st = FilterState::new(&vac, &rho).unwrap();
        let d = counting_drift(&st, 0.5, &model, &vac).unwrap();
        let k = model.l_dag_l().matmul(&rho).trace().re;
        let jump = model.l().sandwich(&rho);
        let mut want = model.lindblad_apply(&rho).unwrap();
        want -= &(&jump * (1.0 / k) - &rho).scale(C64::from(k));
        assert!(d.matrices()[RHO_S].max_diff(&want) < 1e-13);
    }

    #[test]
    fn vacuum_jump_deexcites() {
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let vac = photon(GammaMatrix::vacuum());
        let st = FilterState::new(&vac, &Operator::ket_bra(2, 1, 1)).unwrap();
        let after = counting_jump(&st, 0.3, &model, &vac).unwrap();
        assert!(after.system_state().max_diff(&Operator::ket_bra(2, 0, 0)) < 1e-15);
        let ground = FilterState::new(&vac, &Operator::ket_bra(2, 0, 0)).unwrap();
        assert!(matches!(counting_jump(&ground, 0.3, &model, &vac), Err(Error::VanishingIntensity { .. })));
    }

    #[test]
    fn transparent_system_jump_passes_photon() {
        // L = 0, S = I: only the ρ∓ channel can click
        let free = SystemModel::new(Operator::zeros(2), Operator::zeros(2), Operator::identity(2)).unwrap();
        let fs = photon(GammaMatrix::single_photon());
        let rho = Operator::diag(&[C64::from(0.3), C64::from(0.7)]);
        let st = FilterState::new(&fs, &rho).unwrap();
        let after = counting_jump(&st, 3.0, &free, &fs).unwrap();
        let m = after.hierarchy().matrices();
        assert!(m[RHO_S].max_diff(&rho) < 1e-14);
        for aux in &m[1..] {
            assert_eq!(aux.max_abs(), 0.0);
        }
    }

    #[test]
    fn nocount_is_generator_minus_jumps() {
        for (seed, fs) in [(1, photon(random_gamma(&mut seeded(4)))), (2, coherent_pair())] {
            let mut rng = seeded(seed);
            let model = random_model(&mut rng, 2);
            let st = random_filter(seed + 10, &fs, 2);
            for t in [0.5, 3.0, 4.4] {
                let d = Drive::at(&fs, t);
                let mut want = master_rhs_at(&model, &d, st.hierarchy());
                want.axpy(-1.0, &jump_numerators(&model, &d, st.hierarchy()));
                let got = nocount_at(&model, &d, st.hierarchy());
                assert!(got.max_diff(&want) < 1e-12);
                let drift = counting_drift(&st, t, &model, &fs).unwrap();
                let mut want = got.clone();
                want.axpy(intensity_raw(&model, &d, st.hierarchy()), st.hierarchy());
                assert!(drift.max_diff(&want) < 1e-12);
            }
        }
    }

    #[test]
    fn vacuum_survival_is_exponential() {
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let vac = photon(GammaMatrix::vacuum());
        let grid = TimeGrid::new(1e-3, 4.0).unwrap();
        let s = survival_curve(&model, &vac, &Operator::ket_bra(2, 1, 1), &grid).unwrap();
        for (n, p) in s.iter().enumerate().step_by(500) {
            assert!((p - (-grid.time(n)).exp()).abs() < 1e-12);
        }
        let s = survival_curve(&model, &vac, &Operator::ket_bra(2, 0, 0), &grid).unwrap();
        assert!(s.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn fig1_survival_limits() {
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let fs = photon(GammaMatrix::new(0.2, 0.8, C64::new(0.0, 0.0)).unwrap());
        let grid = TimeGrid::new(1e-3, 12.0).unwrap();
        let s = survival_curve(&model, &fs, &Operator::ket_bra(2, 0, 0), &grid).unwrap();
        assert!((s.last().unwrap() - 0.2).abs() < 1e-3);
        assert!(s.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let s = survival_curve(&model, &fs, &Operator::ket_bra(2, 1, 1), &grid).unwrap();
        assert!(s.last().unwrap().abs() < 1e-3);
    }

    #[test]
    fn diffusion_is_traceless() {
        for (seed, fs) in [(3, photon(random_gamma(&mut seeded(9)))), (4, coherent_pair())] {
            let mut rng = seeded(seed);
            let model = random_model(&mut rng, 3);
            let st = random_filter(seed, &fs, 3);
            let d = Drive::at(&fs, 3.3);
            let v = quadrature_at(&model, &d, st.hierarchy()).re;
            let b = diffusion_at(&model, &d, st.hierarchy(), v);
            let tr: C64 = match b.layout() {
                Layout::Mixture => b.matrices().iter().map(|m| m.trace()).sum(),
                _ => b.matrices()[RHO_S].trace(),
            };
            assert!(tr.norm() < 1e-12, "{tr}");
        }
    }

    #[test]
    fn homodyne_vt_special_cases() {
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let vac = photon(GammaMatrix::vacuum());
        let st = FilterState::new(&vac, &Operator::diag(&[C64::from(0.2), C64::from(0.8)])).unwrap();
        assert_eq!(homodyne_vt(&st, 1.0, &model, &vac).unwrap(), 0.0);

        let free = SystemModel::new(Operator::zeros(2), Operator::zeros(2), Operator::identity(2)).unwrap();
        let a = Envelope::gaussian(2.4, 3.0, AmplitudeMode::Coherent).unwrap();
        let one = FieldState::coherent_mixture(vec![1.0], vec![a.clone()]).unwrap();
        let st = FilterState::new(&one, &random_density(&mut seeded(2), 2)).unwrap();
        let v = homodyne_vt(&st, 2.2, &free, &one).unwrap();
        assert!((v - 2.0 * a.value(2.2).re).abs() < 1e-14);
    }

    #[test]
    fn homodyne_rhs_without_noise_is_master_drift() {
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let vac = photon(GammaMatrix::vacuum());
        let rho = random_density(&mut seeded(6), 2);
        let st = FilterState::new(&vac, &rho).unwrap();
        let inc = homodyne_rhs(&st, 1.0, &model, &vac, 1e-3, 0.0).unwrap();
        let want = &model.lindblad_apply(&rho).unwrap() * 1e-3;
        assert!(inc.matrices()[RHO_S].max_diff(&want) < 1e-16);
        assert!(homodyne_rhs(&st, 1.0, &model, &vac, 1e-3, f64::NAN).is_err());
    }

    #[test]
    fn homodyne_split_matches_euler_to_first_order() {
        let mut rng = seeded(12);
        let model = random_model(&mut rng, 2);
        let fs = photon(random_gamma(&mut rng));
        let st = random_filter(13, &fs, 2);
        let dt = 1e-6;
        let dw = 7e-4;
        let (next, _) = homodyne_step(&st, 2.0, dt, dw, &model, &fs).unwrap();
        let mut em = st.hierarchy().clone();
        em.axpy(1.0, &homodyne_rhs(&st, 2.0, &model, &fs, dt, dw).unwrap());
        let tr = em.system_trace();
        em.scale_all(1.0 / tr);
        assert!(next.hierarchy().max_diff(&em) < 1e-8);
    }

    #[test]
    fn counting_drift_keeps_trace() {
        for (seed, fs) in [(5, photon(random_gamma(&mut seeded(1)))), (6, coherent_pair())] {
            let mut rng = seeded(seed);
            let model = random_model(&mut rng, 2);
            let st = random_filter(seed, &fs, 2);
            let d = counting_drift(&st, 2.9, &model, &fs).unwrap();
            assert!(d.system_trace().abs() < 1e-10);
        }
    }

    #[test]
    fn counting_step_regression() {
        // Photon number bookkeeping at the start of the pulse: one no-count step
        // changes the survival-weighted state by the no-count generator.
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let fs = photon(GammaMatrix::new(0.2, 0.8, C64::new(0.0, 0.0)).unwrap());
        let st = FilterState::new(&fs, &Operator::ket_bra(2, 0, 0)).unwrap();
        let dt = 1e-3;
        let (next, k) = counting_step(&st, 3.0, dt, false, &model, &fs).unwrap();
        assert!((k - 0.8 * fig1_xi().value(3.0).norm_sqr()).abs() < 1e-14);
        let d = counting_drift(&st, 3.0, &model, &fs).unwrap();
        let mut euler = st.hierarchy().clone();
        euler.axpy(dt, &d);
        assert!(next.hierarchy().max_diff(&euler) < 1e-5);
        assert!((next.system_state().trace().re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cascade_rhs_agrees_with_public_entry() {
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let fs = photon(GammaMatrix::single_photon());
        let st = random_filter(3, &fs, 2);
        let a = cascade_rhs_at(&model, &Drive::at(&fs, 1.0), st.hierarchy());
        let b = crate::hierarchy::rhs_cascade_hierarchy(st.hierarchy(), 1.0, &model, &fig1_xi()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn maps_preserve_adjoint_pair(seed in any::<u64>(), t in 0.0f64..8.0, dw in -0.1f64..0.1) {
            let mut rng = seeded(seed);
            let model = random_model(&mut rng, 2);
            let fs = photon(random_gamma(&mut rng));
            let st = random_filter(seed ^ 0x55, &fs, 2);
            let pair = |h: &HierarchyState| h.matrices()[RHO_PLUS].max_diff(&h.matrices()[RHO_MINUS].dag());
            let (a, _) = counting_step(&st, t, 1e-3, false, &model, &fs).unwrap();
            prop_assert!(pair(a.hierarchy()) < 1e-8);
            if counting_intensity(&st, t, &model, &fs).unwrap() > JUMP_THRESHOLD {
                let j = counting_jump(&st, t, &model, &fs).unwrap();
                prop_assert!(pair(j.hierarchy()) < 1e-8);
                prop_assert!((j.system_state().trace().re - 1.0).abs() < 1e-10);
            }
            let (h, _) = homodyne_step(&st, t, 1e-3, dw, &model, &fs).unwrap();
            prop_assert!(pair(h.hierarchy()) < 1e-8);
            prop_assert!((h.system_state().trace().re - 1.0).abs() < 1e-12);
        }

        #[test]
        fn survival_is_monotone(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let model = random_model(&mut rng, 2);
            let fs = photon(random_gamma(&mut rng));
            let rho0 = random_density(&mut rng, 2);
            let grid = TimeGrid::new(5e-3, 8.0).unwrap();
            let s = survival_curve(&model, &fs, &rho0, &grid).unwrap();
            prop_assert!(s.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            prop_assert!(s.iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p)));
        }
    }
}
