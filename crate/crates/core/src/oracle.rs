//! Brute-force reference: the system together with a two-level ancilla
//! whose decay synthesizes the input field, simulated on the product space
//! (system factor first, ancilla second). Used to cross-check the reduced
//! hierarchy and the filters.
//!
//! Photon combinations use `L_A(t) = λ(t)σ₋` with the ancilla prepared in
//! `[[γ₀₀, γ₁₀], [γ₀₁, γ₁₁]]`; coherent mixtures use `L_A(t) = diag(α₀, α₁)`
//! with the ancilla prepared in `diag(w₀, w₁)`.

use num_complex::Complex64 as C64;

use crate::drive::DriveTable;
use crate::envelope::{Envelope, FieldState, TAIL_EPS};
use crate::error::{Error, Result};
use crate::filter::{FilterState, JUMP_THRESHOLD};
use crate::trajectory::{replay_table_counting, replay_table_homodyne};
use crate::grid::TimeGrid;
use crate::hierarchy::{evolve_with_table, rk4_step, HierarchyState, Layout, OdeState};
use crate::operator::{ancilla_sandwich, kron, partial_trace_ancilla, Operator, SystemModel, ANCILLA_DIM};

/// Auxiliary reductions carry a `1/√T(t)`; below this tail they are not compared.
pub const REDUCTION_MIN_TAIL: f64 = 1e-7;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Density operator on system ⊗ ancilla.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedState {
    rho: Operator,
    sys_dim: usize,
}

impl OdeState for ExtendedState {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.rho.axpy(C64::from(a), &x.rho);
    }

    fn is_finite(&self) -> bool {
        self.rho.is_finite()
    }
}

impl ExtendedState {
    /// Product state `ρ(0) ⊗ ρ_A(0)` for the given field.
    pub fn new(fs: &FieldState, rho0: &Operator) -> Result<Self> {
        let rho_a = match fs {
            FieldState::PhotonCombo { gamma, .. } => Operator::from_rows(&[
                vec![C64::from(gamma.g00), gamma.g10()],
                vec![gamma.g01, C64::from(gamma.g11)],
            ])?,
            FieldState::CoherentMixture { weights, .. } => match weights.as_slice() {
                [w] => Operator::diag(&[C64::from(*w), ZERO]),
                [w0, w1] => Operator::diag(&[C64::from(*w0), C64::from(*w1)]),
                _ => return Err(too_many_components(weights.len())),
            },
        };
        Ok(ExtendedState {
            rho: kron(rho0, &rho_a),
            sys_dim: rho0.dim(),
        })
    }

    pub fn from_operator(rho: Operator, sys_dim: usize) -> Result<Self> {
        if rho.dim() != sys_dim * ANCILLA_DIM {
            return Err(Error::DimensionMismatch {
                expected: sys_dim * ANCILLA_DIM,
                found: rho.dim(),
            });
        }
        Ok(ExtendedState { rho, sys_dim })
    }

    pub fn rho(&self) -> &Operator {
        &self.rho
    }

    pub fn sys_dim(&self) -> usize {
        self.sys_dim
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// `Tr_A ρ̃`.
    pub fn system_state(&self) -> Operator {
        partial_trace_ancilla(&self.rho, self.sys_dim).expect("shape checked on construction")
    }

    /// Reduced family matching the hierarchy layout of `fs` at time `t`.
    /// Auxiliaries are zero once `T(t) < TAIL_EPS`, as in the reduced engine.
    pub fn reduce(&self, fs: &FieldState, t: f64) -> Result<HierarchyState> {
        let id = Operator::identity(ANCILLA_DIM);
        let sand = |l: &Operator, r: &Operator| ancilla_sandwich(&self.rho, self.sys_dim, l, r);
        match fs {
            FieldState::PhotonCombo { xi, .. } => {
                let tail = xi.tail_integral(t);
                let rho_s = self.system_state();
                let d = self.sys_dim;
                let (minus, plus, mp) = if tail < TAIL_EPS {
                    (Operator::zeros(d), Operator::zeros(d), Operator::zeros(d))
                } else {
                    let (sm, sp) = (Operator::sigma_minus(), Operator::sigma_plus());
                    let r = 1.0 / tail.sqrt();
                    (&sand(&sm, &id)? * r, &sand(&sp, &id)? * r, &sand(&sm, &sp)? * (r * r))
                };
                HierarchyState::new(Layout::Cascade, vec![rho_s, minus, plus, mp])
            }
            FieldState::CoherentMixture { weights, .. } => {
                let mats = (0..weights.len())
                    .map(|i| sand(&Operator::ket_bra(ANCILLA_DIM, i, i), &id))
                    .collect::<Result<Vec<_>>>()?;
                HierarchyState::new(Layout::Mixture, mats)
            }
        }
    }

    fn renormalize(&mut self, t: f64) -> Result<()> {
        let tr = self.trace();
        if !(tr > 0.0 && tr.is_finite()) || !self.rho.is_finite() {
            return Err(Error::NonFinite { t });
        }
        self.rho *= 1.0 / tr;
        Ok(())
    }
}

fn too_many_components(n: usize) -> Error {
    Error::VariantMismatch(format!("a two-level ancilla synthesizes at most 2 coherent components, got {n}"))
}

/// Time-dependent ancilla coupling `L_A(t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum AncillaGenerator {
    /// `λ(t)σ₋`, switched off once the tail drops below `TAIL_EPS`.
    Photon { xi: Envelope },
    /// `diag(α₀(t), α₁(t))`; a single component is padded with a weightless copy.
    Coherent { alphas: [Envelope; 2] },
}

impl AncillaGenerator {
    pub fn from_field(fs: &FieldState) -> Result<Self> {
        match fs {
            FieldState::PhotonCombo { xi, .. } => Ok(AncillaGenerator::Photon { xi: xi.clone() }),
            FieldState::CoherentMixture { alphas, .. } => match alphas.as_slice() {
                [a] => Ok(AncillaGenerator::Coherent {
                    alphas: [a.clone(), a.clone()],
                }),
                [a0, a1] => Ok(AncillaGenerator::Coherent {
                    alphas: [a0.clone(), a1.clone()],
                }),
                _ => Err(too_many_components(alphas.len())),
            },
        }
    }

    /// `L_A(t)` as a 2×2 operator.
    pub fn coupling(&self, t: f64) -> Operator {
        match self {
            AncillaGenerator::Photon { xi } => Operator::sigma_minus().scale(xi.lambda_coupling(t, TAIL_EPS)),
            AncillaGenerator::Coherent { alphas } => Operator::diag(&[alphas[0].value(t), alphas[1].value(t)]),
        }
    }
}

/// System operators lifted to the product space, with the coupling at one instant.
struct ExtOps {
    h: Operator,
    l: Operator,
    s: Operator,
    l_dag: Operator,
    l_dag_l: Operator,
    /// `I ⊗ L_A(t)`
    a: Operator,
    a_dag: Operator,
    /// `L + S L_A`
    c: Operator,
    /// `H_eff = H − (i/2)(L†L + L_A†L_A + 2L†S L_A)`
    h_eff: Operator,
}

impl ExtOps {
    fn new(model: &SystemModel, la: &Operator) -> Self {
        let id_a = Operator::identity(ANCILLA_DIM);
        let id_s = Operator::identity(model.dim());
        let lift = |x: &Operator| kron(x, &id_a);
        let (h, l, s) = (lift(model.h()), lift(model.l()), lift(model.s()));
        let l_dag = l.dag();
        let l_dag_l = lift(model.l_dag_l());
        let a = kron(&id_s, la);
        let a_dag = a.dag();
        let sa = s.matmul(&a);
        let c = &l + &sa;
        let mut damp = l_dag_l.clone();
        damp += &a_dag.matmul(&a);
        damp.axpy(C64::from(2.0), &l_dag.matmul(&sa));
        let mut h_eff = h.clone();
        h_eff.axpy(C64::new(0.0, -0.5), &damp);
        ExtOps {
            h,
            l,
            s,
            l_dag,
            l_dag_l,
            a,
            a_dag,
            c,
            h_eff,
        }
    }

    /// `𝓛ρ + 𝓛_Aρ + [S L_A ρ, L†] + [L, ρ L_A† S†] + S L_A ρ L_A† S† − L_A ρ L_A†`.
    fn master(&self, rho: &Operator) -> Operator {
        let i = C64::new(0.0, 1.0);
        let ahalf = self.a_dag.matmul(&self.a);
        let mut out = self.h.matmul(rho).scale(-i);
        out.axpy(i, &rho.matmul(&self.h));
        out += &self.l.sandwich(rho);
        out.axpy(C64::from(-0.5), &self.l_dag_l.matmul(rho));
        out.axpy(C64::from(-0.5), &rho.matmul(&self.l_dag_l));
        out += &self.a.sandwich(rho);
        out.axpy(C64::from(-0.5), &ahalf.matmul(rho));
        out.axpy(C64::from(-0.5), &rho.matmul(&ahalf));
        let sa_rho = self.s.matmul(&self.a).matmul(rho);
        out += &sa_rho.matmul(&self.l_dag);
        out -= &self.l_dag.matmul(&sa_rho);
        let rho_as = rho.matmul(&self.a_dag).matmul(&self.s.dag());
        out += &self.l.matmul(&rho_as);
        out -= &rho_as.matmul(&self.l);
        out += &self.s.matmul(&self.a).sandwich(rho);
        out -= &self.a.sandwich(rho);
        out
    }

    /// `−iH_eff ρ + iρH_eff†`.
    fn no_jump(&self, rho: &Operator) -> Operator {
        let i = C64::new(0.0, 1.0);
        let mut out = self.h_eff.matmul(rho).scale(-i);
        out.axpy(i, &rho.matmul(&self.h_eff.dag()));
        out
    }

    fn intensity(&self, rho: &Operator) -> f64 {
        self.c.dag().matmul(&self.c).matmul(rho).trace().re
    }

    fn quadrature(&self, rho: &Operator) -> f64 {
        let x = &self.c + &self.c.dag();
        x.matmul(rho).trace().re
    }

    fn diffusion(&self, rho: &Operator, v: f64) -> Operator {
        let mut out = self.c.matmul(rho);
        out += &rho.matmul(&self.c.dag());
        out.axpy(C64::from(-v), rho);
        out
    }
}

fn check_dims(st: &ExtendedState, model: &SystemModel) -> Result<()> {
    if st.sys_dim != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: st.sys_dim,
        });
    }
    Ok(())
}

/// Time derivative of the extended density operator.
pub fn extended_master_rhs(
    st: &ExtendedState,
    t: f64,
    model: &SystemModel,
    gen: &AncillaGenerator,
) -> Result<Operator> {
    check_dims(st, model)?;
    Ok(ExtOps::new(model, &gen.coupling(t)).master(&st.rho))
}

/// `k_t = Tr[(L + S L_A)†(L + S L_A) ρ̃]`.
pub fn extended_intensity(st: &ExtendedState, t: f64, model: &SystemModel, gen: &AncillaGenerator) -> Result<f64> {
    check_dims(st, model)?;
    Ok(ExtOps::new(model, &gen.coupling(t)).intensity(&st.rho))
}

/// `v_t = Tr[(L + S L_A + h.c.) ρ̃]`.
pub fn extended_quadrature(st: &ExtendedState, t: f64, model: &SystemModel, gen: &AncillaGenerator) -> Result<f64> {
    check_dims(st, model)?;
    Ok(ExtOps::new(model, &gen.coupling(t)).quadrature(&st.rho))
}

/// Couplings at the start, midpoint and end of every step.
struct OpsTable {
    ops: Vec<ExtOps>,
}

impl OpsTable {
    fn new(model: &SystemModel, gen: &AncillaGenerator, grid: &TimeGrid) -> Self {
        let h = 0.5 * grid.dt();
        OpsTable {
            ops: (0..=2 * grid.n_steps())
                .map(|j| ExtOps::new(model, &gen.coupling(j as f64 * h)))
                .collect(),
        }
    }

    fn step(&self, n: usize) -> [&ExtOps; 3] {
        [&self.ops[2 * n], &self.ops[2 * n + 1], &self.ops[2 * n + 2]]
    }
}

fn counting_advance(ops: [&ExtOps; 3], st: &mut ExtendedState, t: f64, dt: f64, jump: bool) -> Result<f64> {
    let k = ops[0].intensity(&st.rho);
    if jump {
        if !(k >= JUMP_THRESHOLD) {
            return Err(Error::VanishingIntensity { k, t });
        }
        st.rho = &ops[0].c.sandwich(&st.rho) * (1.0 / k);
    }
    *st = rk4_step(st, dt, |stage, y| ExtendedState {
        rho: ops[stage].no_jump(&y.rho),
        sys_dim: y.sys_dim,
    });
    st.renormalize(t + dt)?;
    Ok(k)
}

fn homodyne_advance(ops: [&ExtOps; 3], st: &mut ExtendedState, t: f64, dt: f64, dw: f64) -> Result<f64> {
    if !dw.is_finite() {
        return Err(Error::NonFinite { t });
    }
    let v = ops[0].quadrature(&st.rho);
    if dw != 0.0 {
        let b = ops[0].diffusion(&st.rho, v);
        st.rho.axpy(C64::from(dw), &b);
    }
    *st = rk4_step(st, dt, |stage, y| ExtendedState {
        rho: ops[stage].master(&y.rho),
        sys_dim: y.sys_dim,
    });
    st.renormalize(t + dt)?;
    Ok(v)
}

fn step_ops(model: &SystemModel, gen: &AncillaGenerator, t: f64, dt: f64) -> Result<[ExtOps; 3]> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    Ok([t, t + 0.5 * dt, t + dt].map(|s| ExtOps::new(model, &gen.coupling(s))))
}

/// One extended counting step: optional jump at `t`, no-jump flow over
/// `[t, t + dt]`, renormalization. Returns the new state and `k_t`.
pub fn extended_counting_step(
    st: &ExtendedState,
    t: f64,
    dt: f64,
    jump: bool,
    model: &SystemModel,
    gen: &AncillaGenerator,
) -> Result<(ExtendedState, f64)> {
    check_dims(st, model)?;
    let [a, b, c] = step_ops(model, gen, t, dt)?;
    let mut next = st.clone();
    let k = counting_advance([&a, &b, &c], &mut next, t, dt, jump)?;
    Ok((next, k))
}

/// One extended homodyne step: diffusion kick at `t`, master flow over
/// `[t, t + dt]`, renormalization. Returns the new state and `v_t`.
pub fn extended_homodyne_step(
    st: &ExtendedState,
    t: f64,
    dt: f64,
    dw: f64,
    model: &SystemModel,
    gen: &AncillaGenerator,
) -> Result<(ExtendedState, f64)> {
    check_dims(st, model)?;
    let [a, b, c] = step_ops(model, gen, t, dt)?;
    let mut next = st.clone();
    let v = homodyne_advance([&a, &b, &c], &mut next, t, dt, dw)?;
    Ok((next, v))
}

/// Deterministic extended evolution at every node of `grid`.
pub fn evolve_extended(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    grid: &TimeGrid,
) -> Result<Vec<ExtendedState>> {
    let gen = AncillaGenerator::from_field(fs)?;
    let table = OpsTable::new(model, &gen, grid);
    let mut st = ExtendedState::new(fs, rho0)?;
    check_dims(&st, model)?;
    let mut out = Vec::with_capacity(grid.n_nodes());
    out.push(st.clone());
    for n in 0..grid.n_steps() {
        let ops = table.step(n);
        st = rk4_step(&st, grid.dt(), |stage, y| ExtendedState {
            rho: ops[stage].master(&y.rho),
            sys_dim: y.sys_dim,
        });
        if !st.is_finite() {
            return Err(Error::NonFinite { t: grid.time(n + 1) });
        }
        out.push(st.clone());
    }
    Ok(out)
}

/// Amplitudes of the exact ancilla-plus-field state at `t` for the ancilla
/// prepared in `c₀|0⟩ + c₁|1⟩`: ground with vacuum (`c₀`), still excited
/// (`c₁√T(t)`), and decayed into the field (`c₁√(1 − T(t))`).
pub fn ancilla_output_check(xi: &Envelope, c0: C64, c1: C64, t: f64) -> Result<[C64; 3]> {
    let norm = c0.norm_sqr() + c1.norm_sqr();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidField(format!("|c0|² + |c1|² = {norm}, expected 1")));
    }
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let tail = (xi.tail_integral(t) / xi.norm()).clamp(0.0, 1.0);
    Ok([c0, c1 * tail.sqrt(), c1 * (1.0 - tail).sqrt()])
}

/// Unnormalized no-jump propagation `Υ(t₁, t₀)` by RK4 with steps of at most `dt`.
pub fn heff_propagate(
    st: &ExtendedState,
    t0: f64,
    t1: f64,
    dt: f64,
    model: &SystemModel,
    gen: &AncillaGenerator,
) -> Result<ExtendedState> {
    check_dims(st, model)?;
    if !(t1 >= t0) || t0 < 0.0 {
        return Err(Error::InvalidGrid(format!("cannot propagate from {t0} to {t1}")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidGrid(format!("step {dt} is not positive")));
    }
    let n = ((t1 - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    if n == 0 {
        return Ok(st.clone());
    }
    let h = (t1 - t0) / n as f64;
    let mut cur = st.clone();
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let [a, b, c] = step_ops(model, gen, t, h)?;
        let ops = [&a, &b, &c];
        cur = rk4_step(&cur, h, |stage, y| ExtendedState {
            rho: ops[stage].no_jump(&y.rho),
            sys_dim: y.sys_dim,
        });
        if !cur.is_finite() {
            return Err(Error::NonFinite { t: t + h });
        }
    }
    Ok(cur)
}

/// Density of counts at exactly `jump_times` (and none elsewhere) in `(0, horizon]`.
pub fn multi_time_density(
    jump_times: &[f64],
    horizon: f64,
    dt: f64,
    model: &SystemModel,
    gen: &AncillaGenerator,
    initial: &ExtendedState,
) -> Result<f64> {
    if jump_times.windows(2).any(|w| w[1] <= w[0])
        || jump_times.first().is_some_and(|&t| t <= 0.0)
        || jump_times.last().is_some_and(|&t| t >= horizon)
    {
        return Err(Error::UnorderedJumpTimes { horizon });
    }
    let mut st = initial.clone();
    let mut t = 0.0;
    for &tj in jump_times {
        st = heff_propagate(&st, t, tj, dt, model, gen)?;
        let c = ExtOps::new(model, &gen.coupling(tj)).c;
        st.rho = c.sandwich(&st.rho);
        t = tj;
    }
    st = heff_propagate(&st, t, horizon, dt, model, gen)?;
    Ok(st.trace().max(0.0))
}

/// Largest deviations between the reduced engine and the extended oracle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Deviation {
    /// `max ‖ρ_S − Tr_A ρ̃‖_max` (or per-component blocks for mixtures).
    pub state: f64,
    /// Same for ρ⁻, ρ⁺, ρ∓ while `T(t) ≥ REDUCTION_MIN_TAIL`.
    pub auxiliary: f64,
    /// `max |k_t − k̃_t|` or `max |v_t − ṽ_t|`.
    pub rate: f64,
}

impl Deviation {
    pub fn max(&self) -> f64 {
        self.state.max(self.auxiliary).max(self.rate)
    }

    fn absorb(&mut self, other: Deviation) {
        self.state = self.state.max(other.state);
        self.auxiliary = self.auxiliary.max(other.auxiliary);
        self.rate = self.rate.max(other.rate);
    }
}

fn family_gap(fs: &FieldState, t: f64, reduced: &HierarchyState, ext: &ExtendedState) -> Result<Deviation> {
    let want = ext.reduce(fs, t)?;
    let (a, b) = (reduced.matrices(), want.matrices());
    let mut dev = Deviation::default();
    match reduced.layout() {
        Layout::Cascade => {
            dev.state = a[0].max_diff(&b[0]);
            let tail = match fs {
                FieldState::PhotonCombo { xi, .. } => xi.tail_integral(t),
                FieldState::CoherentMixture { .. } => 0.0,
            };
            if tail >= REDUCTION_MIN_TAIL {
                dev.auxiliary = a[1..].iter().zip(&b[1..]).map(|(x, y)| x.max_diff(y)).fold(0.0, f64::max);
            }
        }
        _ => {
            dev.state = a.iter().zip(b).map(|(x, y)| x.max_diff(y)).fold(0.0, f64::max);
        }
    }
    Ok(dev)
}

/// Deterministic comparison of the reduced hierarchy (run on `table`,
/// normally the true drive table) against the extended master equation.
/// Both sides drop the photon channel at the same node.
pub fn compare_deterministic(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    table: &DriveTable,
) -> Result<Deviation> {
    let grid = *table.grid();
    let reduced = evolve_with_table(model, &HierarchyState::initial(fs, rho0), table, true)?;
    let ext = evolve_extended(model, fs, rho0, &grid)?;
    let gamma = match fs {
        FieldState::PhotonCombo { gamma, .. } => Some(gamma),
        FieldState::CoherentMixture { .. } => None,
    };
    let mut dev = Deviation::default();
    for (n, (r, e)) in reduced.iter().zip(&ext).enumerate() {
        let t = grid.time(n);
        let r = match gamma {
            Some(g) if r.layout() == Layout::Fock => r.fock_to_cascade(g)?,
            _ => r.clone(),
        };
        dev.absorb(family_gap(fs, t, &r, e)?);
    }
    Ok(dev)
}

/// Replays the click pattern `jumps` through both the reduced filter (on
/// `table`) and the extended filter and reports the largest disagreement.
pub fn compare_counting_record(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    table: &DriveTable,
    jumps: &[bool],
) -> Result<Deviation> {
    let grid = *table.grid();
    let reduced = replay_table_counting(model, table, FilterState::new(fs, rho0)?, jumps)?;
    let gen = AncillaGenerator::from_field(fs)?;
    let ops = OpsTable::new(model, &gen, &grid);
    let mut ext = ExtendedState::new(fs, rho0)?;
    let mut dev = Deviation::default();
    for (n, (st, k)) in reduced.iter().enumerate() {
        let t = grid.time(n);
        let mut d = family_gap(fs, t, st.hierarchy(), &ext)?;
        d.rate = (k - ops.ops[2 * n].intensity(&ext.rho)).abs();
        dev.absorb(d);
        if n < grid.n_steps() {
            counting_advance(ops.step(n), &mut ext, t, grid.dt(), jumps[n])?;
        }
    }
    Ok(dev)
}

/// Same as [`compare_counting_record`] for a homodyne innovation sequence.
pub fn compare_homodyne_record(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    table: &DriveTable,
    dw: &[f64],
) -> Result<Deviation> {
    let grid = *table.grid();
    let reduced = replay_table_homodyne(model, table, FilterState::new(fs, rho0)?, dw)?;
    let gen = AncillaGenerator::from_field(fs)?;
    let ops = OpsTable::new(model, &gen, &grid);
    let mut ext = ExtendedState::new(fs, rho0)?;
    let mut dev = Deviation::default();
    for (n, (st, v)) in reduced.iter().enumerate() {
        let t = grid.time(n);
        let mut d = family_gap(fs, t, st.hierarchy(), &ext)?;
        d.rate = (v - ops.ops[2 * n].quadrature(&ext.rho)).abs();
        dev.absorb(d);
        if n < grid.n_steps() {
            homodyne_advance(ops.step(n), &mut ext, t, grid.dt(), dw[n])?;
        }
    }
    Ok(dev)
}
