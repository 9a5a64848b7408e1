//! Quantum trajectories under counting and homodyne detection, and
//! reproducible ensembles of them.
//!
//! Randomness: trajectory `i` of an ensemble with master seed `s` uses a
//! ChaCha8 stream seeded with `splitmix64(s + (i + 1)·0x9E3779B97F4A7C15)`.
//! A counting step draws one uniform `u` and clicks iff `u < k_t·dt`; a
//! homodyne step draws one standard normal and scales it by `√dt`.
//! Ensembles are reduced chunk by chunk in index order, so statistics do not
//! depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drive::DriveTable;
use crate::envelope::FieldState;
use crate::error::{Error, Result};
use crate::filter::{counting_step_at, homodyne_advance, intensity_raw, jump_at, FilterState, JUMP_THRESHOLD};
use crate::hierarchy::{HierarchyState, Layout};
use crate::propagate::Tables;
use crate::hierarchy::quadrature_at;
use crate::grid::TimeGrid;
use crate::operator::{Operator, SystemModel};

/// Trajectories per reduction chunk.
pub const CHUNK: usize = 32;

/// `k_t·dt` above which a step is flagged as too coarse.
pub const COARSE_STEP_PROB: f64 = 0.1;

/// Ensembles at least this large tabulate the per-step linear maps once
/// instead of integrating every trajectory from scratch.
pub const TABULATE_FROM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Counting,
    Homodyne,
}

/// Observed output record on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub scheme: Scheme,
    pub grid: TimeGrid,
    /// Step indices `n` of the counts; the count is registered at `t_n`.
    pub jump_steps: Vec<usize>,
    /// `dY` per step (homodyne only).
    pub dy: Vec<f64>,
}

impl MeasurementRecord {
    pub fn jump_times(&self) -> Vec<f64> {
        self.jump_steps.iter().map(|&n| self.grid.time(n)).collect()
    }

    pub fn count(&self) -> usize {
        self.jump_steps.len()
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = self.grid.horizon();
        if self.jump_steps.windows(2).any(|w| w[1] <= w[0]) || self.jump_steps.iter().any(|&n| n >= self.grid.n_steps()) {
            return Err(Error::UnorderedJumpTimes { horizon });
        }
        match self.scheme {
            Scheme::Counting if !self.dy.is_empty() => {
                Err(Error::VariantMismatch("counting records carry no dY increments".into()))
            }
            Scheme::Homodyne if self.dy.len() != self.grid.n_steps() || self.dy.iter().any(|x| !x.is_finite()) => {
                Err(Error::VariantMismatch("homodyne record needs one finite dY per step".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Counters for conditions that are tolerated but worth knowing about.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Nodes where round-off made `k_t` slightly negative and it was clamped to 0.
    pub clamped_intensity: usize,
    /// Steps with `k_t·dt > COARSE_STEP_PROB`.
    pub coarse_steps: usize,
}

impl Diagnostics {
    fn merge(&mut self, other: &Diagnostics) {
        self.clamped_intensity += other.clamped_intensity;
        self.coarse_steps += other.coarse_steps;
    }
}

/// One simulated trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryResult {
    pub record: MeasurementRecord,
    /// `1 − ⟨0|ρ̂_S|0⟩` at every node.
    pub p_exc: Vec<f64>,
    /// `k_t` (counting) or `v_t` (homodyne) at every node.
    pub rate: Vec<f64>,
    pub final_state: FilterState,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

/// Population outside the ground state.
#[inline]
pub fn excitation(rho: &Operator) -> f64 {
    1.0 - rho[(0, 0)].re
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trajectory `index` in an ensemble.
pub fn trajectory_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// What the engine reports at every node.
pub(crate) struct NodeView<'a> {
    pub n: usize,
    pub state: &'a FilterState,
    pub rate: f64,
}

/// Counting trajectory with an external click rule `decide(n, k_t·dt)`.
pub(crate) fn run_counting(
    model: &SystemModel,
    table: &DriveTable,
    mut st: FilterState,
    mut decide: impl FnMut(usize, f64) -> bool,
    mut observe: impl FnMut(NodeView<'_>),
) -> Result<(FilterState, Vec<usize>, Diagnostics)> {
    let grid = *table.grid();
    let dt = grid.dt();
    let mut jumps = Vec::new();
    let mut diag = Diagnostics::default();
    for n in 0..=grid.n_steps() {
        let t = grid.time(n);
        let d = table.node(n);
        if !d.live {
            st.zero_auxiliaries();
        }
        let raw = intensity_raw(model, d, st.hierarchy());
        if raw < 0.0 {
            diag.clamped_intensity += 1;
        }
        let k = raw.max(0.0);
        observe(NodeView { n, state: &st, rate: k });
        if n == grid.n_steps() {
            break;
        }
        let p = k * dt;
        if p > COARSE_STEP_PROB {
            diag.coarse_steps += 1;
        }
        let jump = decide(n, p);
        if jump {
            if k < JUMP_THRESHOLD {
                return Err(Error::VanishingIntensity { k, t });
            }
            jumps.push(n);
        }
        counting_step_at(model, table.step(n), &mut st, t, dt, jump)?;
    }
    Ok((st, jumps, diag))
}

/// Homodyne trajectory driven by innovations `noise(n)`; returns `dY` per step.
pub(crate) fn run_homodyne(
    model: &SystemModel,
    table: &DriveTable,
    mut st: FilterState,
    mut noise: impl FnMut(usize) -> f64,
    mut observe: impl FnMut(NodeView<'_>),
) -> Result<(FilterState, Vec<f64>)> {
    let grid = *table.grid();
    let dt = grid.dt();
    let mut dy = Vec::with_capacity(grid.n_steps());
    for n in 0..=grid.n_steps() {
        if !table.node(n).live {
            st.zero_auxiliaries();
        }
        let v = quadrature_at(model, table.node(n), st.hierarchy()).re;
        observe(NodeView { n, state: &st, rate: v });
        if n == grid.n_steps() {
            break;
        }
        let t = grid.time(n);
        let dw = noise(n);
        if !dw.is_finite() {
            return Err(Error::NonFinite { t });
        }
        homodyne_advance(model, table.step(n), &mut st, t, dt, dw, v)?;
        dy.push(v * dt + dw);
    }
    Ok((st, dy))
}

/// System block of a flattened normalized family.
fn flat_system(layout: Layout, dd: usize, x: &[C64], out: &mut [C64]) {
    out.copy_from_slice(&x[..dd]);
    if layout == Layout::Mixture {
        for comp in x[dd..].chunks_exact(dd) {
            for (o, z) in out.iter_mut().zip(comp) {
                *o += z;
            }
        }
    }
}

/// Divide by the system trace; `t` is reported if the state broke down.
fn flat_renormalize(layout: Layout, d: usize, x: &mut [C64], t: f64) -> Result<()> {
    let dd = d * d;
    let blocks = if layout == Layout::Mixture { x.len() / dd } else { 1 };
    let tr: f64 = (0..blocks).flat_map(|b| (0..d).map(move |i| b * dd + i * d + i)).map(|k| x[k].re).sum();
    if !(tr > 0.0 && tr.is_finite()) || x.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite { t });
    }
    let inv = 1.0 / tr;
    for z in x.iter_mut() {
        *z *= inv;
    }
    Ok(())
}

/// Flattened-state counting trajectory driven by tabulated maps; same
/// scheme as `run_counting`. `observe(n, ρ̂_S entries, k_t)`.
fn run_counting_tabulated(
    model: &SystemModel,
    table: &DriveTable,
    tabs: &Tables,
    start: &HierarchyState,
    mut decide: impl FnMut(usize, f64) -> bool,
    mut observe: impl FnMut(usize, &[C64], f64),
) -> Result<(Vec<usize>, Diagnostics)> {
    let grid = *table.grid();
    let dt = grid.dt();
    let (layout, d) = (start.layout(), start.dim());
    let dd = d * d;
    let mut scratch = start.clone();
    let mut x = start.flat_copy().to_vec();
    let mut y = x.clone();
    let mut sys = vec![C64::new(0.0, 0.0); dd];
    let mut jumps = Vec::new();
    let mut diag = Diagnostics::default();
    for n in 0..=grid.n_steps() {
        let t = grid.time(n);
        if !table.node(n).live && layout == Layout::Cascade {
            x[dd..].fill(C64::new(0.0, 0.0));
        }
        let raw = tabs.rate.eval(n, &x).re;
        if raw < 0.0 {
            diag.clamped_intensity += 1;
        }
        let k = raw.max(0.0);
        flat_system(layout, dd, &x, &mut sys);
        observe(n, &sys, k);
        if n == grid.n_steps() {
            break;
        }
        let p = k * dt;
        if p > COARSE_STEP_PROB {
            diag.coarse_steps += 1;
        }
        if decide(n, p) {
            if k < JUMP_THRESHOLD {
                return Err(Error::VanishingIntensity { k, t });
            }
            jumps.push(n);
            scratch.flat_fill(|i| x[i]);
            let after = jump_at(model, table.node(n), &scratch, t)?;
            x.copy_from_slice(&after.flat_copy());
        }
        tabs.flow.apply_into(n, &x, &mut y);
        std::mem::swap(&mut x, &mut y);
        flat_renormalize(layout, d, &mut x, t + dt)?;
    }
    Ok((jumps, diag))
}

/// Flattened-state homodyne trajectory; same scheme as `run_homodyne`.
fn run_homodyne_tabulated(
    table: &DriveTable,
    tabs: &Tables,
    start: &HierarchyState,
    mut noise: impl FnMut(usize) -> f64,
    mut observe: impl FnMut(usize, &[C64], f64),
) -> Result<()> {
    let grid = *table.grid();
    let dt = grid.dt();
    let (layout, d) = (start.layout(), start.dim());
    let dd = d * d;
    let kick = tabs.kick.as_ref().expect("homodyne tables carry diffusion maps");
    let mut x = start.flat_copy().to_vec();
    let mut y = x.clone();
    let mut sys = vec![C64::new(0.0, 0.0); dd];
    for n in 0..=grid.n_steps() {
        if !table.node(n).live && layout == Layout::Cascade {
            x[dd..].fill(C64::new(0.0, 0.0));
        }
        let v = tabs.rate.eval(n, &x).re;
        flat_system(layout, dd, &x, &mut sys);
        observe(n, &sys, v);
        if n == grid.n_steps() {
            break;
        }
        let t = grid.time(n);
        let dw = noise(n);
        if !dw.is_finite() {
            return Err(Error::NonFinite { t });
        }
        if dw != 0.0 {
            kick.affine_into(n, &x, &mut y, C64::from(dw), C64::from(1.0 - dw * v));
            std::mem::swap(&mut x, &mut y);
        }
        tabs.flow.apply_into(n, &x, &mut y);
        std::mem::swap(&mut x, &mut y);
        flat_renormalize(layout, d, &mut x, t + dt)?;
    }
    Ok(())
}

/// Clicks iff `u < k_t·dt`, never below the jump threshold. One uniform per step.
fn uniform_decider(rng: &mut ChaCha8Rng, dt: f64) -> impl FnMut(usize, f64) -> bool + '_ {
    let floor = JUMP_THRESHOLD * dt;
    move |_, p| {
        let u: f64 = rng.random();
        p >= floor && u < p
    }
}

fn gaussian_noise(rng: &mut ChaCha8Rng, dt: f64) -> impl FnMut(usize) -> f64 + '_ {
    let sd = dt.sqrt();
    move |_| sd * rng.sample::<f64, _>(StandardNormal)
}

fn collect_result(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    table: &DriveTable,
    scheme: Scheme,
    seed: u64,
) -> Result<TrajectoryResult> {
    let grid = *table.grid();
    let st = FilterState::new(fs, rho0)?;
    st.hierarchy().check_field(fs, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p_exc = Vec::with_capacity(grid.n_nodes());
    let mut rate = Vec::with_capacity(grid.n_nodes());
    let observe = |v: NodeView<'_>| {
        p_exc.push(excitation(&v.state.system_state()));
        rate.push(v.rate);
    };
    let (final_state, record, diagnostics) = match scheme {
        Scheme::Counting => {
            let (fin, jumps, diag) = run_counting(model, table, st, uniform_decider(&mut rng, grid.dt()), observe)?;
            let rec = MeasurementRecord {
                scheme,
                grid,
                jump_steps: jumps,
                dy: Vec::new(),
            };
            (fin, rec, diag)
        }
        Scheme::Homodyne => {
            let (fin, dy) = run_homodyne(model, table, st, gaussian_noise(&mut rng, grid.dt()), observe)?;
            let rec = MeasurementRecord {
                scheme,
                grid,
                jump_steps: Vec::new(),
                dy,
            };
            (fin, rec, Diagnostics::default())
        }
    };
    Ok(TrajectoryResult {
        record,
        p_exc,
        rate,
        final_state,
        seed,
        diagnostics,
    })
}

/// One photon-counting trajectory.
pub fn simulate_counting(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    grid: &TimeGrid,
    seed: u64,
) -> Result<TrajectoryResult> {
    collect_result(model, fs, rho0, &DriveTable::new(fs, *grid), Scheme::Counting, seed)
}

/// One homodyne trajectory.
pub fn simulate_homodyne(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    grid: &TimeGrid,
    seed: u64,
) -> Result<TrajectoryResult> {
    collect_result(model, fs, rho0, &DriveTable::new(fs, *grid), Scheme::Homodyne, seed)
}

/// Counting trajectory whose clicks are chosen by `decide(n, k_t·dt)`.
/// Deciding to click where `k_t` is below the jump threshold is an error.
pub fn simulate_counting_with(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    grid: &TimeGrid,
    decide: impl FnMut(usize, f64) -> bool,
) -> Result<TrajectoryResult> {
    let table = DriveTable::new(fs, *grid);
    let st = FilterState::new(fs, rho0)?;
    st.hierarchy().check_field(fs, model)?;
    let mut p_exc = Vec::with_capacity(grid.n_nodes());
    let mut rate = Vec::with_capacity(grid.n_nodes());
    let (final_state, jump_steps, diagnostics) = run_counting(model, &table, st, decide, |v| {
        p_exc.push(excitation(&v.state.system_state()));
        rate.push(v.rate);
    })?;
    Ok(TrajectoryResult {
        record: MeasurementRecord {
            scheme: Scheme::Counting,
            grid: *grid,
            jump_steps,
            dy: Vec::new(),
        },
        p_exc,
        rate,
        final_state,
        seed: 0,
        diagnostics,
    })
}

/// Counting trajectory that replays a prescribed click sequence
/// (`jumps[n]` says whether step `n` clicks).
pub fn replay_counting(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    grid: &TimeGrid,
    jumps: &[bool],
) -> Result<Vec<FilterState>> {
    let table = DriveTable::new(fs, *grid);
    let st = FilterState::new(fs, rho0)?;
    st.hierarchy().check_field(fs, model)?;
    Ok(replay_table_counting(model, &table, st, jumps)?.into_iter().map(|(s, _)| s).collect())
}

/// Homodyne trajectory driven by prescribed innovations `dW`.
pub fn replay_homodyne(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    grid: &TimeGrid,
    dw: &[f64],
) -> Result<Vec<FilterState>> {
    let table = DriveTable::new(fs, *grid);
    let st = FilterState::new(fs, rho0)?;
    st.hierarchy().check_field(fs, model)?;
    Ok(replay_table_homodyne(model, &table, st, dw)?.into_iter().map(|(s, _)| s).collect())
}

/// Filter states and `k_t` at every node for a prescribed click pattern on `table`.
pub(crate) fn replay_table_counting(
    model: &SystemModel,
    table: &DriveTable,
    st: FilterState,
    jumps: &[bool],
) -> Result<Vec<(FilterState, f64)>> {
    check_record_len(jumps.len(), table.grid())?;
    let mut out = Vec::with_capacity(table.grid().n_nodes());
    run_counting(model, table, st, |n, _| jumps[n], |v| out.push((v.state.clone(), v.rate)))?;
    Ok(out)
}

/// Filter states and `v_t` at every node for prescribed innovations on `table`.
pub(crate) fn replay_table_homodyne(
    model: &SystemModel,
    table: &DriveTable,
    st: FilterState,
    dw: &[f64],
) -> Result<Vec<(FilterState, f64)>> {
    check_record_len(dw.len(), table.grid())?;
    let mut out = Vec::with_capacity(table.grid().n_nodes());
    run_homodyne(model, table, st, |n| dw[n], |v| out.push((v.state.clone(), v.rate)))?;
    Ok(out)
}

fn check_record_len(len: usize, grid: &TimeGrid) -> Result<()> {
    if len != grid.n_steps() {
        return Err(Error::InvalidGrid(format!("record of length {len} for {} steps", grid.n_steps())));
    }
    Ok(())
}

/// Per-node sums for mean and standard error.
#[derive(Clone, Debug, PartialEq)]
struct Moments {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            sum: vec![0.0; n],
            sumsq: vec![0.0; n],
        }
    }

    #[inline]
    fn add(&mut self, i: usize, x: f64) {
        self.sum[i] += x;
        self.sumsq[i] += x * x;
    }

    fn merge(&mut self, other: &Moments) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
    }

    fn finish(&self, m: usize) -> Series {
        let mf = m as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / mf).collect();
        let stderr = self
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(sq, mu)| {
                if m < 2 {
                    return 0.0;
                }
                let var = ((sq / mf - mu * mu) * mf / (mf - 1.0)).max(0.0);
                (var / mf).sqrt()
            })
            .collect();
        Series { mean, stderr }
    }
}

/// Mean and standard error per node (or per scalar).
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Ensemble statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub scheme: Scheme,
    pub grid: TimeGrid,
    pub trajectories: usize,
    pub master_seed: u64,
    pub p_exc: Series,
    /// `k_t` or `v_t`.
    pub rate: Series,
    /// Fraction of trajectories with at least one count in `(0, t_n]` (counting only).
    pub atleast_one: Option<Series>,
    /// `Re ρ̂_S[i,j]` and `Im ρ̂_S[i,j]`, row-major.
    pub rho_re: Vec<Series>,
    pub rho_im: Vec<Series>,
    /// `histogram[c]` = number of trajectories with `c` counts.
    pub count_histogram: Vec<usize>,
    /// Per-trajectory `N_T − Σ_n k_{t_n}·dt` (counting only).
    pub compensated_count: Series,
    /// Sample mean and variance of all collected `dW` (homodyne only).
    pub dw_mean: f64,
    pub dw_var: f64,
    pub dw_samples: usize,
    pub diagnostics: Diagnostics,
}

impl EnsembleStats {
    /// Zero-count fraction.
    pub fn zero_count_fraction(&self) -> f64 {
        self.count_histogram.first().copied().unwrap_or(0) as f64 / self.trajectories as f64
    }
}

#[derive(Clone)]
struct ChunkAcc {
    p_exc: Moments,
    rate: Moments,
    atleast: Moments,
    rho_re: Vec<Moments>,
    rho_im: Vec<Moments>,
    hist: Vec<usize>,
    compensated: Moments,
    dw_sum: f64,
    dw_sumsq: f64,
    dw_n: usize,
    diag: Diagnostics,
}

impl ChunkAcc {
    fn new(nodes: usize, d: usize) -> Self {
        ChunkAcc {
            p_exc: Moments::new(nodes),
            rate: Moments::new(nodes),
            atleast: Moments::new(nodes),
            rho_re: (0..d * d).map(|_| Moments::new(nodes)).collect(),
            rho_im: (0..d * d).map(|_| Moments::new(nodes)).collect(),
            hist: Vec::new(),
            compensated: Moments::new(1),
            dw_sum: 0.0,
            dw_sumsq: 0.0,
            dw_n: 0,
            diag: Diagnostics::default(),
        }
    }

    fn merge(&mut self, o: &ChunkAcc) {
        self.p_exc.merge(&o.p_exc);
        self.rate.merge(&o.rate);
        self.atleast.merge(&o.atleast);
        for (a, b) in self.rho_re.iter_mut().zip(&o.rho_re) {
            a.merge(b);
        }
        for (a, b) in self.rho_im.iter_mut().zip(&o.rho_im) {
            a.merge(b);
        }
        if self.hist.len() < o.hist.len() {
            self.hist.resize(o.hist.len(), 0);
        }
        for (a, b) in self.hist.iter_mut().zip(&o.hist) {
            *a += b;
        }
        self.compensated.merge(&o.compensated);
        self.dw_sum += o.dw_sum;
        self.dw_sumsq += o.dw_sumsq;
        self.dw_n += o.dw_n;
        self.diag.merge(&o.diag);
    }
}

/// Ensemble settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub scheme: Scheme,
    pub trajectories: usize,
    pub master_seed: u64,
    /// Worker cap; `None` or `Some(0)` uses every available core.
    pub threads: Option<usize>,
}

/// Worker cap from `NCFILTER_THREADS` (unset, unparsable or 0 → automatic).
pub fn threads_from_env() -> Option<usize> {
    std::env::var("NCFILTER_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

impl ChunkAcc {
    #[inline]
    fn observe(&mut self, n: usize, rho: &[C64], rate: f64) {
        self.p_exc.add(n, 1.0 - rho[0].re);
        self.rate.add(n, rate);
        for (idx, z) in rho.iter().enumerate() {
            self.rho_re[idx].add(n, z.re);
            self.rho_im[idx].add(n, z.im);
        }
    }
}

fn run_chunk(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    table: &DriveTable,
    tabs: Option<&Tables>,
    cfg: &EnsembleConfig,
    range: std::ops::Range<usize>,
) -> Result<ChunkAcc> {
    let grid = *table.grid();
    let d = model.dim();
    let mut acc = ChunkAcc::new(grid.n_nodes(), d);
    let dt = grid.dt();
    let start = FilterState::new(fs, rho0)?;
    for i in range {
        let seed = trajectory_seed(cfg.master_seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match cfg.scheme {
            Scheme::Counting => {
                let mut int_k = 0.0;
                let mut decide = uniform_decider(&mut rng, dt);
                let decide = |n: usize, p: f64| {
                    int_k += p;
                    decide(n, p)
                };
                let (jumps, diag) = match tabs {
                    Some(tb) => run_counting_tabulated(model, table, tb, start.hierarchy(), decide, |n, rho, k| {
                        acc.observe(n, rho, k)
                    })?,
                    None => {
                        let (_, jumps, diag) = run_counting(model, table, start.clone(), decide, |v| {
                            acc.observe(v.n, v.state.system_state().entries(), v.rate)
                        })?;
                        (jumps, diag)
                    }
                };
                acc.diag.merge(&diag);
                // a count at step n is registered at t_n and shows up from node n + 1 on
                if let Some(&first) = jumps.first() {
                    for n in first + 1..grid.n_nodes() {
                        acc.atleast.add(n, 1.0);
                    }
                }
                let counted = jumps.len();
                if acc.hist.len() <= counted {
                    acc.hist.resize(counted + 1, 0);
                }
                acc.hist[counted] += 1;
                acc.compensated.add(0, counted as f64 - int_k);
            }
            Scheme::Homodyne => {
                let mut draw = gaussian_noise(&mut rng, dt);
                let (mut s, mut sq) = (0.0, 0.0);
                let noise = |n: usize| {
                    let w = draw(n);
                    s += w;
                    sq += w * w;
                    w
                };
                match tabs {
                    Some(tb) => {
                        run_homodyne_tabulated(table, tb, start.hierarchy(), noise, |n, rho, v| acc.observe(n, rho, v))?
                    }
                    None => {
                        run_homodyne(model, table, start.clone(), noise, |v| {
                            acc.observe(v.n, v.state.system_state().entries(), v.rate)
                        })?;
                    }
                }
                acc.dw_sum += s;
                acc.dw_sumsq += sq;
                acc.dw_n += grid.n_steps();
                if acc.hist.is_empty() {
                    acc.hist.resize(1, 0);
                }
                acc.hist[0] += 1;
            }
        }
    }
    Ok(acc)
}

/// Run `cfg.trajectories` trajectories and reduce them deterministically.
pub fn run_ensemble(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    grid: &TimeGrid,
    cfg: &EnsembleConfig,
) -> Result<EnsembleStats> {
    run_ensemble_with_table(model, fs, rho0, &DriveTable::new(fs, *grid), cfg)
}

pub(crate) fn run_ensemble_with_table(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    table: &DriveTable,
    cfg: &EnsembleConfig,
) -> Result<EnsembleStats> {
    let m = cfg.trajectories;
    if m == 0 {
        return Err(Error::InvalidGrid("an ensemble needs at least one trajectory".into()));
    }
    FilterState::new(fs, rho0)?.hierarchy().check_field(fs, model)?;
    let grid = *table.grid();
    let tabs = if m >= TABULATE_FROM {
        let template = FilterState::new(fs, rho0)?.into_hierarchy();
        Tables::build(model, table, &template, cfg.scheme)
    } else {
        None
    };
    let ranges: Vec<_> = (0..m).step_by(CHUNK).map(|s| s..(s + CHUNK).min(m)).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads.filter(|&n| n > 0) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidGrid(format!("cannot start worker pool: {e}")))?;
    let wave = pool.current_num_threads().max(1);
    let mut total = ChunkAcc::new(grid.n_nodes(), model.dim());
    for batch in ranges.chunks(wave) {
        let parts: Vec<Result<ChunkAcc>> = pool.install(|| {
            batch
                .par_iter()
                .map(|r| run_chunk(model, fs, rho0, table, tabs.as_ref(), cfg, r.clone()))
                .collect()
        });
        for p in parts {
            total.merge(&p?);
        }
    }
    let counting = cfg.scheme == Scheme::Counting;
    let (dw_mean, dw_var) = if total.dw_n > 1 {
        let n = total.dw_n as f64;
        let mean = total.dw_sum / n;
        (mean, (total.dw_sumsq / n - mean * mean) * n / (n - 1.0))
    } else {
        (0.0, 0.0)
    };
    Ok(EnsembleStats {
        scheme: cfg.scheme,
        grid,
        trajectories: m,
        master_seed: cfg.master_seed,
        p_exc: total.p_exc.finish(m),
        rate: total.rate.finish(m),
        atleast_one: counting.then(|| total.atleast.finish(m)),
        rho_re: total.rho_re.iter().map(|x| x.finish(m)).collect(),
        rho_im: total.rho_im.iter().map(|x| x.finish(m)).collect(),
        count_histogram: total.hist,
        compensated_count: total.compensated.finish(m),
        dw_mean,
        dw_var,
        dw_samples: total.dw_n,
        diagnostics: total.diag,
    })
}

/// Click steps of trajectories `0..m` of the counting ensemble seeded by
/// `master_seed` (the same trajectories [`run_ensemble`] averages over).
pub fn counting_records(
    model: &SystemModel,
    fs: &FieldState,
    rho0: &Operator,
    grid: &TimeGrid,
    master_seed: u64,
    m: usize,
) -> Result<Vec<Vec<usize>>> {
    let table = DriveTable::new(fs, *grid);
    let start = FilterState::new(fs, rho0)?;
    start.hierarchy().check_field(fs, model)?;
    let tabs = if m >= TABULATE_FROM {
        Tables::build(model, &table, start.hierarchy(), Scheme::Counting)
    } else {
        None
    };
    (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trajectory_seed(master_seed, i as u64));
            let decide = uniform_decider(&mut rng, grid.dt());
            match &tabs {
                Some(tb) => Ok(run_counting_tabulated(model, &table, tb, start.hierarchy(), decide, |_, _, _| {})?.0),
                None => Ok(run_counting(model, &table, start.clone(), decide, |_| {})?.1),
            }
        })
        .collect()
}

/// Normalized histogram of the total number of counts per trajectory.
pub fn empirical_count_distribution(results: &[TrajectoryResult]) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Err(Error::VariantMismatch("no trajectories given".into()));
    }
    if results.iter().any(|r| r.record.scheme != Scheme::Counting) {
        return Err(Error::VariantMismatch("count statistics need counting trajectories".into()));
    }
    let max = results.iter().map(|r| r.record.count()).max().unwrap_or(0);
    let mut hist = vec![0.0; max + 1];
    for r in results {
        hist[r.record.count()] += 1.0;
    }
    let m = results.len() as f64;
    Ok(hist.into_iter().map(|c| c / m).collect())
}
