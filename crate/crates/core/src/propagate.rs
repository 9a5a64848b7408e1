//! Per-step linear propagators. Between counts, and for the drift part of a
//! homodyne step, every trajectory applies the same linear map to its
//! family, so large ensembles tabulate that map once per step.

use num_complex::Complex64 as C64;

use crate::drive::DriveTable;
use crate::filter::{diffusion_at, drift_flow, nocount_flow};
use crate::hierarchy::{intensity_at, quadrature_at, HierarchyState};
use crate::operator::SystemModel;
use crate::trajectory::Scheme;

/// Tables larger than this many bytes are not built.
const MAX_TABLE_BYTES: usize = 1 << 29;

fn zero_like(template: &HierarchyState) -> HierarchyState {
    let mut zero = template.clone();
    for k in 0..template.flat_len() {
        zero.flat_set(k, C64::new(0.0, 0.0));
    }
    zero
}

fn unit(zero: &HierarchyState, k: usize) -> HierarchyState {
    let mut e = zero.clone();
    e.flat_set(k, C64::new(1.0, 0.0));
    e
}

/// Sparse `len × len` matrices, one per step, stored row by row.
pub(crate) struct StepMaps {
    len: usize,
    /// Offsets into `cols`/`vals`; `len + 1` entries per step.
    ptr: Vec<u32>,
    cols: Vec<u16>,
    vals: Vec<C64>,
}

impl StepMaps {
    /// Tabulates `step(n, ·)` by applying it to each unit vector of the
    /// flattened family shaped like `template`. Exact zeros are dropped.
    pub(crate) fn build(
        template: &HierarchyState,
        steps: usize,
        mut step: impl FnMut(usize, &HierarchyState) -> HierarchyState,
    ) -> Self {
        let len = template.flat_len();
        assert!(len <= u16::MAX as usize, "family too large to tabulate");
        let zero = zero_like(template);
        let units: Vec<_> = (0..len).map(|k| unit(&zero, k)).collect();
        let mut maps = StepMaps {
            len,
            ptr: Vec::with_capacity(steps * (len + 1)),
            cols: Vec::new(),
            vals: Vec::new(),
        };
        let mut dense = vec![C64::new(0.0, 0.0); len * len];
        for n in 0..steps {
            for (k, e) in units.iter().enumerate() {
                let out = step(n, e);
                for i in 0..len {
                    dense[i * len + k] = out.flat_get(i);
                }
            }
            for i in 0..len {
                maps.ptr.push(maps.vals.len() as u32);
                for k in 0..len {
                    let z = dense[i * len + k];
                    if z != C64::new(0.0, 0.0) {
                        maps.cols.push(k as u16);
                        maps.vals.push(z);
                    }
                }
            }
            maps.ptr.push(maps.vals.len() as u32);
        }
        maps
    }

    /// `y = a·M_n·x + b·x`.
    #[inline]
    pub(crate) fn affine_into(&self, n: usize, x: &[C64], y: &mut [C64], a: C64, b: C64) {
        let ptr = &self.ptr[n * (self.len + 1)..(n + 1) * (self.len + 1)];
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (ptr[i] as usize, ptr[i + 1] as usize);
            let mut acc = C64::new(0.0, 0.0);
            for (&c, v) in self.cols[lo..hi].iter().zip(&self.vals[lo..hi]) {
                acc += v * x[c as usize];
            }
            *yi = a * acc + b * x[i];
        }
    }

    /// `y = M_n·x`.
    #[inline]
    pub(crate) fn apply_into(&self, n: usize, x: &[C64], y: &mut [C64]) {
        let ptr = &self.ptr[n * (self.len + 1)..(n + 1) * (self.len + 1)];
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (ptr[i] as usize, ptr[i + 1] as usize);
            let mut acc = C64::new(0.0, 0.0);
            for (&c, v) in self.cols[lo..hi].iter().zip(&self.vals[lo..hi]) {
                acc += v * x[c as usize];
            }
            *yi = acc;
        }
    }
}

/// One linear functional per node, stored as coefficient rows.
pub(crate) struct LinearForms {
    len: usize,
    data: Vec<C64>,
}

impl LinearForms {
    pub(crate) fn build(
        template: &HierarchyState,
        nodes: usize,
        mut form: impl FnMut(usize, &HierarchyState) -> C64,
    ) -> Self {
        let len = template.flat_len();
        let zero = zero_like(template);
        let units: Vec<_> = (0..len).map(|k| unit(&zero, k)).collect();
        let mut data = Vec::with_capacity(nodes * len);
        for n in 0..nodes {
            data.extend(units.iter().map(|e| form(n, e)));
        }
        LinearForms { len, data }
    }

    #[inline]
    pub(crate) fn eval(&self, n: usize, x: &[C64]) -> C64 {
        let w = &self.data[n * self.len..(n + 1) * self.len];
        w.iter().zip(x).fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a * b)
    }
}

/// Everything a trajectory needs per step, tabulated on a grid.
pub(crate) struct Tables {
    /// No-count flow (counting) or master-equation flow (homodyne).
    pub flow: StepMaps,
    /// `k_t` or `v_t` at every node.
    pub rate: LinearForms,
    /// Diffusion coefficients with `v = 0` at every step start (homodyne).
    pub kick: Option<StepMaps>,
}

impl Tables {
    /// `None` when the tables would not fit the memory budget.
    pub(crate) fn build(model: &SystemModel, table: &DriveTable, template: &HierarchyState, scheme: Scheme) -> Option<Self> {
        let grid = *table.grid();
        let len = template.flat_len();
        let copies = if scheme == Scheme::Homodyne { 2 } else { 1 };
        let bytes = copies * grid.n_steps() * len * len * std::mem::size_of::<C64>();
        if bytes > MAX_TABLE_BYTES {
            return None;
        }
        let dt = grid.dt();
        let nodes = grid.n_nodes();
        Some(match scheme {
            Scheme::Counting => Tables {
                flow: StepMaps::build(template, grid.n_steps(), |n, y| nocount_flow(model, table.step(n), y, dt)),
                rate: LinearForms::build(template, nodes, |n, y| intensity_at(model, table.node(n), y)),
                kick: None,
            },
            Scheme::Homodyne => Tables {
                flow: StepMaps::build(template, grid.n_steps(), |n, y| drift_flow(model, table.step(n), y, dt)),
                rate: LinearForms::build(template, nodes, |n, y| quadrature_at(model, table.node(n), y)),
                kick: Some(StepMaps::build(template, grid.n_steps(), |n, y| {
                    diffusion_at(model, table.node(n), y, 0.0)
                })),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drive::DriveTable;
    use crate::envelope::{AmplitudeMode, Envelope, FieldState, GammaMatrix};
    use crate::filter::nocount_flow;
    use crate::grid::TimeGrid;
    use crate::operator::SystemModel;
    use crate::random::{random_density, seeded};

    #[test]
    fn tabulated_map_matches_direct_flow() {
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let xi = Envelope::gaussian(1.46, 3.0, AmplitudeMode::UnitNorm).unwrap();
        let fs = FieldState::photon_combo(GammaMatrix::single_photon(), xi).unwrap();
        let grid = TimeGrid::new(1e-2, 6.0).unwrap();
        let table = DriveTable::new(&fs, grid);
        let st = HierarchyState::initial(&fs, &random_density(&mut seeded(3), 2));
        let maps = StepMaps::build(&st, grid.n_steps(), |n, y| nocount_flow(&model, table.step(n), y, grid.dt()));
        let mut a = st.clone();
        let mut x = st.flat_copy().to_vec();
        let mut y = x.clone();
        for n in 0..grid.n_steps() {
            a = nocount_flow(&model, table.step(n), &a, grid.dt());
            maps.apply_into(n, &x, &mut y);
            std::mem::swap(&mut x, &mut y);
        }
        for (k, z) in x.iter().enumerate() {
            assert!((a.flat_get(k) - z).norm() < 1e-13);
        }
    }
}
