//! Dense complex matrices for small Hilbert spaces and the Lindblad
//! superoperators built on them.
//!
//! Conventions fixed for the whole crate:
//! - basis ordering is (|0⟩ ground, |1⟩ excited), so `σ₋ = |0⟩⟨1|`;
//! - on the extended space the system factor comes first and the two-level
//!   ancilla second, i.e. index `(i, a) ↦ 2·i + a`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64 as C64;
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Dimension of the ancilla factor on the extended space.
pub const ANCILLA_DIM: usize = 2;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Inline storage covers d ≤ 4 without touching the heap.
type Storage = SmallVec<[C64; 16]>;

/// Square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Storage,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Operator({}x{})", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  [")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, " {:+.6e}{:+.6e}i", z.re, z.im)?;
            }
            writeln!(f, " ]")?;
        }
        Ok(())
    }
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "operator dimension must be positive");
        Operator {
            dim,
            data: SmallVec::from_elem(ZERO, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            out[(i, i)] = ONE;
        }
        out
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                out[(i, j)] = f(i, j);
            }
        }
        out
    }

    /// Builds an operator from rows, rejecting ragged, empty or non-finite input.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidOperator("empty matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidOperator(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
        }
        let out = Self::from_fn(dim, |i, j| rows[i][j]);
        if !out.is_finite() {
            return Err(Error::InvalidOperator("non-finite entry".into()));
        }
        Ok(out)
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut out = Self::zeros(entries.len());
        for (i, &z) in entries.iter().enumerate() {
            out[(i, i)] = z;
        }
        out
    }

    /// `|i⟩⟨j|` in dimension `dim`.
    pub fn ket_bra(dim: usize, i: usize, j: usize) -> Self {
        let mut out = Self::zeros(dim);
        out[(i, j)] = ONE;
        out
    }

    /// Two-level lowering operator `|0⟩⟨1|`.
    pub fn sigma_minus() -> Self {
        Self::ket_bra(2, 0, 1)
    }

    /// Two-level raising operator `|1⟩⟨0|`.
    pub fn sigma_plus() -> Self {
        Self::ket_bra(2, 1, 0)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn rows(&self) -> Vec<Vec<C64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self[(i, j)]).collect())
            .collect()
    }

    /// Conjugate transpose.
    pub fn dag(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Matrix product; dimensions are the caller's responsibility.
    #[inline]
    pub fn matmul(&self, rhs: &Operator) -> Operator {
        debug_assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut out = Operator::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    /// `self · x · self†`
    pub fn sandwich(&self, x: &Operator) -> Operator {
        self.matmul(x).matmul(&self.dag())
    }

    pub fn scale(&self, c: C64) -> Operator {
        let mut out = self.clone();
        out *= c;
        out
    }

    /// `self += a·x`
    #[inline]
    pub fn axpy(&mut self, a: C64, x: &Operator) {
        debug_assert_eq!(self.dim, x.dim);
        for (y, &v) in self.data.iter_mut().zip(x.data.iter()) {
            *y += a * v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Max-norm of `self − other`.
    pub fn max_diff(&self, other: &Operator) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `‖A − A†‖_max`
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim;
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                err = err.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        err
    }

    fn check_same_dim(&self, other: &Operator) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Operator {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Operator {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl AddAssign<&Operator> for Operator {
    fn add_assign(&mut self, rhs: &Operator) {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, &b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl SubAssign<&Operator> for Operator {
    fn sub_assign(&mut self, rhs: &Operator) {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, &b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
    }
}

impl MulAssign<C64> for Operator {
    fn mul_assign(&mut self, c: C64) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }
}

impl MulAssign<f64> for Operator {
    fn mul_assign(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }
}

impl Add<&Operator> for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Add<&Operator> for Operator {
    type Output = Operator;
    fn add(mut self, rhs: &Operator) -> Operator {
        self += rhs;
        self
    }
}

impl Sub<&Operator> for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Sub<&Operator> for Operator {
    type Output = Operator;
    fn sub(mut self, rhs: &Operator) -> Operator {
        self -= rhs;
        self
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale(-ONE)
    }
}

impl Mul<&Operator> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.matmul(rhs)
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, c: C64) -> Operator {
        self.scale(c)
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, c: f64) -> Operator {
        let mut out = self.clone();
        out *= c;
        out
    }
}

/// `AB − BA`
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.check_same_dim(b)?;
    Ok(a.matmul(b) - &b.matmul(a))
}

/// Tensor product with the standard layout `(i·n_b + k, j·n_b + l) ↦ A[i,j]·B[k,l]`.
pub fn kron(a: &Operator, b: &Operator) -> Operator {
    let nb = b.dim;
    Operator::from_fn(a.dim * nb, |r, c| a[(r / nb, c / nb)] * b[(r % nb, c % nb)])
}

fn ancilla_split(rho_ext: &Operator, sys_dim: usize) -> Result<()> {
    if sys_dim == 0 || rho_ext.dim != sys_dim * ANCILLA_DIM {
        return Err(Error::DimensionMismatch {
            expected: sys_dim * ANCILLA_DIM,
            found: rho_ext.dim,
        });
    }
    Ok(())
}

/// `Tr_A ρ̃` over the trailing two-level factor.
pub fn partial_trace_ancilla(rho_ext: &Operator, sys_dim: usize) -> Result<Operator> {
    ancilla_split(rho_ext, sys_dim)?;
    Ok(Operator::from_fn(sys_dim, |i, j| {
        (0..ANCILLA_DIM)
            .map(|a| rho_ext[(i * ANCILLA_DIM + a, j * ANCILLA_DIM + a)])
            .sum()
    }))
}

/// `Tr_A[(I⊗A_left) ρ̃ (I⊗A_right)]` for 2×2 ancilla operators.
pub fn ancilla_sandwich(
    rho_ext: &Operator,
    sys_dim: usize,
    left: &Operator,
    right: &Operator,
) -> Result<Operator> {
    ancilla_split(rho_ext, sys_dim)?;
    for op in [left, right] {
        if op.dim != ANCILLA_DIM {
            return Err(Error::DimensionMismatch {
                expected: ANCILLA_DIM,
                found: op.dim,
            });
        }
    }
    let n = ANCILLA_DIM;
    Ok(Operator::from_fn(sys_dim, |i, j| {
        let mut acc = ZERO;
        for a in 0..n {
            for b in 0..n {
                let l = left[(a, b)];
                if l == ZERO {
                    continue;
                }
                for c in 0..n {
                    acc += l * rho_ext[(i * n + b, j * n + c)] * right[(c, a)];
                }
            }
        }
        acc
    }))
}

/// System operators `(H, L, S)` plus the products every generator needs.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    h: Operator,
    l: Operator,
    s: Operator,
    l_dag: Operator,
    s_dag: Operator,
    l_dag_l: Operator,
    l_dag_s: Operator,
    s_dag_l: Operator,
    // iH + ½L†L, so that 𝓛ρ = −Kρ − ρK† + LρL†
    k: Operator,
}

impl SystemModel {
    pub fn new(h: Operator, l: Operator, s: Operator) -> Result<Self> {
        let d = h.dim;
        for op in [&l, &s] {
            h.check_same_dim(op)?;
        }
        for (name, op) in [("H", &h), ("L", &l), ("S", &s)] {
            if !op.is_finite() {
                return Err(Error::InvalidOperator(format!("{name} has non-finite entries")));
            }
        }
        let herm = h.hermiticity_error();
        if herm > 1e-12 {
            return Err(Error::InvalidOperator(format!(
                "H is not Hermitian (‖H − H†‖ = {herm:e})"
            )));
        }
        let unit = s.dag().matmul(&s).max_diff(&Operator::identity(d));
        if unit > 1e-10 {
            return Err(Error::InvalidOperator(format!(
                "S is not unitary (‖S†S − I‖ = {unit:e})"
            )));
        }
        let l_dag = l.dag();
        let s_dag = s.dag();
        let l_dag_l = l_dag.matmul(&l);
        let l_dag_s = l_dag.matmul(&s);
        let s_dag_l = s_dag.matmul(&l);
        let mut k = h.scale(I);
        k.axpy(C64::from(0.5), &l_dag_l);
        Ok(SystemModel {
            h,
            l,
            s,
            l_dag,
            s_dag,
            l_dag_l,
            l_dag_s,
            s_dag_l,
            k,
        })
    }

    /// Two-level atom with `L = √κ σ₋`, `S = I`, `H = 0`.
    pub fn two_level_decay(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidOperator(format!("κ must be positive, got {kappa}")));
        }
        Self::new(
            Operator::zeros(2),
            Operator::sigma_minus().scale(C64::from(kappa.sqrt())),
            Operator::identity(2),
        )
    }

    pub fn dim(&self) -> usize {
        self.h.dim
    }

    pub fn h(&self) -> &Operator {
        &self.h
    }

    pub fn l(&self) -> &Operator {
        &self.l
    }

    pub fn s(&self) -> &Operator {
        &self.s
    }

    pub fn l_dag(&self) -> &Operator {
        &self.l_dag
    }

    pub fn s_dag(&self) -> &Operator {
        &self.s_dag
    }

    pub fn l_dag_l(&self) -> &Operator {
        &self.l_dag_l
    }

    pub fn l_dag_s(&self) -> &Operator {
        &self.l_dag_s
    }

    pub fn s_dag_l(&self) -> &Operator {
        &self.s_dag_l
    }

    fn check(&self, x: &Operator) -> Result<()> {
        self.h.check_same_dim(x)
    }

    /// `𝓛ρ = −i[H,ρ] + LρL† − ½L†Lρ − ½ρL†L`
    pub fn lindblad_apply(&self, rho: &Operator) -> Result<Operator> {
        self.check(rho)?;
        Ok(self.lindblad(rho))
    }

    /// `𝓛*X = i[H,X] + L†XL − ½L†LX − ½XL†L`
    pub fn adjoint_lindblad_apply(&self, x: &Operator) -> Result<Operator> {
        self.check(x)?;
        let k_dag = self.k.dag();
        let mut out = self.l_dag.matmul(x).matmul(&self.l);
        out -= &k_dag.matmul(x);
        out -= &x.matmul(&self.k);
        Ok(out)
    }

    #[inline]
    pub(crate) fn lindblad(&self, rho: &Operator) -> Operator {
        let mut out = self.l.matmul(rho).matmul(&self.l_dag);
        out -= &self.no_jump(rho);
        out
    }

    /// `Kρ + ρK†` with `K = iH + ½L†L`; minus this is the no-jump part of 𝓛.
    #[inline]
    pub(crate) fn no_jump(&self, rho: &Operator) -> Operator {
        let mut out = self.k.matmul(rho);
        // (ρK†)[i,j] = Σ_m ρ[i,m]·conj(K[j,m]); ρ is not Hermitian in general
        let n = rho.dim;
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for m in 0..n {
                    acc += rho[(i, m)] * self.k[(j, m)].conj();
                }
                out[(i, j)] += acc;
            }
        }
        out
    }
}
