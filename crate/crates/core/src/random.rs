//! Random operators, states and models for property tests and benchmarks.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::envelope::GammaMatrix;
use crate::operator::{Operator, SystemModel};

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_c64(rng: &mut impl Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Matrix with i.i.d. complex normal entries.
pub fn random_ginibre(rng: &mut impl Rng, dim: usize) -> Operator {
    Operator::from_fn(dim, |_, _| normal_c64(rng))
}

pub fn random_hermitian(rng: &mut impl Rng, dim: usize) -> Operator {
    let g = random_ginibre(rng, dim);
    &(&g + &g.dag()) * 0.5
}

/// Unitary from Gram–Schmidt on the columns of a Ginibre matrix.
pub fn random_unitary(rng: &mut impl Rng, dim: usize) -> Operator {
    let g = random_ginibre(rng, dim);
    let mut cols: Vec<Vec<C64>> = (0..dim).map(|j| (0..dim).map(|i| g[(i, j)]).collect()).collect();
    for j in 0..dim {
        for k in 0..j {
            let proj: C64 = (0..dim).map(|i| cols[k][i].conj() * cols[j][i]).sum();
            for i in 0..dim {
                let v = cols[k][i];
                cols[j][i] -= proj * v;
            }
        }
        let norm = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in &mut cols[j] {
            *z /= norm;
        }
    }
    Operator::from_fn(dim, |i, j| cols[j][i])
}

/// Full-rank density matrix `GG†/Tr(GG†)`.
pub fn random_density(rng: &mut impl Rng, dim: usize) -> Operator {
    let g = random_ginibre(rng, dim);
    let rho = g.matmul(&g.dag());
    let tr = rho.trace().re;
    &rho * (1.0 / tr)
}

/// Random Hermitian `H`, Ginibre `L` scaled to order one, Haar-like unitary `S`.
pub fn random_model(rng: &mut impl Rng, dim: usize) -> SystemModel {
    let h = random_hermitian(rng, dim);
    let l = &random_ginibre(rng, dim) * (1.0 / (dim as f64).sqrt());
    let s = random_unitary(rng, dim);
    SystemModel::new(h, l, s).expect("random model is valid by construction")
}

/// Uniformly drawn positive semidefinite unit-trace γ.
pub fn random_gamma(rng: &mut impl Rng) -> GammaMatrix {
    let g11: f64 = rng.random();
    let g00 = 1.0 - g11;
    let r = (g00 * g11).sqrt() * rng.random::<f64>();
    let phase = std::f64::consts::TAU * rng.random::<f64>();
    GammaMatrix::new(g00, g11, C64::from_polar(r, phase)).expect("PSD by construction")
}
