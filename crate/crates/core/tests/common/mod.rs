#![allow(dead_code)]
//! Shared test oracles.
//!
//! One-step moments integrated over the Gaussian variables of the draw with a
//! tensor Gauss-Hermite rule. The new ket is a polynomial of low degree in
//! those variables, so the rule is exact for anything quadratic in the ket
//! and local errors can be resolved far below Monte-Carlo noise.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use qsd_core::linalg::{ComplexMatrix, ComplexVector, EigenSystem, C64};
use qsd_core::propagator::{Scheme, Stepper, TrajectoryState};
use qsd_core::reference::{propagate_reference, DensityMatrix};
use qsd_core::system::{Drive, OpenSystem, RotatedFrame, Sinusoid};
use qsd_core::wiener::IntegralDraw;

/// Nodes and weights for a standard normal variable (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let j = DMatrix::from_fn(n, n, |i, k| if i + 1 == k || k + 1 == i { (i.max(k) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(j);
    (0..n).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect()
}

pub fn drift_system() -> OpenSystem {
    let l = ComplexMatrix::from_fn(3, |i, j| C64::new(0.3 * (i as f64 - j as f64) + 0.1, 0.15 * (i + 2 * j) as f64 - 0.2));
    let v = ComplexMatrix::from_fn(3, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => C64::new(0.2 * i as f64, 0.0),
        std::cmp::Ordering::Less => C64::new(0.3, 0.2),
        std::cmp::Ordering::Greater => C64::new(0.3, -0.2),
    });
    let drive = Drive::new(v, Arc::new(Sinusoid { omega: 0.9 })).unwrap();
    OpenSystem::new(EigenSystem::diagonal(vec![-0.5, 0.4, 1.3]), vec![l], Some(drive)).unwrap()
}

pub fn drift_phi0() -> ComplexVector {
    vec![C64::new(0.5, 0.2), C64::new(-0.3, 0.6), C64::new(0.4, -0.1)].into()
}

/// `E[|Phi'|^2] / |Phi|^2 - 1` for one step of `scheme` from `phi0` at `t`.
pub fn mean_norm_change(scheme: Scheme, dt: f64, points: usize) -> f64 {
    let sys = drift_system();
    let t = 0.6;
    let frame = RotatedFrame::new(&sys, t);
    let state = TrajectoryState::new(drift_phi0(), t).unwrap();
    let rule = gauss_hermite(points);
    let n_vars = 8;
    let s = dt.sqrt();
    let mut stepper = Stepper::new(scheme, 3, 1);
    let mut total = 0.0;
    let mut idx = vec![0usize; n_vars];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| rule[i].0 * s).collect();
        let w: f64 = idx.iter().map(|&i| rule[i].1).product();
        let z = |k: usize| vec![C64::new(x[2 * k], x[2 * k + 1])];
        let draw = IntegralDraw::from_parts(dt, z(0), z(1), z(2), z(3));
        let mut next = state.clone();
        stepper.step(&frame, &mut next, &draw).unwrap();
        total += w * next.norm_sqr();
        let mut p = 0;
        loop {
            if p == n_vars {
                return total / state.norm_sqr() - 1.0;
            }
            idx[p] += 1;
            if idx[p] < points {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

pub fn loglog_slope(dts: &[f64], ys: &[f64]) -> f64 {
    let n = dts.len() as f64;
    let lx: Vec<f64> = dts.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}


/// Largest entry of `E[Psi' Psi'^dag] - rho(dt)` after one step from
/// `drift_phi0` at `t = 0`, with `rho(dt)` from a fine RK4 run. The ket is
/// divided by its own squared norm when `normalized`, which is how
/// observables are recorded, and by the initial one otherwise.
pub fn local_density_error(scheme: Scheme, dt: f64, points: usize, normalized: bool) -> f64 {
    let sys = drift_system();
    let frame = RotatedFrame::new(&sys, 0.0);
    let state = TrajectoryState::new(drift_phi0(), 0.0).unwrap();
    let n0 = state.norm_sqr();
    let rule = gauss_hermite(points);
    let n_vars = 8;
    let s = dt.sqrt();
    let mut stepper = Stepper::new(scheme, 3, 1);
    let mut acc = ComplexMatrix::zeros(3);
    let mut idx = vec![0usize; n_vars];
    'rule: loop {
        let x: Vec<f64> = idx.iter().map(|&i| rule[i].0 * s).collect();
        let w: f64 = idx.iter().map(|&i| rule[i].1).product();
        let z = |k: usize| vec![C64::new(x[2 * k], x[2 * k + 1])];
        let draw = IntegralDraw::from_parts(dt, z(0), z(1), z(2), z(3));
        let mut next = state.clone();
        stepper.step(&frame, &mut next, &draw).unwrap();
        let psi = next.schrodinger(sys.energies());
        let scale = w / if normalized { next.norm_sqr() } else { n0 };
        for i in 0..3 {
            for j in 0..3 {
                acc[(i, j)] += scale * psi[i] * psi[j].conj();
            }
        }
        let mut p = 0;
        loop {
            if p == n_vars {
                break 'rule;
            }
            idx[p] += 1;
            if idx[p] < points {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
    let psi0: Vec<C64> = state.phi().iter().map(|z| z / n0.sqrt()).collect();
    let exact = propagate_reference(&sys, &DensityMatrix::pure(&psi0), dt, 1, dt / 400.0, &[]).unwrap();
    let rho = exact.final_state.matrix();
    let mut err: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            err = err.max((acc[(i, j)] - rho[(i, j)]).norm());
        }
    }
    err
}
