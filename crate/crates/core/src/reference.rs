//! Deterministic propagation of the Lindblad equation
//! `rho' = -i[H0 + theta(t) V0, rho] + sum_a ([L_a rho, L_a^dag] + [L_a, rho L_a^dag])`
//! by classical RK4, in the Schrodinger picture and the `H0` eigenbasis.

use thiserror::Error;

use crate::linalg::{adjoint, hermitian_eig, trace, ComplexMatrix, LinalgError, C64, I};
use crate::system::OpenSystem;

/// Default reference step.
pub const DEFAULT_DT_REF: f64 = 1e-3;

/// Minimum eigenvalue below which a positivity warning is raised.
pub const POSITIVITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("reference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("density matrix has dimension {found}, system has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    rho: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(rho: ComplexMatrix) -> Self {
        Self { rho }
    }

    /// `|psi><psi| / <psi|psi>`.
    pub fn pure(psi: &[C64]) -> Self {
        let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        Self {
            rho: ComplexMatrix::from_fn(psi.len(), |i, j| psi[i] * psi[j].conj() / n),
        }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.dim()
    }

    pub fn trace(&self) -> C64 {
        trace(&self.rho)
    }

    /// `Tr[rho A]`.
    pub fn expect(&self, a: &ComplexMatrix) -> C64 {
        let d = self.dim();
        let mut s = C64::new(0.0, 0.0);
        for i in 0..d {
            for k in 0..d {
                s += self.rho[(i, k)] * a[(k, i)];
            }
        }
        s
    }

    pub fn purity(&self) -> f64 {
        self.expect(&self.rho).re
    }

    pub fn min_eigenvalue(&self) -> Result<f64, LinalgError> {
        let sym = ComplexMatrix::from_fn(self.dim(), |i, j| {
            0.5 * (self.rho[(i, j)] + self.rho[(j, i)].conj())
        });
        Ok(hermitian_eig(&sym)?.values()[0])
    }
}

/// `sum_a [L_a rho, L_a^dag] + [L_a, rho L_a^dag]`, written out with commutators.
pub fn dissipator(system: &OpenSystem, rho: &ComplexMatrix) -> ComplexMatrix {
    let d = system.dim();
    let mut out = ComplexMatrix::zeros(d);
    let one = C64::new(1.0, 0.0);
    for l in system.lindblads() {
        let ld = adjoint(l);
        let l_rho = l.matmul(rho).expect("dimension");
        let rho_ld = rho.matmul(&ld).expect("dimension");
        out.add_scaled(one, &l_rho.matmul(&ld).expect("dimension")).unwrap();
        out.add_scaled(-one, &ld.matmul(&l_rho).expect("dimension")).unwrap();
        out.add_scaled(one, &l.matmul(&rho_ld).expect("dimension")).unwrap();
        out.add_scaled(-one, &rho_ld.matmul(l).expect("dimension")).unwrap();
    }
    out
}

/// Right-hand side of the Lindblad equation at time `t`, commutator form.
pub fn lindblad_rhs(system: &OpenSystem, rho: &ComplexMatrix, t: f64) -> ComplexMatrix {
    let h = system.hamiltonian_at(t);
    let mut out = dissipator(system, rho);
    let comm = h
        .matmul(rho)
        .and_then(|a| a.sub(&rho.matmul(&h)?))
        .expect("dimension");
    out.add_scaled(-I, &comm).unwrap();
    out
}

/// The same right-hand side regrouped as `-i(G rho - (G rho)^dag) + 2 sum L rho L^dag`
/// with `G = H0 + theta V0 - i sum L^dag L`; about half the matrix products.
struct FastRhs<'a> {
    system: &'a OpenSystem,
    lindblad_adjoints: Vec<ComplexMatrix>,
}

impl<'a> FastRhs<'a> {
    fn new(system: &'a OpenSystem) -> Self {
        Self {
            system,
            lindblad_adjoints: system.lindblads().iter().map(adjoint).collect(),
        }
    }

    fn eval(&self, rho: &ComplexMatrix, t: f64) -> ComplexMatrix {
        let mut g = self.system.hamiltonian_at(t);
        g.add_scaled(-I, self.system.decay_operator()).unwrap();
        let g_rho = g.matmul(rho).unwrap();
        let d = rho.dim();
        let mut out = ComplexMatrix::from_fn(d, |i, j| -I * (g_rho[(i, j)] - g_rho[(j, i)].conj()));
        for (l, ld) in self.system.lindblads().iter().zip(&self.lindblad_adjoints) {
            let sandwich = l.matmul(rho).unwrap().matmul(ld).unwrap();
            out.add_scaled(C64::new(2.0, 0.0), &sandwich).unwrap();
        }
        out
    }
}

/// Tr[rho A] for each observable on the macro grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSeries {
    pub times: Vec<f64>,
    /// `values[k][j]`: observable `j` at `times[k]`.
    pub values: Vec<Vec<f64>>,
    /// Largest deviation of the trace from one over the recorded times.
    pub max_trace_error: f64,
    /// Largest entrywise `|rho - rho^dagger|` over the recorded times.
    pub max_hermiticity_error: f64,
    /// `(time, min eigenvalue)` for every recorded state that failed the
    /// positivity check.
    pub positivity_warnings: Vec<(f64, f64)>,
    pub final_state: DensityMatrix,
}

/// RK4 from `rho0` to `n_macro * tau`, recording at every multiple of `tau`.
/// The step is the largest `tau / k` not exceeding `dt_ref`, so records fall
/// exactly on the macro grid.
pub fn propagate_reference(
    system: &OpenSystem,
    rho0: &DensityMatrix,
    tau: f64,
    n_macro: usize,
    dt_ref: f64,
    observables: &[ComplexMatrix],
) -> Result<ReferenceSeries, ReferenceError> {
    if !(dt_ref > 0.0 && dt_ref.is_finite()) {
        return Err(ReferenceError::InvalidStep(dt_ref));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ReferenceError::InvalidStep(tau));
    }
    if rho0.dim() != system.dim() {
        return Err(ReferenceError::Dimension {
            expected: system.dim(),
            found: rho0.dim(),
        });
    }
    let substeps = (tau / dt_ref - 1e-9).ceil().max(1.0) as usize;
    let h = tau / substeps as f64;
    let rhs = FastRhs::new(system);
    let mut rho = rho0.rho.clone();
    let mut series = ReferenceSeries {
        times: Vec::with_capacity(n_macro + 1),
        values: Vec::with_capacity(n_macro + 1),
        max_trace_error: 0.0,
        max_hermiticity_error: 0.0,
        positivity_warnings: vec![],
        final_state: rho0.clone(),
    };
    let record = |rho: &ComplexMatrix, t: f64, series: &mut ReferenceSeries| -> Result<(), ReferenceError> {
        let state = DensityMatrix { rho: rho.clone() };
        series.times.push(t);
        series
            .values
            .push(observables.iter().map(|a| state.expect(a).re).collect());
        series.max_trace_error = series.max_trace_error.max((state.trace() - 1.0).norm());
        series.max_hermiticity_error = series.max_hermiticity_error.max(rho.hermiticity_error());
        let min = state.min_eigenvalue()?;
        if min < -POSITIVITY_TOLERANCE {
            series.positivity_warnings.push((t, min));
        }
        Ok(())
    };
    record(&rho, 0.0, &mut series)?;
    for m in 0..n_macro {
        let t0 = m as f64 * tau;
        for s in 0..substeps {
            let t = t0 + s as f64 * h;
            rho = rk4_step(&rhs, &rho, t, h);
        }
        record(&rho, (m + 1) as f64 * tau, &mut series)?;
    }
    series.final_state = DensityMatrix { rho };
    Ok(series)
}

fn rk4_step(rhs: &FastRhs, rho: &ComplexMatrix, t: f64, h: f64) -> ComplexMatrix {
    let stage = |k: &ComplexMatrix, scale: f64| {
        let mut y = rho.clone();
        y.add_scaled(C64::new(scale, 0.0), k).unwrap();
        y
    };
    let k1 = rhs.eval(rho, t);
    let k2 = rhs.eval(&stage(&k1, 0.5 * h), t + 0.5 * h);
    let k3 = rhs.eval(&stage(&k2, 0.5 * h), t + 0.5 * h);
    let k4 = rhs.eval(&stage(&k3, h), t + h);
    let mut out = rho.clone();
    for (k, w) in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
        out.add_scaled(C64::new(w * h / 6.0, 0.0), k).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linalg::{frobenius_distance, EigenSystem};
    use crate::system::Sinusoid;

    fn two_level(gamma: f64) -> OpenSystem {
        let l = ComplexMatrix::from_fn(2, |i, j| {
            if i == 0 && j == 1 {
                C64::new(gamma.sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        OpenSystem::new(EigenSystem::diagonal(vec![0.0, 1.0]), vec![l], None).unwrap()
    }

    fn random_system(seed: u64) -> OpenSystem {
        let mut rng = crate::wiener::RngStream::new(seed, 0);
        let d = 4;
        let mut m = || ComplexMatrix::from_fn(d, |_, _| rng.complex_gaussian(0.2));
        let h = m();
        let h = ComplexMatrix::from_fn(d, |i, j| h[(i, j)] + h[(j, i)].conj());
        let ls = vec![m(), m()];
        let v = m();
        let v = ComplexMatrix::from_fn(d, |i, j| v[(i, j)] + v[(j, i)].conj());
        OpenSystem::from_site_basis(&h, &ls, Some((v, Arc::new(Sinusoid { omega: 0.9 })))).unwrap()
    }

    fn random_rho(d: usize, seed: u64) -> ComplexMatrix {
        let mut rng = crate::wiener::RngStream::new(seed, 1);
        let a = ComplexMatrix::from_fn(d, |_, _| rng.complex_gaussian(1.0));
        let rho = a.matmul(&adjoint(&a)).unwrap();
        let tr = trace(&rho);
        rho.scaled(1.0 / tr)
    }

    #[test]
    fn dissipator_of_identity_with_hermitian_lindblad_vanishes() {
        let l = ComplexMatrix::from_fn(3, |i, j| C64::new((i + j) as f64, 0.0));
        let sys = OpenSystem::new(EigenSystem::diagonal(vec![0.0, 1.0, 3.0]), vec![l], None).unwrap();
        let rho = ComplexMatrix::identity(3).scaled(C64::new(1.0 / 3.0, 0.0));
        assert!(dissipator(&sys, &rho).frobenius_norm() < 1e-14);
    }

    #[test]
    fn two_level_excited_decays_at_twice_gamma() {
        let gamma = 0.3;
        let sys = two_level(gamma);
        let rho = DensityMatrix::pure(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        let d = dissipator(&sys, rho.matrix());
        assert!((d[(1, 1)].re + 2.0 * gamma).abs() < 1e-14);
        assert!((d[(0, 0)].re - 2.0 * gamma).abs() < 1e-14);
    }

    #[test]
    fn dissipator_traceless_and_hermitian() {
        let sys = random_system(3);
        let rho = random_rho(4, 5);
        let d = dissipator(&sys, &rho);
        assert!(trace(&d).norm() < 1e-12);
        assert!(d.hermiticity_error() < 1e-12);
    }

    #[test]
    fn fast_rhs_matches_commutator_form() {
        let sys = random_system(7);
        let rho = random_rho(4, 8);
        let fast = FastRhs::new(&sys);
        for t in [0.0, 0.4, 2.1] {
            let a = fast.eval(&rho, t);
            let b = lindblad_rhs(&sys, &rho, t);
            assert!(frobenius_distance(&a, &b).unwrap() < 1e-12);
            assert!(trace(&b).norm() < 1e-12);
        }
    }

    #[test]
    fn eigenprojector_is_stationary_without_dissipation() {
        let sys = OpenSystem::new(EigenSystem::diagonal(vec![0.0, 0.5, 2.0]), vec![], None).unwrap();
        let rho = DensityMatrix::pure(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert!(lindblad_rhs(&sys, rho.matrix(), 0.0).frobenius_norm() == 0.0);
    }

    #[test]
    fn unitary_limit_conserves_purity() {
        let sys = OpenSystem::from_site_basis(
            &ComplexMatrix::from_fn(3, |i, j| C64::new(if i == j { i as f64 } else { 0.3 }, 0.0)),
            &[],
            None,
        )
        .unwrap();
        let psi = [C64::new(0.6, 0.0), C64::new(0.0, 0.64), C64::new(0.48, 0.0)];
        let rho = DensityMatrix::pure(&psi);
        let series = propagate_reference(&sys, &rho, 0.5, 10, 1e-2, &[]).unwrap();
        assert!((series.final_state.purity() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_level_population_follows_exponential() {
        let gamma = 0.2;
        let sys = two_level(gamma);
        let psi = [C64::new(0.2f64.sqrt(), 0.0), C64::new(0.8f64.sqrt(), 0.0)];
        let pop = ComplexMatrix::from_real_diagonal(&[0.0, 1.0]);
        let s = propagate_reference(&sys, &DensityMatrix::pure(&psi), 0.5, 10, 1e-3, &[pop]).unwrap();
        for (t, v) in s.times.iter().zip(&s.values) {
            assert!((v[0] - 0.8 * (-2.0 * gamma * t).exp()).abs() < 1e-11);
        }
        assert!(s.max_trace_error < 1e-12);
        assert!(s.positivity_warnings.is_empty());
    }

    #[test]
    fn records_on_macro_grid_even_for_awkward_steps() {
        let sys = two_level(0.1);
        let rho = DensityMatrix::pure(&[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let s = propagate_reference(&sys, &rho, 0.25, 4, 0.07, &[]).unwrap();
        assert_eq!(s.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn rejects_bad_step() {
        let sys = two_level(0.1);
        let rho = DensityMatrix::pure(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert!(matches!(
            propagate_reference(&sys, &rho, 0.25, 4, 0.0, &[]),
            Err(ReferenceError::InvalidStep(_))
        ));
    }
}
