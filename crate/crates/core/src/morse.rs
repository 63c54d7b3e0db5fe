//! The truncated Morse oscillator on a finite-difference grid, coupled to a
//! thermal bath through two time-averaged position operators, and the small
//! two-level damping model used for analytic checks.

use std::sync::Arc;

use crate::linalg::{ComplexMatrix, ComplexVector, EigenSystem, LinalgError, C64};
use crate::system::{ModelError, OpenSystem, Sinusoid};

#[derive(Clone, Debug, PartialEq)]
pub struct MorseParams {
    pub v_inf: f64,
    pub a: f64,
    pub u_max: f64,
    pub mass: f64,
    pub dx: f64,
    pub x0: f64,
    pub n_points: usize,
    pub beta_e: f64,
    pub gamma0: f64,
    /// Half-width of the Heisenberg averaging window.
    pub window: f64,
    pub force: f64,
    pub omega: f64,
}

impl Default for MorseParams {
    fn default() -> Self {
        Self {
            v_inf: 4.0,
            a: 0.2,
            u_max: 6.0,
            mass: 1.0,
            dx: 1.0,
            x0: -10.0,
            n_points: 31,
            beta_e: 4.0,
            gamma0: 0.2,
            window: 10.0,
            force: 0.2,
            omega: 0.49,
        }
    }
}

impl MorseParams {
    pub fn grid(&self) -> Vec<f64> {
        (0..self.n_points).map(|n| self.x0 + n as f64 * self.dx).collect()
    }

    /// `min(u_max, v_inf (1 - e^{-a x})^2)`.
    pub fn potential(&self, x: f64) -> f64 {
        let s = 1.0 - (-self.a * x).exp();
        (self.v_inf * s * s).min(self.u_max)
    }
}

/// Grid Hamiltonian `K0 + U0` in the site basis with Dirichlet ends.
pub fn build_hamiltonian(params: &MorseParams) -> Result<(ComplexMatrix, EigenSystem), LinalgError> {
    let x = params.grid();
    let k = 1.0 / (2.0 * params.mass * params.dx * params.dx);
    let h = ComplexMatrix::from_fn(params.n_points, |i, j| {
        let v = if i == j {
            2.0 * k + params.potential(x[i])
        } else if i.abs_diff(j) == 1 {
            -k
        } else {
            0.0
        };
        C64::new(v, 0.0)
    });
    let eig = crate::linalg::hermitian_eig(&h)?;
    Ok((h, eig))
}

pub fn position_operator(params: &MorseParams) -> ComplexMatrix {
    ComplexMatrix::from_real_diagonal(&params.grid())
}

/// `gamma_{+w} = g0 / (1 + e^{beta w})` and `gamma_{-w} = g0 / (1 + e^{-beta w})`.
pub fn bath_rates(params: &MorseParams, omega_b: f64) -> (f64, f64) {
    let g = params.gamma0;
    let bw = params.beta_e * omega_b;
    (g / (1.0 + bw.exp()), g / (1.0 + (-bw).exp()))
}

pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// `(1/2T) int_{-T}^{T} e^{i w s} X(s) ds` in the eigenbasis, with the
/// bath-side convention `X(s) = e^{-i H0 s} X e^{i H0 s}`, which evaluates to
/// `X_{mn} sinc((w - E_m + E_n) T)`. For `w > 0` this raises the energy.
pub fn time_averaged(x_eig: &ComplexMatrix, energies: &[f64], w: f64, window: f64) -> ComplexMatrix {
    ComplexMatrix::from_fn(x_eig.dim(), |m, n| {
        x_eig[(m, n)] * sinc((w - energies[m] + energies[n]) * window)
    })
}

/// `[L_{+w_B}, L_{-w_B}]` in the eigenbasis: the upward channel carries the
/// Boltzmann-suppressed rate `gamma_{+w_B}` and the downward one `gamma_{-w_B}`.
pub fn build_lindblads(params: &MorseParams, eig: &EigenSystem) -> Result<Vec<ComplexMatrix>, LinalgError> {
    let e = eig.values();
    let omega_b = e[1] - e[0];
    let (g_up, g_down) = bath_rates(params, omega_b);
    let x = eig.to_eigenbasis(&position_operator(params))?;
    let up = time_averaged(&x, e, omega_b, params.window).scaled(C64::new(g_up.sqrt(), 0.0));
    let down = time_averaged(&x, e, -omega_b, params.window).scaled(C64::new(g_down.sqrt(), 0.0));
    Ok(vec![up, down])
}

/// `(|psi_2> + |psi_3> + |psi_4>) / sqrt3` in eigenbasis coordinates.
pub fn initial_state(eig: &EigenSystem) -> ComplexVector {
    assert!(eig.dim() >= 5, "need at least five levels");
    let mut v = ComplexVector::zeros(eig.dim());
    for k in 2..5 {
        v[k] = C64::new(1.0 / 3f64.sqrt(), 0.0);
    }
    v
}

/// `V0 = F X` (site basis) with envelope `sin(omega t)`.
pub fn build_drive(params: &MorseParams) -> (ComplexMatrix, Sinusoid) {
    (
        position_operator(params).scaled(C64::new(params.force, 0.0)),
        Sinusoid { omega: params.omega },
    )
}

/// The assembled Morse system with its standard observables, all in the
/// eigenbasis of `H0`.
#[derive(Clone, Debug)]
pub struct MorseModel {
    pub params: MorseParams,
    pub system: OpenSystem,
    pub initial: ComplexVector,
    pub energy: ComplexMatrix,
    pub position: ComplexMatrix,
}

impl MorseModel {
    pub fn new(params: MorseParams, driven: bool) -> Result<Self, ModelError> {
        let (_, eig) = build_hamiltonian(&params)?;
        let lindblads = build_lindblads(&params, &eig)?;
        let position = eig.to_eigenbasis(&position_operator(&params))?;
        let drive = if driven {
            let (v, env) = build_drive(&params);
            Some(crate::system::Drive::new(eig.to_eigenbasis(&v)?, Arc::new(env))?)
        } else {
            None
        };
        let initial = initial_state(&eig);
        let energy = ComplexMatrix::from_real_diagonal(eig.values());
        let system = OpenSystem::new(eig, lindblads, drive)?;
        Ok(Self {
            params,
            system,
            initial,
            energy,
            position,
        })
    }

    pub fn free() -> Self {
        Self::new(MorseParams::default(), false).expect("paper parameters are valid")
    }

    pub fn driven() -> Self {
        Self::new(MorseParams::default(), true).expect("paper parameters are valid")
    }

    pub fn omega_b(&self) -> f64 {
        let e = self.system.energies();
        e[1] - e[0]
    }

    /// Projector on eigenstate `n`.
    pub fn population(&self, n: usize) -> Option<ComplexMatrix> {
        (n < self.system.dim()).then(|| {
            let mut d = vec![0.0; self.system.dim()];
            d[n] = 1.0;
            ComplexMatrix::from_real_diagonal(&d)
        })
    }
}

/// Amplitude damping of a two-level system: `H0 = diag(0, w)`,
/// `L = sqrt(gamma) sigma_-`, starting from `sqrt(1-p)|g> + sqrt(p)|e>`.
/// The excited population decays as `p e^{-2 gamma t}`.
#[derive(Clone, Debug)]
pub struct TwoLevelModel {
    pub gamma: f64,
    pub p_excited: f64,
    pub system: OpenSystem,
    pub initial: ComplexVector,
}

impl TwoLevelModel {
    pub fn new(gamma: f64, omega: f64, p_excited: f64) -> Self {
        let mut l = ComplexMatrix::zeros(2);
        l[(0, 1)] = C64::new(gamma.sqrt(), 0.0);
        let system = OpenSystem::new(EigenSystem::diagonal(vec![0.0, omega]), vec![l], None)
            .expect("2x2 operators");
        let initial = ComplexVector::from_real(&[(1.0 - p_excited).sqrt(), p_excited.sqrt()]);
        Self {
            gamma,
            p_excited,
            system,
            initial,
        }
    }

    pub fn excited_population(&self, t: f64) -> f64 {
        self.p_excited * (-2.0 * self.gamma * t).exp()
    }

    pub fn excited_projector() -> ComplexMatrix {
        ComplexMatrix::from_real_diagonal(&[0.0, 1.0])
    }
}

impl Default for TwoLevelModel {
    fn default() -> Self {
        Self::new(0.2, 1.0, 0.8)
    }
}
