//! The open system `(H0, {L_alpha}, V0, theta, theta_dot)` expressed in the
//! eigenbasis of `H0`, and the interaction-picture frames built from it.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{
    adjoint, commutator_with_diagonal, inner_unchecked, norm_sqr, phase_rotate_with, phases,
    ComplexMatrix, ComplexVector, EigenSystem, LinalgError, C64, I,
};

/// Squared norms below this mean the trajectory has collapsed.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state norm squared {0:e} is below the zero-norm threshold")]
    ZeroNorm(f64),
    #[error("Lindblad channel {index} out of range (system has {count})")]
    ChannelOutOfRange { index: usize, count: usize },
    #[error("drive operator is not Hermitian (max deviation {0:e})")]
    NonHermitianDrive(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Scalar drive envelope `theta(t)` together with its exact derivative.
pub trait Envelope: Send + Sync + fmt::Debug {
    fn value(&self, t: f64) -> f64;
    fn rate(&self, t: f64) -> f64;
}

/// `theta(t) = sin(omega t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sinusoid {
    pub omega: f64,
}

impl Envelope for Sinusoid {
    fn value(&self, t: f64) -> f64 {
        (self.omega * t).sin()
    }
    fn rate(&self, t: f64) -> f64 {
        self.omega * (self.omega * t).cos()
    }
}

/// Envelope from a pair of closures.
pub struct FnEnvelope<F, G> {
    pub value: F,
    pub rate: G,
}

impl<F, G> fmt::Debug for FnEnvelope<F, G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnEnvelope")
    }
}

impl<F, G> Envelope for FnEnvelope<F, G>
where
    F: Fn(f64) -> f64 + Send + Sync,
    G: Fn(f64) -> f64 + Send + Sync,
{
    fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }
    fn rate(&self, t: f64) -> f64 {
        (self.rate)(t)
    }
}

/// The drive term `theta(t) V0`.
#[derive(Clone, Debug)]
pub struct Drive {
    operator: ComplexMatrix,
    envelope: Arc<dyn Envelope>,
}

impl Drive {
    pub fn new(operator: ComplexMatrix, envelope: Arc<dyn Envelope>) -> Result<Self, ModelError> {
        let dev = operator.hermiticity_error();
        if dev > 1e-12 {
            return Err(ModelError::NonHermitianDrive(dev));
        }
        Ok(Self { operator, envelope })
    }

    pub fn operator(&self) -> &ComplexMatrix {
        &self.operator
    }

    pub fn envelope(&self) -> &dyn Envelope {
        self.envelope.as_ref()
    }
}

/// An open quantum system with every operator stored in the `H0` eigenbasis.
#[derive(Clone, Debug)]
pub struct OpenSystem {
    eig: EigenSystem,
    lindblads: Vec<ComplexMatrix>,
    drive: Option<Drive>,
    // Derived once at construction; rotated per frame.
    decay: ComplexMatrix,
    decay_commutator: ComplexMatrix,
    lindblad_commutators: Vec<ComplexMatrix>,
    drive_commutator: Option<ComplexMatrix>,
}

impl OpenSystem {
    /// `lindblads` and the drive operator must already be in the eigenbasis of `eig`.
    pub fn new(
        eig: EigenSystem,
        lindblads: Vec<ComplexMatrix>,
        drive: Option<Drive>,
    ) -> Result<Self, ModelError> {
        let d = eig.dim();
        for l in &lindblads {
            check(d, l.dim())?;
        }
        if let Some(drive) = &drive {
            check(d, drive.operator.dim())?;
        }
        let e = eig.values();
        let mut decay = ComplexMatrix::zeros(d);
        for l in &lindblads {
            decay.add_scaled(C64::new(1.0, 0.0), &adjoint(l).matmul(l)?)?;
        }
        let decay_commutator = commutator_with_diagonal(e, &decay);
        let lindblad_commutators = lindblads
            .iter()
            .map(|l| commutator_with_diagonal(e, l))
            .collect();
        let drive_commutator = drive
            .as_ref()
            .map(|dr| commutator_with_diagonal(e, &dr.operator));
        Ok(Self {
            eig,
            lindblads,
            drive,
            decay,
            decay_commutator,
            lindblad_commutators,
            drive_commutator,
        })
    }

    /// Diagonalizes a site-basis Hamiltonian and transforms the Lindblad and
    /// drive operators into its eigenbasis.
    pub fn from_site_basis(
        hamiltonian: &ComplexMatrix,
        lindblads: &[ComplexMatrix],
        drive: Option<(ComplexMatrix, Arc<dyn Envelope>)>,
    ) -> Result<Self, ModelError> {
        let eig = crate::linalg::hermitian_eig(hamiltonian)?;
        let ls = lindblads
            .iter()
            .map(|l| eig.to_eigenbasis(l))
            .collect::<Result<Vec<_>, _>>()?;
        let drive = match drive {
            Some((v, env)) => Some(Drive::new(eig.to_eigenbasis(&v)?, env)?),
            None => None,
        };
        Self::new(eig, ls, drive)
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    pub fn n_lindblad(&self) -> usize {
        self.lindblads.len()
    }

    pub fn eigensystem(&self) -> &EigenSystem {
        &self.eig
    }

    pub fn energies(&self) -> &[f64] {
        self.eig.values()
    }

    pub fn lindblads(&self) -> &[ComplexMatrix] {
        &self.lindblads
    }

    pub fn drive(&self) -> Option<&Drive> {
        self.drive.as_ref()
    }

    /// `sum_alpha L_alpha^dagger L_alpha` (Schrodinger picture, eigenbasis).
    pub fn decay_operator(&self) -> &ComplexMatrix {
        &self.decay
    }

    pub fn theta(&self, t: f64) -> f64 {
        self.drive.as_ref().map_or(0.0, |d| d.envelope.value(t))
    }

    pub fn theta_dot(&self, t: f64) -> f64 {
        self.drive.as_ref().map_or(0.0, |d| d.envelope.rate(t))
    }

    /// `H0 + theta(t) V0` in the Schrodinger picture.
    pub fn hamiltonian_at(&self, t: f64) -> ComplexMatrix {
        let mut h = ComplexMatrix::from_real_diagonal(self.energies());
        if let Some(dr) = &self.drive {
            h.add_scaled(C64::new(dr.envelope.value(t), 0.0), &dr.operator)
                .expect("dimensions checked at construction");
        }
        h
    }
}

fn check(expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, found }.into())
    }
}

/// Time derivatives needed by the second-order step.
#[derive(Clone, Debug)]
pub struct FrameRates {
    /// `[H0, L_alpha(t)]`
    pub lindblad_commutators: Vec<ComplexMatrix>,
    /// `theta [H0, V0(t)] - i theta_dot V0(t) - i [H0, sum L^dagger L (t)]`,
    /// the explicit time derivative of the drift generator.
    pub drift_rate: ComplexMatrix,
}

/// Operators rotated into the interaction picture at time `t_n`.
#[derive(Clone, Debug)]
pub struct RotatedFrame {
    time: f64,
    theta: f64,
    theta_dot: f64,
    lindblads: Vec<ComplexMatrix>,
    drive: Option<ComplexMatrix>,
    /// `-i theta V0(t) - sum L^dagger L (t)`
    generator: ComplexMatrix,
    rates: Option<FrameRates>,
}

impl RotatedFrame {
    /// Frame carrying everything both solver orders need.
    pub fn new(system: &OpenSystem, t: f64) -> Self {
        Self::build(system, t, true)
    }

    /// Frame without the time-derivative operators; enough for first order.
    pub fn without_rates(system: &OpenSystem, t: f64) -> Self {
        Self::build(system, t, false)
    }

    pub(crate) fn build(system: &OpenSystem, t: f64, with_rates: bool) -> Self {
        let p = phases(system.energies(), t);
        let theta = system.theta(t);
        let theta_dot = system.theta_dot(t);
        let lindblads = system
            .lindblads
            .iter()
            .map(|l| phase_rotate_with(l, &p))
            .collect();
        let drive = system
            .drive
            .as_ref()
            .map(|dr| phase_rotate_with(&dr.operator, &p));
        let mut generator = phase_rotate_with(&system.decay, &p).scaled(C64::new(-1.0, 0.0));
        if let Some(v) = &drive {
            generator.add_scaled(-I * theta, v).expect("same dimension");
        }
        let rates = with_rates.then(|| {
            let lindblad_commutators = system
                .lindblad_commutators
                .iter()
                .map(|c| phase_rotate_with(c, &p))
                .collect();
            let mut drift_rate = phase_rotate_with(&system.decay_commutator, &p).scaled(-I);
            if let (Some(v), Some(hv)) = (&drive, &system.drive_commutator) {
                drift_rate
                    .add_scaled(C64::new(theta, 0.0), &phase_rotate_with(hv, &p))
                    .expect("same dimension");
                drift_rate.add_scaled(-I * theta_dot, v).expect("same dimension");
            }
            FrameRates {
                lindblad_commutators,
                drift_rate,
            }
        });
        Self {
            time: t,
            theta,
            theta_dot,
            lindblads,
            drive,
            generator,
            rates,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta_dot(&self) -> f64 {
        self.theta_dot
    }

    pub fn lindblads(&self) -> &[ComplexMatrix] {
        &self.lindblads
    }

    pub fn drive(&self) -> Option<&ComplexMatrix> {
        self.drive.as_ref()
    }

    pub fn generator(&self) -> &ComplexMatrix {
        &self.generator
    }

    pub fn rates(&self) -> Option<&FrameRates> {
        self.rates.as_ref()
    }

    pub fn n_lindblad(&self) -> usize {
        self.lindblads.len()
    }
}

/// Frame at `frame.time() + dt`, recomputed from absolute time.
pub fn advance_frame(system: &OpenSystem, frame: &RotatedFrame, dt: f64) -> RotatedFrame {
    RotatedFrame::build(system, frame.time + dt, frame.rates.is_some())
}

/// `<phi|A|phi> / <phi|phi>`.
pub fn expectation(a: &ComplexMatrix, phi: &[C64]) -> Result<C64, ModelError> {
    check(a.dim(), phi.len())?;
    let n = checked_norm(phi)?;
    let mut tmp = vec![C64::new(0.0, 0.0); phi.len()];
    a.apply_into(phi, &mut tmp);
    Ok(inner_unchecked(phi, &tmp) / n)
}

pub(crate) fn checked_norm(phi: &[C64]) -> Result<f64, ModelError> {
    let n = norm_sqr(phi);
    if n < ZERO_NORM_THRESHOLD || !n.is_finite() {
        Err(ModelError::ZeroNorm(n))
    } else {
        Ok(n)
    }
}

/// `(L_alpha(t) - <L_alpha(t)>) |phi>`.
pub fn apply_lambda_alpha(
    frame: &RotatedFrame,
    alpha: usize,
    phi: &[C64],
) -> Result<ComplexVector, ModelError> {
    let l = frame
        .lindblads
        .get(alpha)
        .ok_or(ModelError::ChannelOutOfRange {
            index: alpha,
            count: frame.n_lindblad(),
        })?;
    check(l.dim(), phi.len())?;
    let n = checked_norm(phi)?;
    let mut out = ComplexVector::zeros(phi.len());
    l.apply_into(phi, &mut out);
    let mean = inner_unchecked(phi, &out) / n;
    for (o, &p) in out.iter_mut().zip(phi) {
        *o -= mean * p;
    }
    Ok(out)
}

/// Drift operator applied to `phi`:
/// `(-i theta V0(t) + sum_alpha (2 <L^dag> L - L^dag L - <L^dag><L>)) |phi>`.
pub fn apply_lambda_zero(frame: &RotatedFrame, phi: &[C64]) -> Result<ComplexVector, ModelError> {
    check(frame.generator.dim(), phi.len())?;
    let n = checked_norm(phi)?;
    let mut out = ComplexVector::zeros(phi.len());
    frame.generator.apply_into(phi, &mut out);
    let mut lphi = vec![C64::new(0.0, 0.0); phi.len()];
    for l in &frame.lindblads {
        l.apply_into(phi, &mut lphi);
        let mean = inner_unchecked(phi, &lphi) / n;
        let mean_adj = mean.conj();
        for ((o, &lp), &p) in out.iter_mut().zip(&lphi).zip(phi) {
            *o += 2.0 * mean_adj * lp - mean_adj * mean * p;
        }
    }
    Ok(out)
}
