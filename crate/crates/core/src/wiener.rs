//! Per-step samples of the iterated complex Ito integrals.
//!
//! Each step consumes four fresh arrays `a, b, c, d` of circular complex
//! Gaussians, one entry per Lindblad channel, with
//! `E[m] = 0`, `E[m m'] = 0` and `E[m^* m'] = 2 dt` (independent real and
//! imaginary parts of variance `dt`). All iterated integrals the solvers use
//! are fixed linear or bilinear functions of these.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::C64;

const INV_SQRT3: f64 = 0.577_350_269_189_625_8;

/// A reproducible Gaussian stream owned by a single trajectory.
///
/// `(seed, stream)` selects a ChaCha8 keystream, so trajectories can be
/// generated on any worker in any order and still see identical draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// `N(0, var) + i N(0, var)`.
    pub fn complex_gaussian(&mut self, var: f64) -> C64 {
        let s = var.sqrt();
        let re = self.standard_normal();
        let im = self.standard_normal();
        C64::new(s * re, s * im)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegralDraw {
    dt: f64,
    pub a: Vec<C64>,
    pub b: Vec<C64>,
    pub c: Vec<C64>,
    pub d: Vec<C64>,
}

impl IntegralDraw {
    pub fn empty(n_lindblad: usize, dt: f64) -> Self {
        let z = vec![C64::new(0.0, 0.0); n_lindblad];
        Self {
            dt,
            a: z.clone(),
            b: z.clone(),
            c: z.clone(),
            d: z,
        }
    }

    /// Builds a draw from given Gaussians, e.g. to replay a path.
    pub fn from_parts(dt: f64, a: Vec<C64>, b: Vec<C64>, c: Vec<C64>, d: Vec<C64>) -> Self {
        let n = a.len();
        assert!(b.len() == n && c.len() == n && d.len() == n);
        Self { dt, a, b, c, d }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_lindblad(&self) -> usize {
        self.a.len()
    }

    /// Redraws all four arrays in place.
    pub fn resample(&mut self, rng: &mut RngStream, dt: f64) {
        assert!(dt > 0.0, "time step must be positive");
        self.dt = dt;
        for arr in [&mut self.a, &mut self.b, &mut self.c, &mut self.d] {
            for z in arr.iter_mut() {
                *z = rng.complex_gaussian(dt);
            }
        }
    }

    /// `I^alpha = a^alpha`
    pub fn i_alpha(&self) -> Vec<C64> {
        self.a.clone()
    }

    /// `I^{alpha 0} = (a + b/sqrt3) dt/2`
    pub fn i_alpha0(&self) -> Vec<C64> {
        (0..self.n_lindblad()).map(|k| self.i_alpha0_at(k)).collect()
    }

    /// `I^{0 alpha} = (a - b/sqrt3) dt/2`
    pub fn i_0alpha(&self) -> Vec<C64> {
        (0..self.n_lindblad()).map(|k| self.i_0alpha_at(k)).collect()
    }

    /// `I^{alpha alpha'} = c^alpha d^alpha' / sqrt2`, row-major in `(alpha, alpha')`.
    pub fn i_double(&self) -> Vec<Vec<C64>> {
        self.c
            .iter()
            .map(|&c| self.d.iter().map(|&d| c * d * std::f64::consts::FRAC_1_SQRT_2).collect())
            .collect()
    }

    /// `I^{alpha* alpha'} = (c^alpha)^* d^alpha' / sqrt2`.
    pub fn i_conj_double(&self) -> Vec<Vec<C64>> {
        self.c
            .iter()
            .map(|&c| {
                self.d
                    .iter()
                    .map(|&d| c.conj() * d * std::f64::consts::FRAC_1_SQRT_2)
                    .collect()
            })
            .collect()
    }

    #[inline]
    pub(crate) fn i_alpha0_at(&self, k: usize) -> C64 {
        (self.a[k] + self.b[k] * INV_SQRT3) * (0.5 * self.dt)
    }

    #[inline]
    pub(crate) fn i_0alpha_at(&self, k: usize) -> C64 {
        (self.a[k] - self.b[k] * INV_SQRT3) * (0.5 * self.dt)
    }
}

pub fn sample_draw(rng: &mut RngStream, n_lindblad: usize, dt: f64) -> IntegralDraw {
    let mut draw = IntegralDraw::empty(n_lindblad, dt);
    draw.resample(rng, dt);
    draw
}

/// `(I^0, I^00) = (dt, dt^2/2)`.
pub fn deterministic_integrals(dt: f64) -> (f64, f64) {
    assert!(dt > 0.0, "time step must be positive");
    (dt, 0.5 * dt * dt)
}
