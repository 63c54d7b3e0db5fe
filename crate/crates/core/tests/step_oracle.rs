//! Checks the analytic steps against a generic Ito-Taylor expansion whose
//! derivatives are taken numerically.
//!
//! The oracle treats the ket `x` and the bra `y` (a row vector) as independent
//! variables, with every expectation written as `y A x / y x`. Time
//! derivatives come from finite differences of rotated frames, so neither the
//! commutator operators nor the hand-expanded kets of the solver are used.

use std::sync::Arc;

use qsd_core::linalg::{ComplexMatrix, ComplexVector, C64};
use qsd_core::propagator::{first_order_step, linear_step, second_order_step, TrajectoryState};
use qsd_core::system::{OpenSystem, RotatedFrame, Sinusoid};
use qsd_core::wiener::{sample_draw, IntegralDraw, RngStream};

type Ket = Vec<C64>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn test_system(dim: usize, n_l: usize, seed: u64) -> OpenSystem {
    let mut rng = RngStream::new(seed, 0);
    let mut g = |s: f64| rng.complex_gaussian(s * s);
    let mut h = ComplexMatrix::zeros(dim);
    let raw: Vec<Vec<C64>> = (0..dim).map(|_| (0..dim).map(|_| g(1.0)).collect()).collect();
    h = ComplexMatrix::from_fn(dim, |i, j| 0.5 * (raw[i][j] + raw[j][i].conj()) + h[(i, j)]);
    let ls: Vec<ComplexMatrix> = (0..n_l)
        .map(|_| {
            let raw: Vec<Vec<C64>> = (0..dim).map(|_| (0..dim).map(|_| g(0.4)).collect()).collect();
            ComplexMatrix::from_fn(dim, |i, j| raw[i][j])
        })
        .collect();
    let raw: Vec<Vec<C64>> = (0..dim).map(|_| (0..dim).map(|_| g(0.5)).collect()).collect();
    let v = ComplexMatrix::from_fn(dim, |i, j| 0.5 * (raw[i][j] + raw[j][i].conj()));
    OpenSystem::from_site_basis(&h, &ls, Some((v, Arc::new(Sinusoid { omega: 0.7 })))).unwrap()
}

fn apply(a: &ComplexMatrix, x: &[C64]) -> Ket {
    let mut y = vec![c(0.0, 0.0); x.len()];
    a.apply_into(x, &mut y);
    y
}

fn dot(y: &[C64], x: &[C64]) -> C64 {
    y.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// `y A x` for a row vector `y`.
fn sandwich(y: &[C64], a: &ComplexMatrix, x: &[C64]) -> C64 {
    dot(y, &apply(a, x))
}

fn adjoint(a: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(a.dim(), |i, j| a[(j, i)].conj())
}

fn lin(terms: &[(C64, &[C64])]) -> Ket {
    let n = terms[0].1.len();
    let mut out = vec![c(0.0, 0.0); n];
    for (z, v) in terms {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += z * x;
        }
    }
    out
}

struct Oracle<'a> {
    system: &'a OpenSystem,
    linear: bool,
}

impl Oracle<'_> {
    /// Drift `lambda_0` (index 0) and diffusion `lambda_a` (index a + 1).
    fn lambdas(&self, x: &[C64], y: &[C64], t: f64) -> Vec<Ket> {
        let frame = RotatedFrame::without_rates(self.system, t);
        let n = dot(y, x);
        let mut drift = apply(frame.generator(), x);
        let mut out = vec![];
        for l in frame.lindblads() {
            let lx = apply(l, x);
            let (ell, ell_star) = if self.linear {
                (c(0.0, 0.0), c(0.0, 0.0))
            } else {
                (sandwich(y, l, x) / n, sandwich(y, &adjoint(l), x) / n)
            };
            drift = lin(&[(c(1.0, 0.0), &drift), (2.0 * ell_star, &lx), (-ell * ell_star, x)]);
            out.push(lin(&[(c(1.0, 0.0), &lx), (-ell, x)]));
        }
        let mut all = vec![drift];
        all.extend(out);
        all
    }

    fn dx(&self, x: &[C64], y: &[C64], t: f64, v: &[C64], h: f64) -> Vec<Ket> {
        let p = self.lambdas(&lin(&[(c(1.0, 0.0), x), (c(h, 0.0), v)]), y, t);
        let m = self.lambdas(&lin(&[(c(1.0, 0.0), x), (c(-h, 0.0), v)]), y, t);
        diff(&p, &m, 2.0 * h)
    }

    /// Derivative along the bra direction `<w|`.
    fn dy(&self, x: &[C64], y: &[C64], t: f64, w: &[C64], h: f64) -> Vec<Ket> {
        let wb: Ket = w.iter().map(|z| z.conj()).collect();
        let p = self.lambdas(x, &lin(&[(c(1.0, 0.0), y), (c(h, 0.0), &wb)]), t);
        let m = self.lambdas(x, &lin(&[(c(1.0, 0.0), y), (c(-h, 0.0), &wb)]), t);
        diff(&p, &m, 2.0 * h)
    }

    fn dt(&self, x: &[C64], y: &[C64], t: f64, h: f64) -> Vec<Ket> {
        diff(&self.lambdas(x, y, t + h), &self.lambdas(x, y, t - h), 2.0 * h)
    }

    fn dxy(&self, x: &[C64], y: &[C64], t: f64, v: &[C64], w: &[C64], h: f64) -> Vec<Ket> {
        let wb: Ket = w.iter().map(|z| z.conj()).collect();
        let shift = |sx: f64, sy: f64| {
            self.lambdas(
                &lin(&[(c(1.0, 0.0), x), (c(sx * h, 0.0), v)]),
                &lin(&[(c(1.0, 0.0), y), (c(sy * h, 0.0), &wb)]),
                t,
            )
        };
        let (pp, pm, mp, mm) = (shift(1.0, 1.0), shift(1.0, -1.0), shift(-1.0, 1.0), shift(-1.0, -1.0));
        (0..pp.len())
            .map(|k| {
                (0..pp[k].len())
                    .map(|i| (pp[k][i] - pm[k][i] - mp[k][i] + mm[k][i]) / (4.0 * h * h))
                    .collect()
            })
            .collect()
    }

    /// Full Ito-Taylor increment up to the terms that matter for weak order 2.
    fn increment(&self, phi: &[C64], t: f64, draw: &IntegralDraw, order: u8) -> Ket {
        let x = phi.to_vec();
        let y: Ket = phi.iter().map(|z| z.conj()).collect();
        let lam = self.lambdas(&x, &y, t);
        let n_l = lam.len() - 1;
        let dt = draw.dt();
        let mut terms: Vec<(C64, Ket)> = vec![(c(dt, 0.0), lam[0].clone())];
        for k in 0..n_l {
            terms.push((draw.a[k], lam[k + 1].clone()));
        }
        if order == 2 {
            let h1 = 1e-5;
            let h2 = 1e-4;
            // L^0 applied to every lambda.
            let mut l0 = self.dt(&x, &y, t, h1);
            let add = |acc: &mut Vec<Ket>, d: Vec<Ket>, z: C64| {
                for (a, b) in acc.iter_mut().zip(d) {
                    for (p, q) in a.iter_mut().zip(b) {
                        *p += z * q;
                    }
                }
            };
            add(&mut l0, self.dx(&x, &y, t, &lam[0], h1), c(1.0, 0.0));
            add(&mut l0, self.dy(&x, &y, t, &lam[0], h1), c(1.0, 0.0));
            for k in 0..n_l {
                add(&mut l0, self.dxy(&x, &y, t, &lam[k + 1], &lam[k + 1], h2), c(2.0, 0.0));
            }
            let i00 = 0.5 * dt * dt;
            terms.push((c(i00, 0.0), l0[0].clone()));
            let i0a = draw.i_0alpha();
            let ia0 = draw.i_alpha0();
            let dbl = draw.i_double();
            let cdbl = draw.i_conj_double();
            for k in 0..n_l {
                terms.push((i0a[k], l0[k + 1].clone()));
                let lx = self.dx(&x, &y, t, &lam[k + 1], h1);
                let ly = self.dy(&x, &y, t, &lam[k + 1], h1);
                terms.push((ia0[k], lx[0].clone()));
                terms.push((ia0[k].conj(), ly[0].clone()));
                for b in 0..n_l {
                    terms.push((dbl[k][b], lx[b + 1].clone()));
                    terms.push((cdbl[k][b], ly[b + 1].clone()));
                }
            }
        }
        let refs: Vec<(C64, &[C64])> = terms.iter().map(|(z, v)| (*z, v.as_slice())).collect();
        lin(&refs)
    }
}

fn diff(p: &[Ket], m: &[Ket], scale: f64) -> Vec<Ket> {
    p.iter()
        .zip(m)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) / scale).collect())
        .collect()
}

fn max_dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn random_ket(dim: usize, seed: u64, norm: f64) -> Ket {
    let mut rng = RngStream::new(seed, 9);
    let v: Ket = (0..dim).map(|_| rng.complex_gaussian(1.0)).collect();
    let n: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter().map(|z| z * (norm / n)).collect()
}

fn check(order: u8, linear: bool, n_l: usize, norm: f64, seed: u64) {
    let dim = 4;
    let system = test_system(dim, n_l, seed);
    let oracle = Oracle {
        system: &system,
        linear,
    };
    let t = 0.37;
    let phi = random_ket(dim, seed + 1, norm);
    let mut rng = RngStream::new(seed, 2);
    for _ in 0..3 {
        let draw = sample_draw(&mut rng, n_l, 0.2);
        let state = TrajectoryState::new(ComplexVector::from(phi.clone()), t).unwrap();
        let frame = RotatedFrame::new(&system, t);
        let next = match (linear, order) {
            (true, o) => linear_step(&frame, &state, &draw, o),
            (false, 1) => first_order_step(&frame, &state, &draw),
            (false, _) => second_order_step(&frame, &state, &draw),
        }
        .unwrap();
        let expected = lin(&[(c(1.0, 0.0), &phi), (c(1.0, 0.0), &oracle.increment(&phi, t, &draw, order))]);
        let err = max_dist(next.phi(), &expected);
        assert!(
            err < 1e-6 * norm,
            "order {order} linear {linear} n_l {n_l} norm {norm}: deviation {err:e}"
        );
        assert!((next.time() - (t + 0.2)).abs() < 1e-15);
    }
}

#[test]
fn first_order_step_matches_expansion() {
    check(1, false, 2, 1.0, 11);
    check(1, false, 1, 1.7, 12);
}

#[test]
fn second_order_step_matches_expansion_for_unit_norm() {
    check(2, false, 1, 1.0, 21);
    check(2, false, 2, 1.0, 22);
}

#[test]
fn second_order_step_matches_expansion_off_unit_norm() {
    check(2, false, 2, 0.6, 31);
    check(2, false, 3, 1.9, 32);
}

#[test]
fn linear_steps_match_expansion() {
    check(1, true, 2, 1.0, 41);
    check(2, true, 2, 1.3, 42);
}

#[test]
fn no_channels_reduces_to_deterministic_taylor_step() {
    check(2, false, 0, 1.0, 51);
}
