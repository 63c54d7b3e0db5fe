//! Weak first- and second-order steps for the interaction-picture
//! Ito-Schrodinger equation `d|phi> = dw^beta Lambda_beta(t) |phi>`, plus the
//! linear unraveling obtained by dropping every Lindblad expectation value.
//!
//! Notation used throughout: `|b>` for `b = 0..N_L` is `Lambda_b |Phi>`, the
//! pair kets are `|a b> = Lambda_a Lambda_b |Phi>`, and `N = <Phi|Phi>`. The
//! second-order increment is the Ito-Taylor expansion with exact derivatives
//! of the drift and diffusion kets with respect to the ket `|x>`, the bra
//! `<y|` and time, evaluated at `x = Phi`, `y = Phi^dagger`. Expectations
//! always divide by `N`; the state itself is never renormalized.

use std::fmt;

use matrixmultiply::CGemmOption;
use thiserror::Error;

use crate::linalg::{axpy, inner_unchecked, norm_sqr, phases, ComplexMatrix, ComplexVector, C64, I};
use crate::system::{checked_norm, ModelError, OpenSystem, RotatedFrame};
use crate::wiener::{IntegralDraw, RngStream};

/// Nonlinear trajectories whose squared norm leaves
/// `[norm0 / NORM_BAND, norm0 * NORM_BAND]` are reported as diverged.
pub const NORM_BAND: f64 = 10.0;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Weak first order, nonlinear unraveling.
    Order1,
    /// Weak second order, nonlinear unraveling.
    Order2,
    /// Linear unraveling, first order.
    Linear1,
    /// Linear unraveling, second order.
    Linear2,
}

impl Scheme {
    pub fn order(self) -> u8 {
        match self {
            Scheme::Order1 | Scheme::Linear1 => 1,
            Scheme::Order2 | Scheme::Linear2 => 2,
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Scheme::Linear1 | Scheme::Linear2)
    }

    pub fn needs_rates(self) -> bool {
        self.order() == 2
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Order1 => "order1",
            Scheme::Order2 => "order2",
            Scheme::Linear1 => "linear1",
            Scheme::Linear2 => "linear2",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("trajectory diverged at t = {time} (|phi|^2 = {norm_sqr:e}); reduce the time step")]
    Diverged { time: f64, norm_sqr: f64 },
    #[error("frame time {frame} does not match state time {state}")]
    FrameMismatch { frame: f64, state: f64 },
    #[error("scheme {0} needs a frame built with time-derivative operators")]
    MissingRates(Scheme),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The interaction-picture ket at `t_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState {
    phi: ComplexVector,
    time: f64,
    norm0: f64,
}

impl TrajectoryState {
    pub fn new(phi: ComplexVector, time: f64) -> Result<Self, ModelError> {
        let norm0 = checked_norm(&phi)?;
        Ok(Self { phi, time, norm0 })
    }

    pub fn phi(&self) -> &ComplexVector {
        &self.phi
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn norm0(&self) -> f64 {
        self.norm0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.phi.norm_sqr()
    }

    /// Schrodinger-picture ket `e^{-i H0 t} Phi`.
    pub fn schrodinger(&self, energies: &[f64]) -> ComplexVector {
        let p = phases(energies, -self.time);
        self.phi.iter().zip(&p).map(|(&a, &b)| a * b).collect::<Vec<_>>().into()
    }
}

/// The frame operators stacked row-wise as `[G; L_1..L_n; [H,L_1]..[H,L_n]; W]`
/// (the last two groups only when rates are present), so one matrix product
/// applies all of them to a block of kets.
struct Stack {
    data: Vec<C64>,
    rows: usize,
    dim: usize,
}

impl Stack {
    fn new(frame: &RotatedFrame, with_rates: bool) -> Self {
        let mut blocks: Vec<&ComplexMatrix> = vec![frame.generator()];
        blocks.extend(frame.lindblads());
        if with_rates {
            let rates = frame.rates().expect("checked by caller");
            blocks.extend(&rates.lindblad_commutators);
            blocks.push(&rates.drift_rate);
        }
        let dim = frame.generator().dim();
        let rows = blocks.len() * dim;
        let mut data = vec![ZERO; rows * dim];
        for (k, m) in blocks.iter().enumerate() {
            for j in 0..dim {
                data[j * rows + k * dim..j * rows + (k + 1) * dim].copy_from_slice(m.column(j));
            }
        }
        Self { data, rows, dim }
    }

    /// `out = S[row0 .. row0 + m, :] x`, with `x` holding `ncols` kets of
    /// length `dim` back to back and `out` holding `ncols` columns of length `m`.
    fn apply(&self, row0: usize, m: usize, x: &[C64], ncols: usize, out: &mut [C64]) {
        let d = self.dim;
        assert!(row0 + m <= self.rows);
        assert!(x.len() >= d * ncols && out.len() >= m * ncols);
        if m == 0 || ncols == 0 {
            return;
        }
        if d == 0 {
            out[..m * ncols].fill(ZERO);
            return;
        }
        // SAFETY: Complex<f64> is repr(C) with layout [f64; 2]; the asserts above
        // keep every access of the strided views inside the three slices.
        unsafe {
            matrixmultiply::zgemm(
                CGemmOption::Standard,
                CGemmOption::Standard,
                m,
                d,
                ncols,
                [1.0, 0.0],
                self.data.as_ptr().add(row0) as *const [f64; 2],
                1,
                self.rows as isize,
                x.as_ptr() as *const [f64; 2],
                1,
                d as isize,
                [0.0, 0.0],
                out.as_mut_ptr() as *mut [f64; 2],
                1,
                m as isize,
            );
        }
    }
}

#[inline]
fn blk(s: &[C64], i: usize, d: usize) -> &[C64] {
    &s[i * d..(i + 1) * d]
}

#[inline]
fn blk_mut(s: &mut [C64], i: usize, d: usize) -> &mut [C64] {
    &mut s[i * d..(i + 1) * d]
}

/// Advances blocks of trajectories that share one frame. All operator
/// applications for the block go through a single stacked matrix product per
/// stage; everything else is per trajectory.
pub struct Stepper {
    scheme: Scheme,
    dim: usize,
    n_l: usize,
    capacity: usize,
    // Block buffers, trajectory-major.
    yphi: Vec<C64>,
    ket0: Vec<C64>,
    kets: Vec<C64>,
    yket0: Vec<C64>,
    ykets: Vec<C64>,
    f0: Vec<C64>,
    gf0: Vec<C64>,
    ell: Vec<C64>,
    norms: Vec<f64>,
    // Per-trajectory scratch.
    pair: Vec<C64>,
    lf0: Vec<C64>,
    e0: Vec<C64>,
    tmp: Vec<C64>,
    tmp2: Vec<C64>,
    delta: Vec<C64>,
}

impl Stepper {
    pub fn new(scheme: Scheme, dim: usize, n_lindblad: usize) -> Self {
        let mut s = Self {
            scheme,
            dim,
            n_l: n_lindblad,
            capacity: 0,
            yphi: vec![],
            ket0: vec![],
            kets: vec![],
            yket0: vec![],
            ykets: vec![],
            f0: vec![],
            gf0: vec![],
            ell: vec![],
            norms: vec![],
            pair: vec![ZERO; n_lindblad * n_lindblad * dim],
            lf0: vec![ZERO; n_lindblad * dim],
            e0: vec![ZERO; dim],
            tmp: vec![ZERO; dim],
            tmp2: vec![ZERO; dim],
            delta: vec![ZERO; dim],
        };
        s.reserve(1);
        s
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn rows_phi(&self) -> usize {
        if self.scheme.order() == 2 {
            2 * self.n_l + 2
        } else {
            self.n_l + 1
        }
    }

    fn reserve(&mut self, batch: usize) {
        if batch <= self.capacity {
            return;
        }
        let (d, n) = (self.dim, self.n_l);
        let r = self.rows_phi();
        self.yphi = vec![ZERO; r * d * batch];
        self.ket0 = vec![ZERO; d * batch];
        self.kets = vec![ZERO; n * d * batch];
        self.ell = vec![ZERO; n * batch];
        self.norms = vec![0.0; batch];
        if self.scheme.order() == 2 {
            self.yket0 = vec![ZERO; (n + 1) * d * batch];
            self.ykets = vec![ZERO; n * n * d * batch];
            self.f0 = vec![ZERO; d * batch];
            self.gf0 = vec![ZERO; d * batch];
        }
        self.capacity = batch;
    }

    /// Advances `state` by one step of `draw.dt()`. `frame` must be the
    /// frame at `state.time()`.
    pub fn step(
        &mut self,
        frame: &RotatedFrame,
        state: &mut TrajectoryState,
        draw: &IntegralDraw,
    ) -> Result<(), PropagationError> {
        if (frame.time() - state.time).abs() > 1e-9 * (1.0 + state.time.abs()) {
            return Err(PropagationError::FrameMismatch {
                frame: frame.time(),
                state: state.time,
            });
        }
        self.step_block(
            frame,
            &mut state.phi,
            std::slice::from_ref(draw),
            &[state.norm0],
        )
        .map_err(|(_, e)| e)?;
        state.time += draw.dt();
        Ok(())
    }

    /// Advances the kets stored back to back in `phis` (one per draw) from
    /// `frame.time()` by one step. On failure returns the index of the first
    /// offending ket in the block; the block is then left partially updated.
    pub fn step_block(
        &mut self,
        frame: &RotatedFrame,
        phis: &mut [C64],
        draws: &[IntegralDraw],
        norm0: &[f64],
    ) -> Result<(), (usize, PropagationError)> {
        let (d, n) = (self.dim, self.n_l);
        let batch = draws.len();
        assert_eq!(phis.len(), d * batch);
        assert_eq!(norm0.len(), batch);
        assert_eq!(frame.n_lindblad(), n);
        if batch == 0 {
            return Ok(());
        }
        let second = self.scheme.order() == 2;
        if second && frame.rates().is_none() {
            return Err((0, PropagationError::MissingRates(self.scheme)));
        }
        let dt = draws[0].dt();
        assert!(draws.iter().all(|dr| dr.dt() == dt && dr.n_lindblad() == n));
        self.reserve(batch);
        let linear = self.scheme.is_linear();
        let stack = Stack::new(frame, second);
        let r = self.rows_phi();

        // Stage 1: G, L (and [H, L], W) on every ket.
        stack.apply(0, r * d, phis, batch, &mut self.yphi);
        for b in 0..batch {
            let phi = blk(phis, b, d);
            let norm = checked_norm(phi).map_err(|e| (b, e.into()))?;
            self.norms[b] = norm;
            prepare(
                n,
                d,
                linear,
                phi,
                norm,
                blk(&self.yphi, b, r * d),
                blk_mut(&mut self.ell, b, n),
                blk_mut(&mut self.kets, b, n * d),
                blk_mut(&mut self.ket0, b, d),
            );
        }

        if second {
            // Stage 2: G, L on |0> and L on every |a>.
            stack.apply(0, (n + 1) * d, &self.ket0, batch, &mut self.yket0);
            stack.apply(d, n * d, &self.kets, n * batch, &mut self.ykets);
            // Stage 3: G on |f0> = I^{a0} |a>.
            for (b, draw) in draws.iter().enumerate() {
                let f0 = blk_mut(&mut self.f0, b, d);
                f0.fill(ZERO);
                let kets = blk(&self.kets, b, n * d);
                for k in 0..n {
                    axpy(draw.i_alpha0_at(k), blk(kets, k, d), f0);
                }
            }
            stack.apply(0, d, &self.f0, batch, &mut self.gf0);
        }

        let time = frame.time() + dt;
        for (b, draw) in draws.iter().enumerate() {
            let kets = blk(&self.kets, b, n * d);
            let ket0 = blk(&self.ket0, b, d);
            self.delta.copy_from_slice(ket0);
            for z in &mut self.delta {
                *z *= dt;
            }
            for k in 0..n {
                axpy(draw.a[k], blk(kets, k, d), &mut self.delta);
            }
            if second {
                let view = TrajView {
                    d,
                    n,
                    phi: blk(phis, b, d),
                    inv: 1.0 / self.norms[b],
                    ell: blk(&self.ell, b, n),
                    yphi: blk(&self.yphi, b, r * d),
                    kets,
                    ket0,
                    yket0: blk(&self.yket0, b, (n + 1) * d),
                    ykets: blk(&self.ykets, b, n * n * d),
                    f0: blk(&self.f0, b, d),
                    gf0: blk(&self.gf0, b, d),
                };
                let scratch = Scratch {
                    pair: &mut self.pair,
                    lf0: &mut self.lf0,
                    e0: &mut self.e0,
                    tmp: &mut self.tmp,
                    tmp2: &mut self.tmp2,
                };
                if linear {
                    linear_second_order(&view, scratch, draw, &mut self.delta);
                } else {
                    second_order(&view, scratch, draw, &mut self.delta);
                }
            }
            let phi = blk_mut(phis, b, d);
            for (p, z) in phi.iter_mut().zip(&self.delta) {
                *p += z;
            }
            let nsq = norm_sqr(phi);
            let finite = phi.iter().all(|z| z.re.is_finite() && z.im.is_finite());
            let ok = finite
                && nsq.is_finite()
                && if linear {
                    nsq > crate::system::ZERO_NORM_THRESHOLD
                } else {
                    nsq >= norm0[b] / NORM_BAND && nsq <= norm0[b] * NORM_BAND
                };
            if !ok {
                return Err((b, PropagationError::Diverged { time, norm_sqr: nsq }));
            }
        }
        Ok(())
    }
}

/// Fills `ell`, the kets `|a>` and the drift ket `|0>` from the stage-1
/// products `[G phi; L_1 phi; ...]`.
#[allow(clippy::too_many_arguments)]
fn prepare(
    n: usize,
    d: usize,
    linear: bool,
    phi: &[C64],
    norm: f64,
    yphi: &[C64],
    ell: &mut [C64],
    kets: &mut [C64],
    ket0: &mut [C64],
) {
    let inv = 1.0 / norm;
    ket0.copy_from_slice(blk(yphi, 0, d));
    let mut s = 0.0;
    for k in 0..n {
        let lphi = blk(yphi, 1 + k, d);
        let l = if linear {
            ZERO
        } else {
            inner_unchecked(phi, lphi) * inv
        };
        ell[k] = l;
        s += l.norm_sqr();
        for ((o, &lp), &p) in blk_mut(kets, k, d).iter_mut().zip(lphi).zip(phi) {
            *o = lp - l * p;
        }
        axpy(2.0 * l.conj(), lphi, ket0);
    }
    if s != 0.0 {
        axpy(C64::new(-s, 0.0), phi, ket0);
    }
}

/// Everything the second-order assembly reads for one trajectory.
struct TrajView<'a> {
    d: usize,
    n: usize,
    phi: &'a [C64],
    inv: f64,
    ell: &'a [C64],
    /// `[G phi; L_a phi; [H, L_a] phi; W phi]`
    yphi: &'a [C64],
    kets: &'a [C64],
    ket0: &'a [C64],
    /// `[G |0>; L_a |0>]`
    yket0: &'a [C64],
    /// block `b n + a` is `L_a |b>`
    ykets: &'a [C64],
    f0: &'a [C64],
    gf0: &'a [C64],
}

impl TrajView<'_> {
    fn lphi(&self, a: usize) -> &[C64] {
        blk(self.yphi, 1 + a, self.d)
    }
    fn cphi(&self, a: usize) -> &[C64] {
        blk(self.yphi, 1 + self.n + a, self.d)
    }
    fn wphi(&self) -> &[C64] {
        blk(self.yphi, 1 + 2 * self.n, self.d)
    }
    fn ket(&self, a: usize) -> &[C64] {
        blk(self.kets, a, self.d)
    }
    fn gket0(&self) -> &[C64] {
        blk(self.yket0, 0, self.d)
    }
    fn lket0_all(&self) -> &[C64] {
        &self.yket0[self.d..]
    }
    fn lket0(&self, a: usize) -> &[C64] {
        blk(self.yket0, 1 + a, self.d)
    }
    /// `L_a |b>`
    fn lpair(&self, a: usize, b: usize) -> &[C64] {
        blk(self.ykets, b * self.n + a, self.d)
    }
}

struct Scratch<'a> {
    /// block `a n + b` is `Lambda_a |b>`
    pair: &'a mut [C64],
    lf0: &'a mut [C64],
    e0: &'a mut [C64],
    tmp: &'a mut [C64],
    tmp2: &'a mut [C64],
}

/// Adds `coef * D_x lambda_0 [v]` to `out`, given `L_b v` for every channel
/// (back to back in `lv`) and `G v`.
#[allow(clippy::too_many_arguments)]
fn add_dx_lambda0(
    t: &TrajView,
    v: &[C64],
    lv: &[C64],
    gv: &[C64],
    coef: C64,
    out: &mut [C64],
) {
    let (d, inv, phi) = (t.d, t.inv, t.phi);
    let s: f64 = t.ell.iter().map(|z| z.norm_sqr()).sum();
    axpy(coef, gv, out);
    axpy(coef * (-s), v, out);
    let phi_v = inner_unchecked(phi, v);
    let mut phi_coef = ZERO;
    for b in 0..t.n {
        let l = t.ell[b];
        let lvb = blk(lv, b, d);
        axpy(coef * 2.0 * l.conj(), lvb, out);
        let kb_v = inner_unchecked(t.ket(b), v) * inv;
        let phi_lam_v = (inner_unchecked(phi, lvb) - l * phi_v) * inv;
        axpy(coef * 2.0 * kb_v, t.ket(b), out);
        phi_coef += l * kb_v - phi_lam_v * l.conj();
    }
    axpy(coef * phi_coef, phi, out);
}

/// Adds `coef * D_y lambda_0 [w]` to `out` given `<Phi|Lambda_b w>` per
/// channel. `D_y` is antilinear in the direction `w`.
fn add_dy_lambda0(t: &TrajView, w: &[C64], phi_lam_w: &[C64], coef: C64, out: &mut [C64]) {
    let inv = t.inv;
    let mut phi_coef = ZERO;
    for b in 0..t.n {
        let l = t.ell[b];
        // <Lambda_b w | Phi> / N
        let bar = phi_lam_w[b].conj() * inv;
        axpy(coef * 2.0 * bar, t.ket(b), out);
        phi_coef += l * bar - inner_unchecked(w, t.ket(b)) * inv * l.conj();
    }
    axpy(coef * phi_coef, t.phi, out);
}

fn second_order(t: &TrajView, s: Scratch, draw: &IntegralDraw, delta: &mut [C64]) {
    let (d, n, inv, phi, ell) = (t.d, t.n, t.inv, t.phi, t.ell);
    let dt = draw.dt();
    let i00 = 0.5 * dt * dt;

    for a in 0..n {
        for b in 0..n {
            let l = ell[a];
            for ((p, &lp), &kb) in blk_mut(s.pair, a * n + b, d).iter_mut().zip(t.lpair(a, b)).zip(t.ket(b)) {
                *p = lp - l * kb;
            }
        }
    }
    let pair = &*s.pair;

    let i0a: Vec<C64> = (0..n).map(|k| draw.i_0alpha_at(k)).collect();
    let ia0: Vec<C64> = (0..n).map(|k| draw.i_alpha0_at(k)).collect();

    // |e0> = I^{0a}|a> and L_b |f0>.
    s.e0.fill(ZERO);
    for k in 0..n {
        axpy(i0a[k], t.ket(k), s.e0);
    }
    for b in 0..n {
        let lf0 = blk_mut(s.lf0, b, d);
        lf0.fill(ZERO);
        for k in 0..n {
            axpy(ia0[k], t.lpair(b, k), lf0);
        }
    }
    let e0 = &*s.e0;

    // ---- time derivatives ----
    // d/dt |lambda_0> = W Phi + i sum_a (2<[H,L_a^dag]> L_a + 2<L_a^dag>[H,L_a]
    //                   - <[H,L_a]><L_a^dag> - <L_a><[H,L_a^dag]>) Phi
    let i00c = C64::new(i00, 0.0);
    axpy(i00c, t.wphi(), delta);
    let mut phi_coef = ZERO;
    for k in 0..n {
        let h = inner_unchecked(phi, t.cphi(k)) * inv;
        let h_adj = -h.conj();
        let l = ell[k];
        axpy(i00c * I * 2.0 * h_adj, t.lphi(k), delta);
        axpy(i00c * I * 2.0 * l.conj(), t.cphi(k), delta);
        phi_coef += -i00c * I * (h * l.conj() + l * h_adj);
        // d/dt |lambda_a> = i([H,L_a] - <[H,L_a]>) Phi, weighted by I^{0a}
        axpy(I * i0a[k], t.cphi(k), delta);
        phi_coef -= I * i0a[k] * h;
    }
    axpy(phi_coef, phi, delta);

    // ---- I^{00} (D_x + D_y) lambda_0 along |0> ----
    add_dx_lambda0(t, t.ket0, t.lket0_all(), t.gket0(), i00c, delta);
    let phi_ket0 = inner_unchecked(phi, t.ket0);
    let phi_lam_ket0: Vec<C64> = (0..n)
        .map(|b| inner_unchecked(phi, t.lket0(b)) - ell[b] * phi_ket0)
        .collect();
    add_dy_lambda0(t, t.ket0, &phi_lam_ket0, i00c, delta);

    // ---- I^{a0} D_x lambda_0 [|a>] + I^{a0*} D_y lambda_0 [<a|] ----
    add_dx_lambda0(t, t.f0, s.lf0, t.gf0, C64::new(1.0, 0.0), delta);
    let phi_f0 = inner_unchecked(phi, t.f0);
    let phi_lam_f0: Vec<C64> = (0..n)
        .map(|b| inner_unchecked(phi, blk(s.lf0, b, d)) - ell[b] * phi_f0)
        .collect();
    add_dy_lambda0(t, t.f0, &phi_lam_f0, C64::new(1.0, 0.0), delta);

    // ---- I^{0a} (D_x + D_y) lambda_a along |0> ----
    let mut phi_coef = ZERO;
    for k in 0..n {
        // Lambda_a |0> - Phi <Phi|Lambda_a 0>/N
        axpy(i0a[k], t.lket0(k), delta);
        axpy(-i0a[k] * ell[k], t.ket0, delta);
        phi_coef -= i0a[k] * phi_lam_ket0[k] * inv;
    }
    // -Phi <0|e0>/N
    phi_coef -= inner_unchecked(t.ket0, e0) * inv;
    axpy(phi_coef, phi, delta);

    // ---- mixed derivatives, Ito correction 2 sum_a' D_xy[|a'>, <a'|] ----
    // I^{0a} part: -2 sum_a' (|a'><a'|e0> + Phi <a'| sum_a I^{0a} |a a'>) / N
    let mut phi_coef = ZERO;
    for b in 0..n {
        let w = -2.0 * inner_unchecked(t.ket(b), e0) * inv;
        axpy(w, t.ket(b), delta);
        s.tmp.fill(ZERO);
        for k in 0..n {
            axpy(i0a[k], blk(pair, k * n + b, d), s.tmp);
        }
        phi_coef -= 2.0 * inner_unchecked(t.ket(b), s.tmp) * inv;
    }
    axpy(phi_coef, phi, delta);

    // I^{00} part, 2 I^{00} = dt^2.
    let dt2 = dt * dt;
    let mut phi_coef = ZERO;
    for k in 0..n {
        let l = ell[k];
        for b in 0..n {
            let p = blk(pair, k * n + b, d);
            let c = inner_unchecked(t.ket(b), p) * inv;
            let bb = inner_unchecked(p, phi) * inv;
            let dd = inner_unchecked(t.ket(b), t.ket(k)) * inv;
            axpy(2.0 * dt2 * c.conj(), t.ket(k), delta);
            axpy(2.0 * dt2 * bb, p, delta);
            axpy(dt2 * (l * bb - dd * l.conj()), t.ket(b), delta);
            phi_coef += l * c.conj() - c * l.conj() - dd.norm_sqr() - bb.norm_sqr();
        }
    }
    axpy(dt2 * phi_coef, phi, delta);

    // ---- double Wiener integrals ----
    // X: sum I^{a a'} D_x lambda_a' [|a>] with I^{a a'} = c^a d^a' / sqrt2
    // Y: sum I^{a* a'} D_y lambda_a' [<a|] with I^{a* a'} = c^a* d^a' / sqrt2
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    s.tmp.fill(ZERO); // |dc> = d^a' Lambda_a' |c>
    s.tmp2.fill(ZERO); // |d> = d^a |a>
    for b in 0..n {
        for k in 0..n {
            axpy(draw.d[b] * draw.c[k], blk(pair, b * n + k, d), s.tmp);
        }
        axpy(draw.d[b], t.ket(b), s.tmp2);
    }
    let mut cket_dket = ZERO;
    for k in 0..n {
        cket_dket += draw.c[k].conj() * inner_unchecked(t.ket(k), s.tmp2);
    }
    let phi_dc = inner_unchecked(phi, s.tmp) * inv;
    axpy(C64::new(r2, 0.0), s.tmp, delta);
    axpy(-r2 * (phi_dc + cket_dket * inv), phi, delta);
}

/// Second-order terms of the linear unraveling: every expectation is zero,
/// so all bra derivatives and mixed derivatives vanish.
fn linear_second_order(t: &TrajView, s: Scratch, draw: &IntegralDraw, delta: &mut [C64]) {
    let n = t.n;
    let dt = draw.dt();
    let i00c = C64::new(0.5 * dt * dt, 0.0);

    // I^{00} (d/dt lambda_0 + G |0>)
    axpy(i00c, t.wphi(), delta);
    axpy(i00c, t.gket0(), delta);
    for k in 0..n {
        // I^{0a} (i [H, L_a] Phi + L_a |0>)
        let i0a = draw.i_0alpha_at(k);
        axpy(I * i0a, t.cphi(k), delta);
        axpy(i0a, t.lket0(k), delta);
    }
    // I^{a0} G |a>
    axpy(C64::new(1.0, 0.0), t.gf0, delta);
    // c^a d^a' / sqrt2 L_a' |a>
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    s.tmp.fill(ZERO);
    for b in 0..n {
        for k in 0..n {
            axpy(draw.d[b] * draw.c[k] * r2, t.lpair(b, k), s.tmp);
        }
    }
    axpy(C64::new(1.0, 0.0), s.tmp, delta);
}

/// One first-order step; returns the advanced state.
pub fn first_order_step(
    frame: &RotatedFrame,
    state: &TrajectoryState,
    draw: &IntegralDraw,
) -> Result<TrajectoryState, PropagationError> {
    single_step(Scheme::Order1, frame, state, draw)
}

/// One second-order step; `frame` must carry rates.
pub fn second_order_step(
    frame: &RotatedFrame,
    state: &TrajectoryState,
    draw: &IntegralDraw,
) -> Result<TrajectoryState, PropagationError> {
    single_step(Scheme::Order2, frame, state, draw)
}

/// One step of the linear unraveling at order 1 or 2.
pub fn linear_step(
    frame: &RotatedFrame,
    state: &TrajectoryState,
    draw: &IntegralDraw,
    order: u8,
) -> Result<TrajectoryState, PropagationError> {
    let scheme = if order >= 2 {
        Scheme::Linear2
    } else {
        Scheme::Linear1
    };
    single_step(scheme, frame, state, draw)
}

fn single_step(
    scheme: Scheme,
    frame: &RotatedFrame,
    state: &TrajectoryState,
    draw: &IntegralDraw,
) -> Result<TrajectoryState, PropagationError> {
    let mut stepper = Stepper::new(scheme, state.phi.len(), frame.n_lindblad());
    let mut next = state.clone();
    stepper.step(frame, &mut next, draw)?;
    Ok(next)
}

/// Time grid of a trajectory: `n_macro` macro steps of `steps_per_macro`
/// micro steps of `dt` each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps_per_macro: usize,
    pub n_macro: usize,
}

impl TimeGrid {
    pub fn tau(&self) -> f64 {
        self.dt * self.steps_per_macro as f64
    }

    pub fn t_final(&self) -> f64 {
        self.tau() * self.n_macro as f64
    }

    /// Recording times, `k tau` for `k = 0..=n_macro`.
    pub fn macro_times(&self) -> Vec<f64> {
        (0..=self.n_macro).map(|k| k as f64 * self.tau()).collect()
    }

    pub fn micro_time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// Failure of one trajectory inside a batch or ensemble.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("trajectory {trajectory}: {source}")]
pub struct TrajectoryFailure {
    pub trajectory: u64,
    #[source]
    pub source: PropagationError,
}

/// Records observables `<Psi|A|Psi>` (divided by `<Psi|Psi>` unless `linear`)
/// for the Schrodinger-picture ket `Psi = e^{-i H0 t} Phi`.
pub struct Recorder<'a> {
    observables: &'a [ComplexMatrix],
    energies: &'a [f64],
    linear: bool,
    psi: Vec<C64>,
    apsi: Vec<C64>,
}

impl<'a> Recorder<'a> {
    pub fn new(energies: &'a [f64], observables: &'a [ComplexMatrix], linear: bool) -> Self {
        Self {
            observables,
            energies,
            linear,
            psi: vec![ZERO; energies.len()],
            apsi: vec![ZERO; energies.len()],
        }
    }

    pub fn record(&mut self, phi: &[C64], t: f64, out: &mut [f64]) {
        for ((p, &f), &e) in self.psi.iter_mut().zip(phi).zip(self.energies) {
            *p = f * C64::from_polar(1.0, -e * t);
        }
        let scale = if self.linear { 1.0 } else { 1.0 / norm_sqr(&self.psi) };
        for (o, a) in out.iter_mut().zip(self.observables) {
            a.apply_into(&self.psi, &mut self.apsi);
            *o = inner_unchecked(&self.psi, &self.apsi).re * scale;
        }
    }
}

/// Propagates a contiguous block of trajectories in lockstep so each rotated
/// frame is built once per step and shared. `sink(trajectory, macro_index,
/// values)` is called in trajectory order at every macro time, starting with
/// the initial state at index 0.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    system: &OpenSystem,
    scheme: Scheme,
    grid: TimeGrid,
    psi0: &[C64],
    seed: u64,
    trajectories: std::ops::Range<u64>,
    observables: &[ComplexMatrix],
    mut sink: impl FnMut(u64, usize, &[f64]),
) -> Result<(), TrajectoryFailure> {
    let first = trajectories.start;
    let fail = |offset: usize, source| TrajectoryFailure {
        trajectory: first + offset as u64,
        source,
    };
    let norm0 = checked_norm(psi0).map_err(|e| fail(0, PropagationError::Model(e)))?;
    let batch = (trajectories.end.saturating_sub(first)) as usize;
    let d = system.dim();
    let mut phis: Vec<C64> = Vec::with_capacity(d * batch);
    for _ in 0..batch {
        phis.extend_from_slice(psi0);
    }
    let norms = vec![norm0; batch];
    let mut rngs: Vec<RngStream> = trajectories.clone().map(|k| RngStream::new(seed, k)).collect();
    let mut draws = vec![IntegralDraw::empty(system.n_lindblad(), grid.dt); batch];
    let mut stepper = Stepper::new(scheme, d, system.n_lindblad());
    let mut recorder = Recorder::new(system.energies(), observables, scheme.is_linear());
    let mut values = vec![0.0; observables.len()];

    let mut emit = |phis: &[C64], m: usize, t: f64, recorder: &mut Recorder| {
        for b in 0..batch {
            recorder.record(blk(phis, b, d), t, &mut values);
            sink(first + b as u64, m, &values);
        }
    };
    emit(&phis, 0, 0.0, &mut recorder);
    let mut step = 0usize;
    for m in 1..=grid.n_macro {
        for _ in 0..grid.steps_per_macro {
            let frame = RotatedFrame::build(system, grid.micro_time(step), scheme.needs_rates());
            for (draw, rng) in draws.iter_mut().zip(rngs.iter_mut()) {
                draw.resample(rng, grid.dt);
            }
            stepper
                .step_block(&frame, &mut phis, &draws, &norms)
                .map_err(|(b, e)| fail(b, e))?;
            step += 1;
        }
        emit(&phis, m, grid.micro_time(step), &mut recorder);
    }
    Ok(())
}

/// Per-macro-step observable samples of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// `values[k][j]`: observable `j` at macro time `k`.
    pub values: Vec<Vec<f64>>,
    pub final_state: TrajectoryState,
}

/// Propagates a single trajectory with its own frames and Gaussian stream.
pub fn propagate_trajectory(
    system: &OpenSystem,
    psi0: &[C64],
    scheme: Scheme,
    grid: TimeGrid,
    rng: &mut RngStream,
    observables: &[ComplexMatrix],
) -> Result<TrajectoryRecord, PropagationError> {
    let mut state = TrajectoryState::new(psi0.to_vec().into(), 0.0)?;
    let mut stepper = Stepper::new(scheme, system.dim(), system.n_lindblad());
    let mut draw = IntegralDraw::empty(system.n_lindblad(), grid.dt);
    let mut recorder = Recorder::new(system.energies(), observables, scheme.is_linear());
    let mut values = vec![vec![0.0; observables.len()]; grid.n_macro + 1];
    recorder.record(&state.phi, 0.0, &mut values[0]);
    let mut step = 0usize;
    for row in values.iter_mut().skip(1) {
        for _ in 0..grid.steps_per_macro {
            let t = grid.micro_time(step);
            state.time = t;
            let frame = RotatedFrame::build(system, t, scheme.needs_rates());
            draw.resample(rng, grid.dt);
            stepper.step(&frame, &mut state, &draw)?;
            step += 1;
        }
        state.time = grid.micro_time(step);
        recorder.record(&state.phi, state.time, row);
    }
    Ok(TrajectoryRecord {
        times: grid.macro_times(),
        values,
        final_state: state,
    })
}
