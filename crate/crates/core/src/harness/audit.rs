//! Monte-Carlo check of the stochastic-integral covariance model.

use std::fmt;

use crate::linalg::C64;
use crate::wiener::{deterministic_integrals, IntegralDraw, RngStream};

use super::stats::Welford;
use super::HarnessError;

/// Tolerance in standard errors.
pub const AUDIT_SIGMAS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Single(usize),
    Alpha0(usize),
    ZeroAlpha(usize),
    Double(usize, usize),
    ConjDouble(usize, usize),
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Channels are numbered from 1 so that index 0 keeps meaning time.
        match *self {
            Kind::Single(a) => write!(f, "I^{}", a + 1),
            Kind::Alpha0(a) => write!(f, "I^{}0", a + 1),
            Kind::ZeroAlpha(a) => write!(f, "I^0{}", a + 1),
            Kind::Double(a, b) => write!(f, "I^{}{}", a + 1, b + 1),
            Kind::ConjDouble(a, b) => write!(f, "I^{}*{}", a + 1, b + 1),
        }
    }
}

impl Kind {
    fn all(n: usize) -> Vec<Kind> {
        let mut v = Vec::new();
        for a in 0..n {
            v.extend([Kind::Single(a), Kind::Alpha0(a), Kind::ZeroAlpha(a)]);
        }
        for a in 0..n {
            for b in 0..n {
                v.extend([Kind::Double(a, b), Kind::ConjDouble(a, b)]);
            }
        }
        v
    }

    fn value(self, draw: &IntegralDraw) -> C64 {
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Kind::Single(a) => draw.a[a],
            Kind::Alpha0(a) => draw.i_alpha0_at(a),
            Kind::ZeroAlpha(a) => draw.i_0alpha_at(a),
            Kind::Double(a, b) => draw.c[a] * draw.d[b] * r2,
            Kind::ConjDouble(a, b) => draw.c[a].conj() * draw.d[b] * r2,
        }
    }

    /// `E[x y^*]` under the model.
    fn covariance(x: Kind, y: Kind, dt: f64) -> f64 {
        use Kind::*;
        let single = |k: Kind| match k {
            Single(a) | Alpha0(a) | ZeroAlpha(a) => Some(a),
            _ => None,
        };
        if let (Some(a), Some(b)) = (single(x), single(y)) {
            if a != b {
                return 0.0;
            }
            return match (x, y) {
                (Single(_), Single(_)) => 2.0 * dt,
                (Single(_), _) | (_, Single(_)) => dt * dt,
                (Alpha0(_), Alpha0(_)) | (ZeroAlpha(_), ZeroAlpha(_)) => 2.0 * dt.powi(3) / 3.0,
                _ => dt.powi(3) / 3.0,
            };
        }
        match (x, y) {
            (Double(a, b), Double(c, d)) | (ConjDouble(a, b), ConjDouble(c, d)) if a == c && b == d => {
                2.0 * dt * dt
            }
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditCell {
    pub cell: String,
    pub expected: C64,
    pub estimate: C64,
    /// Standard errors of the real and imaginary parts.
    pub se: (f64, f64),
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub n_lindblad: usize,
    pub dt: f64,
    pub n_draws: u64,
    pub cells: Vec<AuditCell>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCell> {
        self.cells.iter().filter(|c| !c.pass)
    }
}

struct Acc {
    cell: String,
    expected: C64,
    re: Welford,
    im: Welford,
}

impl Acc {
    fn new(cell: String, expected: f64) -> Self {
        Self {
            cell,
            expected: C64::new(expected, 0.0),
            re: Welford::default(),
            im: Welford::default(),
        }
    }

    fn finish(&self) -> AuditCell {
        let n = self.re.count() as f64;
        let se = (self.re.std() / n.sqrt(), self.im.std() / n.sqrt());
        let estimate = C64::new(self.re.mean(), self.im.mean());
        let diff = estimate - self.expected;
        AuditCell {
            cell: self.cell.clone(),
            expected: self.expected,
            estimate,
            se,
            pass: diff.re.abs() <= AUDIT_SIGMAS * se.0 && diff.im.abs() <= AUDIT_SIGMAS * se.1,
        }
    }
}

/// Estimates every first and second moment of the sampled integrals from
/// `n_draws` independent draws: the means, `E[x y^*]` for all ordered pairs
/// and `E[x y]` for all unordered pairs. The deterministic integrals are
/// checked exactly.
pub fn run_integral_audit(
    n_lindblad: usize,
    dt: f64,
    n_draws: u64,
    seed: u64,
) -> Result<AuditReport, HarnessError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HarnessError::Config(format!("dt must be positive, got {dt}")));
    }
    if n_lindblad == 0 {
        return Err(HarnessError::Config("the audit needs at least one channel".into()));
    }
    if n_draws < 2 {
        return Err(HarnessError::Config("the audit needs at least two draws".into()));
    }
    let kinds = Kind::all(n_lindblad);
    let nk = kinds.len();
    let mut means: Vec<Acc> = kinds.iter().map(|k| Acc::new(format!("E[{k}]"), 0.0)).collect();
    let mut conj: Vec<Acc> = Vec::with_capacity(nk * nk);
    for &x in &kinds {
        for &y in &kinds {
            conj.push(Acc::new(format!("E[{x} conj({y})]"), Kind::covariance(x, y, dt)));
        }
    }
    let mut plain: Vec<Acc> = Vec::with_capacity(nk * (nk + 1) / 2);
    for (i, &x) in kinds.iter().enumerate() {
        for &y in &kinds[i..] {
            plain.push(Acc::new(format!("E[{x} {y}]"), 0.0));
        }
    }

    let mut rng = RngStream::new(seed, 0);
    let mut draw = IntegralDraw::empty(n_lindblad, dt);
    let mut vals = vec![C64::new(0.0, 0.0); nk];
    for _ in 0..n_draws {
        draw.resample(&mut rng, dt);
        for (v, k) in vals.iter_mut().zip(&kinds) {
            *v = k.value(&draw);
        }
        let push = |acc: &mut Acc, z: C64| {
            acc.re.push(z.re);
            acc.im.push(z.im);
        };
        for (acc, &v) in means.iter_mut().zip(&vals) {
            push(acc, v);
        }
        let mut c = 0;
        for &x in &vals {
            for &y in &vals {
                push(&mut conj[c], x * y.conj());
                c += 1;
            }
        }
        let mut p = 0;
        for i in 0..nk {
            for &y in &vals[i..] {
                push(&mut plain[p], vals[i] * y);
                p += 1;
            }
        }
    }

    let (i0, i00) = deterministic_integrals(dt);
    let exact = |cell: &str, got: f64, want: f64| AuditCell {
        cell: cell.into(),
        expected: C64::new(want, 0.0),
        estimate: C64::new(got, 0.0),
        se: (0.0, 0.0),
        pass: got == want,
    };
    let mut cells = vec![exact("I^0", i0, dt), exact("I^00", i00, dt * dt / 2.0)];
    cells.extend(means.iter().chain(&conj).chain(&plain).map(Acc::finish));
    Ok(AuditReport {
        n_lindblad,
        dt,
        n_draws,
        cells,
    })
}
