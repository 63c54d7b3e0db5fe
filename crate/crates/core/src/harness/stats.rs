//! Streaming moments and the ensemble summary built from them.

/// Welford accumulator for mean and variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combines two disjoint samples (Chan et al.). Not commutative in the
    /// last bits, so callers merge in a fixed order.
    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `2 S / sqrt(N)`, the large-sample 95% half-width.
    pub fn ci_halfwidth(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            2.0 * self.std() / (self.n as f64).sqrt()
        }
    }
}

/// One accumulator per (macro time, observable).
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    n_obs: usize,
    cells: Vec<Welford>,
}

impl MomentTable {
    pub fn new(n_times: usize, n_obs: usize) -> Self {
        Self {
            n_obs,
            cells: vec![Welford::default(); n_times * n_obs],
        }
    }

    pub fn push(&mut self, k: usize, values: &[f64]) {
        for (cell, &v) in self.cells[k * self.n_obs..(k + 1) * self.n_obs].iter_mut().zip(values) {
            cell.push(v);
        }
    }

    pub fn merge(&mut self, other: &MomentTable) {
        assert_eq!(self.cells.len(), other.cells.len());
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
    }

    pub fn get(&self, k: usize, j: usize) -> &Welford {
        &self.cells[k * self.n_obs + j]
    }
}

/// Sample statistics of each observable on the macro grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub observables: Vec<String>,
    /// `mean[k][j]` for time `k` and observable `j`; likewise `std`, `halfwidth`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub halfwidth: Vec<Vec<f64>>,
    pub n_samples: u64,
}

impl EnsembleSeries {
    pub fn from_table(times: Vec<f64>, observables: Vec<String>, table: &MomentTable) -> Self {
        let n_obs = observables.len();
        let grab = |f: &dyn Fn(&Welford) -> f64| -> Vec<Vec<f64>> {
            (0..times.len())
                .map(|k| (0..n_obs).map(|j| f(table.get(k, j))).collect())
                .collect()
        };
        let mean = grab(&|w| w.mean());
        let std = grab(&|w| w.std());
        let halfwidth = grab(&|w| w.ci_halfwidth());
        let n_samples = if times.is_empty() || n_obs == 0 {
            0
        } else {
            table.get(0, 0).count()
        };
        Self {
            times,
            observables,
            mean,
            std,
            halfwidth,
            n_samples,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.observables.iter().position(|o| o == name)
    }

    /// Column `j` of a per-time table.
    pub fn column(table: &[Vec<f64>], j: usize) -> Vec<f64> {
        table.iter().map(|row| row[j]).collect()
    }

    /// Fraction of times in `range` at which `|mean - oracle| <= halfwidth`.
    pub fn coverage(&self, j: usize, oracle: &[f64], keep: impl Fn(f64) -> bool) -> f64 {
        let mut hit = 0usize;
        let mut total = 0usize;
        for (k, &t) in self.times.iter().enumerate() {
            if !keep(t) {
                continue;
            }
            total += 1;
            if (self.mean[k][j] - oracle[k]).abs() <= self.halfwidth[k][j] {
                hit += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
