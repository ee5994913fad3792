use nalgebra::DMatrix;

/// One-pass (Welford) mean and co-moment accumulator. Accumulators can be
/// merged (Chan et al. pairwise update); merging in a fixed order gives
/// reproducible sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CovAccumulator {
    n: u64,
    mean: Vec<f64>,
    /// Upper triangle unused; full `C×C` co-moment, row-major.
    m2: Vec<f64>,
    delta: Vec<f64>,
}

impl CovAccumulator {
    pub fn new(cols: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; cols],
            m2: vec![0.0; cols * cols],
            delta: vec![0.0; cols],
        }
    }

    pub fn cols(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, row: &[f64]) {
        let c = self.cols();
        assert_eq!(row.len(), c);
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for j in 0..c {
            self.delta[j] = row[j] - self.mean[j];
            self.mean[j] += self.delta[j] * inv;
        }
        for i in 0..c {
            let after = row[i] - self.mean[i];
            let line = &mut self.m2[i * c..(i + 1) * c];
            for (m, &d) in line.iter_mut().zip(&self.delta) {
                *m += after * d;
            }
        }
    }

    pub fn merge(&mut self, other: &CovAccumulator) {
        assert_eq!(self.cols(), other.cols());
        if other.n == 0 {
            return;
        }
        let c = self.cols();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d: Vec<f64> = other
            .mean
            .iter()
            .zip(&self.mean)
            .map(|(b, a)| b - a)
            .collect();
        for i in 0..c {
            for j in 0..c {
                self.m2[i * c + j] += other.m2[i * c + j] + d[i] * d[j] * na * nb / n;
            }
        }
        for (m, di) in self.mean.iter_mut().zip(&d) {
            *m += di * nb / n;
        }
        self.n += other.n;
    }

    /// Population covariance (normalization does not affect the ratios).
    pub fn covariance(&self) -> DMatrix<f64> {
        let c = self.cols();
        let n = self.n.max(1) as f64;
        // symmetrize away round-off
        DMatrix::from_fn(c, c, |i, j| {
            0.5 * (self.m2[i * c + j] + self.m2[j * c + i]) / n
        })
    }
}
