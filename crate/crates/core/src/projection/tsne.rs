//! Exact O(N^2) t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{JobControl, Projection2D, ProjectionError, Provenance};
use crate::dataset::FeatureMatrix;

const CALIBRATION_STEPS: usize = 100;
const PERPLEXITY_TOL: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsneOptimizer {
    /// Momentum with per-coordinate adaptive gains.
    #[default]
    Momentum,
    /// Plain gradient descent, no momentum or exaggeration; the step is
    /// halved until the KL divergence does not increase. Meant for tests.
    LineSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iteration: usize,
    pub seed: u64,
    pub optimizer: TsneOptimizer,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            n_iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iteration: 250,
            seed: 0,
            optimizer: TsneOptimizer::Momentum,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<(), ProjectionError> {
        let bad = |m: String| Err(ProjectionError::InvalidConfig(m));
        if self.perplexity.is_nan() || self.perplexity <= 0.0 {
            return bad(format!("perplexity must be positive, got {}", self.perplexity));
        }
        if self.perplexity * 3.0 >= n as f64 {
            return bad(format!("perplexity {} must be below N/3 = {:.3}", self.perplexity, n as f64 / 3.0));
        }
        if self.n_iterations == 0 {
            return bad("n_iterations must be positive".into());
        }
        if self.early_exaggeration.is_nan() || self.early_exaggeration <= 0.0 {
            return bad("early_exaggeration must be positive".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive".into());
        }
        for m in [self.initial_momentum, self.final_momentum] {
            if !(0.0..1.0).contains(&m) {
                return bad(format!("momentum {m} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Per-point Gaussian conditionals `p(j|i)` (row-major `N x N`, zero diagonal).
#[derive(Debug, Clone)]
pub struct Calibration {
    pub conditional: Vec<f64>,
    /// Precision `1 / (2 sigma_i^2)` of each kernel.
    pub betas: Vec<f64>,
    /// Shannon entropy of each conditional, in bits.
    pub entropies: Vec<f64>,
}

impl Calibration {
    pub fn sigmas(&self) -> Vec<f64> {
        self.betas.iter().map(|b| (0.5 / b).sqrt()).collect()
    }
}

pub fn squared_distances(m: &FeatureMatrix) -> Vec<f64> {
    let n = m.n_samples();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional distribution for one row at precision `beta`. Returns the
/// entropy in nats. Distances are shifted by their minimum, which leaves the
/// normalised distribution unchanged.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = d - dmin;
        let p = (-beta * shifted).exp();
        *o = p;
        sum += p;
        weighted += shifted * p;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * weighted / sum
}

/// Binary search on each kernel's precision until `2^H` is within `1e-5` of
/// `perplexity`.
pub fn calibrate_affinities(sq_dist: &[f64], n: usize, perplexity: f64) -> Result<Calibration, ProjectionError> {
    assert_eq!(sq_dist.len(), n * n);
    let target = perplexity.ln();
    let mut conditional = vec![0.0; n * n];
    let mut betas = vec![1.0; n];
    let mut entropies = vec![0.0; n];
    for i in 0..n {
        let row = &sq_dist[i * n..(i + 1) * n];
        let out = &mut conditional[i * n..(i + 1) * n];
        let mut beta = 1.0;
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        let mut converged = false;
        let mut h = 0.0;
        for _ in 0..CALIBRATION_STEPS {
            h = conditional_row(row, i, beta, out);
            if (h.exp() - perplexity).abs() <= PERPLEXITY_TOL {
                converged = true;
                break;
            }
            if h > target {
                // too flat: sharpen
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        if !converged {
            return Err(ProjectionError::CalibrationFailure {
                point: i,
                reached: h.exp(),
            });
        }
        betas[i] = beta;
        entropies[i] = h / std::f64::consts::LN_2;
    }
    Ok(Calibration {
        conditional,
        betas,
        entropies,
    })
}

/// Symmetrised joint affinities `(p(j|i) + p(i|j)) / 2N`.
pub fn joint_probabilities(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / denom;
        }
    }
    p
}

/// Student-t kernel weights `1 / (1 + |yi - yj|^2)` and their off-diagonal sum.
fn student_weights(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = v;
            w[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    (w, z)
}

/// `KL(P || Q)` for embedding `y` (flat `N x 2`).
pub fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let (w, z) = student_weights(y, n);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                kl += pij * (pij * z / w[i * n + j]).ln();
            }
        }
    }
    kl
}

/// Gradient of `KL(exaggeration * P || Q)` with respect to `y`.
pub fn kl_gradient(p: &[f64], y: &[f64], n: usize, exaggeration: f64) -> Vec<f64> {
    let (w, z) = student_weights(y, n);
    let mut grad = vec![0.0; 2 * n];
    for i in 0..n {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let wij = w[i * n + j];
            let mult = (exaggeration * p[i * n + j] - wij / z) * wij;
            gx += mult * (y[2 * i] - y[2 * j]);
            gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
        }
        grad[2 * i] = 4.0 * gx;
        grad[2 * i + 1] = 4.0 * gy;
    }
    grad
}

fn center(y: &mut [f64], n: usize) {
    let (mut mx, mut my) = (0.0, 0.0);
    for i in 0..n {
        mx += y[2 * i];
        my += y[2 * i + 1];
    }
    mx /= n as f64;
    my /= n as f64;
    for i in 0..n {
        y[2 * i] -= mx;
        y[2 * i + 1] -= my;
    }
}

/// Seeded N(0, 1e-4) start, flattened as `[x0, y0, x1, y1, ...]`.
pub fn initial_embedding(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    (0..2 * n).map(|_| normal.sample(&mut rng)).collect()
}

pub fn compute_tsne(m: &FeatureMatrix, cfg: &TsneConfig) -> Result<Projection2D, ProjectionError> {
    compute_tsne_with(m, cfg, &super::Detached)
}

pub fn compute_tsne_with(
    m: &FeatureMatrix,
    cfg: &TsneConfig,
    control: &dyn JobControl,
) -> Result<Projection2D, ProjectionError> {
    let n = m.n_samples();
    if n < 4 {
        return Err(ProjectionError::DegenerateInput(format!("t-SNE needs at least 4 samples, got {n}")));
    }
    cfg.validate(n)?;
    let cal = calibrate_affinities(&squared_distances(m), n, cfg.perplexity)?;
    let p = joint_probabilities(&cal.conditional, n);
    let mut y = initial_embedding(n, cfg.seed);
    match cfg.optimizer {
        TsneOptimizer::Momentum => optimize_momentum(&p, &mut y, n, cfg, control)?,
        TsneOptimizer::LineSearch => {
            optimize_line_search(&p, &mut y, n, cfg, control)?;
        }
    }
    Ok(Projection2D {
        name: "tsne".into(),
        coords: y.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        provenance: Provenance::ComputedTsne { config: cfg.clone() },
    })
}

fn optimize_momentum(
    p: &[f64],
    y: &mut [f64],
    n: usize,
    cfg: &TsneConfig,
    control: &dyn JobControl,
) -> Result<(), ProjectionError> {
    let mut update = vec![0.0f64; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    for it in 0..cfg.n_iterations {
        if control.cancelled() {
            return Err(ProjectionError::Cancelled);
        }
        let exaggeration = if it < cfg.exaggeration_iterations {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch_iteration {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let grad = kl_gradient(p, y, n, exaggeration);
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        center(y, n);
        if it % 10 == 0 {
            control.report(it as f64 / cfg.n_iterations as f64);
        }
    }
    control.report(1.0);
    Ok(())
}

/// Returns the KL divergence after every iteration (index 0 is the start).
pub fn optimize_line_search(
    p: &[f64],
    y: &mut [f64],
    n: usize,
    cfg: &TsneConfig,
    control: &dyn JobControl,
) -> Result<Vec<f64>, ProjectionError> {
    let mut kl = kl_divergence(p, y, n);
    let mut trace = vec![kl];
    let mut trial = vec![0.0; 2 * n];
    for it in 0..cfg.n_iterations {
        if control.cancelled() {
            return Err(ProjectionError::Cancelled);
        }
        let grad = kl_gradient(p, y, n, 1.0);
        let mut step = cfg.learning_rate;
        for _ in 0..60 {
            for k in 0..2 * n {
                trial[k] = y[k] - step * grad[k];
            }
            let candidate = kl_divergence(p, &trial, n);
            if candidate <= kl {
                y.copy_from_slice(&trial);
                kl = candidate;
                break;
            }
            step *= 0.5;
        }
        trace.push(kl);
        if it % 10 == 0 {
            control.report(it as f64 / cfg.n_iterations as f64);
        }
    }
    control.report(1.0);
    Ok(trace)
}
