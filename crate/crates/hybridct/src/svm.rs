//! Kernelized soft-margin SVM trained by sequential minimal optimization
//! on feature vectors, with per-class penalty weighting, KKT and dual
//! diagnostics, and sigmoid risk calibration.
//!
//! Inputs are standardized per dimension inside the model; stored support
//! vectors live in the standardized space.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cnn::FeatureVector;
use crate::data::BinaryTarget;
use crate::rng::seeded_rng;

/// Precompute the full Gram matrix up to this many training points.
const GRAM_LIMIT: usize = 2048;
/// Alphas this close to a box edge snap onto it.
const ALPHA_SNAP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("DimError: {0}")]
    Dim(String),
    #[error("DataError: {0}")]
    Data(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32, coef0: f64 },
    Rbf { gamma: f64 },
}

#[derive(Clone, Debug)]
pub struct SvmConfig {
    pub c: f64,
    /// Per-class multipliers on C: (positive class, negative class).
    pub class_weights: (f64, f64),
    pub tolerance: f64,
    pub max_passes: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            class_weights: (1.0, 1.0),
            tolerance: 1e-3,
            max_passes: 100_000,
            seed: 0,
            kernel: KernelSpec::Linear,
        }
    }
}

impl SvmConfig {
    fn cap_for(&self, y: f64) -> f64 {
        if y > 0.0 {
            self.c * self.class_weights.0
        } else {
            self.c * self.class_weights.1
        }
    }
}

/// Trained model. `support_vectors` are standardized; `decision_value`
/// standardizes its input with the stored per-dimension (mean, std).
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub support_vectors: Vec<FeatureVector>,
    pub alphas: Vec<f64>,
    pub sv_targets: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Sigmoid risk map `risk(s) = 1 / (1 + exp(a*s + b))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

impl Calibration {
    /// Risk in the open interval (0, 1); extreme scores are clamped so the
    /// printed value never rounds to an endpoint.
    pub fn risk(&self, score: f64) -> f64 {
        let z = self.a * score + self.b;
        let p = if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        };
        p.clamp(1e-6, 1.0 - 1e-6)
    }
}

/// Training diagnostics kept out of the model proper.
#[derive(Clone, Debug)]
pub struct SmoReport {
    pub model: SvmModel,
    pub converged: bool,
    pub passes: usize,
    /// Cumulative dual objective after each accepted pair update,
    /// starting from W(0) = 0.
    pub dual_trace: Vec<f64>,
    /// Final alphas for every training point, in input order.
    pub alphas: Vec<f64>,
}

pub fn kernel_eval(k: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::Dim(format!(
            "kernel operands differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(kern(k, x, y))
}

fn kern(k: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    match k {
        KernelSpec::Linear => dot(x, y),
        KernelSpec::Polynomial { degree, coef0 } => (dot(x, y) + coef0).powi(*degree as i32),
        KernelSpec::Rbf { gamma } => {
            let mut d2 = 0.0;
            for (a, b) in x.iter().zip(y) {
                let d = a - b;
                d2 += d * d;
            }
            (-gamma * d2).exp()
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Per-dimension mean and population standard deviation; dimensions with
/// (near-)zero spread standardize with std 1 so they pass through centered.
fn fit_standardization(features: &[FeatureVector]) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let dim = features[0].len();
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for f in features {
        for d in 0..dim {
            let c = f[d] - mean[d];
            var[d] += c * c;
        }
    }
    let std = var
        .iter()
        .map(|&v| {
            let s = (v / n).sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        })
        .collect();
    (mean, std)
}

fn standardize(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mean.iter().zip(std))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}

struct Solver<'a> {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    cap: Vec<f64>,
    kernel: &'a KernelSpec,
    tol: f64,
    alpha: Vec<f64>,
    err: Vec<f64>,
    b: f64,
    gram: Option<Vec<f64>>,
    dual: f64,
    trace: Vec<f64>,
    rng: ChaCha8Rng,
}

impl<'a> Solver<'a> {
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, cfg: &'a SvmConfig) -> Self {
        let n = x.len();
        let cap = y.iter().map(|&yi| cfg.cap_for(yi)).collect();
        let gram = if n <= GRAM_LIMIT {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = kern(&cfg.kernel, &x[i], &x[j]);
                    g[i * n + j] = v;
                    g[j * n + i] = v;
                }
            }
            Some(g)
        } else {
            None
        };
        // With all alphas zero, f(x) = 0 so E_i = -y_i.
        let err = y.iter().map(|&yi| -yi).collect();
        Solver {
            x,
            y,
            cap,
            kernel: &cfg.kernel,
            tol: cfg.tolerance,
            alpha: vec![0.0; n],
            err,
            b: 0.0,
            gram,
            dual: 0.0,
            trace: vec![0.0],
            rng: seeded_rng(cfg.seed),
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn k(&self, i: usize, j: usize) -> f64 {
        match &self.gram {
            Some(g) => g[i * self.n() + j],
            None => kern(self.kernel, &self.x[i], &self.x[j]),
        }
    }

    fn non_bound(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.cap[i]
    }

    /// Raw KKT violation (no tolerance slack); convergence is
    /// `max violation <= tolerance`.
    fn raw_violation(&self, i: usize) -> f64 {
        let yf = self.y[i] * (self.err[i] + self.y[i]);
        if self.alpha[i] <= 0.0 {
            (1.0 - yf).max(0.0)
        } else if self.alpha[i] >= self.cap[i] {
            (yf - 1.0).max(0.0)
        } else {
            (yf - 1.0).abs()
        }
    }

    /// Violators above tolerance in the requested scope, worst first,
    /// ties broken toward the lower index.
    fn candidates(&self, all: bool) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = (0..self.n())
            .filter(|&i| all || self.non_bound(i))
            .filter_map(|i| {
                let v = self.raw_violation(i);
                if v > self.tol {
                    Some((v, i))
                } else {
                    None
                }
            })
            .collect();
        out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out
    }

    fn refresh_errors(&mut self) {
        for i in 0..self.n() {
            let mut f = self.b;
            for j in 0..self.n() {
                if self.alpha[j] > 0.0 {
                    f += self.alpha[j] * self.y[j] * self.k(i, j);
                }
            }
            self.err[i] = f - self.y[i];
        }
    }

    /// Second-choice heuristic: widest error gap among non-bound points,
    /// then a random-start walk over non-bound points, then over all.
    fn examine(&mut self, i1: usize) -> bool {
        let n = self.n();
        let e1 = self.err[i1];
        let mut best = None;
        let mut best_gap = -1.0;
        for j in 0..n {
            if j != i1 && self.non_bound(j) {
                let gap = (e1 - self.err[j]).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(j);
                }
            }
        }
        if let Some(j) = best {
            if self.take_step(i1, j) {
                return true;
            }
        }
        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let j = (start + off) % n;
            if j != i1 && self.non_bound(j) && self.take_step(i1, j) {
                return true;
            }
        }
        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let j = (start + off) % n;
            if j != i1 && self.take_step(i1, j) {
                return true;
            }
        }
        false
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let s = y1 * y2;
        let (e1, e2) = (self.err[i1], self.err[i2]);
        let (c1, c2) = (self.cap[i1], self.cap[i2]);
        let (lo, hi) = if s < 0.0 {
            ((a2 - a1).max(0.0), c2.min(c1 + a2 - a1))
        } else {
            ((a1 + a2 - c1).max(0.0), c2.min(a1 + a2))
        };
        if hi - lo < 1e-12 {
            return false;
        }
        let k11 = self.k(i1, i1);
        let k12 = self.k(i1, i2);
        let k22 = self.k(i2, i2);
        let eta = k11 + k22 - 2.0 * k12;
        let mut a2_new = if eta > 0.0 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Flat or concave direction: evaluate the objective at both
            // clip ends and move to the strictly better one.
            let f1 = y1 * (e1 + self.b) - a1 * k11 - s * a2 * k12;
            let f2 = y2 * (e2 + self.b) - s * a1 * k12 - a2 * k22;
            let l1 = a1 + s * (a2 - lo);
            let h1 = a1 + s * (a2 - hi);
            let psi_l =
                l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22 + s * lo * l1 * k12;
            let psi_h =
                h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22 + s * hi * h1 * k12;
            if psi_l < psi_h - 1e-12 {
                lo
            } else if psi_h < psi_l - 1e-12 {
                hi
            } else {
                return false;
            }
        };
        if (a2_new - a2).abs() < 1e-10 * (a2_new + a2 + 1e-10) {
            return false;
        }
        let mut a1_new = (a1 + s * (a2 - a2_new)).clamp(0.0, c1);
        a1_new = snap(a1_new, c1);
        a2_new = snap(a2_new, c2);
        let d1 = a1_new - a1;
        let d2 = a2_new - a2;

        let b1 = self.b - e1 - y1 * d1 * k11 - y2 * d2 * k12;
        let b2 = self.b - e2 - y1 * d1 * k12 - y2 * d2 * k22;
        let b_new = if a1_new > 0.0 && a1_new < c1 {
            b1
        } else if a2_new > 0.0 && a2_new < c2 {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = b_new - self.b;

        // Dual increase from the closed form; g_i is f(x_i) without bias.
        let g1 = e1 + y1 - self.b;
        let g2 = e2 + y2 - self.b;
        let dw = d1 + d2
            - y1 * d1 * g1
            - y2 * d2 * g2
            - 0.5 * (d1 * d1 * k11 + d2 * d2 * k22)
            - s * d1 * d2 * k12;
        self.dual += dw;
        self.trace.push(self.dual);

        self.alpha[i1] = a1_new;
        self.alpha[i2] = a2_new;
        self.b = b_new;
        for m in 0..self.n() {
            self.err[m] += y1 * d1 * self.k(i1, m) + y2 * d2 * self.k(i2, m) + db;
        }
        true
    }

    fn solve(&mut self, max_passes: usize) -> (bool, usize) {
        let mut passes = 0;
        let mut examine_all = true;
        while passes < max_passes {
            passes += 1;
            let mut cands = self.candidates(examine_all);
            if cands.is_empty() {
                if examine_all {
                    // Recompute errors from scratch before declaring done;
                    // the incremental cache accumulates rounding.
                    self.refresh_errors();
                    cands = self.candidates(true);
                    if cands.is_empty() {
                        break;
                    }
                } else {
                    examine_all = true;
                    continue;
                }
            }
            let mut progressed = false;
            for &(_, i1) in &cands {
                if self.examine(i1) {
                    progressed = true;
                    break;
                }
            }
            if !progressed {
                if examine_all {
                    break;
                }
                examine_all = true;
            } else if examine_all {
                examine_all = false;
            }
        }
        self.refresh_errors();
        let max_v = (0..self.n()).map(|i| self.raw_violation(i)).fold(0.0, f64::max);
        (max_v <= self.tol, passes)
    }
}

fn snap(a: f64, cap: f64) -> f64 {
    if a < ALPHA_SNAP {
        0.0
    } else if cap - a < ALPHA_SNAP {
        cap
    } else {
        a
    }
}

fn check_training_inputs(
    features: &[FeatureVector],
    targets: &[BinaryTarget],
) -> Result<(), SvmError> {
    if features.len() != targets.len() {
        return Err(SvmError::Dim(format!(
            "{} feature vectors vs {} targets",
            features.len(),
            targets.len()
        )));
    }
    if features.len() < 2 {
        return Err(SvmError::Data("need at least two training points".into()));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(SvmError::Dim("empty feature vectors".into()));
    }
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(SvmError::Dim(format!(
            "inconsistent feature lengths: {} vs {}",
            bad.len(),
            dim
        )));
    }
    let pos = targets.iter().filter(|t| **t == BinaryTarget::Positive).count();
    if pos == 0 || pos == targets.len() {
        return Err(SvmError::Data("training data contains a single class".into()));
    }
    Ok(())
}

/// SMO training. Returns the model even when `max_passes` ran out with
/// violations outstanding; use [`train_smo_traced`] to observe the
/// convergence flag and the dual trace.
pub fn train_smo(
    features: &[FeatureVector],
    targets: &[BinaryTarget],
    cfg: &SvmConfig,
) -> Result<SvmModel, SvmError> {
    Ok(train_smo_traced(features, targets, cfg)?.model)
}

pub fn train_smo_traced(
    features: &[FeatureVector],
    targets: &[BinaryTarget],
    cfg: &SvmConfig,
) -> Result<SmoReport, SvmError> {
    check_training_inputs(features, targets)?;
    let (mean, std) = fit_standardization(features);
    let x: Vec<Vec<f64>> = features.iter().map(|f| standardize(f, &mean, &std)).collect();
    let y: Vec<f64> = targets.iter().map(|t| t.sign()).collect();
    let mut solver = Solver::new(x, y, cfg);
    let (converged, passes) = solver.solve(cfg.max_passes);

    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    let mut sv_targets = Vec::new();
    for i in 0..solver.n() {
        if solver.alpha[i] > 0.0 {
            support_vectors.push(solver.x[i].clone());
            alphas.push(solver.alpha[i]);
            sv_targets.push(solver.y[i]);
        }
    }
    let model = SvmModel {
        support_vectors,
        alphas,
        sv_targets,
        bias: solver.b,
        kernel: cfg.kernel.clone(),
        mean,
        std,
    };
    Ok(SmoReport {
        model,
        converged,
        passes,
        dual_trace: std::mem::take(&mut solver.trace),
        alphas: solver.alpha,
    })
}

/// `f(x) = sum_i alpha_i y_i k(sv_i, standardized x) + b`.
pub fn decision_value(model: &SvmModel, x: &FeatureVector) -> Result<f64, SvmError> {
    if x.len() != model.mean.len() {
        return Err(SvmError::Dim(format!(
            "input has {} dims, model expects {}",
            x.len(),
            model.mean.len()
        )));
    }
    let xs = standardize(x, &model.mean, &model.std);
    let mut f = model.bias;
    for ((sv, a), y) in model.support_vectors.iter().zip(&model.alphas).zip(&model.sv_targets) {
        f += a * y * kern(&model.kernel, sv, &xs);
    }
    Ok(f)
}

/// Positive iff the decision value is strictly positive; an exact zero
/// predicts Negative.
pub fn predict_svm(model: &SvmModel, x: &FeatureVector) -> Result<BinaryTarget, SvmError> {
    Ok(if decision_value(model, x)? > 0.0 {
        BinaryTarget::Positive
    } else {
        BinaryTarget::Negative
    })
}

/// Maximum excess over the tolerance-slackened KKT conditions on the
/// model's own training set. Per-point alphas are recovered by matching
/// standardized inputs against the stored support vectors (each consumed
/// at most once); unmatched points have alpha 0.
pub fn kkt_violation(
    model: &SvmModel,
    features: &[FeatureVector],
    targets: &[BinaryTarget],
    cfg: &SvmConfig,
) -> Result<f64, SvmError> {
    if features.len() != targets.len() {
        return Err(SvmError::Dim(format!(
            "{} feature vectors vs {} targets",
            features.len(),
            targets.len()
        )));
    }
    let dim = model.mean.len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(SvmError::Dim(format!(
            "input has {} dims, model expects {dim}",
            bad.len()
        )));
    }
    let tol = cfg.tolerance;
    let mut used = vec![false; model.support_vectors.len()];
    let mut worst = 0.0f64;
    for (f, t) in features.iter().zip(targets) {
        let xs = standardize(f, &model.mean, &model.std);
        let y = t.sign();
        let mut alpha = 0.0;
        for (j, sv) in model.support_vectors.iter().enumerate() {
            if !used[j] && model.sv_targets[j] == y && sv == &xs {
                alpha = model.alphas[j];
                used[j] = true;
                break;
            }
        }
        let mut fx = model.bias;
        for ((sv, a), sy) in
            model.support_vectors.iter().zip(&model.alphas).zip(&model.sv_targets)
        {
            fx += a * sy * kern(&model.kernel, sv, &xs);
        }
        let yf = y * fx;
        let cap = cfg.cap_for(y);
        let excess = if alpha <= 0.0 {
            ((1.0 - tol) - yf).max(0.0)
        } else if alpha >= cap - ALPHA_SNAP {
            (yf - (1.0 + tol)).max(0.0)
        } else {
            ((yf - 1.0).abs() - tol).max(0.0)
        };
        worst = worst.max(excess);
    }
    Ok(worst)
}

/// `W(alpha) = sum_i alpha_i - 1/2 sum_ij alpha_i alpha_j y_i y_j k(x_i, x_j)`.
pub fn dual_objective(
    alphas: &[f64],
    targets: &[BinaryTarget],
    features: &[FeatureVector],
    kernel: &KernelSpec,
) -> Result<f64, SvmError> {
    if alphas.len() != targets.len() || alphas.len() != features.len() {
        return Err(SvmError::Dim(format!(
            "length mismatch: {} alphas, {} targets, {} features",
            alphas.len(),
            targets.len(),
            features.len()
        )));
    }
    if let Some(first) = features.first() {
        if let Some(bad) = features.iter().find(|f| f.len() != first.len()) {
            return Err(SvmError::Dim(format!(
                "inconsistent feature lengths: {} vs {}",
                bad.len(),
                first.len()
            )));
        }
    }
    let mut w: f64 = alphas.iter().sum();
    for i in 0..alphas.len() {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..alphas.len() {
            if alphas[j] == 0.0 {
                continue;
            }
            w -= 0.5
                * alphas[i]
                * alphas[j]
                * targets[i].sign()
                * targets[j].sign()
                * kern(kernel, &features[i], &features[j]);
        }
    }
    Ok(w)
}

/// Fits the sigmoid `risk(s) = 1/(1 + exp(a*s + b))` by damped Newton
/// iteration on the cross-entropy with smoothed targets, following the
/// standard numerically stable formulation.
pub fn platt_calibrate(
    scores: &[f64],
    targets: &[BinaryTarget],
) -> Result<Calibration, SvmError> {
    if scores.len() != targets.len() {
        return Err(SvmError::Dim(format!(
            "{} scores vs {} targets",
            scores.len(),
            targets.len()
        )));
    }
    let n_pos = targets.iter().filter(|t| **t == BinaryTarget::Positive).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SvmError::Data("calibration requires both classes".into()));
    }
    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let t: Vec<f64> = targets
        .iter()
        .map(|tt| if *tt == BinaryTarget::Positive { hi } else { lo })
        .collect();

    // Cross-entropy of p = 1/(1+e^f) against target t, stable in f.
    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&t)
            .map(|(&s, &ti)| {
                let f = a * s + b;
                if f >= 0.0 {
                    ti * f + (-f).exp().ln_1p()
                } else {
                    (ti - 1.0) * f + f.exp().ln_1p()
                }
            })
            .sum()
    };

    let mut a = 0.0f64;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        let mut h11 = 1e-12;
        let mut h22 = 1e-12;
        let mut h21 = 0.0;
        for (&s, &ti) in scores.iter().zip(&t) {
            let f = a * s + b;
            let p = if f >= 0.0 {
                let e = (-f).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + f.exp())
            };
            let q = 1.0 - p;
            // dCE/df = t - p for p = 1/(1+e^f).
            let d = ti - p;
            g1 += s * d;
            g2 += d;
            h11 += s * s * p * q;
            h22 += p * q;
            h21 += s * p * q;
        }
        if (g1 * g1 + g2 * g2).sqrt() < 1e-8 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(h11 * g2 - h21 * g1) / det;
        let slope = g1 * da + g2 * db;
        let mut step = 1.0;
        loop {
            let trial = objective(a + step * da, b + step * db);
            if trial <= fval + 1e-4 * step * slope {
                a += step * da;
                b += step * db;
                fval = trial;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
        if step < 1e-10 {
            break;
        }
    }
    Ok(Calibration { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn targets(signs: &[i32]) -> Vec<BinaryTarget> {
        signs
            .iter()
            .map(|&s| if s > 0 { BinaryTarget::Positive } else { BinaryTarget::Negative })
            .collect()
    }

    #[test]
    fn kernel_closed_forms() {
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(
            kernel_eval(&KernelSpec::Rbf { gamma: 2.5 }, &[0.3, -0.7], &[0.3, -0.7]).unwrap(),
            1.0
        );
        assert_eq!(
            kernel_eval(
                &KernelSpec::Polynomial { degree: 2, coef0: 1.0 },
                &[1.0, 0.0],
                &[1.0, 0.0]
            )
            .unwrap(),
            4.0
        );
    }

    #[test]
    fn kernels_are_symmetric() {
        let mut rng = stream_rng(50, 0);
        let kernels = [
            KernelSpec::Linear,
            KernelSpec::Polynomial { degree: 3, coef0: 0.5 },
            KernelSpec::Rbf { gamma: 0.8 },
        ];
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for k in &kernels {
                let a = kernel_eval(k, &x, &y).unwrap();
                let b = kernel_eval(k, &y, &x).unwrap();
                assert!((a - b).abs() < 1e-12, "{k:?}");
            }
        }
    }

    #[test]
    fn kernel_rejects_mismatched_lengths() {
        let err = kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().starts_with("DimError:"), "{err}");
    }

    /// Jacobi eigenvalue sweep for small symmetric matrices.
    fn min_eigenvalue(mut m: Vec<Vec<f64>>) -> f64 {
        let n = m.len();
        for _ in 0..200 {
            let (mut p, mut q, mut max) = (0, 1, 0.0);
            for i in 0..n {
                for j in i + 1..n {
                    if m[i][j].abs() > max {
                        max = m[i][j].abs();
                        p = i;
                        q = j;
                    }
                }
            }
            if max < 1e-13 {
                break;
            }
            let theta = 0.5 * (m[q][q] - m[p][p]) / m[p][q];
            let t = if theta >= 0.0 {
                1.0 / (theta + (theta * theta + 1.0).sqrt())
            } else {
                -1.0 / (-theta + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let (app, aqq, apq) = (m[p][p], m[q][q], m[p][q]);
            m[p][p] = app - t * apq;
            m[q][q] = aqq + t * apq;
            m[p][q] = 0.0;
            m[q][p] = 0.0;
            for i in 0..n {
                if i != p && i != q {
                    let (aip, aiq) = (m[i][p], m[i][q]);
                    m[i][p] = c * aip - s * aiq;
                    m[p][i] = m[i][p];
                    m[i][q] = s * aip + c * aiq;
                    m[q][i] = m[i][q];
                }
            }
        }
        (0..n).map(|i| m[i][i]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn gram_matrices_are_positive_semidefinite() {
        let mut rng = stream_rng(51, 0);
        let points: Vec<Vec<f64>> =
            (0..8).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let kernels = [
            KernelSpec::Linear,
            KernelSpec::Polynomial { degree: 2, coef0: 1.0 },
            KernelSpec::Rbf { gamma: 0.7 },
        ];
        for k in &kernels {
            let gram: Vec<Vec<f64>> = points
                .iter()
                .map(|a| points.iter().map(|b| kernel_eval(k, a, b).unwrap()).collect())
                .collect();
            let min = min_eigenvalue(gram);
            assert!(min >= -1e-8, "{k:?} min eigenvalue {min}");
        }
    }

    fn one_d_instance() -> (Vec<FeatureVector>, Vec<BinaryTarget>, SvmConfig) {
        let features = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let t = targets(&[-1, -1, 1, 1]);
        let cfg = SvmConfig { c: 10.0, seed: 7, ..Default::default() };
        (features, t, cfg)
    }

    #[test]
    fn one_dimensional_max_margin_solution() {
        let (features, t, cfg) = one_d_instance();
        let report = train_smo_traced(&features, &t, &cfg).unwrap();
        assert!(report.converged);
        let model = &report.model;
        // The analytic solution is f(x) = x: margins sit at the inner pair.
        assert!((decision_value(model, &vec![1.0]).unwrap() - 1.0).abs() < 1e-2);
        assert!((decision_value(model, &vec![-1.0]).unwrap() + 1.0).abs() < 1e-2);
        assert!((decision_value(model, &vec![3.0]).unwrap() - 3.0).abs() < 5e-2);
        // Support vectors are exactly the inner pair; recover raw values.
        let mut raw: Vec<f64> = model
            .support_vectors
            .iter()
            .map(|sv| sv[0] * model.std[0] + model.mean[0])
            .collect();
        raw.sort_by(f64::total_cmp);
        assert_eq!(raw.len(), 2);
        assert!((raw[0] + 1.0).abs() < 1e-9 && (raw[1] - 1.0).abs() < 1e-9);
        // Interior support vectors satisfy the margin equality.
        for (sv, y) in model.support_vectors.iter().zip(&model.sv_targets) {
            let raw = vec![sv[0] * model.std[0] + model.mean[0]];
            let f = decision_value(model, &raw).unwrap();
            assert!((y * f - 1.0).abs() < 2.0 * cfg.tolerance);
        }
    }

    #[test]
    fn xor_with_rbf_kernel_is_separated() {
        let features = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ];
        let t = targets(&[-1, -1, 1, 1]);
        let cfg = SvmConfig {
            c: 10.0,
            kernel: KernelSpec::Rbf { gamma: 1.0 },
            seed: 3,
            ..Default::default()
        };
        let model = train_smo(&features, &t, &cfg).unwrap();
        assert_eq!(model.support_vectors.len(), 4);
        for (f, want) in features.iter().zip(&t) {
            assert_eq!(predict_svm(&model, f).unwrap(), *want);
        }
    }

    #[test]
    fn single_class_training_is_rejected() {
        let features = vec![vec![0.0], vec![1.0]];
        let err = train_smo(&features, &targets(&[1, 1]), &SvmConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("DataError:"), "{err}");
    }

    #[test]
    fn converged_model_has_no_kkt_excess() {
        let (features, t, cfg) = one_d_instance();
        let model = train_smo(&features, &t, &cfg).unwrap();
        let v = kkt_violation(&model, &features, &t, &cfg).unwrap();
        assert!(v <= cfg.tolerance, "violation {v}");
    }

    #[test]
    fn perturbed_alpha_violates_kkt() {
        let (features, t, cfg) = one_d_instance();
        let mut model = train_smo(&features, &t, &cfg).unwrap();
        model.alphas[0] += 0.5;
        let v = kkt_violation(&model, &features, &t, &cfg).unwrap();
        assert!(v > cfg.tolerance, "violation {v}");
    }

    #[test]
    fn zero_alpha_model_misses_the_margin_everywhere() {
        let (features, t, cfg) = one_d_instance();
        let trained = train_smo(&features, &t, &cfg).unwrap();
        let empty = SvmModel {
            support_vectors: Vec::new(),
            alphas: Vec::new(),
            sv_targets: Vec::new(),
            bias: 0.0,
            kernel: KernelSpec::Linear,
            mean: trained.mean.clone(),
            std: trained.std.clone(),
        };
        let v = kkt_violation(&empty, &features, &t, &cfg).unwrap();
        assert!(v >= 1.0 - cfg.tolerance, "violation {v}");
        // And the empty decision function is identically zero -> Negative.
        assert_eq!(decision_value(&empty, &vec![5.0]).unwrap(), 0.0);
        assert_eq!(predict_svm(&empty, &vec![5.0]).unwrap(), BinaryTarget::Negative);
    }

    #[test]
    fn dual_objective_closed_forms() {
        let features = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let t = targets(&[-1, -1, 1, 1]);
        let zero = dual_objective(&[0.0; 4], &t, &features, &KernelSpec::Linear).unwrap();
        assert_eq!(zero, 0.0);
        // At the analytic optimum the inner pair carries alpha 1/2 each:
        // W = 1 - (1/2) * (sum alpha_i y_i x_i)^2 = 1/2.
        let w = dual_objective(&[0.0, 0.5, 0.5, 0.0], &t, &features, &KernelSpec::Linear)
            .unwrap();
        assert!((w - 0.5).abs() < 1e-12);
        // Hand-computed two-point instance.
        let f2 = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let w2 = dual_objective(&[0.3, 0.7], &targets(&[1, -1]), &f2, &KernelSpec::Linear)
            .unwrap();
        // 1.0 - 0.5*(0.09*1 + 0.49*4) = 1 - 0.5*2.05 = -0.025.
        assert!((w2 - (1.0 - 0.5 * 2.05)).abs() < 1e-12);
    }

    #[test]
    fn smo_keeps_the_equality_constraint_and_box() {
        let mut rng = stream_rng(52, 0);
        let mut features = Vec::new();
        let mut signs = Vec::new();
        for i in 0..30 {
            let off = if i % 2 == 0 { 1.2 } else { -1.2 };
            features.push(vec![
                rng.gen_range(-1.0..1.0) + off,
                rng.gen_range(-1.0..1.0) - off / 2.0,
            ]);
            signs.push(if i % 2 == 0 { 1 } else { -1 });
        }
        let t = targets(&signs);
        let cfg = SvmConfig {
            c: 1.0,
            class_weights: (1.5, 1.0),
            kernel: KernelSpec::Rbf { gamma: 0.5 },
            seed: 9,
            ..Default::default()
        };
        let report = train_smo_traced(&features, &t, &cfg).unwrap();
        assert!(report.converged);
        let sum: f64 = report
            .alphas
            .iter()
            .zip(&t)
            .map(|(a, tt)| a * tt.sign())
            .sum();
        assert!(sum.abs() < 1e-8, "sum alpha*y = {sum}");
        for (a, tt) in report.alphas.iter().zip(&t) {
            let cap = cfg.cap_for(tt.sign());
            assert!(*a >= 0.0 && *a <= cap, "alpha {a} outside [0, {cap}]");
        }
        // The dual objective never decreases across accepted updates.
        for w in report.dual_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn platt_symmetric_scores_give_half_risk_at_zero() {
        let mut scores = Vec::new();
        let mut signs = Vec::new();
        for _ in 0..20 {
            scores.push(2.0);
            signs.push(1);
            scores.push(-2.0);
            signs.push(-1);
        }
        let cal = platt_calibrate(&scores, &targets(&signs)).unwrap();
        assert!((cal.risk(0.0) - 0.5).abs() < 1e-6, "risk(0) = {}", cal.risk(0.0));
        assert!(cal.a < 0.0);
    }

    #[test]
    fn platt_separated_scores_give_confident_risk() {
        // Enough points per class that the smoothed targets (n+1)/(n+2)
        // allow genuinely confident output at the extremes.
        let mut scores = Vec::new();
        let mut signs = Vec::new();
        for i in 0..20 {
            let s = 1.5 + i as f64 * 0.1;
            scores.push(s);
            signs.push(1);
            scores.push(-s);
            signs.push(-1);
        }
        let cal = platt_calibrate(&scores, &targets(&signs)).unwrap();
        assert!(cal.risk(3.0) > 0.9, "risk {}", cal.risk(3.0));
        assert!(cal.risk(-3.0) < 0.1, "risk {}", cal.risk(-3.0));
    }

    #[test]
    fn platt_risk_is_monotone_when_a_is_negative() {
        let cal = Calibration { a: -1.7, b: 0.3 };
        let mut prev = 0.0;
        for i in 0..200 {
            let s = -10.0 + i as f64 * 0.1;
            let r = cal.risk(s);
            assert!(r >= prev);
            assert!(r > 0.0 && r < 1.0);
            prev = r;
        }
    }

    #[test]
    fn platt_single_class_is_rejected() {
        let err = platt_calibrate(&[1.0, 2.0], &targets(&[1, 1])).unwrap_err();
        assert!(err.to_string().starts_with("DataError:"), "{err}");
    }

    #[test]
    fn decision_value_checks_dimensions() {
        let (features, t, cfg) = one_d_instance();
        let model = train_smo(&features, &t, &cfg).unwrap();
        let err = decision_value(&model, &vec![1.0, 2.0]).unwrap_err();
        assert!(err.to_string().starts_with("DimError:"), "{err}");
    }
}
