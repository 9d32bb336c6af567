//! Bounded-delay optimizer harness.
//!
//! Runs synchronous and one-step-delayed SGD, momentum and Adam-type updates
//! `θ ← θ − η P m` on synthetic smooth objectives with shared noise draws, and
//! measures the trajectory discrepancy between the two.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("diverged at step {step}: |θ| = {norm:e}")]
    Diverged { step: usize, norm: f64 },
    #[error("step size too large: ηL = {0} > 1")]
    StepTooLarge(f64),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// F(θ) = ½ θᵀAθ with A symmetric positive semidefinite.
    Quadratic { a: Vec<Vec<f64>> },
    /// F(θ) = Σ log cosh θ_k + 0.05‖θ‖².
    SmoothNonconvex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub dim: usize,
    pub kind: ObjectiveKind,
    /// Gradient Lipschitz constant L.
    pub smoothness: f64,
    /// F*.
    pub lower_bound: f64,
}

const RIDGE: f64 = 0.1;

impl Objective {
    pub fn quadratic(a: Vec<Vec<f64>>) -> Result<Self, OptimError> {
        let p = a.len();
        if p == 0 || a.iter().any(|r| r.len() != p) {
            return Err(OptimError::Precondition("matrix must be square and nonempty".into()));
        }
        for i in 0..p {
            for j in 0..p {
                if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) || !a[i][j].is_finite() {
                    return Err(OptimError::Precondition("matrix must be symmetric and finite".into()));
                }
            }
        }
        let lmax = spectral_radius(&a);
        // λ_min(A) = L − λ_max(L·I − A)
        let shifted: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| if i == j { lmax - a[i][j] } else { -a[i][j] }).collect())
            .collect();
        let lmin = lmax - spectral_radius(&shifted);
        if lmin < -1e-9 * lmax.max(1.0) {
            return Err(OptimError::Precondition(format!(
                "matrix not positive semidefinite (λ_min ≈ {lmin:e})"
            )));
        }
        Ok(Objective {
            dim: p,
            kind: ObjectiveKind::Quadratic { a },
            smoothness: lmax,
            lower_bound: 0.0,
        })
    }

    pub fn diagonal_quadratic(eigs: &[f64]) -> Result<Self, OptimError> {
        let p = eigs.len();
        let a = (0..p)
            .map(|i| (0..p).map(|j| if i == j { eigs[i] } else { 0.0 }).collect())
            .collect();
        Self::quadratic(a)
    }

    /// Diagonal quadratic with eigenvalues evenly spaced in [0.5, 1].
    pub fn spread_quadratic(p: usize) -> Self {
        let eigs: Vec<f64> = (0..p)
            .map(|k| if p == 1 { 1.0 } else { 0.5 + 0.5 * k as f64 / (p - 1) as f64 })
            .collect();
        Self::diagonal_quadratic(&eigs).expect("diagonal with positive entries")
    }

    pub fn smooth_nonconvex(p: usize) -> Self {
        Objective {
            dim: p,
            kind: ObjectiveKind::SmoothNonconvex,
            smoothness: 1.0 + RIDGE,
            lower_bound: 0.0,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic { a } => {
                0.5 * a
                    .iter()
                    .zip(x)
                    .map(|(row, xi)| xi * dot(row, x))
                    .sum::<f64>()
            }
            ObjectiveKind::SmoothNonconvex => x
                .iter()
                .map(|&v| log_cosh(v) + 0.5 * RIDGE * v * v)
                .sum(),
        }
    }

    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ObjectiveKind::Quadratic { a } => {
                for (o, row) in out.iter_mut().zip(a) {
                    *o = dot(row, x);
                }
            }
            ObjectiveKind::SmoothNonconvex => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.tanh() + RIDGE * v;
                }
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.grad_into(x, &mut g);
        g
    }
}

fn log_cosh(v: f64) -> f64 {
    let a = v.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest |eigenvalue| of a symmetric matrix by power iteration.
fn spectral_radius(a: &[Vec<f64>]) -> f64 {
    let p = a.len();
    // A fixed, non-symmetric start vector avoids landing orthogonal to the
    // top eigenvector for structured matrices.
    let mut v: Vec<f64> = (0..p).map(|k| 1.0 + 0.1 * k as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let n = norm(&v);
        if n == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= n);
        let w: Vec<f64> = a.iter().map(|row| dot(row, &v)).collect();
        let next = norm(&w);
        let done = (next - lambda).abs() <= 1e-14 * next.max(1.0);
        lambda = next;
        v = w;
        if done {
            break;
        }
    }
    lambda
}

/// Largest observed ‖∇F(x) − ∇F(y)‖ / ‖x − y‖ over random pairs.
pub fn observed_smoothness(obj: &Objective, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let x: Vec<f64> = (0..obj.dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let gx = obj.grad(&x);
        let gy = obj.grad(&y);
        let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let nx = norm(&dx);
        if nx > 0.0 {
            worst = worst.max(norm(&dg) / nx);
        }
    }
    worst
}

/// Zero-mean Gaussian gradient noise with total variance E‖ξ‖² = `variance`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(variance: f64, seed: u64) -> Self {
        NoiseModel { variance, seed }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseModel { seed, ..self }
    }

    /// Draw stream for dimension `p`; draw `t` is the same in every stream
    /// with the same seed.
    pub fn stream(&self, p: usize) -> NoiseStream {
        let sd = (self.variance.max(0.0) / p as f64).sqrt();
        NoiseStream {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            normal: Normal::new(0.0, sd).expect("finite standard deviation"),
            zero: self.variance == 0.0,
        }
    }
}

pub struct NoiseStream {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    zero: bool,
}

impl NoiseStream {
    pub fn draw_into(&mut self, out: &mut [f64]) {
        if self.zero {
            out.iter_mut().for_each(|x| *x = 0.0);
        } else {
            out.iter_mut().for_each(|x| *x = self.normal.sample(&mut self.rng));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub samples: usize,
    /// Per-coordinate sample mean.
    pub mean: Vec<f64>,
    /// Sum over coordinates of the per-coordinate sample variance.
    pub total_variance: f64,
}

/// Draws `samples` noise vectors of dimension `p` and summarizes them.
pub fn noise_statistics(noise: &NoiseModel, p: usize, samples: usize) -> NoiseStats {
    let mut stream = noise.stream(p);
    let mut xi = vec![0.0; p];
    let mut sum = vec![0.0; p];
    let mut sq = vec![0.0; p];
    for _ in 0..samples {
        stream.draw_into(&mut xi);
        for k in 0..p {
            sum[k] += xi[k];
            sq[k] += xi[k] * xi[k];
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let total_variance = (0..p).map(|k| sq[k] / n - mean[k] * mean[k]).sum();
    NoiseStats { samples, mean, total_variance }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "SGD")]
    Sgd,
    Momentum,
    AdamType,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub c_min: f64,
    pub c_max: f64,
    /// Optional gradient-norm clip G.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl OptimizerSpec {
    pub fn sgd(eta: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Sgd,
            eta,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            c_min: 1.0,
            c_max: 1.0,
            grad_clip: None,
        }
    }

    pub fn momentum(eta: f64, beta1: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Momentum,
            beta1,
            ..Self::sgd(eta)
        }
    }

    /// Adam-style moments without bias correction, preconditioner clamped
    /// to [0.1, 1].
    pub fn adam(eta: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::AdamType,
            eta,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            c_min: 0.1,
            c_max: 1.0,
            grad_clip: None,
        }
    }

    pub fn with_eta(self, eta: f64) -> Self {
        OptimizerSpec { eta, ..self }
    }

    fn check(&self) -> Result<(), OptimError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(OptimError::Precondition(format!("η must be positive, got {}", self.eta)));
        }
        if self.kind == OptimizerKind::AdamType && !(0.0 < self.c_min && self.c_min <= self.c_max) {
            return Err(OptimError::Precondition("need 0 < c_min ≤ c_max".into()));
        }
        Ok(())
    }
}

/// Momentum and preconditioner state.
#[derive(Clone, Debug)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub precond: Vec<f64>,
}

impl OptState {
    pub fn new(p: usize) -> Self {
        OptState {
            m: vec![0.0; p],
            v: vec![0.0; p],
            precond: vec![1.0; p],
        }
    }

    /// Feeds gradient `g` through the recursions and writes `P m` to `dir`.
    pub fn step(&mut self, spec: &OptimizerSpec, g: &[f64], dir: &mut [f64]) {
        match spec.kind {
            OptimizerKind::Sgd => dir.copy_from_slice(g),
            OptimizerKind::Momentum => {
                for k in 0..g.len() {
                    self.m[k] = spec.beta1 * self.m[k] + (1.0 - spec.beta1) * g[k];
                    dir[k] = self.m[k];
                }
            }
            OptimizerKind::AdamType => {
                for k in 0..g.len() {
                    self.m[k] = spec.beta1 * self.m[k] + (1.0 - spec.beta1) * g[k];
                    self.v[k] = spec.beta2 * self.v[k] + (1.0 - spec.beta2) * g[k] * g[k];
                    self.precond[k] = (1.0 / (self.v[k].sqrt() + spec.eps)).clamp(spec.c_min, spec.c_max);
                    dir[k] = self.precond[k] * self.m[k];
                }
            }
        }
    }
}

/// τ(t) for every step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelaySchedule {
    Zero,
    /// τ(0) = 0 and τ(t) = 1 afterwards.
    OneStep,
    Custom(Vec<u8>),
}

impl DelaySchedule {
    pub fn tau(&self, t: usize) -> u8 {
        match self {
            DelaySchedule::Zero => 0,
            DelaySchedule::OneStep => u8::from(t >= 1),
            DelaySchedule::Custom(v) => v.get(t).copied().unwrap_or(0),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DelaySchedule::Zero => true,
            DelaySchedule::OneStep => false,
            DelaySchedule::Custom(v) => v.iter().all(|&x| x == 0),
        }
    }

    fn check(&self) -> Result<(), OptimError> {
        if let DelaySchedule::Custom(v) = self {
            if v.first().is_some_and(|&x| x != 0) {
                return Err(OptimError::Precondition("τ(0) must be 0".into()));
            }
            if v.iter().any(|&x| x > 1) {
                return Err(OptimError::Precondition("τ(t) must be 0 or 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptRunTrace {
    pub eta: f64,
    /// θ_0 … θ_T.
    pub iterates: Vec<Vec<f64>>,
    /// F(θ_t), t = 0 … T.
    pub objective: Vec<f64>,
    /// ‖∇F(θ_t)‖², t = 0 … T.
    pub grad_norm_sq: Vec<f64>,
    /// Smallest and largest preconditioner entry seen.
    pub precond_range: (f64, f64),
    /// ‖θ_t − θ_t^sync‖ for paired runs.
    #[serde(default)]
    pub discrepancy_norm: Option<Vec<f64>>,
}

impl OptRunTrace {
    pub fn steps(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }

    /// (1/T) Σ_{t<T} ‖∇F(θ_t)‖².
    pub fn mean_grad_norm_sq(&self) -> f64 {
        let t = self.steps();
        if t == 0 {
            return 0.0;
        }
        self.grad_norm_sq[..t].iter().sum::<f64>() / t as f64
    }

    pub fn max_discrepancy(&self) -> Option<f64> {
        self.discrepancy_norm
            .as_ref()
            .map(|d| d.iter().copied().fold(0.0, f64::max))
    }
}

pub fn run_sync(
    obj: &Objective,
    noise: &NoiseModel,
    opt: &OptimizerSpec,
    theta0: &[f64],
    steps: usize,
) -> Result<OptRunTrace, OptimError> {
    run_delayed(obj, noise, opt, theta0, steps, &DelaySchedule::Zero)
}

/// Step t uses the stochastic gradient at θ_{t−τ(t)} with noise draw t.
pub fn run_delayed(
    obj: &Objective,
    noise: &NoiseModel,
    opt: &OptimizerSpec,
    theta0: &[f64],
    steps: usize,
    delay: &DelaySchedule,
) -> Result<OptRunTrace, OptimError> {
    opt.check()?;
    delay.check()?;
    let p = obj.dim;
    if theta0.len() != p {
        return Err(OptimError::Precondition(format!(
            "θ₀ has dimension {}, objective has {p}",
            theta0.len()
        )));
    }
    let limit = 1e6 * norm(theta0) + 1e6;
    let mut stream = noise.stream(p);
    let mut state = OptState::new(p);
    let mut xi = vec![0.0; p];
    let mut g = vec![0.0; p];
    let mut dir = vec![0.0; p];
    let mut iterates = Vec::with_capacity(steps + 1);
    let mut objective = Vec::with_capacity(steps + 1);
    let mut grad_norm_sq = Vec::with_capacity(steps + 1);
    let (mut pmin, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY);
    iterates.push(theta0.to_vec());
    for t in 0..=steps {
        let cur = &iterates[t];
        obj.grad_into(cur, &mut g);
        objective.push(obj.value(cur));
        grad_norm_sq.push(dot(&g, &g));
        if t == steps {
            break;
        }
        stream.draw_into(&mut xi);
        if delay.tau(t) == 1 {
            obj.grad_into(&iterates[t - 1], &mut g);
        }
        for k in 0..p {
            g[k] += xi[k];
        }
        if let Some(cap) = opt.grad_clip {
            let n = norm(&g);
            if n > cap {
                g.iter_mut().for_each(|x| *x *= cap / n);
            }
        }
        state.step(opt, &g, &mut dir);
        if opt.kind == OptimizerKind::AdamType {
            for &v in &state.precond {
                pmin = pmin.min(v);
                pmax = pmax.max(v);
            }
        }
        let next: Vec<f64> = cur.iter().zip(&dir).map(|(x, d)| x - opt.eta * d).collect();
        let n = norm(&next);
        if !n.is_finite() || n > limit {
            return Err(OptimError::Diverged { step: t + 1, norm: n });
        }
        iterates.push(next);
    }
    if opt.kind != OptimizerKind::AdamType {
        (pmin, pmax) = (1.0, 1.0);
    }
    Ok(OptRunTrace {
        eta: opt.eta,
        iterates,
        objective,
        grad_norm_sq,
        precond_range: (pmin, pmax),
        discrepancy_norm: None,
    })
}

/// Synchronous and delayed runs sharing the noise stream; the delayed trace
/// carries the discrepancy series.
pub fn paired_run(
    obj: &Objective,
    noise: &NoiseModel,
    opt: &OptimizerSpec,
    theta0: &[f64],
    steps: usize,
    delay: &DelaySchedule,
) -> Result<(OptRunTrace, OptRunTrace), OptimError> {
    let sync = run_sync(obj, noise, opt, theta0, steps)?;
    let mut delayed = run_delayed(obj, noise, opt, theta0, steps, delay)?;
    let disc = sync
        .iterates
        .iter()
        .zip(&delayed.iterates)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt())
        .collect();
    delayed.discrepancy_norm = Some(disc);
    Ok((sync, delayed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub etas: Vec<f64>,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub noise_variance: f64,
    pub theta0: Vec<f64>,
    pub delay: DelaySchedule,
}

impl ScalingConfig {
    /// η ∈ {0.2, 0.1, 0.05, 0.025}, 10 seeds, 400 steps, σ² = 1, θ₀ = 𝟙.
    pub fn standard(p: usize) -> Self {
        ScalingConfig {
            etas: vec![0.2, 0.1, 0.05, 0.025],
            steps: 400,
            seeds: (0..10).collect(),
            noise_variance: 1.0,
            theta0: vec![1.0; p],
            delay: DelaySchedule::OneStep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub eta: f64,
    /// Mean over seeds of max_t ‖Δ_t‖.
    pub mean_max_discrepancy: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRun {
    pub eta: f64,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of ln(discrepancy) against ln(η).
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// RMS of the natural-log residuals.
    pub residual: Option<f64>,
    pub exact_zero: bool,
    pub excluded: Vec<ExcludedRun>,
}

/// Fits how the mean maximal discrepancy scales with η.
pub fn discrepancy_scaling(
    obj: &Objective,
    opt: &OptimizerSpec,
    cfg: &ScalingConfig,
) -> Result<ScalingFit, OptimError> {
    if cfg.etas.len() < 3 {
        return Err(OptimError::Precondition("need at least 3 step sizes".into()));
    }
    let lo = cfg.etas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cfg.etas.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || hi < 4.0 * lo {
        return Err(OptimError::Precondition("step sizes must span at least 4×".into()));
    }
    if hi * obj.smoothness > 1.0 {
        return Err(OptimError::StepTooLarge(hi * obj.smoothness));
    }
    if cfg.seeds.len() < 10 {
        return Err(OptimError::Precondition("need at least 10 seeds".into()));
    }
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for &eta in &cfg.etas {
        let o = opt.with_eta(eta);
        let mut acc = 0.0;
        let mut runs = 0;
        for &seed in &cfg.seeds {
            let noise = NoiseModel::new(cfg.noise_variance, seed);
            match paired_run(obj, &noise, &o, &cfg.theta0, cfg.steps, &cfg.delay) {
                Ok((_, d)) => {
                    acc += d.max_discrepancy().unwrap_or(0.0);
                    runs += 1;
                }
                Err(e) => excluded.push(ExcludedRun {
                    eta,
                    seed,
                    reason: e.to_string(),
                }),
            }
        }
        if runs == 0 {
            return Err(OptimError::Precondition(format!("every run at η={eta} diverged")));
        }
        points.push(ScalingPoint {
            eta,
            mean_max_discrepancy: acc / runs as f64,
            runs,
        });
    }
    if points.iter().all(|p| p.mean_max_discrepancy == 0.0) {
        return Ok(ScalingFit {
            points,
            slope: None,
            intercept: None,
            residual: None,
            exact_zero: true,
            excluded,
        });
    }
    if points.iter().any(|p| p.mean_max_discrepancy <= 0.0) {
        return Err(OptimError::Precondition(
            "discrepancy vanished for some but not all step sizes".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.eta.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_max_discrepancy.ln()).collect();
    let (slope, intercept, residual) = fit_line(&xs, &ys);
    Ok(ScalingFit {
        points,
        slope: Some(slope),
        intercept: Some(intercept),
        residual: Some(residual),
        exact_zero: false,
        excluded,
    })
}

/// Least squares y = a x + b; returns (a, b, RMS residual).
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a * x - b).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub eta: f64,
    pub lhs_sync: f64,
    /// (lhs_sync − 2(F₀−F*)/(ηT) − ηLσ²) / η².
    pub normalized_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Coefficient of the η² term: 10 × the largest residual, floored at 0.
    pub c: f64,
    pub points: Vec<CalibrationPoint>,
}

fn mean_lhs(
    obj: &Objective,
    noise_variance: f64,
    opt: &OptimizerSpec,
    theta0: &[f64],
    steps: usize,
    seeds: &[u64],
    delay: &DelaySchedule,
) -> Result<f64, OptimError> {
    let mut acc = 0.0;
    for &s in seeds {
        let tr = run_delayed(obj, &NoiseModel::new(noise_variance, s), opt, theta0, steps, delay)?;
        acc += tr.mean_grad_norm_sq();
    }
    Ok(acc / seeds.len() as f64)
}

fn leading_terms(obj: &Objective, theta0: &[f64], eta: f64, steps: usize, noise_variance: f64) -> (f64, f64) {
    let init = 2.0 * (obj.value(theta0) - obj.lower_bound) / (eta * steps as f64);
    let noise = eta * obj.smoothness * noise_variance;
    (init, noise)
}

/// Calibrates the η² coefficient once from synchronous runs over `etas`.
pub fn calibrate_c(
    obj: &Objective,
    noise_variance: f64,
    opt: &OptimizerSpec,
    theta0: &[f64],
    etas: &[f64],
    steps: usize,
    seeds: &[u64],
) -> Result<Calibration, OptimError> {
    let mut points = Vec::new();
    for &eta in etas {
        if eta * obj.smoothness > 1.0 {
            return Err(OptimError::StepTooLarge(eta * obj.smoothness));
        }
        let lhs = mean_lhs(obj, noise_variance, &opt.with_eta(eta), theta0, steps, seeds, &DelaySchedule::Zero)?;
        let (init, noise) = leading_terms(obj, theta0, eta, steps, noise_variance);
        points.push(CalibrationPoint {
            eta,
            lhs_sync: lhs,
            normalized_residual: (lhs - init - noise) / (eta * eta),
        });
    }
    let worst = points.iter().map(|p| p.normalized_residual).fold(0.0, f64::max);
    Ok(Calibration { c: 10.0 * worst, points })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub eta: f64,
    pub steps: usize,
    pub seeds: usize,
    /// Mean over seeds of (1/T) Σ ‖∇F(θ_t)‖² for the delayed run.
    pub lhs: f64,
    pub init_term: f64,
    pub noise_term: f64,
    pub c: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Compares the delayed run's average squared gradient norm with
/// 2(F₀−F*)/(ηT) + ηLσ² + Cη².
#[allow(clippy::too_many_arguments)]
pub fn check_convergence_bound(
    obj: &Objective,
    noise_variance: f64,
    opt: &OptimizerSpec,
    theta0: &[f64],
    steps: usize,
    seeds: &[u64],
    c: f64,
) -> Result<BoundCheck, OptimError> {
    let eta = opt.eta;
    if eta * obj.smoothness > 1.0 {
        return Err(OptimError::StepTooLarge(eta * obj.smoothness));
    }
    if seeds.is_empty() || steps == 0 {
        return Err(OptimError::Precondition("need at least one seed and one step".into()));
    }
    let lhs = mean_lhs(obj, noise_variance, opt, theta0, steps, seeds, &DelaySchedule::OneStep)?;
    let (init_term, noise_term) = leading_terms(obj, theta0, eta, steps, noise_variance);
    let rhs = init_term + noise_term + c * eta * eta;
    Ok(BoundCheck {
        eta,
        steps,
        seeds: seeds.len(),
        lhs,
        init_term,
        noise_term,
        c,
        rhs,
        pass: lhs <= rhs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub perturbation: f64,
    pub max_grad_diff: f64,
    pub max_m_diff: f64,
    pub max_precond_diff: f64,
    /// max_m_diff / max_grad_diff, 0 for a zero perturbation.
    pub l_phi: f64,
    pub l_psi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub rows: Vec<LipschitzRow>,
    /// Smallest constants consistent with every row.
    pub l_phi: f64,
    pub l_psi: f64,
}

/// Feeds a random gradient sequence and a perturbed copy through the
/// Adam-type recursions and measures how far the states drift apart.
pub fn check_lipschitz_recursions(
    opt: &OptimizerSpec,
    perturbation_sizes: &[f64],
    steps: usize,
    dim: usize,
    seed: u64,
) -> Result<LipschitzReport, OptimError> {
    if opt.kind != OptimizerKind::AdamType {
        return Err(OptimError::Precondition("Adam-type optimizer required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grads: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let dirs: Vec<Vec<f64>> = (0..steps)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut rows = Vec::new();
    for &size in perturbation_sizes {
        let mut a = OptState::new(dim);
        let mut b = OptState::new(dim);
        let mut scratch = vec![0.0; dim];
        let (mut gd, mut md, mut pd) = (0.0f64, 0.0f64, 0.0f64);
        for (g, u) in grads.iter().zip(&dirs) {
            let gt: Vec<f64> = g.iter().zip(u).map(|(x, e)| x + size * e).collect();
            a.step(opt, g, &mut scratch);
            b.step(opt, &gt, &mut scratch);
            let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            gd = gd.max(diff(g, &gt));
            md = md.max(diff(&a.m, &b.m));
            pd = pd.max(diff(&a.precond, &b.precond));
        }
        let ratio = |x: f64| if gd > 0.0 { x / gd } else { 0.0 };
        rows.push(LipschitzRow {
            perturbation: size,
            max_grad_diff: gd,
            max_m_diff: md,
            max_precond_diff: pd,
            l_phi: ratio(md),
            l_psi: ratio(pd),
        });
    }
    let l_phi = rows.iter().map(|r| r.l_phi).fold(0.0, f64::max);
    let l_psi = rows.iter().map(|r| r.l_psi).fold(0.0, f64::max);
    Ok(LipschitzReport { rows, l_phi, l_psi })
}
