//! The verification suite: nine numbered checks, each returning a verdict
//! with a witness on failure.

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    analytic_bubble, memory_report, mismatch_report, reduce_broadcast_cost, verify_lemma1,
    verify_topology_invariance, window_mismatch, AnalysisError, AnalyticBubble,
};
use crate::builder::{build, map_stage_to_device, TaskGraph};
use crate::delay::{
    calibrate_c, check_convergence_bound, discrepancy_scaling, Objective, OptimizerSpec, ScalingConfig,
};
use crate::engine::{bubble_ratio, simulate};
use crate::model::{validate_causality, ClusterSpec, MemoryModel, Policy, PolicyConfig, TaskKind, Timeline};
use crate::time::Time;

/// A deliberate builder defect, for exercising the causality check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Drops the forward→backward edge of the first minibatch at the last stage.
    DropForwardBackwardEdge,
}

impl Fault {
    pub fn apply(self, g: &mut TaskGraph) -> bool {
        match self {
            Fault::DropForwardBackwardEdge => {
                let last = g.depth - 1;
                let first = g
                    .tasks
                    .iter()
                    .filter(|t| t.kind == TaskKind::Forward && t.stage == last)
                    .map(|t| t.minibatch)
                    .min();
                let Some(m) = first else { return false };
                match (g.find(TaskKind::Forward, last, m), g.find(TaskKind::Backward, last, m)) {
                    (Some(f), Some(b)) => g.remove_dep(f, b),
                    _ => false,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub topology_trials: u32,
    pub fuzz_cases: u32,
    pub seed: u64,
    /// Step sizes for the scaling fit and the C calibration.
    pub etas: Vec<f64>,
    #[serde(default)]
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            topology_trials: 1000,
            fuzz_cases: 10_000,
            seed: 0,
            etas: vec![0.2, 0.1, 0.05, 0.025],
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Failing configuration, JSON-encoded where possible.
    pub witness: Option<String>,
}

pub const CHECKS: [(u32, &str); 9] = [
    (1, "lemma1_exhaustive"),
    (2, "amdp_mismatch_bound"),
    (3, "bubble_ratio_table"),
    (4, "stage_mapping_golden"),
    (5, "topology_invariance"),
    (6, "causality_fuzz"),
    (7, "zero_accounting"),
    (8, "discrepancy_scaling"),
    (9, "convergence_bound"),
];

pub fn run_suite(cfg: &SuiteConfig) -> Vec<CheckOutcome> {
    CHECKS.iter().map(|&(id, _)| run_check(id, cfg)).collect()
}

/// Runs check `id` (1–9). Unknown ids produce a failing outcome.
pub fn run_check(id: u32, cfg: &SuiteConfig) -> CheckOutcome {
    let name = CHECKS
        .iter()
        .find(|c| c.0 == id)
        .map_or("unknown", |c| c.1)
        .to_string();
    let res = match id {
        1 => lemma1_exhaustive(),
        2 => amdp_bound(),
        3 => bubble_table(),
        4 => mapping_golden(),
        5 => topology(cfg),
        6 => causality_fuzz(cfg),
        7 => zero_accounting(),
        8 => scaling(&cfg.etas),
        9 => convergence(&cfg.etas),
        _ => Err(Failure::new(format!("no check numbered {id}"))),
    };
    match res {
        Ok(detail) => CheckOutcome {
            id,
            name,
            passed: true,
            detail,
            witness: None,
        },
        Err(f) => CheckOutcome {
            id,
            name,
            passed: false,
            detail: f.detail,
            witness: f.witness,
        },
    }
}

struct Failure {
    detail: String,
    witness: Option<String>,
}

impl Failure {
    fn new(detail: impl Into<String>) -> Self {
        Failure {
            detail: detail.into(),
            witness: None,
        }
    }

    fn with<T: Serialize>(detail: impl Into<String>, witness: &T) -> Self {
        Failure {
            detail: detail.into(),
            witness: serde_json::to_string(witness).ok(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::new(e.to_string())
    }
}

type CheckResult = Result<String, Failure>;

fn sim(cfg: &PolicyConfig, c: &ClusterSpec) -> Result<Timeline, Failure> {
    let g = build(cfg, c).map_err(|e| Failure::with(e.to_string(), cfg))?;
    simulate(&g, c).map_err(|e| Failure::with(e.to_string(), cfg))
}

fn lemma1_exhaustive() -> CheckResult {
    let mut count = 0;
    for d in 2..=16 {
        for n in 1..=d {
            let v = verify_lemma1(d, n)?;
            if !v.passed {
                return Err(Failure::with(format!("d={d} n={n}: measured {:?}", v.measured), &v));
            }
            count += 1;
        }
    }
    Ok(format!("{count} (d, n) pairs match min(n, d−i)−1"))
}

fn amdp_bound() -> CheckResult {
    let mut runs = 0;
    for d in (2..=16).step_by(2) {
        let c = ClusterSpec::uniform(d, Time::int(1), Time::int(2));
        for t in [d, 2 * d, 4 * d] {
            let cfg = PolicyConfig::new(Policy::Amdp, t, 8 * t);
            let tl = sim(&cfg, &c)?;
            let max = mismatch_report(&tl).max();
            if max > 1 {
                return Err(Failure::with(format!("d={d} T={t}: max mismatch {max}"), &cfg));
            }
            let w = window_mismatch(&tl, d);
            if t > d && !w.first_d_property() {
                let bad = w.windows.iter().skip(1).find(|e| e.mismatched.len() != d as usize);
                return Err(Failure::with(format!("d={d} T={t}: window property fails"), &bad));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs of 8 windows, max mismatch ≤ 1, first-d windows hold"))
}

fn expect_exact(policy: Policy, d: u32, n: u32, fwd: i64, bwd: i64) -> Result<(), Failure> {
    let c = ClusterSpec::uniform(d, Time::int(fwd), Time::int(bwd));
    let cfg = PolicyConfig::new(policy, n, n);
    let got = bubble_ratio(&sim(&cfg, &c)?, 0).map_err(|e| Failure::new(e.to_string()))?;
    let AnalyticBubble::Exact { value, .. } = analytic_bubble(policy, d, n) else {
        unreachable!("closed form exists for {policy}")
    };
    if got != value {
        return Err(Failure::with(
            format!("{policy} d={d} n={n} T_f={fwd} T_b={bwd}: simulated {got}, formula {value}"),
            &cfg,
        ));
    }
    Ok(())
}

fn steady_bubble(policy: Policy, d: u32, t: u32, windows: u32) -> Result<Rational64, Failure> {
    let c = ClusterSpec::uniform(d, Time::int(1), Time::int(2));
    let cfg = PolicyConfig::new(policy, t, t * windows);
    bubble_ratio(&sim(&cfg, &c)?, 1).map_err(|e| Failure::with(e.to_string(), &cfg))
}

fn bubble_table() -> CheckResult {
    for d in [4, 8] {
        for n in [d, 2 * d, 4 * d] {
            expect_exact(Policy::Dapple, d, n, 1, 2)?;
            expect_exact(Policy::Dapple, d, n, 1, 1)?;
            expect_exact(Policy::Chimera, d, n, 1, 1)?;
        }
    }
    let pd = steady_bubble(Policy::PipeDreamAsync, 8, 8, 16)?;
    if pd != Rational64::from_integer(0) {
        return Err(Failure::new(format!("PipeDreamAsync steady bubble {pd}, expected 0")));
    }
    let amdp = steady_bubble(Policy::Amdp, 8, 16, 16)?;
    if amdp >= Rational64::new(1, 20) {
        return Err(Failure::new(format!("AMDP steady bubble {amdp} ≥ 5%")));
    }
    Ok(format!(
        "DAPPLE and Chimera exact for d∈{{4,8}}, n∈{{d,2d,4d}}; PipeDreamAsync 0; AMDP {amdp} ≈ {:.2}%",
        100.0 * *amdp.numer() as f64 / *amdp.denom() as f64
    ))
}

fn mapping_golden() -> CheckResult {
    let seq = |j| -> Result<Vec<u32>, Failure> {
        (0..8)
            .map(|i| map_stage_to_device(j, i, 8).map_err(|e| Failure::new(e.to_string())))
            .collect()
    };
    let (p0, p1) = (seq(0)?, seq(1)?);
    let want0: Vec<u32> = (0..8).collect();
    let want1 = vec![3, 2, 1, 0, 7, 6, 5, 4];
    if p0 != want0 || p1 != want1 {
        return Err(Failure::with("d=8 mapping differs", &(p0, p1)));
    }
    Ok(format!("d=8: {p0:?} and {p1:?}"))
}

fn topology(cfg: &SuiteConfig) -> CheckResult {
    let mut total = 0;
    for d in [4, 8] {
        let v = verify_topology_invariance(d, cfg.topology_trials, cfg.seed)?;
        if !v.passed {
            let why = v.error.clone().unwrap_or_else(|| format!("mismatch {}", v.worst_mismatch));
            return Err(Failure::with(format!("d={d}: {why}"), &v.witness));
        }
        total += v.trials;
    }
    Ok(format!("{total} randomized deployments, mismatch ≤ 1"))
}

/// One randomized simulation in the causality fuzz.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzCase {
    pub case: u32,
    pub policy: PolicyConfig,
    pub cluster: ClusterSpec,
}

impl FuzzCase {
    pub fn random(seed: u64, case: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(case as u64 + (1 << 32));
        let policy = Policy::ALL[rng.random_range(0..Policy::ALL.len())];
        let depth = match policy {
            Policy::Amdp | Policy::Chimera => 2 * rng.random_range(1..=4),
            _ => rng.random_range(2..=8),
        };
        let d = depth as usize;
        let mut cluster = ClusterSpec::uniform(depth, Time::int(1), Time::int(1));
        cluster.fwd_cost = (0..d).map(|_| Time::new(rng.random_range(1..=6), 2)).collect();
        cluster.bwd_cost = (0..d).map(|_| Time::new(rng.random_range(1..=12), 2)).collect();
        cluster.comm_cost = Time::new(rng.random_range(0..=4), 4);
        cluster.update_cost = Time::new(rng.random_range(0..=2), 2);
        let threshold = match policy {
            Policy::Interleaved1F1B => depth * rng.random_range(1..=2),
            Policy::Chimera => 2 * rng.random_range(1..=depth),
            Policy::Amdp => depth * rng.random_range(1..=2),
            _ => rng.random_range(1..=2 * depth),
        };
        let windows = rng.random_range(1..=3);
        let mut cfg = PolicyConfig::new(policy, threshold, threshold * windows);
        if policy == Policy::Amdp {
            cfg = cfg.with_zero(rng.random_bool(0.5));
        } else if matches!(policy, Policy::Dapple | Policy::PipeDreamAsync) {
            cfg = cfg.with_injection_limit(rng.random_range(1..=depth));
        }
        FuzzCase {
            case,
            policy: cfg,
            cluster,
        }
    }
}

/// Moves one forward/backward event to start before its latest causal
/// predecessor's data arrives, but after every other predecessor's.
/// Returns the moved event's index and new start.
pub fn inject_inversion(t: &mut Timeline, pick: usize) -> Option<(usize, Time)> {
    let idx = t.compute_index();
    let last = t.depth - 1;
    let required = |p: usize, b: usize| t.events[p].finish() + t.comm.gap(t.events[p].device, t.events[b].device);
    let mut candidates = Vec::new();
    for (&(stage, mb), &(f, b)) in &idx {
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        if let (Some(f), true) = (f, stage > 0) {
            if let Some(p) = idx.get(&(stage - 1, mb)).and_then(|x| x.0) {
                groups.push((f, vec![p]));
            }
        }
        if let Some(b) = b {
            let mut preds: Vec<usize> = f.into_iter().collect();
            if stage < last {
                preds.extend(idx.get(&(stage + 1, mb)).and_then(|x| x.1));
            }
            groups.push((b, preds));
        }
        for (target, preds) in groups {
            let Some(&a) = preds.iter().max_by_key(|&&p| required(p, target)) else {
                continue;
            };
            let req = required(a, target);
            let others = preds.iter().filter(|&&p| p != a).map(|&p| required(p, target)).max();
            if others.is_some_and(|o| o >= req) || !t.events[a].duration.is_positive() {
                continue;
            }
            let lo = others.map_or(t.events[a].start, |o| o.max(t.events[a].start));
            candidates.push((target, (lo + req) / 2));
        }
    }
    if candidates.is_empty() {
        return None;
    }
    let (b, start) = candidates[pick % candidates.len()];
    t.events[b].start = start;
    Some((b, start))
}

fn causality_fuzz(cfg: &SuiteConfig) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut injected = 0;
    for case in 0..cfg.fuzz_cases {
        let fc = FuzzCase::random(cfg.seed, case);
        let mut g = build(&fc.policy, &fc.cluster).map_err(|e| Failure::with(e.to_string(), &fc))?;
        if let Some(f) = cfg.fault {
            f.apply(&mut g);
        }
        let mut t = simulate(&g, &fc.cluster).map_err(|e| Failure::with(e.to_string(), &fc))?;
        let v = validate_causality(&t);
        if let Some(first) = v.first() {
            return Err(Failure::with(format!("case {case}: {} violation(s), first: {first}", v.len()), &fc));
        }
        if let Some((k, start)) = inject_inversion(&mut t, rng.random_range(0..usize::MAX)) {
            let e = &t.events[k];
            let v = validate_causality(&t);
            if v.len() != 1 || v[0].minibatch != e.minibatch || v[0].actual_start != start {
                return Err(Failure::with(
                    format!("case {case}: injected inversion reported as {} violation(s)", v.len()),
                    &fc,
                ));
            }
            injected += 1;
        }
    }
    Ok(format!(
        "{} simulations without violations; {injected} injected inversions each reported exactly once",
        cfg.fuzz_cases
    ))
}

fn zero_accounting() -> CheckResult {
    let mem = MemoryModel::default();
    for d in [4u32, 8, 16] {
        let c = ClusterSpec::uniform(d, Time::int(1), Time::int(2));
        let cfg = PolicyConfig::new(Policy::Amdp, d, 2 * d).with_zero(true);
        let rep = memory_report(&sim(&cfg, &c)?, &cfg, &mem);
        let want = Rational64::new(2, d as i64);
        for dev in &rep.devices {
            if dev.optimizer_state != dev.optimizer_state_naive * want {
                return Err(Failure::with(
                    format!("d={d} device {}: optimizer state not naive × 2/{d}", dev.device),
                    dev,
                ));
            }
        }
    }
    for p in 2..=16 {
        for bytes in [Rational64::from_integer(1), Rational64::new(7, 3)] {
            let v = reduce_broadcast_cost(p, bytes)?;
            if v.reduce + v.broadcast != v.allreduce {
                return Err(Failure::with(format!("replicas={p}: {v}"), &v));
            }
        }
    }
    Ok("optimizer state = naive × 2/d for d∈{4,8,16}; reduce+broadcast = all-reduce for 2..16 replicas".into())
}

fn scaling(etas: &[f64]) -> CheckResult {
    let p = 10;
    let cfg = ScalingConfig {
        etas: etas.to_vec(),
        ..ScalingConfig::standard(p)
    };
    let mut parts = Vec::new();
    for (oname, obj) in [("quadratic", Objective::spread_quadratic(p)), ("nonconvex", Objective::smooth_nonconvex(p))] {
        for (kname, opt) in [("SGD", OptimizerSpec::sgd(0.1)), ("AdamType", OptimizerSpec::adam(0.1))] {
            let fit = discrepancy_scaling(&obj, &opt, &cfg).map_err(|e| Failure::new(format!("{oname}/{kname}: {e}")))?;
            let (Some(slope), Some(res)) = (fit.slope, fit.residual) else {
                return Err(Failure::with(format!("{oname}/{kname}: no slope"), &fit));
            };
            if !(0.8..=1.2).contains(&slope) || res >= 0.05 || !fit.excluded.is_empty() {
                return Err(Failure::with(
                    format!("{oname}/{kname}: slope {slope:.4}, residual {res:.4}"),
                    &fit,
                ));
            }
            parts.push(format!("{oname}/{kname} {slope:.3} (res {res:.3})"));
        }
    }
    Ok(format!("slopes {}", parts.join(", ")))
}

fn convergence(etas: &[f64]) -> CheckResult {
    let p = 10;
    let obj = Objective::spread_quadratic(p);
    let theta0 = vec![1.0; p];
    let seeds: Vec<u64> = (0..20).collect();
    let opt = OptimizerSpec::sgd(0.05);
    let cal = calibrate_c(&obj, 1.0, &opt, &theta0, etas, 2000, &seeds).map_err(|e| Failure::new(e.to_string()))?;
    let chk = check_convergence_bound(&obj, 1.0, &opt, &theta0, 2000, &seeds, cal.c)
        .map_err(|e| Failure::new(e.to_string()))?;
    let detail = format!("lhs {:.6} vs rhs {:.6} (C = {:.4})", chk.lhs, chk.rhs, chk.c);
    if chk.pass {
        Ok(detail)
    } else {
        Err(Failure::with(detail, &chk))
    }
}
