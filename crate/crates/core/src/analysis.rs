//! Mismatch, window, memory and communication analyses over timelines.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_rational::Rational64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{build, build_with_mapping, map_stage_to_device, BuildError};
use crate::engine::{simulate, EngineError};
use crate::model::{
    ClusterSpec, MemoryModel, MismatchEntry, MismatchReport, Policy, PolicyConfig, StageMinibatch,
    TaskKind, Timeline,
};
use crate::time::{ratio_serde, ratio_string, Time};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Builds and simulates in one step.
pub fn run(policy: &PolicyConfig, cluster: &ClusterSpec) -> Result<Timeline, AnalysisError> {
    let g = build(policy, cluster)?;
    Ok(simulate(&g, cluster)?)
}

/// Counts, for every (stage, minibatch), the parameter updates of that stage
/// landing in `[forward finish, backward start]`.
///
/// A Broadcast counts for every replica of its stage. An Update counts only
/// for minibatches running on its device.
pub fn mismatch_report(t: &Timeline) -> MismatchReport {
    let mut bcast: HashMap<u32, Vec<Time>> = HashMap::new();
    let mut local: HashMap<(u32, u32), Vec<Time>> = HashMap::new();
    for e in &t.events {
        match e.kind {
            TaskKind::Broadcast => bcast.entry(e.stage).or_default().push(e.finish()),
            TaskKind::Update => local.entry((e.stage, e.device)).or_default().push(e.finish()),
            _ => {}
        }
    }
    for v in bcast.values_mut().chain(local.values_mut()) {
        v.sort_unstable();
    }
    let count = |v: Option<&Vec<Time>>, lo: Time, hi: Time| -> u32 {
        v.map_or(0, |v| {
            let a = v.partition_point(|&x| x < lo);
            let b = v.partition_point(|&x| x <= hi);
            b.saturating_sub(a) as u32
        })
    };
    let mut report = MismatchReport::default();
    for (&(stage, minibatch), &(f, b)) in &t.compute_index() {
        let Some(f) = f.map(|k| &t.events[k]) else {
            continue;
        };
        let Some(b) = b.map(|k| &t.events[k]) else {
            report.missing_backward.push(StageMinibatch { stage, minibatch });
            continue;
        };
        let (lo, hi) = (f.finish(), b.start);
        let updates = count(bcast.get(&stage), lo, hi) + count(local.get(&(stage, b.device)), lo, hi);
        report.entries.push(MismatchEntry {
            stage,
            minibatch,
            updates,
        });
        let m = report.max_per_stage.entry(stage).or_insert(0);
        *m = (*m).max(updates);
    }
    report
}

/// Per-stage maximum over minibatches in `[skip, N − skip)`.
pub fn steady_state_max(report: &MismatchReport, depth: u32, num_minibatches: u32, skip: u32) -> Vec<u32> {
    let mut out = vec![0u32; depth as usize];
    let hi = num_minibatches.saturating_sub(skip);
    for e in &report.entries {
        if e.minibatch >= skip && e.minibatch < hi && (e.stage as usize) < out.len() {
            let slot = &mut out[e.stage as usize];
            *slot = (*slot).max(e.updates);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lemma1Verdict {
    pub depth: u32,
    pub injection_limit: u32,
    pub passed: bool,
    pub measured: Vec<u32>,
    pub expected: Vec<u32>,
    pub first_failing_stage: Option<u32>,
}

/// Expected steady-state mismatch of stage `i`: min(n, d − i) − 1.
pub fn lemma1_expected(depth: u32, injection_limit: u32) -> Vec<u32> {
    (0..depth).map(|i| injection_limit.min(depth - i) - 1).collect()
}

/// Simulates a 1F1B pipeline with one update per backward and injection
/// limit `n`, and compares steady-state mismatch per stage with the formula.
pub fn verify_lemma1(depth: u32, injection_limit: u32) -> Result<Lemma1Verdict, AnalysisError> {
    if injection_limit == 0 || injection_limit > depth {
        return Err(AnalysisError::InvalidArgument(format!(
            "injection limit {injection_limit} outside 1..={depth}"
        )));
    }
    let cluster = ClusterSpec::uniform(depth, Time::int(1), Time::int(2));
    let n_mb = 5 * depth;
    let cfg = PolicyConfig::new(Policy::PipeDreamAsync, 1, n_mb).with_override(injection_limit);
    let t = run(&cfg, &cluster)?;
    let measured = steady_state_max(&mismatch_report(&t), depth, n_mb, depth);
    let expected = lemma1_expected(depth, injection_limit);
    let first_failing_stage = measured
        .iter()
        .zip(&expected)
        .position(|(a, b)| a != b)
        .map(|i| i as u32);
    Ok(Lemma1Verdict {
        depth,
        injection_limit,
        passed: first_failing_stage.is_none(),
        measured,
        expected,
        first_failing_stage,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub window: u32,
    pub size: u32,
    pub first_minibatch: u32,
    /// Minibatches with nonzero mismatch at any stage, ascending.
    pub mismatched: Vec<u32>,
    /// Update events (Update or Broadcast) issued for this window.
    pub update_count: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowReport {
    pub depth: u32,
    pub windows: Vec<WindowEntry>,
}

impl WindowReport {
    /// Whether every window after the first has exactly its first
    /// min(d, size) minibatches mismatched.
    pub fn first_d_property(&self) -> bool {
        self.windows.iter().skip(1).all(|w| {
            let want: Vec<u32> = (w.first_minibatch..w.first_minibatch + w.size.min(self.depth)).collect();
            w.mismatched == want
        })
    }
}

pub fn window_mismatch(t: &Timeline, depth: u32) -> WindowReport {
    let report = mismatch_report(t);
    let mut members: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut updates: BTreeMap<u32, u32> = BTreeMap::new();
    let mut window_of: HashMap<u32, u32> = HashMap::new();
    for e in &t.events {
        match e.kind {
            TaskKind::Forward | TaskKind::Backward => {
                members.entry(e.window).or_default().insert(e.minibatch);
                window_of.insert(e.minibatch, e.window);
            }
            TaskKind::Update | TaskKind::Broadcast => *updates.entry(e.window).or_default() += 1,
            TaskKind::Reduce => {}
        }
    }
    let mut bad: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for e in report.entries.iter().filter(|e| e.updates > 0) {
        if let Some(&w) = window_of.get(&e.minibatch) {
            bad.entry(w).or_default().insert(e.minibatch);
        }
    }
    let windows = members
        .iter()
        .map(|(&w, mbs)| WindowEntry {
            window: w,
            size: mbs.len() as u32,
            first_minibatch: mbs.first().copied().unwrap_or(0),
            mismatched: bad.get(&w).map(|s| s.iter().copied().collect()).unwrap_or_default(),
            update_count: updates.get(&w).copied().unwrap_or(0),
        })
        .collect();
    WindowReport { depth, windows }
}

/// One randomized deployment of AMDP.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyTrial {
    pub trial: u32,
    pub depth: u32,
    pub permutation: Vec<u32>,
    pub reversed: bool,
    pub nodes: Vec<Vec<u32>>,
    pub comm_cost: Time,
    pub inter_node_comm_cost: Time,
    pub fwd_cost: Vec<Time>,
    pub bwd_cost: Vec<Time>,
    pub threshold: u32,
    pub windows: u32,
    pub zero_enabled: bool,
}

impl TopologyTrial {
    /// Draws trial `trial` of the stream selected by `seed`.
    pub fn random(depth: u32, seed: u64, trial: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let d = depth as usize;
        let mut permutation: Vec<u32> = (0..depth).collect();
        permutation.shuffle(&mut rng);
        let reversed = rng.random_bool(0.5);
        let mut order: Vec<u32> = (0..depth).collect();
        order.shuffle(&mut rng);
        let k = rng.random_range(1..=d.min(4));
        let mut cuts: Vec<usize> = (1..d).collect();
        cuts.shuffle(&mut rng);
        let mut cuts: Vec<usize> = cuts.into_iter().take(k - 1).collect();
        cuts.sort_unstable();
        let mut nodes = Vec::new();
        let mut lo = 0;
        for c in cuts.into_iter().chain([d]) {
            let mut g = order[lo..c].to_vec();
            g.sort_unstable();
            nodes.push(g);
            lo = c;
        }
        let comm_cost = Time::new(rng.random_range(1..=8), 4);
        let inter_node_comm_cost = comm_cost + Time::new(rng.random_range(0..=8), 4);
        let fwd_cost = (0..d).map(|_| Time::new(rng.random_range(2..=6), 2)).collect();
        let bwd_cost = (0..d).map(|_| Time::new(rng.random_range(2..=12), 2)).collect();
        let threshold = depth * [1, 2, 4][rng.random_range(0..3)];
        let zero_enabled = rng.random_bool(0.5);
        TopologyTrial {
            trial,
            depth,
            permutation,
            reversed,
            nodes,
            comm_cost,
            inter_node_comm_cost,
            fwd_cost,
            bwd_cost,
            threshold,
            windows: 4,
            zero_enabled,
        }
    }

    pub fn cluster(&self) -> ClusterSpec {
        ClusterSpec {
            depth: self.depth,
            devices: self.depth,
            fwd_cost: self.fwd_cost.clone(),
            bwd_cost: self.bwd_cost.clone(),
            update_cost: Time::ZERO,
            comm_cost: self.comm_cost,
            nodes: self.nodes.clone(),
            inter_node_comm_cost: Some(self.inter_node_comm_cost),
        }
    }

    /// Stage→device table per pipeline after permutation and reversal.
    pub fn mapping(&self) -> Result<Vec<Vec<u32>>, BuildError> {
        let d = self.depth;
        (0..d / 2)
            .map(|j| {
                (0..d)
                    .map(|i| {
                        let stage = if self.reversed { d - 1 - i } else { i };
                        map_stage_to_device(j, stage, d).map(|dev| self.permutation[dev as usize])
                    })
                    .collect()
            })
            .collect()
    }

    pub fn run(&self) -> Result<u32, AnalysisError> {
        let cluster = self.cluster();
        let cfg = PolicyConfig::new(Policy::Amdp, self.threshold, self.threshold * self.windows)
            .with_zero(self.zero_enabled);
        let g = build_with_mapping(&cfg, &cluster, &self.mapping()?)?;
        let t = simulate(&g, &cluster)?;
        Ok(mismatch_report(&t).max())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyVerdict {
    pub depth: u32,
    pub trials: u32,
    pub seed: u64,
    pub passed: bool,
    pub worst_mismatch: u32,
    pub witness: Option<TopologyTrial>,
    pub error: Option<String>,
}

/// Runs `trials` randomized AMDP deployments and checks mismatch ≤ 1.
pub fn verify_topology_invariance(depth: u32, trials: u32, seed: u64) -> Result<TopologyVerdict, AnalysisError> {
    if depth < 2 || depth % 2 != 0 {
        return Err(BuildError::OddDepth(depth).into());
    }
    let mut worst = 0;
    for trial in 0..trials {
        let tr = TopologyTrial::random(depth, seed, trial);
        match tr.run() {
            Ok(m) => {
                worst = worst.max(m);
                if m > 1 {
                    return Ok(TopologyVerdict {
                        depth,
                        trials,
                        seed,
                        passed: false,
                        worst_mismatch: worst,
                        witness: Some(tr),
                        error: None,
                    });
                }
            }
            Err(e) => {
                return Ok(TopologyVerdict {
                    depth,
                    trials,
                    seed,
                    passed: false,
                    worst_mismatch: worst,
                    witness: Some(tr),
                    error: Some(e.to_string()),
                })
            }
        }
    }
    Ok(TopologyVerdict {
        depth,
        trials,
        seed,
        passed: true,
        worst_mismatch: worst,
        witness: None,
        error: None,
    })
}

/// Closed-form bubble ratio of a policy as listed in the comparison table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalyticBubble {
    Exact {
        #[serde(with = "ratio_serde")]
        value: Rational64,
        /// Unreduced `numerator/denominator` as the formula produces it.
        text: String,
    },
    ApproxZero,
}

impl AnalyticBubble {
    fn fraction(num: i64, den: i64) -> Self {
        AnalyticBubble::Exact {
            value: Rational64::new(num, den),
            text: if num == 0 { "0".into() } else { format!("{num}/{den}") },
        }
    }
}

impl fmt::Display for AnalyticBubble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyticBubble::Exact { text, .. } => f.write_str(text),
            AnalyticBubble::ApproxZero => f.write_str("≈0"),
        }
    }
}

/// Table bubble ratio for depth `d` and `n` scheduling units per window.
pub fn analytic_bubble(policy: Policy, d: u32, n: u32) -> AnalyticBubble {
    let (d, n) = (d as i64, n as i64);
    match policy {
        Policy::Dapple | Policy::GPipe => AnalyticBubble::fraction(d - 1, n + d - 1),
        Policy::Interleaved1F1B => AnalyticBubble::fraction(d - 1, 2 * n + d - 1),
        Policy::Chimera => AnalyticBubble::fraction(d - 2, 2 * n + d - 2),
        Policy::PipeDreamAsync => AnalyticBubble::fraction(0, 1),
        Policy::Amdp => AnalyticBubble::ApproxZero,
    }
}

/// Table-row memory figures for a policy, symbolic and evaluated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table1View {
    pub policy: Policy,
    pub bubble_ratio: AnalyticBubble,
    pub weight_memory: String,
    #[serde(with = "ratio_serde")]
    pub weight_memory_value: Rational64,
    /// Upper end when the table gives a range.
    #[serde(with = "ratio_serde")]
    pub weight_memory_upper: Rational64,
    pub peak_activation: String,
    #[serde(with = "ratio_serde")]
    pub peak_activation_value: Rational64,
}

pub fn table1_view(policy: Policy, d: u32, n: u32, mem: &MemoryModel) -> Table1View {
    let w = mem.weight_per_stage;
    let a = mem.activation_per_stage_per_minibatch;
    let di = d as i64;
    let ni = n as i64;
    let (wt, wv, wu, at, av) = match policy {
        Policy::Dapple | Policy::GPipe => ("M_θ", w, w, "n·M_a", a * ni),
        Policy::Interleaved1F1B => ("M_θ", w, w, "d·M_a", a * di),
        Policy::Chimera => ("2M_θ", w * 2, w * 2, "d·M_a", a * di),
        Policy::PipeDreamAsync => ("[M_θ, d·M_θ]", w, w * di, "d·M_a", a * di),
        Policy::Amdp => ("M_θ", w, w, "d·M_a", a * di),
    };
    Table1View {
        policy,
        bubble_ratio: analytic_bubble(policy, d, n),
        weight_memory: wt.into(),
        weight_memory_value: wv,
        weight_memory_upper: wu,
        peak_activation: at.into(),
        peak_activation_value: av,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceMemory {
    pub device: u32,
    /// Distinct (stage, pipeline) replicas hosted.
    pub replicas: u32,
    #[serde(with = "ratio_serde")]
    pub weight: Rational64,
    pub peak_live_minibatches: u32,
    #[serde(with = "ratio_serde")]
    pub peak_activation: Rational64,
    #[serde(with = "ratio_serde")]
    pub gradient: Rational64,
    #[serde(with = "ratio_serde")]
    pub optimizer_state: Rational64,
    #[serde(with = "ratio_serde")]
    pub optimizer_state_naive: Rational64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub devices: Vec<DeviceMemory>,
    pub table1_view: Table1View,
}

/// First-principles per-device memory plus the table figures.
pub fn memory_report(t: &Timeline, policy: &PolicyConfig, mem: &MemoryModel) -> MemoryReport {
    let chunks: i64 = if policy.policy == Policy::Interleaved1F1B { 2 } else { 1 };
    let d = t.depth / chunks as u32;
    let w = mem.weight_per_stage / chunks;
    let a = mem.activation_per_stage_per_minibatch / chunks;
    let mut hosted: BTreeMap<u32, BTreeSet<(u32, u32)>> = BTreeMap::new();
    let mut owned: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for e in &t.events {
        match e.kind {
            TaskKind::Forward => {
                hosted.entry(e.device).or_default().insert((e.stage, e.pipeline));
            }
            TaskKind::Reduce => {
                owned.entry(e.device).or_default().insert(e.stage);
            }
            _ => {}
        }
    }
    let live = peak_live(t);
    let partitioned = policy.zero_enabled && policy.policy == Policy::Amdp;
    let devices = (0..t.devices)
        .map(|dev| {
            let replicas = hosted.get(&dev).map_or(0, |s| s.len() as u32);
            let weight = w * replicas as i64;
            let naive = weight * mem.optimizer_state_multiplier;
            let optimizer_state = if partitioned {
                w * owned.get(&dev).map_or(0, |s| s.len() as i64) * mem.optimizer_state_multiplier
            } else {
                naive
            };
            let peak = live[dev as usize];
            DeviceMemory {
                device: dev,
                replicas,
                weight,
                peak_live_minibatches: peak,
                peak_activation: a * peak as i64,
                gradient: weight * mem.gradient_multiplier,
                optimizer_state,
                optimizer_state_naive: naive,
            }
        })
        .collect();
    MemoryReport {
        devices,
        table1_view: table1_view(policy.policy, d, policy.accumulation_threshold, mem),
    }
}

/// Maximum number of simultaneously live activations per device. An
/// activation is live on `[forward start, backward finish)`.
pub fn peak_live(t: &Timeline) -> Vec<u32> {
    let mut fwd_start: HashMap<(u32, u32, u32), Time> = HashMap::new();
    for e in t.events.iter().filter(|e| e.kind == TaskKind::Forward) {
        fwd_start.insert((e.device, e.stage, e.minibatch), e.start);
    }
    let mut marks: Vec<Vec<(Time, i32)>> = vec![Vec::new(); t.devices as usize];
    for e in t.events.iter().filter(|e| e.kind == TaskKind::Backward) {
        if let Some(&s) = fwd_start.get(&(e.device, e.stage, e.minibatch)) {
            marks[e.device as usize].push((s, 1));
            marks[e.device as usize].push((e.finish(), -1));
        }
    }
    marks
        .into_iter()
        .map(|mut m| {
            // Releases sort before acquisitions at the same instant.
            m.sort();
            let mut cur = 0i32;
            let mut best = 0i32;
            for (_, delta) in m {
                cur += delta;
                best = best.max(cur);
            }
            best as u32
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommVolumes {
    #[serde(with = "ratio_serde")]
    pub reduce: Rational64,
    #[serde(with = "ratio_serde")]
    pub broadcast: Rational64,
    #[serde(with = "ratio_serde")]
    pub allreduce: Rational64,
}

impl fmt::Display for CommVolumes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "reduce {} + broadcast {} vs allreduce {}",
            ratio_string(&self.reduce),
            ratio_string(&self.broadcast),
            ratio_string(&self.allreduce)
        )
    }
}

/// Per-device traffic of a reduce-to-owner plus broadcast, against a ring
/// all-reduce moving 2(p−1)/p of the buffer.
pub fn reduce_broadcast_cost(replicas: u32, bytes: Rational64) -> Result<CommVolumes, AnalysisError> {
    if replicas == 0 {
        return Err(AnalysisError::InvalidArgument("replicas must be ≥ 1".into()));
    }
    let p = replicas as i64;
    let phase = bytes * Rational64::new(p - 1, p);
    Ok(CommVolumes {
        reduce: phase,
        broadcast: phase,
        allreduce: bytes * Rational64::new(2 * (p - 1), p),
    })
}
