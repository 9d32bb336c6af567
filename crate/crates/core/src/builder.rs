//! Task-graph construction for each scheduling policy.

use std::collections::HashMap;
use std::fmt;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineError};
use crate::model::{
    validate_cluster, ClusterSpec, ClusterViolation, CommModel, Policy, PolicyConfig, TaskKind,
};
use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("invalid cluster: {}", join(.0))]
    InvalidCluster(Vec<ClusterViolation>),
    #[error("{policy} unsupported: {reason}")]
    Unsupported { policy: Policy, reason: String },
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("odd depth {0}: the counter-directed mapping needs an even depth")]
    OddDepth(u32),
    #[error("stage or pipeline out of range: {0}")]
    OutOfRange(String),
    #[error("auxiliary schedule failed: {0}")]
    Engine(#[from] EngineError),
}

fn join(v: &[ClusterViolation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Device hosting stage `i` of pipeline `j` under the counter-directed mapping.
pub fn map_stage_to_device(pipeline: u32, stage: u32, depth: u32) -> Result<u32, BuildError> {
    let (j, i, d) = (pipeline as i64, stage as i64, depth as i64);
    if depth % 2 != 0 {
        return Err(BuildError::OddDepth(depth));
    }
    if i >= d || j >= (d / 2).max(1) {
        return Err(BuildError::OutOfRange(format!(
            "pipeline {pipeline}, stage {stage}, depth {depth}"
        )));
    }
    let dev = if j % 2 == 0 {
        (2 * j + i) % d
    } else {
        (2 * j - i + d + 1).rem_euclid(d)
    };
    Ok(dev as u32)
}

pub fn default_num_pipelines(depth: u32) -> Result<u32, BuildError> {
    if depth < 2 || depth % 2 != 0 {
        return Err(BuildError::OddDepth(depth));
    }
    Ok(depth / 2)
}

/// Fraction of stages busy when stage 0 may hold `n` minibatches.
pub fn active_ratio(injection_limit: u32, depth: u32) -> Rational64 {
    Rational64::new(injection_limit as i64, depth as i64)
}

/// Number of next-window forwards that fit in one backward slot.
pub fn preload_count(bwd: Time, fwd: Time) -> u32 {
    let r = bwd / fwd;
    r.floor().to_integer().max(0) as u32
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    pub stage: u32,
    /// Minibatch, or window index for collective tasks.
    pub minibatch: u32,
    pub window: u32,
    pub pipeline: u32,
    pub device: u32,
    pub duration: Time,
    #[serde(default)]
    pub preloaded: bool,
}

impl Task {
    fn tie_key(&self) -> (u32, u32, u32, u8, u32) {
        (self.window, self.pipeline, self.minibatch, self.kind.order(), self.stage)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(stage {}, {} {}, pipeline {}, device {})",
            self.kind,
            self.stage,
            if self.kind.is_compute() { "minibatch" } else { "window" },
            self.minibatch,
            self.pipeline,
            self.device
        )
    }
}

/// Tasks plus their ordering constraints.
///
/// `deps` holds the forward/backward causal edges and the accumulation-window
/// edges. `flow` holds scheduling-only constraints: injection credits,
/// barriers and fixed per-device program orders. The engine honours both.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub policy: Option<Policy>,
    /// Number of (virtual) stages.
    pub depth: u32,
    pub devices: u32,
    pub num_pipelines: u32,
    pub accumulation_threshold: u32,
    pub zero_enabled: bool,
    pub tasks: Vec<Task>,
    pub deps: Vec<(usize, usize)>,
    pub flow: Vec<(usize, usize)>,
    /// Per device, its tasks in tie-break order.
    pub fifo_hint: Vec<Vec<usize>>,
}

impl TaskGraph {
    pub fn empty(depth: u32, devices: u32) -> Self {
        TaskGraph {
            policy: None,
            depth,
            devices,
            num_pipelines: 1,
            accumulation_threshold: 1,
            zero_enabled: false,
            tasks: Vec::new(),
            deps: Vec::new(),
            flow: Vec::new(),
            fifo_hint: vec![Vec::new(); devices as usize],
        }
    }

    pub fn add_task(&mut self, task: Task) -> usize {
        self.tasks.push(task);
        self.tasks.len() - 1
    }

    pub fn add_dep(&mut self, from: usize, to: usize) {
        self.deps.push((from, to));
    }

    pub fn add_flow(&mut self, from: usize, to: usize) {
        self.flow.push((from, to));
    }

    /// Recomputes `fifo_hint` from the tie-break key and drops duplicate edges.
    pub fn finalize(&mut self) {
        self.deps.sort_unstable();
        self.deps.dedup();
        self.flow.sort_unstable();
        self.flow.dedup();
        let mut hint = vec![Vec::new(); self.devices as usize];
        for (k, t) in self.tasks.iter().enumerate() {
            hint[t.device as usize].push(k);
        }
        for list in &mut hint {
            list.sort_by_key(|&k| (self.tasks[k].tie_key(), k));
        }
        self.fifo_hint = hint;
    }

    pub fn find(&self, kind: TaskKind, stage: u32, minibatch: u32) -> Option<usize> {
        self.tasks
            .iter()
            .position(|t| t.kind == kind && t.stage == stage && t.minibatch == minibatch)
    }

    /// Removes a dependency edge; returns whether it existed.
    pub fn remove_dep(&mut self, from: usize, to: usize) -> bool {
        let before = self.deps.len();
        self.deps.retain(|&e| e != (from, to));
        before != self.deps.len()
    }

    /// Dependency edges whose endpoints are both forwards or backwards.
    pub fn compute_deps(&self) -> Vec<(usize, usize)> {
        self.deps
            .iter()
            .copied()
            .filter(|&(a, b)| self.tasks[a].kind.is_compute() && self.tasks[b].kind.is_compute())
            .collect()
    }

    /// The causal edge set implied by the graph's forward/backward tasks.
    pub fn expected_causal_edges(&self) -> Vec<(usize, usize)> {
        let mut idx = HashMap::new();
        for (k, t) in self.tasks.iter().enumerate() {
            if t.kind.is_compute() {
                idx.insert((t.kind, t.stage, t.minibatch), k);
            }
        }
        let mut out = Vec::new();
        for (k, t) in self.tasks.iter().enumerate() {
            let (i, j) = (t.stage, t.minibatch);
            match t.kind {
                TaskKind::Forward => {
                    if let Some(&b) = idx.get(&(TaskKind::Backward, i, j)) {
                        out.push((k, b));
                    }
                    if let Some(&f) = idx.get(&(TaskKind::Forward, i + 1, j)) {
                        out.push((k, f));
                    }
                }
                TaskKind::Backward if i > 0 => {
                    if let Some(&b) = idx.get(&(TaskKind::Backward, i - 1, j)) {
                        out.push((k, b));
                    }
                }
                _ => {}
            }
        }
        out.sort_unstable();
        out
    }
}

/// Configuration after defaults are applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedConfig {
    pub policy: Policy,
    pub depth: u32,
    pub injection_limit: u32,
    pub num_pipelines: u32,
    pub threshold: u32,
    pub num_minibatches: u32,
    pub zero_enabled: bool,
    pub preload: u32,
}

impl ResolvedConfig {
    fn window(&self, m: u32) -> u32 {
        m / self.threshold
    }

    fn num_windows(&self) -> u32 {
        self.num_minibatches.div_ceil(self.threshold)
    }

    fn window_range(&self, w: u32) -> std::ops::Range<u32> {
        let lo = (w * self.threshold).min(self.num_minibatches);
        let hi = ((w + 1) * self.threshold).min(self.num_minibatches);
        lo..hi
    }
}

/// Applies policy defaults and checks the configuration against the cluster.
pub fn resolve(policy: &PolicyConfig, cluster: &ClusterSpec) -> Result<ResolvedConfig, BuildError> {
    let v = validate_cluster(cluster);
    if !v.is_empty() {
        return Err(BuildError::InvalidCluster(v));
    }
    let p = policy.policy;
    let d = cluster.depth;
    let unsupported = |reason: String| BuildError::Unsupported { policy: p, reason };
    if policy.accumulation_threshold == 0 {
        return Err(BuildError::InvalidConfig {
            field: "accumulation_threshold",
            reason: "must be ≥ 1".into(),
        });
    }
    if policy.num_minibatches == 0 {
        return Err(BuildError::InvalidConfig {
            field: "num_minibatches",
            reason: "must be ≥ 1".into(),
        });
    }
    let injection_limit = match p {
        Policy::Amdp if !policy.override_injection => 2,
        _ if policy.injection_limit == 0 => d,
        _ => policy.injection_limit,
    };
    let pipelines_default = match p {
        Policy::Amdp => default_num_pipelines(d)?,
        Policy::Chimera => 2,
        _ => 1,
    };
    let num_pipelines = if policy.num_pipelines == 0 {
        pipelines_default
    } else {
        policy.num_pipelines
    };
    let t = policy.accumulation_threshold;
    match p {
        Policy::Amdp => {
            if cluster.devices != d {
                return Err(unsupported(format!(
                    "requires devices = depth, got {} devices for depth {d}",
                    cluster.devices
                )));
            }
            if num_pipelines > d / 2 {
                return Err(BuildError::InvalidConfig {
                    field: "num_pipelines",
                    reason: format!("at most depth/2 = {} pipelines", d / 2),
                });
            }
        }
        Policy::Chimera => {
            if d % 2 != 0 {
                return Err(unsupported(format!("odd depth {d}: Chimera needs an even depth")));
            }
            if num_pipelines != 2 {
                return Err(BuildError::InvalidConfig {
                    field: "num_pipelines",
                    reason: "Chimera runs exactly 2 pipelines".into(),
                });
            }
            if t % 2 != 0 || policy.num_minibatches % t != 0 {
                return Err(unsupported(format!(
                    "window size {t} must be even and divide num_minibatches {}",
                    policy.num_minibatches
                )));
            }
        }
        Policy::Interleaved1F1B => {
            if t % d != 0 || policy.num_minibatches % t != 0 {
                return Err(unsupported(format!(
                    "window size {t} must be a multiple of depth {d} and divide num_minibatches {}",
                    policy.num_minibatches
                )));
            }
        }
        _ => {}
    }
    if p != Policy::Amdp && p != Policy::Chimera && num_pipelines != 1 {
        return Err(BuildError::InvalidConfig {
            field: "num_pipelines",
            reason: format!("{p} runs a single pipeline"),
        });
    }
    Ok(ResolvedConfig {
        policy: p,
        depth: d,
        injection_limit,
        num_pipelines,
        threshold: t,
        num_minibatches: policy.num_minibatches,
        zero_enabled: policy.zero_enabled,
        preload: preload_count(cluster.total_bwd(), cluster.total_fwd()),
    })
}

/// Builds the task graph for `policy` on `cluster`.
pub fn build(policy: &PolicyConfig, cluster: &ClusterSpec) -> Result<TaskGraph, BuildError> {
    build_inner(policy, cluster, None)
}

/// Builds an AMDP graph with an explicit stage→device table per pipeline.
///
/// Each row must be a bijection onto the devices. Row 0 decides the ZeRO
/// owner of every stage.
pub fn build_with_mapping(
    policy: &PolicyConfig,
    cluster: &ClusterSpec,
    mapping: &[Vec<u32>],
) -> Result<TaskGraph, BuildError> {
    if policy.policy != Policy::Amdp {
        return Err(BuildError::Unsupported {
            policy: policy.policy,
            reason: "custom mappings apply to AMDP only".into(),
        });
    }
    build_inner(policy, cluster, Some(mapping))
}

fn build_inner(
    policy: &PolicyConfig,
    cluster: &ClusterSpec,
    mapping: Option<&[Vec<u32>]>,
) -> Result<TaskGraph, BuildError> {
    let cfg = resolve(policy, cluster)?;
    let mut b = Builder::new(&cfg, cluster);
    match cfg.policy {
        Policy::Dapple => b.one_f_one_b(true),
        Policy::PipeDreamAsync => b.one_f_one_b(false),
        Policy::GPipe => b.gpipe(),
        Policy::Amdp => b.amdp(mapping)?,
        Policy::Chimera => b.chimera()?,
        Policy::Interleaved1F1B => b.interleaved(),
    }
    let mut g = b.g;
    g.finalize();
    Ok(g)
}

struct Builder<'a> {
    cfg: &'a ResolvedConfig,
    cluster: &'a ClusterSpec,
    g: TaskGraph,
    /// (kind, stage, minibatch) → task index, compute tasks only.
    idx: HashMap<(TaskKind, u32, u32), usize>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a ResolvedConfig, cluster: &'a ClusterSpec) -> Self {
        let depth = if cfg.policy == Policy::Interleaved1F1B {
            2 * cfg.depth
        } else {
            cfg.depth
        };
        let mut g = TaskGraph::empty(depth, cluster.devices);
        g.policy = Some(cfg.policy);
        g.num_pipelines = cfg.num_pipelines;
        g.accumulation_threshold = cfg.threshold;
        g.zero_enabled = cfg.zero_enabled;
        Builder {
            cfg,
            cluster,
            g,
            idx: HashMap::new(),
        }
    }

    fn f(&self, stage: u32, m: u32) -> usize {
        self.idx[&(TaskKind::Forward, stage, m)]
    }

    fn b(&self, stage: u32, m: u32) -> usize {
        self.idx[&(TaskKind::Backward, stage, m)]
    }

    fn add_compute(&mut self, kind: TaskKind, stage: u32, m: u32, pipeline: u32, device: u32, duration: Time) {
        let id = self.g.add_task(Task {
            kind,
            stage,
            minibatch: m,
            window: self.cfg.window(m),
            pipeline,
            device,
            duration,
            preloaded: false,
        });
        self.idx.insert((kind, stage, m), id);
    }

    /// Adds forward/backward tasks for every minibatch and the causal edges.
    fn add_compute_tasks(&mut self, place: impl Fn(u32, u32) -> (u32, u32), scale: i64) {
        let depth = self.g.depth;
        for m in 0..self.cfg.num_minibatches {
            for s in 0..depth {
                let (pipe, dev) = place(m, s);
                let cost_stage = (s % self.cfg.depth) as usize;
                let fwd = self.cluster.fwd_cost[cost_stage] / scale;
                let bwd = self.cluster.bwd_cost[cost_stage] / scale;
                self.add_compute(TaskKind::Forward, s, m, pipe, dev, fwd);
                self.add_compute(TaskKind::Backward, s, m, pipe, dev, bwd);
            }
        }
        for m in 0..self.cfg.num_minibatches {
            for s in 0..depth {
                self.g.add_dep(self.f(s, m), self.b(s, m));
                if s + 1 < depth {
                    self.g.add_dep(self.f(s, m), self.f(s + 1, m));
                    self.g.add_dep(self.b(s + 1, m), self.b(s, m));
                }
            }
        }
    }

    /// Window-`w` parameter update for `stage`, hosted on `replicas`.
    ///
    /// Returns, per replica device, the task after which the new parameters
    /// are visible there.
    fn add_update(&mut self, stage: u32, w: u32, replicas: &[u32], sources: &[usize]) -> Vec<(u32, usize)> {
        let cost = self.cluster.update_cost;
        let task = |kind, device| Task {
            kind,
            stage,
            minibatch: w,
            window: w,
            pipeline: 0,
            device,
            duration: cost,
            preloaded: false,
        };
        if self.cfg.zero_enabled {
            let owner = replicas[0];
            let r = self.g.add_task(task(TaskKind::Reduce, owner));
            let c = self.g.add_task(task(TaskKind::Broadcast, owner));
            for &s in sources {
                self.g.add_dep(s, r);
            }
            self.g.add_dep(r, c);
            replicas.iter().map(|&d| (d, c)).collect()
        } else {
            replicas
                .iter()
                .map(|&d| {
                    let u = self.g.add_task(task(TaskKind::Update, d));
                    for &s in sources {
                        self.g.add_dep(s, u);
                    }
                    (d, u)
                })
                .collect()
        }
    }

    /// Single-pipeline per-stage update at every window boundary. With
    /// `flush`, the next window's forwards wait for it.
    fn stage_updates(&mut self, flush: bool) {
        for w in 0..self.cfg.num_windows() {
            let range = self.cfg.window_range(w);
            let next = self.cfg.window_range(w + 1);
            for s in 0..self.g.depth {
                let sources: Vec<usize> = range.clone().map(|m| self.b(s, m)).collect();
                let dev = self.g.tasks[sources[0]].device;
                let gates = self.add_update(s, w, &[dev], &sources);
                if flush {
                    for m in next.clone() {
                        self.g.add_dep(gates[0].1, self.f(s, m));
                    }
                }
            }
        }
    }

    fn one_f_one_b(&mut self, sync: bool) {
        let d = self.cfg.depth;
        self.add_compute_tasks(|_, s| (0, s), 1);
        for m in 0..self.cfg.num_minibatches {
            for s in 0..d {
                let k = self.cfg.injection_limit.min(d - s);
                if m < k {
                    continue;
                }
                let prev = m - k;
                if sync && self.cfg.window(prev) != self.cfg.window(m) {
                    continue;
                }
                self.g.add_flow(self.b(s, prev), self.f(s, m));
            }
        }
        self.stage_updates(sync);
    }

    fn gpipe(&mut self) {
        let d = self.cfg.depth;
        self.add_compute_tasks(|_, s| (0, s), 1);
        for w in 0..self.cfg.num_windows() {
            let range = self.cfg.window_range(w);
            let last = self.f(d - 1, range.end - 1);
            for m in range {
                self.g.add_flow(last, self.b(d - 1, m));
            }
        }
        self.stage_updates(true);
    }

    fn amdp(&mut self, mapping: Option<&[Vec<u32>]>) -> Result<(), BuildError> {
        let d = self.cfg.depth;
        let p = self.cfg.num_pipelines;
        let t = self.cfg.threshold;
        let n_total = self.cfg.num_minibatches;
        let map: Vec<Vec<u32>> = match mapping {
            Some(m) => {
                check_mapping(m, p, d)?;
                m.to_vec()
            }
            None => (0..p)
                .map(|j| (0..d).map(|i| map_stage_to_device(j, i, d)).collect())
                .collect::<Result<_, _>>()?,
        };
        self.add_compute_tasks(|m, s| (m % p, map[(m % p) as usize][s as usize]), 1);

        // Preloaded forwards: the first `preload` forwards of each pipeline in
        // every window after the first.
        for m in t..n_total {
            if (m % t) / p < self.cfg.preload {
                let f = self.f(0, m);
                self.g.tasks[f].preloaded = true;
            }
        }

        // Injection credits, per pipeline and stage.
        let allowance = self.cfg.injection_limit + self.cfg.preload;
        for m in 0..n_total {
            for s in 0..d {
                let k = allowance.min(d - s) * p;
                if m >= k {
                    self.g.add_flow(self.b(s, m - k), self.f(s, m));
                }
            }
        }

        // Window updates. The first c forwards of the next window are pinned
        // before the update (their backwards see it); the following window's
        // worth of forwards wait for it.
        for w in 0..self.cfg.num_windows() {
            let range = self.cfg.window_range(w);
            let first = (w + 1) * t;
            for s in 0..d {
                let c = (p * self.cfg.injection_limit.min(d - s)).min(t);
                let pinned = first.min(n_total)..(first + c).min(n_total);
                let stale = (first + c).min(n_total)..(first + t + c).min(n_total);
                let mut sources: Vec<usize> = range.clone().map(|m| self.b(s, m)).collect();
                sources.extend(pinned.clone().map(|m| self.f(s, m)));
                let mut replicas: Vec<u32> = Vec::new();
                for j in 0..p {
                    let dev = map[j as usize][s as usize];
                    if !replicas.contains(&dev) {
                        replicas.push(dev);
                    }
                }
                let gates = self.add_update(s, w, &replicas, &sources);
                let gate_on = |dev: u32| gates.iter().find(|g| g.0 == dev).map(|g| g.1);
                for m in pinned {
                    let b = self.b(s, m);
                    if let Some(g) = gate_on(self.g.tasks[b].device) {
                        self.g.add_dep(g, b);
                    }
                }
                for m in stale {
                    let f = self.f(s, m);
                    if let Some(g) = gate_on(self.g.tasks[f].device) {
                        self.g.add_dep(g, f);
                    }
                }
            }
        }
        Ok(())
    }

    fn chimera(&mut self) -> Result<(), BuildError> {
        let d = self.cfg.depth;
        let place = |m: u32, s: u32| {
            let pipe = m % 2;
            (pipe, if pipe == 0 { s } else { d - 1 - s })
        };
        self.add_compute_tasks(place, 1);
        let half = self.cfg.threshold / 2;
        let solo = standalone_1f1b(self.cluster, half)?;
        for w in 0..self.cfg.num_windows() {
            let base = w * self.cfg.threshold;
            let mut per_dev: Vec<Vec<((Time, Time, u32, u8), usize)>> = vec![Vec::new(); d as usize];
            for k in 0..half {
                for pipe in 0..2 {
                    let m = base + 2 * k + pipe;
                    for s in 0..d {
                        for kind in [TaskKind::Forward, TaskKind::Backward] {
                            let (st, fin) = solo[&(kind, s, k)];
                            let id = self.idx[&(kind, s, m)];
                            let dev = self.g.tasks[id].device;
                            per_dev[dev as usize].push(((st, fin, m, kind.order()), id));
                        }
                    }
                }
            }
            for mut seq in per_dev {
                seq.sort();
                for pair in seq.windows(2) {
                    self.g.add_flow(pair[0].1, pair[1].1);
                }
            }
        }
        for w in 0..self.cfg.num_windows() {
            let range = self.cfg.window_range(w);
            let next = self.cfg.window_range(w + 1);
            for s in 0..d {
                let sources: Vec<usize> = range.clone().map(|m| self.b(s, m)).collect();
                let gates = self.add_update(s, w, &[s, d - 1 - s], &sources);
                for m in next.clone() {
                    let f = self.f(s, m);
                    let dev = self.g.tasks[f].device;
                    let g = gates.iter().find(|g| g.0 == dev).map(|g| g.1).unwrap_or(gates[0].1);
                    self.g.add_dep(g, f);
                }
            }
        }
        Ok(())
    }

    fn interleaved(&mut self) {
        let d = self.cfg.depth;
        self.add_compute_tasks(|_, s| (0, s % d), 2);
        let chunks = 2;
        for w in 0..self.cfg.num_windows() {
            let base = w * self.cfg.threshold;
            for rank in 0..d {
                let order = megatron_order(d, chunks, self.cfg.threshold, rank);
                let ids: Vec<usize> = order
                    .iter()
                    .map(|&(kind, chunk, mb)| self.idx[&(kind, chunk * d + rank, base + mb)])
                    .collect();
                for pair in ids.windows(2) {
                    self.g.add_flow(pair[0], pair[1]);
                }
            }
        }
        self.stage_updates(true);
    }
}

fn check_mapping(m: &[Vec<u32>], pipelines: u32, depth: u32) -> Result<(), BuildError> {
    if m.len() != pipelines as usize {
        return Err(BuildError::InvalidConfig {
            field: "mapping",
            reason: format!("expected {pipelines} rows, got {}", m.len()),
        });
    }
    for (j, row) in m.iter().enumerate() {
        let mut sorted = row.clone();
        sorted.sort_unstable();
        if sorted != (0..depth).collect::<Vec<_>>() {
            return Err(BuildError::InvalidConfig {
                field: "mapping",
                reason: format!("row {j} is not a permutation of 0..{depth}"),
            });
        }
    }
    Ok(())
}

/// Standard interleaved program order for one rank:
/// (kind, chunk, microbatch) triples.
fn megatron_order(p: u32, v: u32, m: u32, rank: u32) -> Vec<(TaskKind, u32, u32)> {
    let total = m * v;
    let warm = ((p - rank - 1) * 2 + (v - 1) * p).min(total);
    let fwd = |k: u32| (TaskKind::Forward, (k / p) % v, (k / (p * v)) * p + k % p);
    let bwd = |k: u32| (TaskKind::Backward, v - 1 - (k / p) % v, (k / (p * v)) * p + k % p);
    let mut seq: Vec<_> = (0..warm).map(fwd).collect();
    let mut bi = 0;
    for fi in warm..total {
        seq.push(fwd(fi));
        seq.push(bwd(bi));
        bi += 1;
    }
    seq.extend((bi..total).map(bwd));
    seq
}

/// Start/finish of every task of one credit-limited 1F1B pipeline with
/// identity mapping, keyed by (kind, stage, local minibatch).
fn standalone_1f1b(
    cluster: &ClusterSpec,
    minibatches: u32,
) -> Result<HashMap<(TaskKind, u32, u32), (Time, Time)>, BuildError> {
    let mut solo = ClusterSpec::uniform(cluster.depth, Time::int(1), Time::int(1));
    solo.fwd_cost = cluster.fwd_cost.clone();
    solo.bwd_cost = cluster.bwd_cost.clone();
    let cfg = PolicyConfig::new(Policy::Dapple, minibatches, minibatches).with_injection_limit(minibatches);
    let g = build(&cfg, &solo)?;
    let tl = engine::simulate_with(&g, &CommModel::zero(solo.devices))?;
    Ok(tl
        .events
        .iter()
        .filter(|e| e.kind.is_compute())
        .map(|e| ((e.kind, e.stage, e.minibatch), (e.start, e.finish())))
        .collect())
}
