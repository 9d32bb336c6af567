//! Domain types shared by the builder, engine and analyses.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::time::{ratio_serde, Time};

/// Cluster shape and per-stage costs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub depth: u32,
    pub devices: u32,
    /// Forward cost per stage, indexed by stage.
    pub fwd_cost: Vec<Time>,
    /// Backward cost per stage, indexed by stage.
    pub bwd_cost: Vec<Time>,
    #[serde(default)]
    pub update_cost: Time,
    #[serde(default)]
    pub comm_cost: Time,
    /// Node groups. Empty means a single node holding every device.
    #[serde(default)]
    pub nodes: Vec<Vec<u32>>,
    /// Latency between devices on different nodes. Falls back to `comm_cost`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter_node_comm_cost: Option<Time>,
}

impl ClusterSpec {
    /// `depth` stages on `depth` devices with the same costs everywhere.
    pub fn uniform(depth: u32, fwd: Time, bwd: Time) -> Self {
        ClusterSpec {
            depth,
            devices: depth,
            fwd_cost: vec![fwd; depth as usize],
            bwd_cost: vec![bwd; depth as usize],
            update_cost: Time::ZERO,
            comm_cost: Time::ZERO,
            nodes: Vec::new(),
            inter_node_comm_cost: None,
        }
    }

    pub fn comm_model(&self) -> CommModel {
        let mut node_of = vec![0u32; self.devices as usize];
        for (n, group) in self.nodes.iter().enumerate() {
            for &d in group {
                if let Some(slot) = node_of.get_mut(d as usize) {
                    *slot = n as u32;
                }
            }
        }
        CommModel {
            comm_cost: self.comm_cost,
            inter_node_comm_cost: self.inter_node_comm_cost,
            node_of,
        }
    }

    pub fn total_fwd(&self) -> Time {
        self.fwd_cost.iter().copied().sum()
    }

    pub fn total_bwd(&self) -> Time {
        self.bwd_cost.iter().copied().sum()
    }
}

/// Point-to-point latency between devices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommModel {
    pub comm_cost: Time,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter_node_comm_cost: Option<Time>,
    pub node_of: Vec<u32>,
}

impl CommModel {
    pub fn zero(devices: u32) -> Self {
        CommModel {
            comm_cost: Time::ZERO,
            inter_node_comm_cost: None,
            node_of: vec![0; devices as usize],
        }
    }

    /// Gap inserted between a dependency finishing on `from` and its
    /// dependent being released on `to`.
    pub fn gap(&self, from: u32, to: u32) -> Time {
        if from == to {
            return Time::ZERO;
        }
        if let Some(inter) = self.inter_node_comm_cost {
            let a = self.node_of.get(from as usize);
            let b = self.node_of.get(to as usize);
            if a != b {
                return inter;
            }
        }
        self.comm_cost
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterViolation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ClusterViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every `ClusterSpec` invariant. An empty list means the spec is valid.
pub fn validate_cluster(spec: &ClusterSpec) -> Vec<ClusterViolation> {
    let mut out = Vec::new();
    let mut push = |field, message: String| out.push(ClusterViolation { field, message });
    if spec.depth < 2 {
        push("depth", format!("depth ≥ 2 required, got {}", spec.depth));
    }
    if spec.devices < spec.depth.max(1) {
        push(
            "devices",
            format!("devices ≥ depth required, got {} devices for depth {}", spec.devices, spec.depth),
        );
    }
    if spec.fwd_cost.len() != spec.depth as usize {
        push(
            "fwd_cost",
            format!("expected {} entries, got {}", spec.depth, spec.fwd_cost.len()),
        );
    }
    if spec.bwd_cost.len() != spec.depth as usize {
        push(
            "bwd_cost",
            format!("expected {} entries, got {}", spec.depth, spec.bwd_cost.len()),
        );
    }
    for (i, c) in spec.fwd_cost.iter().enumerate() {
        if !c.is_positive() {
            push("fwd_cost", format!("fwd_cost({i}) strictly positive required, got {c}"));
        }
    }
    for (i, c) in spec.bwd_cost.iter().enumerate() {
        if *c < Time::ZERO {
            push("bwd_cost", format!("bwd_cost({i}) nonnegative required, got {c}"));
        }
    }
    if spec.update_cost < Time::ZERO {
        push("update_cost", format!("nonnegative required, got {}", spec.update_cost));
    }
    if spec.comm_cost < Time::ZERO {
        push("comm_cost", format!("nonnegative required, got {}", spec.comm_cost));
    }
    if let Some(c) = spec.inter_node_comm_cost {
        if c < Time::ZERO {
            push("inter_node_comm_cost", format!("nonnegative required, got {c}"));
        }
    }
    if !spec.nodes.is_empty() {
        let mut seen = vec![0u32; spec.devices as usize];
        for group in &spec.nodes {
            if group.is_empty() {
                push("nodes", "empty node group".to_string());
            }
            for &d in group {
                match seen.get_mut(d as usize) {
                    Some(c) => *c += 1,
                    None => push("nodes", format!("device {d} out of range")),
                }
            }
        }
        for (d, c) in seen.iter().enumerate() {
            if *c != 1 {
                push("nodes", format!("device {d} appears in {c} node groups, expected 1"));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "AMDP")]
    Amdp,
    #[serde(rename = "DAPPLE")]
    Dapple,
    GPipe,
    Interleaved1F1B,
    Chimera,
    PipeDreamAsync,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Amdp,
        Policy::Dapple,
        Policy::GPipe,
        Policy::Interleaved1F1B,
        Policy::Chimera,
        Policy::PipeDreamAsync,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Amdp => "AMDP",
            Policy::Dapple => "DAPPLE",
            Policy::GPipe => "GPipe",
            Policy::Interleaved1F1B => "Interleaved1F1B",
            Policy::Chimera => "Chimera",
            Policy::PipeDreamAsync => "PipeDreamAsync",
        }
    }

    /// Policies that flush the pipeline at every window boundary.
    pub fn is_synchronous(self) -> bool {
        matches!(
            self,
            Policy::Dapple | Policy::GPipe | Policy::Interleaved1F1B | Policy::Chimera
        )
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// Scheduling policy parameters.
///
/// Zero in `injection_limit` or `num_pipelines` selects the policy default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub policy: Policy,
    #[serde(default)]
    pub injection_limit: u32,
    #[serde(default)]
    pub num_pipelines: u32,
    pub accumulation_threshold: u32,
    pub num_minibatches: u32,
    #[serde(default)]
    pub zero_enabled: bool,
    /// Lets AMDP run with an injection limit other than 2.
    #[serde(default)]
    pub override_injection: bool,
}

impl PolicyConfig {
    pub fn new(policy: Policy, accumulation_threshold: u32, num_minibatches: u32) -> Self {
        PolicyConfig {
            policy,
            injection_limit: 0,
            num_pipelines: 0,
            accumulation_threshold,
            num_minibatches,
            zero_enabled: false,
            override_injection: false,
        }
    }

    pub fn with_injection_limit(mut self, n: u32) -> Self {
        self.injection_limit = n;
        self
    }

    pub fn with_zero(mut self, on: bool) -> Self {
        self.zero_enabled = on;
        self
    }

    pub fn with_override(mut self, n: u32) -> Self {
        self.injection_limit = n;
        self.override_injection = true;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Forward,
    Backward,
    Update,
    Reduce,
    Broadcast,
}

impl TaskKind {
    /// Tie-break rank: Forward < Backward < Reduce < Broadcast < Update.
    pub fn order(self) -> u8 {
        match self {
            TaskKind::Forward => 0,
            TaskKind::Backward => 1,
            TaskKind::Reduce => 2,
            TaskKind::Broadcast => 3,
            TaskKind::Update => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Forward => "Forward",
            TaskKind::Backward => "Backward",
            TaskKind::Update => "Update",
            TaskKind::Reduce => "Reduce",
            TaskKind::Broadcast => "Broadcast",
        }
    }

    pub fn is_compute(self) -> bool {
        matches!(self, TaskKind::Forward | TaskKind::Backward)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One scheduled unit of work.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub kind: TaskKind,
    pub stage: u32,
    /// Minibatch index, or the window index for Update/Reduce/Broadcast.
    pub minibatch: u32,
    pub window: u32,
    pub pipeline: u32,
    pub device: u32,
    pub start: Time,
    pub duration: Time,
    /// When the task's last dependency was satisfied.
    pub release: Time,
    #[serde(default)]
    pub preloaded: bool,
}

impl TaskEvent {
    pub fn finish(&self) -> Time {
        self.start + self.duration
    }
}

/// Complete execution record of one simulation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    /// Number of (virtual) stages.
    pub depth: u32,
    pub devices: u32,
    pub comm: CommModel,
    /// Grouped by device; within a device in execution order.
    pub events: Vec<TaskEvent>,
    pub makespan: Time,
}

impl Timeline {
    pub fn new(depth: u32, devices: u32, comm: CommModel, mut events: Vec<TaskEvent>) -> Self {
        // Stable: keeps dispatch order among same-instant zero-length events.
        events.sort_by(|a, b| a.device.cmp(&b.device).then(a.start.cmp(&b.start)));
        let makespan = events.iter().map(TaskEvent::finish).max().unwrap_or(Time::ZERO);
        Timeline {
            depth,
            devices,
            comm,
            events,
            makespan,
        }
    }

    pub fn device_events(&self, device: u32) -> impl Iterator<Item = &TaskEvent> {
        self.events.iter().filter(move |e| e.device == device)
    }

    pub fn num_windows(&self) -> u32 {
        self.events
            .iter()
            .filter(|e| e.kind.is_compute())
            .map(|e| e.window + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn num_minibatches(&self) -> u32 {
        self.events
            .iter()
            .filter(|e| e.kind.is_compute())
            .map(|e| e.minibatch + 1)
            .max()
            .unwrap_or(0)
    }

    /// Index of forward and backward events by (stage, minibatch).
    pub fn compute_index(&self) -> BTreeMap<(u32, u32), (Option<usize>, Option<usize>)> {
        let mut map: BTreeMap<(u32, u32), (Option<usize>, Option<usize>)> = BTreeMap::new();
        for (k, e) in self.events.iter().enumerate() {
            let slot = map.entry((e.stage, e.minibatch));
            match e.kind {
                TaskKind::Forward => slot.or_default().0 = Some(k),
                TaskKind::Backward => slot.or_default().1 = Some(k),
                _ => {}
            }
        }
        map
    }

    /// Pairs of event indices on one device whose intervals intersect.
    pub fn overlaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for w in (0..self.events.len()).collect::<Vec<_>>().windows(2) {
            let (a, b) = (&self.events[w[0]], &self.events[w[1]]);
            if a.device == b.device && b.start < a.finish() {
                out.push((w[0], w[1]));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CausalRule {
    /// forward(i,j) must finish before backward(i,j) starts.
    ForwardBeforeBackward,
    /// forward(i,j) must finish (plus comm gap) before forward(i+1,j) starts.
    ForwardChain,
    /// backward(i,j) must finish (plus comm gap) before backward(i−1,j) starts.
    BackwardChain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalityViolation {
    pub rule: CausalRule,
    /// Stage of the earlier event in the rule.
    pub stage: u32,
    pub minibatch: u32,
    pub required_start: Time,
    pub actual_start: Time,
}

impl fmt::Display for CausalityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = match self.rule {
            CausalRule::ForwardBeforeBackward => (
                format!("forward({},{})", self.stage, self.minibatch),
                format!("backward({},{})", self.stage, self.minibatch),
            ),
            CausalRule::ForwardChain => (
                format!("forward({},{})", self.stage, self.minibatch),
                format!("forward({},{})", self.stage + 1, self.minibatch),
            ),
            CausalRule::BackwardChain => (
                format!("backward({},{})", self.stage, self.minibatch),
                format!("backward({},{})", self.stage.wrapping_sub(1), self.minibatch),
            ),
        };
        write!(
            f,
            "{b} starts at {} before {a} allows {}",
            self.actual_start, self.required_start
        )
    }
}

/// Audits the three forward/backward ordering constraints.
pub fn validate_causality(t: &Timeline) -> Vec<CausalityViolation> {
    let idx = t.compute_index();
    let ev = |k: Option<usize>| k.map(|k| &t.events[k]);
    let mut out = Vec::new();
    for (&(i, j), &(f, b)) in &idx {
        let (f, b) = (ev(f), ev(b));
        if let (Some(f), Some(b)) = (f, b) {
            let need = f.finish() + t.comm.gap(f.device, b.device);
            if b.start < need {
                out.push(CausalityViolation {
                    rule: CausalRule::ForwardBeforeBackward,
                    stage: i,
                    minibatch: j,
                    required_start: need,
                    actual_start: b.start,
                });
            }
        }
        if let Some(f) = f {
            if let Some(&(Some(k), _)) = idx.get(&(i + 1, j)) {
                let next = &t.events[k];
                let need = f.finish() + t.comm.gap(f.device, next.device);
                if next.start < need {
                    out.push(CausalityViolation {
                        rule: CausalRule::ForwardChain,
                        stage: i,
                        minibatch: j,
                        required_start: need,
                        actual_start: next.start,
                    });
                }
            }
        }
        if let (Some(b), true) = (b, i > 0) {
            if let Some(&(_, Some(k))) = idx.get(&(i - 1, j)) {
                let prev = &t.events[k];
                let need = b.finish() + t.comm.gap(b.device, prev.device);
                if prev.start < need {
                    out.push(CausalityViolation {
                        rule: CausalRule::BackwardChain,
                        stage: i,
                        minibatch: j,
                        required_start: need,
                        actual_start: prev.start,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchEntry {
    pub stage: u32,
    pub minibatch: u32,
    pub updates: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StageMinibatch {
    pub stage: u32,
    pub minibatch: u32,
}

/// Parameter updates seen between each forward and its backward.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchReport {
    /// Sorted by (stage, minibatch).
    pub entries: Vec<MismatchEntry>,
    pub max_per_stage: BTreeMap<u32, u32>,
    /// Pairs with a forward but no backward; they have no entry.
    pub missing_backward: Vec<StageMinibatch>,
}

impl MismatchReport {
    pub fn get(&self, stage: u32, minibatch: u32) -> Option<u32> {
        self.entries
            .binary_search_by(|e| (e.stage, e.minibatch).cmp(&(stage, minibatch)))
            .ok()
            .map(|k| self.entries[k].updates)
    }

    pub fn max(&self) -> u32 {
        self.max_per_stage.values().copied().max().unwrap_or(0)
    }
}

/// Per-stage memory footprint parameters, in arbitrary byte units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryModel {
    #[serde(with = "ratio_serde")]
    pub weight_per_stage: Rational64,
    #[serde(with = "ratio_serde")]
    pub activation_per_stage_per_minibatch: Rational64,
    #[serde(with = "ratio_serde", default = "two")]
    pub optimizer_state_multiplier: Rational64,
    #[serde(with = "ratio_serde", default = "one")]
    pub gradient_multiplier: Rational64,
}

fn one() -> Rational64 {
    Rational64::from_integer(1)
}

fn two() -> Rational64 {
    Rational64::from_integer(2)
}

impl Default for MemoryModel {
    fn default() -> Self {
        MemoryModel {
            weight_per_stage: one(),
            activation_per_stage_per_minibatch: one(),
            optimizer_state_multiplier: two(),
            gradient_multiplier: one(),
        }
    }
}

impl MemoryModel {
    pub fn violations(&self) -> Vec<&'static str> {
        let zero = Rational64::from_integer(0);
        let mut out = Vec::new();
        if self.weight_per_stage <= zero {
            out.push("weight_per_stage");
        }
        if self.activation_per_stage_per_minibatch <= zero {
            out.push("activation_per_stage_per_minibatch");
        }
        if self.optimizer_state_multiplier <= zero {
            out.push("optimizer_state_multiplier");
        }
        if self.gradient_multiplier <= zero {
            out.push("gradient_multiplier");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(kind: TaskKind, stage: u32, mb: u32, device: u32, start: i64, dur: i64) -> TaskEvent {
        TaskEvent {
            kind,
            stage,
            minibatch: mb,
            window: 0,
            pipeline: 0,
            device,
            start: Time::int(start),
            duration: Time::int(dur),
            release: Time::ZERO,
            preloaded: false,
        }
    }

    #[test]
    fn well_formed_cluster_has_no_violations() {
        let c = ClusterSpec::uniform(8, Time::int(1), Time::int(1));
        assert!(validate_cluster(&c).is_empty());
    }

    #[test]
    fn depth_zero_is_reported() {
        let mut c = ClusterSpec::uniform(2, Time::int(1), Time::int(1));
        c.depth = 0;
        let v = validate_cluster(&c);
        assert!(v.iter().any(|v| v.field == "depth" && v.message.contains("depth ≥ 2")));
    }

    #[test]
    fn zero_forward_cost_is_reported() {
        let mut c = ClusterSpec::uniform(8, Time::int(1), Time::int(1));
        c.fwd_cost[3] = Time::ZERO;
        let v = validate_cluster(&c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "fwd_cost");
        assert!(v[0].message.contains("strictly positive"));
    }

    #[test]
    fn bad_node_partition_is_reported() {
        let mut c = ClusterSpec::uniform(4, Time::int(1), Time::int(1));
        c.nodes = vec![vec![0, 1], vec![1, 2]];
        let v = validate_cluster(&c);
        assert!(v.iter().all(|v| v.field == "nodes"));
        assert_eq!(v.len(), 2); // device 1 twice, device 3 missing
    }

    #[test]
    fn comm_gap_uses_inter_node_cost() {
        let mut c = ClusterSpec::uniform(4, Time::int(1), Time::int(1));
        c.comm_cost = Time::int(1);
        c.inter_node_comm_cost = Some(Time::int(5));
        c.nodes = vec![vec![0, 1], vec![2, 3]];
        let m = c.comm_model();
        assert_eq!(m.gap(0, 0), Time::ZERO);
        assert_eq!(m.gap(0, 1), Time::int(1));
        assert_eq!(m.gap(1, 2), Time::int(5));
    }

    #[test]
    fn backward_before_forward_is_one_violation() {
        let t = Timeline::new(
            1,
            1,
            CommModel::zero(1),
            vec![
                ev(TaskKind::Backward, 0, 0, 0, 0, 2),
                ev(TaskKind::Forward, 0, 0, 0, 2, 1),
            ],
        );
        let v = validate_causality(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, CausalRule::ForwardBeforeBackward);
        assert_eq!((v[0].stage, v[0].minibatch), (0, 0));
    }

    #[test]
    fn forward_chain_inversion_is_one_violation() {
        let t = Timeline::new(
            3,
            3,
            CommModel::zero(3),
            vec![
                ev(TaskKind::Forward, 2, 5, 2, 0, 1),
                ev(TaskKind::Forward, 1, 5, 1, 1, 1),
            ],
        );
        let v = validate_causality(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, CausalRule::ForwardChain);
        assert_eq!((v[0].stage, v[0].minibatch), (1, 5));
    }

    #[test]
    fn comm_gap_is_part_of_causality() {
        let mut comm = CommModel::zero(2);
        comm.comm_cost = Time::int(1);
        let ok = Timeline::new(
            2,
            2,
            comm.clone(),
            vec![
                ev(TaskKind::Forward, 0, 0, 0, 0, 1),
                ev(TaskKind::Forward, 1, 0, 1, 2, 1),
            ],
        );
        assert!(validate_causality(&ok).is_empty());
        let bad = Timeline::new(
            2,
            2,
            comm,
            vec![
                ev(TaskKind::Forward, 0, 0, 0, 0, 1),
                ev(TaskKind::Forward, 1, 0, 1, 1, 1),
            ],
        );
        assert_eq!(validate_causality(&bad).len(), 1);
    }

    #[test]
    fn overlaps_detected() {
        let t = Timeline::new(
            1,
            1,
            CommModel::zero(1),
            vec![
                ev(TaskKind::Forward, 0, 0, 0, 0, 2),
                ev(TaskKind::Forward, 0, 1, 0, 1, 1),
            ],
        );
        assert_eq!(t.overlaps(), vec![(0, 1)]);
    }

    #[test]
    fn policy_names_roundtrip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.name()));
        }
        assert!("amdp".parse::<Policy>().is_ok());
        assert!("zb-v".parse::<Policy>().is_err());
    }

    #[test]
    fn cluster_json_roundtrip() {
        let json = r#"{"depth":2,"devices":2,"fwd_cost":[1,"1/2"],"bwd_cost":[2,1],"update_cost":0}"#;
        let c: ClusterSpec = serde_json::from_str(json).unwrap();
        assert_eq!(c.fwd_cost[1], Time::new(1, 2));
        assert_eq!(c.comm_cost, Time::ZERO);
        let back: ClusterSpec = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
