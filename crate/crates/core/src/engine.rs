//! Deterministic list-scheduling executor.
//!
//! Every device runs one task at a time. When a device is idle it starts the
//! released task with the earliest release time; ties fall back to the
//! graph's per-device `fifo_hint` order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use num_rational::Rational64;

use crate::builder::TaskGraph;
use crate::model::{ClusterSpec, CommModel, TaskEvent, TaskKind, Timeline};
use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("dependency cycle: {}", .witness.join(" -> "))]
    Cycle { witness: Vec<String> },
    #[error("deadlock at t={clock}: {} tasks blocked, first: {}", .blocked.len(), .blocked.first().map(String::as_str).unwrap_or("-"))]
    Deadlock { clock: Time, blocked: Vec<String> },
    #[error("edge references task {0} outside the graph")]
    DanglingEdge(usize),
    #[error("task {task} placed on device {device} of {devices}")]
    BadDevice { task: usize, device: u32, devices: u32 },
    #[error("empty measurement span [{start}, {end}]")]
    EmptySpan { start: Time, end: Time },
}

/// Runs `graph` with the latency model of `cluster`.
pub fn simulate(graph: &TaskGraph, cluster: &ClusterSpec) -> Result<Timeline, EngineError> {
    simulate_with(graph, &cluster.comm_model())
}

pub fn simulate_with(graph: &TaskGraph, comm: &CommModel) -> Result<Timeline, EngineError> {
    let n = graph.tasks.len();
    let devices = graph.devices as usize;
    for (k, t) in graph.tasks.iter().enumerate() {
        if t.device as usize >= devices {
            return Err(EngineError::BadDevice {
                task: k,
                device: t.device,
                devices: graph.devices,
            });
        }
    }
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for &(a, b) in graph.deps.iter().chain(&graph.flow) {
        if a >= n || b >= n {
            return Err(EngineError::DanglingEdge(a.max(b)));
        }
        succ[a].push(b);
        indeg[b] += 1;
    }
    check_acyclic(graph, &succ, &indeg)?;

    let mut rank = vec![usize::MAX; n];
    for list in &graph.fifo_hint {
        for (r, &k) in list.iter().enumerate() {
            rank[k] = r;
        }
    }
    // Tasks missing from the hint sort after hinted ones, by index.
    for (k, r) in rank.iter_mut().enumerate() {
        if *r == usize::MAX {
            *r = n + k;
        }
    }

    let mut release = vec![Time::ZERO; n];
    let mut ready: Vec<BinaryHeap<Reverse<(Time, usize, usize)>>> = vec![BinaryHeap::new(); devices];
    let mut running: BinaryHeap<Reverse<(Time, usize, usize)>> = BinaryHeap::new();
    let mut free_at = vec![Time::ZERO; devices];
    let mut started = vec![false; n];
    let mut events = Vec::with_capacity(n);
    let mut seq = 0usize;
    let mut done = 0usize;
    let mut clock = Time::ZERO;

    for k in 0..n {
        if indeg[k] == 0 {
            ready[graph.tasks[k].device as usize].push(Reverse((Time::ZERO, rank[k], k)));
        }
    }

    while done < n {
        let mut changed = true;
        while changed {
            changed = false;
            while let Some(&Reverse((fin, _, k))) = running.peek() {
                if fin > clock {
                    break;
                }
                running.pop();
                done += 1;
                changed = true;
                let from = graph.tasks[k].device;
                for &s in &succ[k] {
                    let to = graph.tasks[s].device;
                    let r = fin + comm.gap(from, to);
                    if r > release[s] {
                        release[s] = r;
                    }
                    indeg[s] -= 1;
                    if indeg[s] == 0 {
                        ready[to as usize].push(Reverse((release[s], rank[s], s)));
                    }
                }
            }
            for dev in 0..devices {
                if free_at[dev] > clock {
                    continue;
                }
                let Some(&Reverse((rel, _, k))) = ready[dev].peek() else {
                    continue;
                };
                if rel > clock {
                    continue;
                }
                ready[dev].pop();
                let t = &graph.tasks[k];
                let fin = clock + t.duration;
                free_at[dev] = fin;
                started[k] = true;
                running.push(Reverse((fin, seq, k)));
                seq += 1;
                events.push(TaskEvent {
                    kind: t.kind,
                    stage: t.stage,
                    minibatch: t.minibatch,
                    window: t.window,
                    pipeline: t.pipeline,
                    device: t.device,
                    start: clock,
                    duration: t.duration,
                    release: rel,
                    preloaded: t.preloaded,
                });
                changed = true;
            }
        }
        if done == n {
            break;
        }
        let mut next: Option<Time> = running.peek().map(|r| r.0 .0);
        for dev in 0..devices {
            if let Some(Reverse((rel, _, _))) = ready[dev].peek() {
                let at = (*rel).max(free_at[dev]);
                if at > clock {
                    next = Some(next.map_or(at, |x| x.min(at)));
                }
            }
        }
        match next {
            Some(t) if t > clock => clock = t,
            _ => {
                let blocked = (0..n)
                    .filter(|&k| !started[k])
                    .map(|k| graph.tasks[k].to_string())
                    .collect();
                return Err(EngineError::Deadlock { clock, blocked });
            }
        }
    }
    Ok(Timeline::new(graph.depth, graph.devices, comm.clone(), events))
}

fn check_acyclic(graph: &TaskGraph, succ: &[Vec<usize>], indeg: &[usize]) -> Result<(), EngineError> {
    let n = succ.len();
    let mut deg = indeg.to_vec();
    let mut stack: Vec<usize> = (0..n).filter(|&k| deg[k] == 0).collect();
    let mut seen = 0;
    while let Some(k) = stack.pop() {
        seen += 1;
        for &s in &succ[k] {
            deg[s] -= 1;
            if deg[s] == 0 {
                stack.push(s);
            }
        }
    }
    if seen == n {
        return Ok(());
    }
    // Every node left with deg > 0 has a predecessor that is also left, so
    // walking predecessors must revisit a node.
    let mut pred = vec![usize::MAX; n];
    for (a, list) in succ.iter().enumerate() {
        for &b in list {
            if deg[a] > 0 && deg[b] > 0 {
                pred[b] = a;
            }
        }
    }
    let start = (0..n).find(|&k| deg[k] > 0).unwrap_or(0);
    let mut pos = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut cur = start;
    while pos[cur] == usize::MAX {
        pos[cur] = path.len();
        path.push(cur);
        cur = pred[cur];
    }
    let mut cycle: Vec<usize> = path[pos[cur]..].to_vec();
    cycle.reverse();
    cycle.push(cycle[0]);
    Err(EngineError::Cycle {
        witness: cycle.iter().map(|&k| graph.tasks[k].to_string()).collect(),
    })
}

/// Idle fraction of device-time over the measured span.
///
/// With `warmup_windows = 0` the span is `[0, last backward finish]`.
/// Otherwise it runs from the end of window `warmup_windows − 1` to the end
/// of window `W − 1 − warmup_windows`, where a window ends when its last
/// backward finishes.
pub fn bubble_ratio(t: &Timeline, warmup_windows: u32) -> Result<Rational64, EngineError> {
    let windows = t.num_windows();
    let mut ends = vec![Time::ZERO; windows as usize];
    for e in t.events.iter().filter(|e| e.kind == TaskKind::Backward) {
        let slot = &mut ends[e.window as usize];
        *slot = (*slot).max(e.finish());
    }
    let last = ends.iter().copied().max().unwrap_or(Time::ZERO);
    let (start, end) = if warmup_windows == 0 {
        (Time::ZERO, last)
    } else if 2 * warmup_windows < windows {
        (
            ends[warmup_windows as usize - 1],
            ends[(windows - 1 - warmup_windows) as usize],
        )
    } else {
        return Err(EngineError::EmptySpan {
            start: Time::ZERO,
            end: Time::ZERO,
        });
    };
    if end <= start {
        return Err(EngineError::EmptySpan { start, end });
    }
    let busy: Time = t
        .events
        .iter()
        .map(|e| {
            let lo = e.start.max(start);
            let hi = e.finish().min(end);
            if hi > lo {
                hi - lo
            } else {
                Time::ZERO
            }
        })
        .sum();
    let total = (end - start) * t.devices as i64;
    Ok(Rational64::from_integer(1) - busy / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{build, Task};
    use crate::model::{Policy, PolicyConfig};

    fn task(kind: TaskKind, stage: u32, mb: u32, device: u32, dur: i64) -> Task {
        Task {
            kind,
            stage,
            minibatch: mb,
            window: 0,
            pipeline: 0,
            device,
            duration: Time::int(dur),
            preloaded: false,
        }
    }

    #[test]
    fn single_stage_runs_serially() {
        let mut g = TaskGraph::empty(1, 1);
        for m in 0..3 {
            let f = g.add_task(task(TaskKind::Forward, 0, m, 0, 1));
            let b = g.add_task(task(TaskKind::Backward, 0, m, 0, 2));
            g.add_dep(f, b);
        }
        let u = g.add_task(task(TaskKind::Update, 0, 0, 0, 0));
        for m in 0..3 {
            g.add_dep(2 * m + 1, u);
        }
        g.finalize();
        let t = simulate_with(&g, &CommModel::zero(1)).unwrap();
        assert_eq!(t.makespan, Time::int(9));
        assert_eq!(bubble_ratio(&t, 0).unwrap(), Rational64::from_integer(0));
    }

    #[test]
    fn cycle_is_reported_with_witness() {
        let mut g = TaskGraph::empty(2, 2);
        let a = g.add_task(task(TaskKind::Forward, 0, 0, 0, 1));
        let b = g.add_task(task(TaskKind::Forward, 1, 0, 1, 1));
        let c = g.add_task(task(TaskKind::Backward, 1, 0, 1, 1));
        g.add_dep(a, b);
        g.add_dep(b, c);
        g.add_dep(c, b);
        g.finalize();
        match simulate_with(&g, &CommModel::zero(2)) {
            Err(EngineError::Cycle { witness }) => {
                assert_eq!(witness.first(), witness.last());
                assert_eq!(witness.len(), 3);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn dapple_four_by_four() {
        let c = ClusterSpec::uniform(4, Time::int(1), Time::int(2));
        let g = build(&PolicyConfig::new(Policy::Dapple, 4, 4), &c).unwrap();
        let t = simulate(&g, &c).unwrap();
        assert_eq!(t.makespan, Time::int(21));
        assert_eq!(bubble_ratio(&t, 0).unwrap(), Rational64::new(3, 7));
    }

    #[test]
    fn comm_gap_delays_cross_device_release() {
        let mut c = ClusterSpec::uniform(2, Time::int(1), Time::int(1));
        c.comm_cost = Time::new(1, 2);
        let g = build(&PolicyConfig::new(Policy::Dapple, 1, 1), &c).unwrap();
        let t = simulate(&g, &c).unwrap();
        // F0 [0,1], F1 [1.5,2.5], B1 [2.5,3.5], B0 [4,5]
        assert_eq!(t.makespan, Time::int(5));
        assert!(crate::model::validate_causality(&t).is_empty());
    }

    #[test]
    fn span_errors() {
        let c = ClusterSpec::uniform(2, Time::int(1), Time::int(1));
        let g = build(&PolicyConfig::new(Policy::Dapple, 2, 4), &c).unwrap();
        let t = simulate(&g, &c).unwrap();
        assert!(bubble_ratio(&t, 1).is_err());
    }
}
