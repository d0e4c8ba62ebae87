//! Network calibration harnesses, shared with the acceptance run.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmsim::geometry::Vec3;
use swarmsim::ids::{DroneId, EntityId, SwarmId};
use swarmsim::network::{Command, DropReason, Network, NetworkParams, Priority, Recipients, SwarmMessage, Topology};

pub const TRIALS: u64 = 10_000;

pub fn params(loss_base: f64, exponent: f64, relay: bool) -> NetworkParams {
    NetworkParams {
        comm_range: 250.0,
        loss_base,
        loss_range_exponent: exponent,
        bandwidth: 1024,
        latency: 1,
        relay_enabled: relay,
        gcs_range: 2500.0,
    }
}

pub fn net(p: NetworkParams, nodes: &[&str]) -> Network {
    let roster = nodes.iter().map(|n| DroneId::new(*n)).collect();
    Network::new(p, BTreeMap::from([(SwarmId::new("s"), roster)]))
}

pub fn topo(nodes: &[(&str, f64)]) -> Topology {
    nodes.iter().map(|(id, x)| (EntityId::new(*id), Vec3::new(*x, 0.0, 10.0))).collect()
}

pub fn msg(id: u64, priority: Priority, to: &str, tick: u64) -> SwarmMessage {
    SwarmMessage::new(id, priority, EntityId::new("a"), Recipients::Drone(DroneId::new(to)), Command::Land, tick as f64 * 0.05)
}

/// Sends one message per tick from `a` to `b` and returns the fraction lost.
pub fn empirical_loss(p: NetworkParams, topology: &Topology, nodes: &[&str], seed: u64) -> f64 {
    let mut n = net(p, nodes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lost = 0u64;
    let mut delivered = 0u64;
    for tick in 0..TRIALS + u64::from(p.latency) {
        let batch = if tick < TRIALS { vec![msg(tick, Priority::Tactical, "b", tick)] } else { Vec::new() };
        let d = n.deliver(tick, batch, topology, &mut rng).unwrap();
        lost += d.dropped.iter().filter(|x| x.reason == DropReason::Loss).count() as u64;
        delivered += d.delivered.values().map(Vec::len).sum::<usize>() as u64;
    }
    assert_eq!(lost + delivered, TRIALS, "every message is either lost or delivered");
    lost as f64 / TRIALS as f64
}

/// Per-hop loss under the model: a base rate plus a power-law rise with range.
pub fn model_loss(lb: f64, k: f64, range: f64, d: f64) -> f64 {
    lb + (1.0 - lb) * (d / range).powf(k)
}

/// Saturates a 64 B/tick link with random mixed-priority traffic for 300
/// ticks and lets it drain. Returns how many (strategic, later tactical)
/// pairs went out in the wrong order and the longest wait in ticks.
pub fn starvation_run(seed: u64) -> (usize, u64) {
    // Two 32-byte messages fit per tick; offered load is far higher.
    let p = NetworkParams { bandwidth: 64, latency: 1, ..params(0.0, 2.0, false) };
    let mut n = net(p, &["a", "b"]);
    let t = topo(&[("a", 0.0), ("b", 10.0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut load = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut submitted: BTreeMap<u64, (u64, Priority)> = BTreeMap::new();
    let mut transmitted: BTreeMap<u64, u64> = BTreeMap::new();
    let mut next_id = 0;
    for tick in 0..600 {
        let mut batch = Vec::new();
        if tick < 300 {
            for _ in 0..load.gen_range(1..5) {
                let pri = if load.gen_bool(0.2) { Priority::Strategic } else { Priority::Tactical };
                submitted.insert(next_id, (tick, pri));
                batch.push(msg(next_id, pri, "b", tick));
                next_id += 1;
            }
        }
        for (id, _) in n.deliver(tick, batch, &t, &mut rng).unwrap().transmitted {
            transmitted.insert(id, tick);
        }
    }
    assert_eq!(transmitted.len(), submitted.len(), "queue drains once load stops");
    assert_eq!(n.queued(), 0);

    let mut violations = 0;
    for (s, (s_sub, s_pri)) in &submitted {
        if *s_pri != Priority::Strategic {
            continue;
        }
        for (t_id, (t_sub, t_pri)) in &submitted {
            if *t_pri == Priority::Tactical && t_sub >= s_sub && transmitted[t_id] < transmitted[s] {
                violations += 1;
            }
        }
    }
    let longest = submitted.iter().map(|(id, (sub, _))| transmitted[id] - sub).max().unwrap_or(0);
    (violations, longest)
}
