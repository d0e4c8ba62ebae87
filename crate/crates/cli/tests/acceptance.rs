//! Acceptance run: one PASS/FAIL line per headline criterion.
//!
//! Runs as its own harness so the lines come out in order and unbuffered;
//! exits non-zero if any criterion fails.

#[allow(dead_code)]
#[path = "../../core/tests/support/loops.rs"]
mod loops;
#[allow(dead_code)]
#[path = "../../core/tests/support/netcal.rs"]
mod netcal;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;
use swarmsim::engine::{
    gateway_serve, EventKind, EventLog, EventRecord, Fault, MissionReport, Outcome, Phase, ServeOptions, SimConfig, Simulation,
};
use swarmsim::scenario::{parse_scenario, ScenarioSpec};
use tungstenite::Message;

type Verdict = Result<String, String>;

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn demo_text() -> String {
    std::fs::read_to_string(scenarios().join("demo10.scn")).unwrap()
}

fn demo(loss_base: f64) -> ScenarioSpec {
    let mut spec = parse_scenario(&demo_text()).unwrap();
    spec.network_params.loss_base = loss_base;
    spec
}

fn simulate(cfg: SimConfig) -> (EventLog, MissionReport) {
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run_to_end().unwrap();
    (sim.event_log(), sim.report())
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

/// Runs `f` over `seeds` on every core; results come back in seed order.
fn par_seeds<T: Send>(seeds: std::ops::Range<u64>, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let seeds: Vec<u64> = seeds.collect();
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).min(seeds.len().max(1));
    let chunk = seeds.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds.chunks(chunk).map(|c| s.spawn(|| c.iter().map(|&k| f(k)).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

// ---------------------------------------------------------------------------

/// Phases named in the log, in order, read from the raw text.
fn phases_in(log_text: &str) -> Vec<String> {
    log_text
        .lines()
        .filter(|l| l.contains(" kind=MissionPhase "))
        .filter_map(|l| l.split_once("detail=phase=").map(|(_, p)| p.split(' ').next().unwrap().to_owned()))
        .collect()
}

fn golden_mission() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> Result<(String, Value, f64), String> {
        let (log, report) = (dir.path().join(format!("{tag}.evlog")), dir.path().join(format!("{tag}.json")));
        let started = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_swarmsim"))
            .arg("run")
            .arg(scenarios().join("demo10.scn"))
            .args(["--seed", "42", "--loss-base", "0", "--log"])
            .arg(&log)
            .arg("--report")
            .arg(&report)
            .output()
            .map_err(|e| e.to_string())?;
        let wall = started.elapsed().as_secs_f64();
        ensure(out.status.success(), || format!("exit {}: {}", out.status, String::from_utf8_lossy(&out.stderr)))?;
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| e.to_string());
        let report: Value = serde_json::from_str(&read(&report)?).map_err(|e| e.to_string())?;
        Ok((read(&log)?, report, wall))
    };
    let (log_a, report, wall_a) = run("a")?;
    let (log_b, _, wall_b) = run("b")?;

    ensure(log_a == log_b, || "event logs differ between two runs".into())?;
    ensure(report["outcome"] == "Complete", || format!("outcome {}", report["outcome"]))?;
    let mut tasks = 0;
    for (swarm, list) in report["per_swarm"].as_object().unwrap() {
        for t in list.as_array().unwrap() {
            tasks += 1;
            ensure(t["actual"] == t["desired"], || format!("{swarm} {}: {}/{}", t["task"], t["actual"], t["desired"]))?;
        }
    }
    ensure(tasks == 12, || format!("{tasks} tasks in the report"))?;
    let expected: Vec<String> = Phase::ALL.iter().map(|p| p.name().to_owned()).collect();
    let got = phases_in(&log_a);
    ensure(got == expected, || format!("phase sequence {got:?}"))?;
    let wall = wall_a.max(wall_b);
    ensure(wall < 30.0, || format!("wall-clock {wall:.2} s"))?;
    Ok(format!("Complete, 12/12 tasks met, logs identical ({} bytes), wall-clock {wall:.2} s", log_a.len()))
}

// ---------------------------------------------------------------------------

fn fig6_reconstruction() -> Verdict {
    // One detector failure in swarm-1, one GPS failure in swarm-2, two
    // drones in swarm-3 that never take off.
    let faults: Vec<Fault> =
        ["SensorBlind:d1", "NavFault:d4", "NoTakeoff:d9", "NoTakeoff:d10"].iter().map(|f| f.parse().unwrap()).collect();
    let want = [
        ("swarm-1", "detect person", 2, 3),
        ("swarm-1", "follow without loss", 2, 3),
        ("swarm-2", "reach GPS point", 3, 4),
        ("swarm-2", "track car", 3, 4),
        ("swarm-3", "receive TAKEOFF", 1, 3),
    ];
    let seeds = [42, 1, 2, 3, 4, 5, 6, 7, 8, 9];
    for seed in seeds {
        let (_, report) = simulate(SimConfig::new(demo(0.0)).with_seed(seed).with_faults(faults.clone()));
        for (swarm, task, actual, desired) in want {
            let t = report.task(swarm, task).ok_or_else(|| format!("no task {swarm}/{task}"))?;
            ensure((t.actual, t.desired) == (actual, desired), || {
                format!("seed {seed}: {swarm} {task} {}/{} (want {actual}/{desired})", t.actual, t.desired)
            })?;
        }
    }
    Ok(format!("swarm-1 2/3, swarm-2 3/4, swarm-3 takeoff 1/3 on {} seeds", seeds.len()))
}

// ---------------------------------------------------------------------------

fn follow_fidelity() -> Verdict {
    let mut worst = [0.0f64; 2];
    for (i, (wind, bound)) in [(0.0, 0.5), (3.0, 1.5)].into_iter().enumerate() {
        let spec = loops::follow_scenario(wind);
        for seed in 1..=5 {
            let w = loops::worst_after(&loops::fly_follow(&spec, 90.0, seed), 30.0);
            ensure(w <= bound, || format!("wind {wind} m/s, seed {seed}: |R-R0| reached {w:.3} m after 30 s"))?;
            worst[i] = worst[i].max(w);
        }
    }
    Ok(format!("worst |R-R0| after 30 s: {:.3} m calm, {:.3} m in 3 m/s wind", worst[0], worst[1]))
}

fn tracking_fidelity() -> Verdict {
    let spec = loops::track_scenario();
    let m = &spec.mission;
    let mut slowest = 0.0f64;
    for (k, b) in loops::bearing_grid(m.rgb_fov()).enumerate() {
        slowest = slowest.max(loops::check_track(&spec, b, k as u64)?);
    }
    for k in 0..36 {
        let cx = (k as f64 + 0.5) / 36.0;
        let rate = swarmsim::control::centering_yaw_rate(cx, m.center_threshold(), m.yaw_gain());
        let err = cx - 0.5;
        let ok = if err.abs() > m.center_threshold() { rate * err < 0.0 } else { rate == 0.0 };
        ensure(ok, || format!("cx={cx:.3}: yaw rate {rate}"))?;
    }
    Ok(format!("36/36 bearings centered, slowest {slowest:.2} s; yaw opposes error at 36/36 offsets"))
}

// ---------------------------------------------------------------------------

fn network_calibration() -> Verdict {
    let (lb, k, range) = (0.1, 2.0, 250.0);
    let mut worst = 0.0f64;
    for (i, d) in [0.0, 60.0, 120.0, 180.0, 240.0].into_iter().enumerate() {
        let expected = netcal::model_loss(lb, k, range, d);
        let topo = netcal::topo(&[("a", 0.0), ("b", d)]);
        let got = netcal::empirical_loss(netcal::params(lb, k, false), &topo, &["a", "b"], 100 + i as u64);
        ensure((got - expected).abs() <= 0.02, || format!("d={d}: empirical {got:.4} vs model {expected:.4}"))?;
        worst = worst.max((got - expected).abs());
    }
    let (violations, longest) = netcal::starvation_run(3);
    ensure(violations == 0, || format!("{violations} strategic messages sent after later tactical ones"))?;
    ensure(longest > 5, || format!("link never saturated (longest wait {longest} ticks)"))?;
    Ok(format!("max |empirical-model| {worst:.4} over 5x{}; 0 starvation violations under saturation", netcal::TRIALS))
}

// ---------------------------------------------------------------------------

/// Unique message ids per priority, from the raw log lines.
fn unique_sent(log: &EventLog) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in log.of_kind(EventKind::MessageSent) {
        let (Some(id), Some(pri)) = (r.field("id"), r.field("pri")) else { continue };
        out.entry(pri.to_owned()).or_default().insert(id.to_owned());
    }
    out
}

fn message_sparsity() -> Verdict {
    let (log, report) = simulate(SimConfig::new(demo(0.0)).with_seed(42));
    ensure(report.outcome == Outcome::Complete, || format!("fault-free demo ended {:?}", report.outcome))?;
    let sent = unique_sent(&log);
    let duration = log.duration();
    let rate = |p: &str| sent.get(p).map_or(0, BTreeSet::len) as f64 / duration;
    let (tac, strat) = (rate("T"), rate("S"));
    ensure((0.005..=0.05).contains(&tac), || format!("tactical {tac:.4} Hz"))?;
    ensure((0.002..=0.02).contains(&strat), || format!("strategic {strat:.4} Hz"))?;
    Ok(format!("tactical {tac:.4} Hz, strategic {strat:.4} Hz over {duration:.1} s"))
}

// ---------------------------------------------------------------------------

/// Distinct ARM messages addressed to swarm-3: (sent, delivered to anyone).
fn handoff_arms(records: &[EventRecord]) -> (usize, usize) {
    let ids = |kind| {
        records
            .iter()
            .filter(|r| r.kind == kind && r.field("cmd") == Some("ARM") && r.field("to") == Some("swarm-3"))
            .filter_map(|r| r.field("id"))
            .collect::<BTreeSet<_>>()
            .len()
    };
    (ids(EventKind::MessageSent), ids(EventKind::MessageDelivered))
}

fn handoff_exactly_once() -> Verdict {
    let runs = par_seeds(0..100, |seed| {
        let mut spec = demo(0.1);
        spec.network_params.relay_enabled = true;
        let (log, report) = simulate(SimConfig::new(spec).with_seed(seed));
        (seed, report.outcome, handoff_arms(&log.records))
    });
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for (seed, outcome, (sent, delivered)) in runs {
        *tally.entry(outcome.name()).or_default() += 1;
        ensure(sent <= 1 && delivered <= 1, || format!("seed {seed}: ARM to swarm-3 sent {sent}x, delivered {delivered}x"))?;
        match outcome {
            Outcome::Complete => ensure(delivered == 1, || format!("seed {seed}: Complete with {delivered} delivered ARMs"))?,
            _ if sent == 1 && delivered == 0 => {
                ensure(outcome == Outcome::Partial, || format!("seed {seed}: handoff lost but outcome {outcome:?}"))?
            }
            _ => {}
        }
    }
    ensure(tally.get("Complete").copied().unwrap_or(0) > 0, || "no Complete runs at all".into())?;
    Ok(format!("100 seeds at loss 0.1: {tally:?}; never more than one ARM to swarm-3"))
}

// ---------------------------------------------------------------------------

fn gateway_land_at_120() -> Result<Vec<EventRecord>, String> {
    let sim = Simulation::new(SimConfig::new(demo(0.0)).with_seed(42)).map_err(|e| e.to_string())?;
    let handle = gateway_serve(sim, ServeOptions { port: 0, speed: 0.0, start_paused: true, telemetry_rate: None })
        .map_err(|e| e.to_string())?;
    let (mut ws, _) = tungstenite::connect(format!("ws://{}", handle.addr)).map_err(|e| e.to_string())?;
    let mut next = || -> Result<Value, String> {
        loop {
            match ws.read().map_err(|e| e.to_string())? {
                Message::Text(t) => return serde_json::from_str(&t).map_err(|e| e.to_string()),
                Message::Close(_) => return Err("socket closed".into()),
                _ => {}
            }
        }
    };
    ensure(next()?["type"] == "hello", || "no hello frame".into())?;
    drop(next);
    let send = |ws: &mut tungstenite::WebSocket<_>, v: Value| ws.send(Message::Text(v.to_string())).map_err(|e| e.to_string());
    send(&mut ws, serde_json::json!({"type": "cmd", "name": "LAND", "target": "swarm-1", "at": 120, "id": 1}))?;
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut acked = false;
    let mut ended = false;
    while !ended && Instant::now() < deadline {
        let Message::Text(t) = ws.read().map_err(|e| e.to_string())? else { continue };
        let v: Value = serde_json::from_str(&t).map_err(|e| e.to_string())?;
        match v["type"].as_str() {
            Some("ack") if v["id"] == 1 => {
                ensure(v["at"] == 120.0, || format!("ack at {}", v["at"]))?;
                acked = true;
                send(&mut ws, serde_json::json!({"type": "cmd", "name": "Resume", "id": 2}))?;
            }
            Some("err") => return Err(format!("gateway error: {t}")),
            Some("end") => ended = true,
            _ => {}
        }
    }
    ensure(acked && ended, || format!("acked={acked} ended={ended} before the deadline"))?;
    let (log, _) = handle.wait().map_err(|e| e.to_string())?.ok_or("run did not finish")?;
    Ok(log.records)
}

fn live_command_equivalence() -> Verdict {
    let live = gateway_land_at_120()?;
    let scripted_text = demo_text().replace("[script]\n", "[script]\nat 120s base LAND swarm-1\n");
    let (scripted, _) = simulate(SimConfig::new(parse_scenario(&scripted_text).unwrap()).with_seed(42));
    let scripted = scripted.records;
    let suffix = |r: &[EventRecord]| r.iter().filter(|x| x.time >= 120.0).map(ToString::to_string).collect::<Vec<_>>();
    let (a, b) = (suffix(&live), suffix(&scripted));
    if let Some(i) = (0..a.len().max(b.len())).find(|&i| a.get(i) != b.get(i)) {
        return Err(format!("suffixes diverge at record {i}: live {:?} vs scripted {:?}", a.get(i), b.get(i)));
    }
    ensure(live == scripted, || "records before t=120 differ".into())?;
    let rtb = live
        .iter()
        .filter(|r| r.time >= 120.0 && r.kind == EventKind::StateTransition && r.field("to") == Some("ReturningToBase"))
        .count();
    ensure(rtb >= 3, || format!("only {rtb} drones returned after the LAND"))?;
    Ok(format!("{} records from t=120 s identical (whole log identical, {} records)", a.len(), live.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("golden mission reproduction", golden_mission),
        ("fault-injected desired-vs-actual", fig6_reconstruction),
        ("follow-law fidelity", follow_fidelity),
        ("tracking fidelity", tracking_fidelity),
        ("network calibration", network_calibration),
        ("message sparsity", message_sparsity),
        ("handoff exactly-once", handoff_exactly_once),
        ("live-command equivalence", live_command_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let verdict = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(msg) => println!("PASS [{}] {name}: {msg} ({secs:.1} s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{}] {name}: {msg} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
