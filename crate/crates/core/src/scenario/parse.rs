//! Reader and writer for the sectioned `.scn` scenario format.
//!
//! ```text
//! # comment
//! [world]
//! extent = -200 -200 200 200
//! timestep = 0.05
//! [entity d1]
//! kind = Drone
//! pose = 0 0 0 0
//! [swarm swarm-1]
//! role = SearchFollow
//! drones = d1
//! [script]
//! at 10s p1 WalkTo 20,0 1.2
//! on Arrived c1 StopCar
//! ```

use std::fmt::Write as _;

use crate::geometry::{Extent, Pose, Vec3};
use crate::ids::{EntityId, SwarmId};

use super::types::*;
use super::{validate_scenario, ScenarioError};

#[derive(Debug)]
enum Section {
    None,
    World,
    Entity(usize),
    Swarm(usize),
    Script,
    Network,
    Mission,
}

/// A reference recorded during parsing and resolved once the whole file has
/// been read, so sections may appear in any order.
#[derive(Debug)]
enum PendingRef {
    Entity { id: EntityId, line: usize },
    Target { raw: String, script_index: usize, line: usize },
}

struct Parser {
    spec: ScenarioSpec,
    refs: Vec<PendingRef>,
    seen_world: bool,
}

fn syntax(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Syntax { line, message: message.into() }
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64, ScenarioError> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| syntax(line, format!("expected number for {what}, found `{tok}`")))
}

fn parse_numbers(value: &str, n: usize, line: usize, what: &str) -> Result<Vec<f64>, ScenarioError> {
    let toks: Vec<&str> = value.split_whitespace().collect();
    if toks.len() != n {
        return Err(syntax(line, format!("{what} expects {n} numbers, found {}", toks.len())));
    }
    toks.iter().map(|t| parse_f64(t, line, what)).collect()
}

fn parse_point(tok: &str, line: usize) -> Result<Vec3, ScenarioError> {
    let parts: Vec<&str> = tok.split(',').collect();
    match parts.as_slice() {
        [x, y] => Ok(Vec3::new(parse_f64(x, line, "point")?, parse_f64(y, line, "point")?, 0.0)),
        [x, y, z] => Ok(Vec3::new(
            parse_f64(x, line, "point")?,
            parse_f64(y, line, "point")?,
            parse_f64(z, line, "point")?,
        )),
        _ => Err(syntax(line, format!("malformed point `{tok}` (expected x,y or x,y,z)"))),
    }
}

fn parse_point2(tok: &str, line: usize) -> Result<(f64, f64), ScenarioError> {
    let p = parse_point(tok, line)?;
    if tok.split(',').count() != 2 {
        return Err(syntax(line, format!("expected planar point x,y, found `{tok}`")));
    }
    Ok((p.x, p.y))
}

fn default_spec() -> ScenarioSpec {
    ScenarioSpec {
        world_extent: Extent { min_x: -200.0, min_y: -200.0, max_x: 200.0, max_y: 200.0 },
        timestep: 0.05,
        duration_limit: 900.0,
        rng_seed: 0,
        wind: WindSpec { mean: (0.0, 0.0), gust_amplitude: 0.0, gust_period: 10.0 },
        sun_azimuth: None,
        entities: Vec::new(),
        swarms: Vec::new(),
        script: Vec::new(),
        network_params: NetworkSpec::default(),
        mission: MissionSpec::default(),
    }
}

impl Parser {
    fn header(&mut self, text: &str, line: usize) -> Result<Section, ScenarioError> {
        let inner = text
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .ok_or_else(|| syntax(line, "unterminated section header"))?;
        let mut parts = inner.split_whitespace();
        let name = parts.next().unwrap_or("");
        let arg = parts.next();
        if parts.next().is_some() {
            return Err(syntax(line, "section header takes at most one argument"));
        }
        let need_arg = || arg.ok_or_else(|| syntax(line, format!("section `{name}` needs an id")));
        let no_arg = |arg: Option<&str>| match arg {
            Some(_) => Err(syntax(line, format!("section `{name}` takes no id"))),
            None => Ok(()),
        };
        Ok(match name {
            "world" => {
                no_arg(arg)?;
                self.seen_world = true;
                Section::World
            }
            "entity" => {
                let id = need_arg()?;
                self.spec.entities.push(EntitySpec {
                    id: EntityId::new(id),
                    kind: EntityKind::Obstacle,
                    spawn_pose: Pose::default(),
                    max_speed: 0.0,
                });
                Section::Entity(self.spec.entities.len() - 1)
            }
            "swarm" => {
                let id = need_arg()?;
                self.spec.swarms.push(SwarmSpec {
                    id: SwarmId::new(id),
                    drone_ids: Vec::new(),
                    role: SwarmRole::SearchFollow,
                    waypoints: Vec::new(),
                    activation: Activation::AtStart,
                    d0: None,
                    r0: None,
                    center_threshold: None,
                    follow_speed_cap: None,
                });
                Section::Swarm(self.spec.swarms.len() - 1)
            }
            "script" => {
                no_arg(arg)?;
                Section::Script
            }
            "network" => {
                no_arg(arg)?;
                Section::Network
            }
            "mission" => {
                no_arg(arg)?;
                Section::Mission
            }
            other => return Err(syntax(line, format!("unknown section `{other}`"))),
        })
    }

    fn world_key(&mut self, key: &str, value: &str, line: usize) -> Result<(), ScenarioError> {
        let s = &mut self.spec;
        match key {
            "extent" => {
                let v = parse_numbers(value, 4, line, key)?;
                s.world_extent = Extent { min_x: v[0], min_y: v[1], max_x: v[2], max_y: v[3] };
            }
            "timestep" => s.timestep = parse_f64(value, line, key)?,
            "duration_limit" => s.duration_limit = parse_f64(value, line, key)?,
            "seed" => {
                s.rng_seed = value
                    .parse()
                    .map_err(|_| syntax(line, format!("expected unsigned integer seed, found `{value}`")))?
            }
            "wind_mean" => {
                let v = parse_numbers(value, 2, line, key)?;
                s.wind.mean = (v[0], v[1]);
            }
            "wind_gust" => {
                let v = parse_numbers(value, 2, line, key)?;
                s.wind.gust_amplitude = v[0];
                s.wind.gust_period = v[1];
            }
            "sun_azimuth" => s.sun_azimuth = Some(parse_f64(value, line, key)?),
            other => return Err(syntax(line, format!("unknown [world] key `{other}`"))),
        }
        Ok(())
    }

    fn entity_key(&mut self, idx: usize, key: &str, value: &str, line: usize) -> Result<(), ScenarioError> {
        let e = &mut self.spec.entities[idx];
        match key {
            "kind" => e.kind = value.parse().map_err(|m: String| syntax(line, m))?,
            "pose" => {
                let v = parse_numbers(value, 4, line, key)?;
                e.spawn_pose = Pose::new(v[0], v[1], v[2], v[3]);
            }
            "max_speed" => e.max_speed = parse_f64(value, line, key)?,
            other => return Err(syntax(line, format!("unknown [entity] key `{other}`"))),
        }
        Ok(())
    }

    fn swarm_key(&mut self, idx: usize, key: &str, value: &str, line: usize) -> Result<(), ScenarioError> {
        let sw = &mut self.spec.swarms[idx];
        match key {
            "role" => sw.role = value.parse().map_err(|m: String| syntax(line, m))?,
            "drones" => {
                for tok in value.split_whitespace() {
                    let id = EntityId::new(tok);
                    self.refs.push(PendingRef::Entity { id: id.clone(), line });
                    sw.drone_ids.push(id);
                }
            }
            "waypoints" => {
                sw.waypoints = value
                    .split_whitespace()
                    .map(|t| parse_point(t, line))
                    .collect::<Result<_, _>>()?;
            }
            "activation" => {
                let toks: Vec<&str> = value.split_whitespace().collect();
                sw.activation = match toks.as_slice() {
                    ["AtStart"] => Activation::AtStart,
                    ["OnStrategicEvent", ev] => {
                        Activation::OnStrategicEvent(ev.parse().map_err(|m: String| syntax(line, m))?)
                    }
                    _ => return Err(syntax(line, format!("malformed activation `{value}`"))),
                };
            }
            "d0" => sw.d0 = Some(parse_f64(value, line, key)?),
            "r0" => sw.r0 = Some(parse_f64(value, line, key)?),
            "center_threshold" => sw.center_threshold = Some(parse_f64(value, line, key)?),
            "follow_speed_cap" => sw.follow_speed_cap = Some(parse_f64(value, line, key)?),
            other => return Err(syntax(line, format!("unknown [swarm] key `{other}`"))),
        }
        Ok(())
    }

    fn network_key(&mut self, key: &str, value: &str, line: usize) -> Result<(), ScenarioError> {
        let n = &mut self.spec.network_params;
        let int = |v: &str| -> Result<u32, ScenarioError> {
            v.parse().map_err(|_| syntax(line, format!("expected unsigned integer for {key}, found `{v}`")))
        };
        match key {
            "comm_range" => n.comm_range = parse_f64(value, line, key)?,
            "loss_base" => n.loss_base = parse_f64(value, line, key)?,
            "loss_exponent" => n.loss_range_exponent = parse_f64(value, line, key)?,
            "bandwidth" => n.bandwidth = int(value)?,
            "latency" => n.latency = int(value)?,
            "relay" => {
                n.relay_enabled = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(syntax(line, format!("expected true/false, found `{other}`"))),
                }
            }
            "gcs_range" => n.gcs_range = parse_f64(value, line, key)?,
            other => return Err(syntax(line, format!("unknown [network] key `{other}`"))),
        }
        Ok(())
    }

    fn mission_key(&mut self, key: &str, value: &str, line: usize) -> Result<(), ScenarioError> {
        let v = parse_f64(value, line, key)?;
        match self.spec.mission.slot_mut(key) {
            Some(slot) => {
                *slot = Some(v);
                Ok(())
            }
            None => Err(syntax(line, format!("unknown [mission] key `{key}`"))),
        }
    }

    fn script_line(&mut self, text: &str, line: usize) -> Result<(), ScenarioError> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(syntax(line, "script line needs `at <t>s <entity> <action>` or `on <event> <entity> <action>`"));
        }
        let when = match toks[0] {
            "at" => {
                let t = toks[1]
                    .strip_suffix('s')
                    .ok_or_else(|| syntax(line, format!("time `{}` must end in `s`", toks[1])))?;
                ScriptWhen::At(parse_f64(t, line, "time")?)
            }
            "on" => ScriptWhen::On(toks[1].parse().map_err(|m: String| syntax(line, m))?),
            other => return Err(syntax(line, format!("script line must start with `at` or `on`, found `{other}`"))),
        };
        let entity = EntityId::new(toks[2]);
        self.refs.push(PendingRef::Entity { id: entity.clone(), line });
        let args = &toks[4..];
        let want = |n: usize| -> Result<(), ScenarioError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(syntax(line, format!("{} expects {n} argument(s), found {}", toks[3], args.len())))
            }
        };
        let script_index = self.spec.script.len();
        let action = match toks[3] {
            "WalkTo" => {
                want(2)?;
                ScriptAction::WalkTo { to: parse_point2(args[0], line)?, speed: parse_f64(args[1], line, "speed")? }
            }
            "EnterCar" => {
                want(1)?;
                let car = EntityId::new(args[0]);
                self.refs.push(PendingRef::Entity { id: car.clone(), line });
                ScriptAction::EnterCar { car }
            }
            "DriveRoute" => {
                if args.len() < 2 {
                    return Err(syntax(line, "DriveRoute expects a speed and at least one point"));
                }
                let speed = parse_f64(args[0], line, "speed")?;
                let waypoints = args[1..].iter().map(|t| parse_point2(t, line)).collect::<Result<_, _>>()?;
                ScriptAction::DriveRoute { waypoints, speed }
            }
            "StopCar" => {
                want(0)?;
                ScriptAction::StopCar
            }
            "ExitCar" => {
                want(0)?;
                ScriptAction::ExitCar
            }
            "Idle" => {
                want(0)?;
                ScriptAction::Idle
            }
            "ARM" | "LAND" | "RTB" => {
                want(1)?;
                self.refs.push(PendingRef::Target { raw: args[0].to_owned(), script_index, line });
                // Placeholder target; resolved in `resolve_refs`.
                let t = CommandTarget::Team;
                ScriptAction::Operator(match toks[3] {
                    "ARM" => OperatorCommand::Arm(t),
                    "LAND" => OperatorCommand::Land(t),
                    _ => OperatorCommand::Rtb(t),
                })
            }
            "GOTO" => {
                want(2)?;
                let drone = EntityId::new(args[0]);
                self.refs.push(PendingRef::Entity { id: drone.clone(), line });
                ScriptAction::Operator(OperatorCommand::Goto(drone, parse_point(args[1], line)?))
            }
            "MissionEnd" => {
                want(0)?;
                ScriptAction::Operator(OperatorCommand::MissionEnd)
            }
            other => return Err(syntax(line, format!("unknown script action `{other}`"))),
        };
        self.spec.script.push(ScriptedAction { when, entity, action });
        Ok(())
    }

    fn resolve_refs(&mut self) -> Result<(), ScenarioError> {
        for r in std::mem::take(&mut self.refs) {
            match r {
                PendingRef::Entity { id, line } => {
                    if self.spec.entity(&id).is_none() {
                        return Err(ScenarioError::UnknownReference { id: id.0, line });
                    }
                }
                PendingRef::Target { raw, script_index, line } => {
                    let target = resolve_target(&self.spec, &raw)
                        .ok_or(ScenarioError::UnknownReference { id: raw, line })?;
                    if let ScriptAction::Operator(
                        OperatorCommand::Arm(t) | OperatorCommand::Land(t) | OperatorCommand::Rtb(t),
                    ) = &mut self.spec.script[script_index].action
                    {
                        *t = target;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Resolves `team`, a swarm id, or a drone id into a command target.
pub fn resolve_target(spec: &ScenarioSpec, raw: &str) -> Option<CommandTarget> {
    if raw == "team" {
        return Some(CommandTarget::Team);
    }
    if let Some(sw) = spec.swarms.iter().find(|s| s.id.as_str() == raw) {
        return Some(CommandTarget::Swarm(sw.id.clone()));
    }
    spec.entities
        .iter()
        .find(|e| e.id.as_str() == raw && e.kind == EntityKind::Drone)
        .map(|e| CommandTarget::Drone(e.id.clone()))
}

/// Parses scenario text, resolves cross references and validates invariants.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let mut p = Parser { spec: default_spec(), refs: Vec::new(), seen_world: false };
    let mut section = Section::None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = p.header(content, line)?;
            continue;
        }
        if let Section::Script = section {
            p.script_line(content, line)?;
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| syntax(line, "expected `key = value`"))?;
        match section {
            Section::None => return Err(syntax(line, "key outside of any section")),
            Section::World => p.world_key(key, value, line)?,
            Section::Entity(idx) => p.entity_key(idx, key, value, line)?,
            Section::Swarm(idx) => p.swarm_key(idx, key, value, line)?,
            Section::Network => p.network_key(key, value, line)?,
            Section::Mission => p.mission_key(key, value, line)?,
            Section::Script => unreachable!(),
        }
    }
    if !p.seen_world {
        return Err(syntax(1, "missing [world] section"));
    }
    p.resolve_refs()?;
    let violations = validate_scenario(&p.spec);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations));
    }
    Ok(p.spec)
}

fn fmt_action(out: &mut String, a: &ScriptAction) {
    match a {
        ScriptAction::WalkTo { to, speed } => {
            let _ = write!(out, "WalkTo {},{} {}", to.0, to.1, speed);
        }
        ScriptAction::EnterCar { car } => {
            let _ = write!(out, "EnterCar {car}");
        }
        ScriptAction::DriveRoute { waypoints, speed } => {
            let _ = write!(out, "DriveRoute {speed}");
            for (x, y) in waypoints {
                let _ = write!(out, " {x},{y}");
            }
        }
        ScriptAction::StopCar => out.push_str("StopCar"),
        ScriptAction::ExitCar => out.push_str("ExitCar"),
        ScriptAction::Idle => out.push_str("Idle"),
        ScriptAction::Operator(cmd) => match cmd {
            OperatorCommand::Arm(t) | OperatorCommand::Land(t) | OperatorCommand::Rtb(t) => {
                let _ = write!(out, "{} {t}", cmd.name());
            }
            OperatorCommand::Goto(d, p) => {
                let _ = write!(out, "GOTO {d} {}", fmt_point(*p));
            }
            OperatorCommand::MissionEnd => out.push_str("MissionEnd"),
        },
    }
}

/// Writes a scenario back into the text format accepted by [`parse_scenario`].
pub fn serialize_scenario(spec: &ScenarioSpec) -> String {
    let mut o = String::new();
    let e = &spec.world_extent;
    let _ = writeln!(o, "[world]");
    let _ = writeln!(o, "extent = {} {} {} {}", e.min_x, e.min_y, e.max_x, e.max_y);
    let _ = writeln!(o, "timestep = {}", spec.timestep);
    let _ = writeln!(o, "duration_limit = {}", spec.duration_limit);
    let _ = writeln!(o, "seed = {}", spec.rng_seed);
    let _ = writeln!(o, "wind_mean = {} {}", spec.wind.mean.0, spec.wind.mean.1);
    let _ = writeln!(o, "wind_gust = {} {}", spec.wind.gust_amplitude, spec.wind.gust_period);
    if let Some(az) = spec.sun_azimuth {
        let _ = writeln!(o, "sun_azimuth = {az}");
    }
    for ent in &spec.entities {
        let p = &ent.spawn_pose;
        let _ = writeln!(o, "\n[entity {}]", ent.id);
        let _ = writeln!(o, "kind = {}", ent.kind.name());
        let _ = writeln!(o, "pose = {} {} {} {}", p.position.x, p.position.y, p.position.z, p.yaw);
        let _ = writeln!(o, "max_speed = {}", ent.max_speed);
    }
    for sw in &spec.swarms {
        let _ = writeln!(o, "\n[swarm {}]", sw.id);
        let _ = writeln!(o, "role = {}", sw.role.name());
        let ids: Vec<&str> = sw.drone_ids.iter().map(|d| d.as_str()).collect();
        let _ = writeln!(o, "drones = {}", ids.join(" "));
        if !sw.waypoints.is_empty() {
            let pts: Vec<String> = sw.waypoints.iter().map(|p| fmt_point(*p)).collect();
            let _ = writeln!(o, "waypoints = {}", pts.join(" "));
        }
        match sw.activation {
            Activation::AtStart => {
                let _ = writeln!(o, "activation = AtStart");
            }
            Activation::OnStrategicEvent(k) => {
                let _ = writeln!(o, "activation = OnStrategicEvent {k}");
            }
        }
        for (key, v) in [
            ("d0", sw.d0),
            ("r0", sw.r0),
            ("center_threshold", sw.center_threshold),
            ("follow_speed_cap", sw.follow_speed_cap),
        ] {
            if let Some(v) = v {
                let _ = writeln!(o, "{key} = {v}");
            }
        }
    }
    let _ = writeln!(o, "\n[script]");
    for act in &spec.script {
        match act.when {
            ScriptWhen::At(t) => {
                let _ = write!(o, "at {t}s {} ", act.entity);
            }
            ScriptWhen::On(trig) => {
                let _ = write!(o, "on {} {} ", trig.name(), act.entity);
            }
        }
        fmt_action(&mut o, &act.action);
        o.push('\n');
    }
    let n = &spec.network_params;
    let _ = writeln!(o, "\n[network]");
    let _ = writeln!(o, "comm_range = {}", n.comm_range);
    let _ = writeln!(o, "loss_base = {}", n.loss_base);
    let _ = writeln!(o, "loss_exponent = {}", n.loss_range_exponent);
    let _ = writeln!(o, "bandwidth = {}", n.bandwidth);
    let _ = writeln!(o, "latency = {}", n.latency);
    let _ = writeln!(o, "relay = {}", n.relay_enabled);
    let _ = writeln!(o, "gcs_range = {}", n.gcs_range);
    let _ = writeln!(o, "\n[mission]");
    for (k, v) in spec.mission.entries() {
        let _ = writeln!(o, "{k} = {v}");
    }
    o
}
