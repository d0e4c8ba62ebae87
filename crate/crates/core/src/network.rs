//! Simulated ad-hoc network: range-limited links, distance-dependent loss,
//! per-link bandwidth with strict priority, fixed latency and multi-hop relay.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use petgraph::algo::astar;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GpsPoint, Vec3};
use crate::ids::{DroneId, EntityId, SwarmId};
use crate::perception::TargetClass;
use crate::scenario::NetworkSpec;

/// Node id of the ground control station.
pub const GCS: &str = "gcs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    Operational,
    Tactical,
    Strategic,
}

impl Priority {
    pub fn letter(self) -> char {
        match self {
            Priority::Operational => 'O',
            Priority::Tactical => 'T',
            Priority::Strategic => 'S',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Recipients {
    Drone(DroneId),
    Swarm(SwarmId),
    Team,
}

impl fmt::Display for Recipients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipients::Drone(d) => write!(f, "{d}"),
            Recipients::Swarm(s) => write!(f, "{s}"),
            Recipients::Team => f.write_str("team"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Command {
    Arm,
    Takeoff,
    Land,
    Rtb,
    /// `None` means each recipient's predefined waypoint.
    Goto(Option<GpsPoint>),
    Track(TargetClass),
    Follow(TargetClass),
    MissionEnd,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Arm => "ARM",
            Command::Takeoff => "TAKEOFF",
            Command::Land => "LAND",
            Command::Rtb => "RTB",
            Command::Goto(_) => "GOTO",
            Command::Track(_) => "TRACK",
            Command::Follow(_) => "FOLLOW",
            Command::MissionEnd => "MissionEnd",
        }
    }

    pub fn args(&self) -> String {
        match self {
            Command::Goto(Some(p)) => format!("{:.2},{:.2},{:.2}", p.x, p.y, p.z),
            Command::Track(c) | Command::Follow(c) => c.name().to_owned(),
            _ => "-".to_owned(),
        }
    }

    pub fn size(&self) -> u32 {
        match self {
            Command::Goto(Some(_)) => 56,
            _ => 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmMessage {
    pub id: u64,
    pub priority: Priority,
    pub sender: EntityId,
    pub recipients: Recipients,
    pub command: Command,
    pub sent_at: f64,
    pub size: u32,
}

impl SwarmMessage {
    pub fn new(id: u64, priority: Priority, sender: EntityId, recipients: Recipients, command: Command, sent_at: f64) -> Self {
        Self { id, priority, sender, recipients, command, sent_at, size: command.size() }
    }

    /// Canonical line form used in the event log.
    pub fn canonical(&self) -> String {
        format!(
            "t={:.2} pri={} from={} to={} cmd={} args={}",
            self.sent_at,
            self.priority.letter(),
            self.sender,
            self.recipients,
            self.command.name(),
            self.command.args()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub comm_range: f64,
    pub loss_base: f64,
    pub loss_range_exponent: f64,
    /// Bytes per tick per link.
    pub bandwidth: u32,
    /// Ticks between transmission and arrival.
    pub latency: u32,
    pub relay_enabled: bool,
    pub gcs_range: f64,
}

impl From<&NetworkSpec> for NetworkParams {
    fn from(n: &NetworkSpec) -> Self {
        Self {
            comm_range: n.comm_range,
            loss_base: n.loss_base,
            loss_range_exponent: n.loss_range_exponent,
            bandwidth: n.bandwidth,
            latency: n.latency,
            relay_enabled: n.relay_enabled,
            gcs_range: n.gcs_range,
        }
    }
}

impl NetworkParams {
    fn node_range(&self, id: &EntityId) -> f64 {
        if id.as_str() == GCS {
            self.gcs_range
        } else {
            self.comm_range
        }
    }

    /// Range of the link between two nodes: the stronger radio wins.
    pub fn link_range(&self, a: &EntityId, b: &EntityId) -> f64 {
        self.node_range(a).max(self.node_range(b))
    }

    /// Per-hop drop probability at distance `d` on a link of range `range`.
    pub fn loss_probability(&self, d: f64, range: f64) -> f64 {
        let lb = self.loss_base;
        (lb + (1.0 - lb) * (d / range).powf(self.loss_range_exponent)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub endpoints: (EntityId, EntityId),
    pub distance: f64,
    pub up: bool,
}

/// Node positions keyed by node id.
pub type Topology = BTreeMap<EntityId, Vec3>;

/// One link state per unordered node pair, in id order.
pub fn connectivity(topology: &Topology, params: &NetworkParams) -> Vec<LinkState> {
    let nodes: Vec<_> = topology.iter().collect();
    let mut out = Vec::with_capacity(nodes.len() * nodes.len().saturating_sub(1) / 2);
    for (i, (a, pa)) in nodes.iter().enumerate() {
        for (b, pb) in &nodes[i + 1..] {
            let distance = pa.distance(**pb);
            out.push(LinkState {
                endpoints: ((*a).clone(), (*b).clone()),
                distance,
                up: distance <= params.link_range(a, b),
            });
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("unknown recipient `{0}`")]
    UnknownRecipient(String),
    #[error("unknown sender `{0}`")]
    UnknownSender(EntityId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    NoRoute,
    Loss,
    /// Discarded at the receiver by an injected fault.
    RxFault,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::NoRoute => "no-route",
            DropReason::Loss => "loss",
            DropReason::RxFault => "rx-fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub message: SwarmMessage,
    pub recipient: DroneId,
    pub reason: DropReason,
}

/// Outcome of one network tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    /// Messages arriving this tick, per recipient.
    pub delivered: BTreeMap<DroneId, Vec<SwarmMessage>>,
    pub dropped: Vec<Dropped>,
    /// (message id, recipient) pairs put on the air this tick.
    pub transmitted: Vec<(u64, DroneId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    seq: u64,
    message: SwarmMessage,
    recipient: DroneId,
}

/// Network state carried between ticks: the deferred queue and messages in
/// flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub params: NetworkParams,
    rosters: BTreeMap<SwarmId, Vec<DroneId>>,
    team: Vec<DroneId>,
    queue: Vec<Pending>,
    in_flight: VecDeque<(u64, SwarmMessage, DroneId)>,
    seq: u64,
}

impl Network {
    pub fn new(params: NetworkParams, rosters: BTreeMap<SwarmId, Vec<DroneId>>) -> Self {
        let team: BTreeSet<DroneId> = rosters.values().flatten().cloned().collect();
        Self { params, rosters, team: team.into_iter().collect(), queue: Vec::new(), in_flight: VecDeque::new(), seq: 0 }
    }

    /// Messages waiting for bandwidth.
    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn expand(&self, msg: &SwarmMessage) -> Result<Vec<DroneId>, NetworkError> {
        let mut out = match &msg.recipients {
            Recipients::Drone(d) => {
                if !self.team.contains(d) {
                    return Err(NetworkError::UnknownRecipient(d.to_string()));
                }
                vec![d.clone()]
            }
            Recipients::Swarm(s) => {
                self.rosters.get(s).ok_or_else(|| NetworkError::UnknownRecipient(s.to_string()))?.clone()
            }
            Recipients::Team => self.team.clone(),
        };
        out.retain(|d| *d != msg.sender);
        Ok(out)
    }

    /// One network tick.
    ///
    /// New messages join the per-link priority queues; pairs are put on the
    /// air in (priority desc, arrival) order while every link on their route
    /// has budget left; a pair that does not fit closes its links to
    /// everything behind it this tick. Drop draws for transmitted pairs are
    /// then made in (message id, recipient) order. Survivors arrive
    /// `latency` ticks later.
    pub fn deliver<R: Rng>(&mut self, tick: u64, messages: Vec<SwarmMessage>, topology: &Topology, rng: &mut R) -> Result<Delivery, NetworkError> {
        let mut out = Delivery::default();
        for msg in messages {
            if !topology.contains_key(&msg.sender) {
                return Err(NetworkError::UnknownSender(msg.sender.clone()));
            }
            for recipient in self.expand(&msg)? {
                self.queue.push(Pending { seq: self.seq, message: msg.clone(), recipient });
                self.seq += 1;
            }
        }
        self.queue.sort_by(|a, b| b.message.priority.cmp(&a.message.priority).then(a.seq.cmp(&b.seq)));

        let router = Router::new(topology, &self.params);
        let mut budget: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        let mut closed: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut sent: Vec<(Pending, Vec<(usize, usize)>)> = Vec::new();
        let mut keep = Vec::new();
        for p in std::mem::take(&mut self.queue) {
            let Some(path) = router.route(&p.message.sender, &p.recipient) else {
                out.dropped.push(Dropped { message: p.message, recipient: p.recipient, reason: DropReason::NoRoute });
                continue;
            };
            let hops: Vec<(usize, usize)> = path.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect();
            let fits = hops.iter().all(|h| {
                !closed.contains(h) && budget.get(h).copied().unwrap_or(self.params.bandwidth) >= p.message.size
            });
            if fits {
                for h in &hops {
                    *budget.entry(*h).or_insert(self.params.bandwidth) -= p.message.size;
                }
                sent.push((p, hops));
            } else {
                closed.extend(hops);
                keep.push(p);
            }
        }
        self.queue = keep;

        sent.sort_by(|a, b| (a.0.message.id, &a.0.recipient).cmp(&(b.0.message.id, &b.0.recipient)));
        for (p, hops) in sent {
            out.transmitted.push((p.message.id, p.recipient.clone()));
            let mut lost = false;
            for (a, b) in hops {
                let prob = router.hop_loss(a, b);
                if rng.gen::<f64>() < prob {
                    lost = true;
                    break;
                }
            }
            if lost {
                out.dropped.push(Dropped { message: p.message, recipient: p.recipient, reason: DropReason::Loss });
            } else {
                self.in_flight.push_back((tick + u64::from(self.params.latency), p.message, p.recipient));
            }
        }

        while self.in_flight.front().is_some_and(|(due, _, _)| *due <= tick) {
            let (_, msg, to) = self.in_flight.pop_front().expect("front checked");
            out.delivered.entry(to).or_default().push(msg);
        }
        Ok(out)
    }
}

struct Router<'a> {
    ids: Vec<&'a EntityId>,
    index: BTreeMap<&'a EntityId, usize>,
    graph: UnGraph<(), f64>,
    params: &'a NetworkParams,
    pos: Vec<Vec3>,
}

impl<'a> Router<'a> {
    fn new(topology: &'a Topology, params: &'a NetworkParams) -> Self {
        let ids: Vec<&EntityId> = topology.keys().collect();
        let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let pos: Vec<Vec3> = topology.values().copied().collect();
        let mut graph = UnGraph::<(), f64>::with_capacity(ids.len(), ids.len() * 4);
        for _ in &ids {
            graph.add_node(());
        }
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let d = pos[i].distance(pos[j]);
                if d <= params.link_range(ids[i], ids[j]) {
                    graph.add_edge(NodeIndex::new(i), NodeIndex::new(j), d);
                }
            }
        }
        Self { ids, index, graph, params, pos }
    }

    fn route(&self, from: &EntityId, to: &EntityId) -> Option<Vec<usize>> {
        let (&a, &b) = (self.index.get(from)?, self.index.get(to)?);
        let (na, nb) = (NodeIndex::new(a), NodeIndex::new(b));
        if !self.params.relay_enabled {
            return self.graph.contains_edge(na, nb).then(|| vec![a, b]);
        }
        // Hop count first; total distance breaks ties between equal-hop routes.
        let (_, path) = astar(&self.graph, na, |n| n == nb, |e| 1e6 + *e.weight(), |_| 0.0)?;
        Some(path.into_iter().map(NodeIndex::index).collect())
    }

    fn hop_loss(&self, a: usize, b: usize) -> f64 {
        let d = self.pos[a].distance(self.pos[b]);
        self.params.loss_probability(d, self.params.link_range(self.ids[a], self.ids[b]))
    }
}

/// Average message rate per priority over `duration`, counting each message
/// id once however many recipients it had.
pub fn message_rate_audit(log: &[(f64, SwarmMessage)], duration: f64) -> BTreeMap<Priority, f64> {
    let mut seen: BTreeMap<Priority, BTreeSet<u64>> = BTreeMap::new();
    for (_, m) in log {
        seen.entry(m.priority).or_default().insert(m.id);
    }
    [Priority::Operational, Priority::Tactical, Priority::Strategic]
        .into_iter()
        .map(|p| (p, seen.get(&p).map_or(0, |s| s.len()) as f64 / duration))
        .collect()
}
