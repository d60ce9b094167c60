//! Intelligent Driver Model car following along route centerlines.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{FrameScene, LaneNetwork, TrafficError, VehicleState};
use crate::rng;

/// Per-route arrival rates in vehicles per second, keyed by route id.
pub type Flows = BTreeMap<String, f64>;

/// How far ahead (m) along the route a vehicle looks for its leader.
const LOOKAHEAD: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Minimum bumper-to-bumper gap (m).
    pub min_gap: f64,
    /// Desired time headway (s).
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { min_gap: 2.0, time_headway: 1.5, max_accel: 1.5, comfortable_decel: 2.0, exponent: 4.0 }
    }
}

impl IdmParams {
    /// IDM acceleration for speed `v` with desired speed `v0`, given the gap
    /// to and speed of the leader, if any.
    pub fn acceleration(&self, v: f64, v0: f64, leader: Option<(f64, f64)>) -> f64 {
        let free = 1.0 - (v / v0).powf(self.exponent);
        let interaction = match leader {
            Some((gap, leader_v)) => {
                let dv = v - leader_v;
                let desired = self.min_gap
                    + (v * self.time_headway + v * dv / (2.0 * (self.max_accel * self.comfortable_decel).sqrt()))
                        .max(0.0);
                let gap = gap.max(1e-3);
                (desired / gap).powi(2)
            }
            None => 0.0,
        };
        self.max_accel * (free - interaction)
    }
}

/// A vehicle model the simulator may spawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleType {
    pub model_id: String,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub dt: f64,
    pub idm: IdmParams,
    pub vehicle_types: Vec<VehicleType>,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.5,
            idm: IdmParams::default(),
            vehicle_types: vec![VehicleType { model_id: "car".into(), length: 4.5, width: 1.8 }],
        }
    }
}

#[derive(Debug, Clone)]
struct SimVehicle {
    id: u64,
    route: usize,
    /// Position within `route.lanes`.
    leg: usize,
    /// Arc length of the vehicle center along the current lane.
    s: f64,
    v: f64,
    kind: usize,
}

struct RouteSpawner {
    next_arrival: f64,
    pending: usize,
    arrivals: Option<Exp<f64>>,
    rng: rand_chacha::ChaCha8Rng,
}

/// Runs the car-following simulation and returns one scene per time step,
/// `t = 0, dt, 2 dt, ...` up to `duration`.
///
/// Vehicles enter at route origins by Poisson arrivals (queued while the
/// entry is blocked), follow IDM within lanes with the lane speed limit as
/// desired speed, and leave at the end of their route. Routes do not
/// interact except by sharing lanes.
pub fn simulate(
    net: &LaneNetwork,
    flows: &Flows,
    duration: f64,
    seed: u64,
    params: &SimParams,
) -> Result<Vec<FrameScene>, TrafficError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(TrafficError::InvalidInput(format!("duration must be positive, got {duration}")));
    }
    if !(params.dt.is_finite() && params.dt > 0.0) {
        return Err(TrafficError::InvalidInput("dt must be positive".into()));
    }
    if params.vehicle_types.is_empty() {
        return Err(TrafficError::InvalidInput("no vehicle types".into()));
    }
    for (route, rate) in flows {
        if net.route(route).is_none() {
            return Err(TrafficError::InvalidNetwork(format!("flow for unknown route {route:?}")));
        }
        if !(rate.is_finite() && *rate >= 0.0) {
            return Err(TrafficError::InvalidInput(format!("flow for {route:?} must be non-negative")));
        }
    }

    let mut spawners: Vec<RouteSpawner> = net
        .routes
        .iter()
        .map(|r| {
            let rate = flows.get(&r.id).copied().unwrap_or(0.0);
            let mut rng = rng::stream(seed, &["traffic-arrivals".into(), r.id.as_str().into()]);
            let arrivals = (rate > 0.0).then(|| Exp::new(rate).unwrap());
            let next_arrival = arrivals.map_or(f64::INFINITY, |e| e.sample(&mut rng));
            RouteSpawner { next_arrival, pending: 0, arrivals, rng }
        })
        .collect();

    let dt = params.dt;
    let steps = (duration / dt + 1e-9).floor() as usize;
    let mut vehicles: Vec<SimVehicle> = Vec::new();
    let mut next_id = 0u64;
    let mut scenes = Vec::with_capacity(steps + 1);

    for step in 0..=steps {
        let t = step as f64 * dt;

        for (ri, sp) in spawners.iter_mut().enumerate() {
            while sp.next_arrival <= t {
                sp.pending += 1;
                let e = sp.arrivals.expect("finite arrival implies positive rate");
                sp.next_arrival += e.sample(&mut sp.rng);
            }
            if sp.pending == 0 {
                continue;
            }
            let kind = sp.rng.random_range(0..params.vehicle_types.len());
            if let Some(v0) = entry_speed(net, &vehicles, params, ri, kind) {
                sp.pending -= 1;
                vehicles.push(SimVehicle { id: next_id, route: ri, leg: 0, s: 0.0, v: v0, kind });
                next_id += 1;
            }
        }

        scenes.push(FrameScene { time: t, vehicles: vehicles.iter().map(|v| snapshot(net, params, v)).collect() });

        if step == steps {
            break;
        }
        advance(net, params, &mut vehicles);
    }
    Ok(scenes)
}

fn snapshot(net: &LaneNetwork, params: &SimParams, v: &SimVehicle) -> VehicleState {
    let route = &net.routes[v.route];
    let lane = &net.lanes[route.lanes[v.leg]];
    let (p, heading) = lane.sample(v.s);
    let kind = &params.vehicle_types[v.kind];
    VehicleState {
        id: v.id,
        position: [p.x, p.y],
        heading,
        route: route.id.clone(),
        model_id: kind.model_id.clone(),
        length: kind.length,
        width: kind.width,
    }
}

/// Closest vehicle ahead of `me` along its route: `(index, center distance)`.
fn find_leader(net: &LaneNetwork, vehicles: &[SimVehicle], me: usize) -> Option<(usize, f64)> {
    let v = &vehicles[me];
    let route = &net.routes[v.route];
    let mut offset = -v.s;
    for leg in v.leg..route.lanes.len() {
        let lane = route.lanes[leg];
        let ahead = vehicles
            .iter()
            .enumerate()
            .filter(|(i, o)| *i != me && net.routes[o.route].lanes[o.leg] == lane)
            .map(|(i, o)| (i, o.s + offset))
            .filter(|&(i, d)| d > 0.0 || (d == 0.0 && vehicles[i].id < v.id))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if ahead.is_some() {
            return ahead;
        }
        offset += net.lanes[lane].length();
        if offset > LOOKAHEAD {
            break;
        }
    }
    None
}

/// Speed for a new vehicle of `kind` at the start of route `ri`, or `None`
/// while the entry is blocked.
fn entry_speed(
    net: &LaneNetwork,
    vehicles: &[SimVehicle],
    params: &SimParams,
    ri: usize,
    kind: usize,
) -> Option<f64> {
    let lane = net.routes[ri].lanes[0];
    let limit = net.lanes[lane].speed_limit;
    let len = params.vehicle_types[kind].length;
    let last = vehicles
        .iter()
        .filter(|o| net.routes[o.route].lanes[o.leg] == lane)
        .min_by(|a, b| a.s.total_cmp(&b.s));
    match last {
        None => Some(limit),
        Some(o) => {
            let gap = o.s - 0.5 * (params.vehicle_types[o.kind].length + len);
            let v = limit.min(o.v);
            (gap >= params.idm.min_gap + v * params.idm.time_headway).then_some(v)
        }
    }
}

fn advance(net: &LaneNetwork, params: &SimParams, vehicles: &mut Vec<SimVehicle>) {
    let dt = params.dt;
    let idm = &params.idm;
    let half_len = |v: &SimVehicle| 0.5 * params.vehicle_types[v.kind].length;

    // accelerations and gap limits from the state at the start of the step
    let plans: Vec<(f64, Option<f64>)> = (0..vehicles.len())
        .map(|i| {
            let v = &vehicles[i];
            let lane = &net.lanes[net.routes[v.route].lanes[v.leg]];
            let leader = find_leader(net, vehicles, i).map(|(j, dist)| {
                let gap = dist - half_len(v) - half_len(&vehicles[j]);
                (gap, vehicles[j].v)
            });
            let a = idm.acceleration(v.v, lane.speed_limit, leader);
            // leaders never move backwards, so holding the old gap bound is safe
            let max_advance = leader.map(|(gap, _)| (gap - idm.min_gap).max(0.0));
            (a, max_advance)
        })
        .collect();

    for (v, (a, max_advance)) in vehicles.iter_mut().zip(plans) {
        let mut ds = if v.v + a * dt < 0.0 {
            // stops within the step
            -0.5 * v.v * v.v / a
        } else {
            v.v * dt + 0.5 * a * dt * dt
        };
        let mut new_v = (v.v + a * dt).max(0.0);
        if let Some(limit) = max_advance {
            if ds > limit {
                ds = limit;
                new_v = new_v.min(limit / dt);
            }
        }
        v.s += ds.max(0.0);
        v.v = new_v;
    }

    // lane transitions and despawn
    vehicles.retain_mut(|v| {
        let route = &net.routes[v.route];
        loop {
            let len = net.lanes[route.lanes[v.leg]].length();
            if v.s <= len {
                return true;
            }
            if v.leg + 1 == route.lanes.len() {
                return false;
            }
            v.s -= len;
            v.leg += 1;
        }
    });
}
