use std::collections::HashMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{wrap_angle, TrafficError};

/// Maximum end-to-start distance between consecutive lanes of a route.
const CONNECT_TOL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneRecord {
    pub id: String,
    pub polyline: Vec<[f64; 2]>,
    pub width: f64,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub id: String,
    pub lanes: Vec<String>,
    #[serde(default)]
    pub flow_veh_per_s: f64,
}

/// On-disk network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub lanes: Vec<LaneRecord>,
    pub routes: Vec<RouteRecord>,
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: String,
    pub points: Vec<Vector2<f64>>,
    pub width: f64,
    pub speed_limit: f64,
    /// Arc length at each polyline vertex.
    cumulative: Vec<f64>,
}

impl Lane {
    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Position and tangent heading at arc length `s`, clamped to the lane.
    pub fn sample(&self, s: f64) -> (Vector2<f64>, f64) {
        let s = s.clamp(0.0, self.length());
        let seg = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let d = b - a;
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = (s - self.cumulative[seg]) / len;
        (a + d * t, wrap_angle(d.y.atan2(d.x)))
    }
}

#[derive(Debug, Clone)]
pub struct Route {
    pub id: String,
    /// Indices into [`LaneNetwork::lanes`].
    pub lanes: Vec<usize>,
    pub flow_veh_per_s: f64,
}

#[derive(Debug, Clone)]
pub struct LaneNetwork {
    pub lanes: Vec<Lane>,
    pub routes: Vec<Route>,
}

impl LaneNetwork {
    pub fn from_file(file: &NetworkFile) -> Result<Self, TrafficError> {
        let invalid = |m: String| TrafficError::InvalidNetwork(m);
        let mut index = HashMap::new();
        let mut lanes = Vec::with_capacity(file.lanes.len());
        for rec in &file.lanes {
            if index.insert(rec.id.clone(), lanes.len()).is_some() {
                return Err(invalid(format!("duplicate lane id {:?}", rec.id)));
            }
            if rec.polyline.len() < 2 {
                return Err(invalid(format!("lane {:?} needs at least two points", rec.id)));
            }
            if !(2.5..=5.0).contains(&rec.width) {
                return Err(invalid(format!("lane {:?} width {} outside [2.5, 5] m", rec.id, rec.width)));
            }
            if !(rec.speed_limit.is_finite() && rec.speed_limit > 0.0) {
                return Err(invalid(format!("lane {:?} speed limit must be positive", rec.id)));
            }
            let points: Vec<Vector2<f64>> = rec.polyline.iter().map(|p| Vector2::new(p[0], p[1])).collect();
            let mut cumulative = vec![0.0];
            for w in points.windows(2) {
                let len = (w[1] - w[0]).norm();
                if !(len.is_finite() && len > 1e-9) {
                    return Err(invalid(format!("lane {:?} has a zero-length segment", rec.id)));
                }
                cumulative.push(cumulative.last().unwrap() + len);
            }
            lanes.push(Lane {
                id: rec.id.clone(),
                points,
                width: rec.width,
                speed_limit: rec.speed_limit,
                cumulative,
            });
        }

        let mut route_ids = HashMap::new();
        let mut routes = Vec::with_capacity(file.routes.len());
        for rec in &file.routes {
            if route_ids.insert(rec.id.clone(), ()).is_some() {
                return Err(invalid(format!("duplicate route id {:?}", rec.id)));
            }
            if rec.lanes.is_empty() {
                return Err(invalid(format!("route {:?} has no lanes", rec.id)));
            }
            if !(rec.flow_veh_per_s.is_finite() && rec.flow_veh_per_s >= 0.0) {
                return Err(invalid(format!("route {:?} flow must be non-negative", rec.id)));
            }
            let ids: Vec<usize> = rec
                .lanes
                .iter()
                .map(|l| {
                    index
                        .get(l)
                        .copied()
                        .ok_or_else(|| invalid(format!("route {:?} references unknown lane {l:?}", rec.id)))
                })
                .collect::<Result<_, _>>()?;
            for pair in ids.windows(2) {
                let end = *lanes[pair[0]].points.last().unwrap();
                let start = lanes[pair[1]].points[0];
                if (end - start).norm() > CONNECT_TOL {
                    return Err(invalid(format!(
                        "route {:?}: lane {:?} does not connect to {:?} ({:.2} m gap)",
                        rec.id,
                        lanes[pair[0]].id,
                        lanes[pair[1]].id,
                        (end - start).norm()
                    )));
                }
            }
            routes.push(Route { id: rec.id.clone(), lanes: ids, flow_veh_per_s: rec.flow_veh_per_s });
        }
        Ok(Self { lanes, routes })
    }

    pub fn from_json(text: &str) -> Result<Self, TrafficError> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| TrafficError::InvalidNetwork(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn route(&self, id: &str) -> Option<&Route> {
        self.routes.iter().find(|r| r.id == id)
    }
}
