//! Demand specification: periodic vehicle flows over fixed lane routes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{LaneIdx, Movement, RoadNetwork};
use crate::util::EPS;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("flow {index}: {reason}")]
    Invalid { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub route: Vec<String>,
    #[serde(rename = "startTime")]
    pub start_time: f64,
    #[serde(rename = "endTime")]
    pub end_time: f64,
    pub interval: f64,
}

/// Validated flows; every route is a connected lane sequence of the network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowSpec {
    pub entries: Vec<FlowEntry>,
}

/// Flows compiled against a network and tick: routes as lane indices and the
/// full arrival schedule in injection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FlowPlan {
    pub routes: Vec<Vec<LaneIdx>>,
    /// `(time, route)` sorted by time; ties keep flow order.
    pub arrivals: Vec<(f64, u32)>,
}

pub fn load_flows(path: impl AsRef<Path>, net: &RoadNetwork) -> Result<FlowSpec, FlowError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FlowError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_flows(&text, net)
}

/// Accepts native lane routes or CityFlow road routes (vehicle attributes are ignored;
/// each road maps to the lane performing the turn onto the next road).
pub fn parse_flows(text: &str, net: &RoadNetwork) -> Result<FlowSpec, FlowError> {
    let raw: Vec<FlowEntry> = serde_json::from_str(text).map_err(|e| FlowError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut entries = Vec::with_capacity(raw.len());
    for (index, mut e) in raw.into_iter().enumerate() {
        let is_lane_route = e.route.iter().all(|id| net.lane_idx(id).is_ok());
        if !is_lane_route {
            e.route = road_route_to_lanes(net, &e.route)
                .map_err(|reason| FlowError::Invalid { index, reason })?;
        }
        entries.push(e);
    }
    let spec = FlowSpec { entries };
    spec.validate(net)?;
    Ok(spec)
}

fn road_route_to_lanes(net: &RoadNetwork, roads: &[String]) -> Result<Vec<String>, String> {
    let idx: Vec<_> = roads
        .iter()
        .map(|id| {
            net.road_idx(id)
                .ok_or_else(|| format!("route element {id} is neither a lane nor a road"))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(idx.len());
    for (k, r) in idx.iter().enumerate() {
        let road = net.road(*r);
        let lane = match idx.get(k + 1) {
            Some(next) => road
                .lanes
                .iter()
                .copied()
                .find(|l| net.lane(*l).downstream == Some(*next))
                .ok_or_else(|| {
                    format!("no lane on {} turns onto {}", road.id, net.road(*next).id)
                })?,
            None => road
                .lanes
                .iter()
                .copied()
                .find(|l| net.lane(*l).movement == Movement::Through)
                .unwrap_or(road.lanes[0]),
        };
        out.push(net.lane(lane).id.clone());
    }
    Ok(out)
}

impl FlowSpec {
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), FlowError> {
        for (index, e) in self.entries.iter().enumerate() {
            let bad = |reason: String| FlowError::Invalid { index, reason };
            if !(e.interval.is_finite() && e.interval > 0.0) {
                return Err(bad("interval must be positive".into()));
            }
            if !(e.start_time >= 0.0 && e.end_time >= e.start_time) {
                return Err(bad("need 0 <= startTime <= endTime".into()));
            }
            if e.route.is_empty() {
                return Err(bad("empty route".into()));
            }
            let lanes: Vec<LaneIdx> = e
                .route
                .iter()
                .map(|id| net.lane_idx(id).map_err(|err| bad(err.to_string())))
                .collect::<Result<_, _>>()?;
            for w in lanes.windows(2) {
                let (a, b) = (net.lane(w[0]), net.lane(w[1]));
                if a.downstream != Some(b.road) {
                    return Err(bad(format!(
                        "lane {} ({}) cannot continue onto {}",
                        a.id,
                        a.movement.as_str(),
                        b.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn compile(&self, net: &RoadNetwork, tick: f64) -> FlowPlan {
        let mut routes = Vec::with_capacity(self.entries.len());
        let mut arrivals = Vec::new();
        for (k, e) in self.entries.iter().enumerate() {
            routes.push(
                e.route
                    .iter()
                    .map(|id| net.lane_idx(id).expect("validated route"))
                    .collect(),
            );
            let mut n = 0u64;
            loop {
                let t = e.start_time + n as f64 * e.interval;
                if t > e.end_time + EPS {
                    break;
                }
                arrivals.push(((t / tick + EPS).floor() * tick, k as u32));
                n += 1;
            }
        }
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
        FlowPlan { routes, arrivals }
    }

    pub fn vehicle_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| ((e.end_time - e.start_time) / e.interval + EPS).floor() as usize + 1)
            .sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.entries).expect("flows serialize")
    }
}
