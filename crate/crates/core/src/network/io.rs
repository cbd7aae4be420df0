use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{IntersectionSpec, Movement, NetworkError, RoadNetwork, RoadSpec, DEFAULT_CELL_LENGTH};

#[derive(Debug, Serialize, Deserialize)]
struct RawNet {
    intersections: Vec<RawIntersection>,
    roads: Vec<RawRoad>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPoint {
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawIntersection {
    id: String,
    point: RawPoint,
    #[serde(default, rename = "virtual")]
    is_virtual: bool,
    #[serde(default, rename = "roadLinks", skip_serializing)]
    road_links: Vec<RawRoadLink>,
}

#[derive(Debug, Deserialize)]
struct RawRoadLink {
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "startRoad")]
    start_road: String,
    #[serde(default, rename = "laneLinks")]
    lane_links: Vec<RawLaneLink>,
}

#[derive(Debug, Deserialize)]
struct RawLaneLink {
    #[serde(rename = "startLaneIndex")]
    start_lane_index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRoad {
    id: String,
    #[serde(rename = "startIntersection")]
    start: String,
    #[serde(rename = "endIntersection")]
    end: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
    #[serde(default, rename = "maxSpeed", skip_serializing_if = "Option::is_none")]
    max_speed: Option<f64>,
    #[serde(default, skip_serializing)]
    points: Vec<RawPoint>,
    lanes: Vec<RawLane>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLane {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    movement: Option<Movement>,
    #[serde(default, rename = "maxSpeed", skip_serializing)]
    max_speed: Option<f64>,
}

pub fn load_roadnet(path: impl AsRef<Path>) -> Result<RoadNetwork, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_roadnet(&text)
}

/// Parse the native schema or a CityFlow roadnet (lane movements are then
/// inferred from `roadLinks`, road length from the polyline).
pub fn parse_roadnet(text: &str) -> Result<RoadNetwork, NetworkError> {
    let raw: RawNet = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    // (road id, lane index) -> movement, from CityFlow road links.
    let mut link_movements: BTreeMap<(String, usize), Movement> = BTreeMap::new();
    for node in &raw.intersections {
        for link in &node.road_links {
            let m = match link.kind.as_str() {
                "go_straight" => Movement::Through,
                "turn_left" => Movement::Left,
                "turn_right" => Movement::Right,
                _ => continue,
            };
            for ll in &link.lane_links {
                let key = (link.start_road.clone(), ll.start_lane_index);
                let e = link_movements.entry(key).or_insert(m);
                // A lane serving several movements keeps the highest-priority one.
                if m < *e {
                    *e = m;
                }
            }
        }
    }

    let intersections = raw
        .intersections
        .iter()
        .map(|n| IntersectionSpec {
            id: n.id.clone(),
            position: (n.point.x, n.point.y),
            is_virtual: n.is_virtual,
        })
        .collect();

    let mut roads = Vec::with_capacity(raw.roads.len());
    for r in raw.roads {
        let length = match r.length {
            Some(l) => l,
            None => polyline_length(&r.points).ok_or_else(|| NetworkError::InvalidRoad {
                road: r.id.clone(),
                reason: "neither length nor points given".into(),
            })?,
        };
        let max_speed = r
            .max_speed
            .or_else(|| r.lanes.iter().find_map(|l| l.max_speed))
            .ok_or_else(|| NetworkError::InvalidRoad {
                road: r.id.clone(),
                reason: "missing maxSpeed".into(),
            })?;
        let n = r.lanes.len();
        let lanes = r
            .lanes
            .iter()
            .enumerate()
            .map(|(k, lane)| {
                lane.movement
                    .or_else(|| link_movements.get(&(r.id.clone(), k)).copied())
                    .unwrap_or_else(|| default_movement(k, n))
            })
            .collect();
        roads.push(RoadSpec {
            id: r.id,
            from: r.start,
            to: r.end,
            length,
            max_speed,
            lanes,
        });
    }
    RoadNetwork::build(intersections, roads, DEFAULT_CELL_LENGTH)
}

fn polyline_length(points: &[RawPoint]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    Some(
        points
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum(),
    )
}

/// CityFlow convention for lanes without links: inner lane left, outer lane right.
fn default_movement(k: usize, n: usize) -> Movement {
    match (n, k) {
        (3, 0) => Movement::Left,
        (3, 2) => Movement::Right,
        _ => Movement::Through,
    }
}

impl RoadNetwork {
    /// Native-schema JSON; `parse_roadnet` of the result rebuilds an equal network.
    pub fn to_json(&self) -> Value {
        let raw = RawNet {
            intersections: self
                .intersections
                .iter()
                .map(|n| RawIntersection {
                    id: n.id.clone(),
                    point: RawPoint {
                        x: n.position.0,
                        y: n.position.1,
                    },
                    is_virtual: n.is_virtual,
                    road_links: Vec::new(),
                })
                .collect(),
            roads: self
                .roads
                .iter()
                .map(|r| RawRoad {
                    id: r.id.clone(),
                    start: self.node(r.from).id.clone(),
                    end: self.node(r.to).id.clone(),
                    length: Some(r.length),
                    max_speed: Some(r.max_speed),
                    points: Vec::new(),
                    lanes: r
                        .lanes
                        .iter()
                        .map(|l| RawLane {
                            movement: Some(self.lane(*l).movement),
                            max_speed: None,
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_value(raw).expect("network serializes")
    }
}
