//! Travel-time, waiting-time and connectivity metrics computed from traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::network::RoadNetwork;
use crate::sim::run::{EpisodeTrace, TraceRecord};
use crate::util::ser_round2;

struct VehicleRow<'a> {
    origin: &'a str,
    destination: &'a str,
    enter: f64,
    exit: Option<f64>,
    queued: f64,
}

fn vehicles(trace: &EpisodeTrace) -> impl Iterator<Item = VehicleRow<'_>> {
    trace.records.iter().filter_map(|r| match r {
        TraceRecord::Vehicle {
            origin,
            destination,
            enter_time,
            exit_time,
            queued_seconds,
            ..
        } => Some(VehicleRow {
            origin,
            destination,
            enter: *enter_time,
            exit: *exit_time,
            queued: *queued_seconds,
        }),
        _ => None,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean travel time; vehicles still in the network count until the episode end.
/// `None` when the trace holds no vehicles.
pub fn compute_att(trace: &EpisodeTrace) -> Option<f64> {
    let end = trace.duration().unwrap_or(0.0);
    mean(vehicles(trace).map(|v| v.exit.unwrap_or(end) - v.enter))
}

/// Mean accumulated queued seconds per vehicle.
pub fn compute_awt(trace: &EpisodeTrace) -> Option<f64> {
    mean(vehicles(trace).map(|v| v.queued))
}

/// AWT restricted to vehicles whose `(origin lane, destination lane)` satisfies `keep`.
pub fn compute_awt_where(trace: &EpisodeTrace, keep: impl Fn(&str, &str) -> bool) -> Option<f64> {
    mean(
        vehicles(trace)
            .filter(|v| keep(v.origin, v.destination))
            .map(|v| v.queued),
    )
}

/// ATT restricted like [`compute_awt_where`].
pub fn compute_att_where(trace: &EpisodeTrace, keep: impl Fn(&str, &str) -> bool) -> Option<f64> {
    let end = trace.duration().unwrap_or(0.0);
    mean(
        vehicles(trace)
            .filter(|v| keep(v.origin, v.destination))
            .map(|v| v.exit.unwrap_or(end) - v.enter),
    )
}

/// Contribution of one neighbour: vehicles exchanged per window times speed over distance.
pub fn ici_term(vehicles_per_window: f64, speed: f64, distance: f64) -> f64 {
    vehicles_per_window * speed / distance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IciSummary {
    #[serde(serialize_with = "ser_round2")]
    pub max: f64,
    #[serde(serialize_with = "ser_round2")]
    pub q3: f64,
    #[serde(serialize_with = "ser_round2")]
    pub std: f64,
    #[serde(serialize_with = "ser_round2")]
    pub mean: f64,
    #[serde(serialize_with = "ser_round2")]
    pub min: f64,
}

impl IciSummary {
    /// Population standard deviation; upper quartile by linear interpolation.
    pub fn of(values: &[f64]) -> IciSummary {
        if values.is_empty() {
            return IciSummary {
                max: 0.0,
                q3: 0.0,
                std: 0.0,
                mean: 0.0,
                min: 0.0,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let pos = 0.75 * (n - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let q3 = sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64);
        IciSummary {
            max: sorted[sorted.len() - 1],
            q3,
            std: var.sqrt(),
            mean,
            min: sorted[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IciReport {
    pub per_intersection: BTreeMap<String, f64>,
    pub summary: IciSummary,
}

impl IciReport {
    pub fn from_values(per_intersection: BTreeMap<String, f64>) -> Self {
        let values: Vec<f64> = per_intersection.values().copied().collect();
        IciReport {
            summary: IciSummary::of(&values),
            per_intersection,
        }
    }
}

/// Connectivity index of every controlled intersection from the crossing
/// counts in `trace`. Traffic in both directions between two neighbours is
/// pooled; the speed is the road's free-flow speed unless `speed` overrides it.
pub fn compute_ici(
    net: &RoadNetwork,
    trace: &EpisodeTrace,
    speed: Option<f64>,
    window: f64,
) -> IciReport {
    let duration = trace.duration().unwrap_or(0.0);
    let windows = duration / window;
    // Unordered pair -> (vehicles both ways, summed length, road count, summed speed).
    let mut pairs: BTreeMap<(String, String), (f64, f64, f64, f64)> = BTreeMap::new();
    for r in &trace.records {
        if let TraceRecord::Crossings {
            from,
            to,
            length,
            max_speed,
            count,
            ..
        } = r
        {
            let key = if from <= to {
                (from.clone(), to.clone())
            } else {
                (to.clone(), from.clone())
            };
            let e = pairs.entry(key).or_default();
            e.0 += *count as f64;
            e.1 += length;
            e.2 += 1.0;
            e.3 += max_speed;
        }
    }
    let mut per: BTreeMap<String, f64> = net
        .controlled()
        .map(|i| (net.node(i).id.clone(), 0.0))
        .collect();
    if windows > 0.0 {
        for ((a, b), (count, len_sum, roads, speed_sum)) in &pairs {
            let n_ij = count / windows;
            let d = len_sum / roads;
            let v = speed.unwrap_or(speed_sum / roads);
            let term = ici_term(n_ij, v, d);
            for id in [a, b] {
                if let Some(x) = per.get_mut(id) {
                    *x += term;
                }
            }
        }
    }
    IciReport::from_values(per)
}
