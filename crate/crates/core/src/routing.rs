//! Exact visit-order optimisation for a drone's (at most Λ) carried packages.

use crate::geometry::Point;
use crate::world::CustomerId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("route has {got} stops, more than the limit of {limit}")]
    TooManyStops { got: usize, limit: usize },
}

/// What a route's cost is measured in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostMode {
    Distance,
    /// Energy at constant cruise speed, expressed as kWh per metre.
    Energy { kwh_per_meter: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stop {
    pub id: CustomerId,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub stops: Vec<CustomerId>,
    pub return_to_base: bool,
    pub total_cost: f64,
}

/// Sum of leg lengths from `start` through `stops`, plus the leg to `home`
/// when given. Legs are accumulated in visiting order.
pub fn path_length(start: Point, stops: &[Point], home: Option<Point>) -> f64 {
    let mut total = 0.0;
    let mut at = start;
    for &p in stops {
        total += at.distance(p);
        at = p;
    }
    if let Some(h) = home {
        total += at.distance(h);
    }
    total
}

pub fn route_cost(start: Point, stops: &[Point], home: Option<Point>, mode: CostMode) -> f64 {
    let d = path_length(start, stops, home);
    match mode {
        CostMode::Distance => d,
        CostMode::Energy { kwh_per_meter } => d * kwh_per_meter,
    }
}

/// Cheapest visiting order over `customers`, by full enumeration.
///
/// Orders are enumerated lexicographically by customer id and only a strictly
/// cheaper order replaces the incumbent, so exact ties resolve to the
/// lexicographically smallest id sequence and the result does not depend on
/// the order of `customers`.
pub fn plan_route(
    start: Point,
    customers: &[Stop],
    home: Option<Point>,
    mode: CostMode,
    max_stops: usize,
) -> Result<Route, RoutingError> {
    if customers.len() > max_stops {
        return Err(RoutingError::TooManyStops {
            got: customers.len(),
            limit: max_stops,
        });
    }
    let mut sorted: Vec<Stop> = customers.to_vec();
    sorted.sort_by_key(|s| s.id);

    let mut order: Vec<usize> = (0..sorted.len()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut points = Vec::with_capacity(sorted.len());
    loop {
        points.clear();
        points.extend(order.iter().map(|&i| sorted[i].position));
        let cost = route_cost(start, &points, home, mode);
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, order.clone()));
        }
        if !next_permutation(&mut order) {
            break;
        }
    }
    let (total_cost, idx) = best.expect("at least the identity order is evaluated");
    Ok(Route {
        stops: idx.into_iter().map(|i| sorted[i].id).collect(),
        return_to_base: home.is_some(),
        total_cost,
    })
}

/// Advance to the next lexicographic permutation; false after the last one.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
