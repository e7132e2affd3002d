//! Road layout: two perpendicular two-lane roads crossing at the origin.
//!
//! Traffic keeps right. Every route is built in a canonical frame for the
//! south approach (driving north in the lane at `x = +LANE_WIDTH / 2`) and
//! rotated by multiples of 90 degrees for the other approaches. Turning arcs
//! are flattened into short chords so that every route is a plain polyline
//! parameterized by arc length.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

pub const LANE_WIDTH: f64 = 4.0;
/// Half side of the square conflict zone centered at the origin.
pub const ZONE_HALF: f64 = 6.0;
/// Distance from the center at which HV routes begin and end. Traffic on
/// the north arm starts outside the rendered window.
pub const ROAD_EXTENT: f64 = 34.0;
/// Ego start: rear bumper on the bottom edge of the rendered window.
pub const EGO_START_DISTANCE: f64 = 13.5;
/// Ego exit: the west end of its route.
pub const EGO_EXIT_DISTANCE: f64 = 30.0;

const ARC_CHORDS: usize = 24;

pub type Vec2 = [f64; 2];

/// Which road arm a vehicle enters from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approach {
    South,
    East,
    North,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::South,
        Approach::East,
        Approach::North,
        Approach::West,
    ];

    /// Approaches human vehicles may use; the south arm belongs to the ego.
    pub const NON_EGO: [Approach; 3] = [Approach::East, Approach::North, Approach::West];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Number of quarter turns (counter-clockwise) from the canonical south frame.
    fn quarter_turns(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Turn {
    Straight,
    Left,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Straight, Turn::Left, Turn::Right];
}

/// A polyline path with cumulative arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub approach: Approach,
    pub turn: Turn,
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
    /// Arc length at which the route enters the conflict zone.
    pub zone_entry: f64,
    /// Arc length at which the route leaves the conflict zone.
    pub zone_exit: f64,
}

/// Where a point projects onto a route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub lateral: f64,
    pub heading: f64,
}

fn rotate(p: Vec2, quarter_turns: u8) -> Vec2 {
    match quarter_turns % 4 {
        0 => p,
        1 => [-p[1], p[0]],
        2 => [-p[0], -p[1]],
        _ => [p[1], -p[0]],
    }
}

fn arc(center: Vec2, radius: f64, from: f64, to: f64) -> impl Iterator<Item = Vec2> {
    (1..=ARC_CHORDS).map(move |i| {
        let t = from + (to - from) * i as f64 / ARC_CHORDS as f64;
        [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
    })
}

impl Route {
    /// Builds an HV route running from the end of its arm to the end of the exit arm.
    pub fn new(approach: Approach, turn: Turn) -> Route {
        Route::with_extents(approach, turn, ROAD_EXTENT, ROAD_EXTENT)
    }

    /// The ego's fixed left-turn route from the south arm to the west exit.
    pub fn ego() -> Route {
        Route::with_extents(
            Approach::South,
            Turn::Left,
            EGO_START_DISTANCE,
            EGO_EXIT_DISTANCE,
        )
    }

    /// `start` and `exit` are distances from the center along the entry and
    /// exit axes.
    pub fn with_extents(approach: Approach, turn: Turn, start: f64, exit: f64) -> Route {
        let lane = LANE_WIDTH / 2.0;
        let mut local = vec![[lane, -start], [lane, -ZONE_HALF]];
        match turn {
            Turn::Straight => {
                local.push([lane, ZONE_HALF]);
                local.push([lane, exit]);
            }
            Turn::Left => {
                let r = ZONE_HALF + lane;
                local.extend(arc([-ZONE_HALF, -ZONE_HALF], r, 0.0, FRAC_PI_2));
                local.push([-exit, lane]);
            }
            Turn::Right => {
                let r = ZONE_HALF - lane;
                local.extend(arc([ZONE_HALF, -ZONE_HALF], r, 2.0 * FRAC_PI_2, FRAC_PI_2));
                local.push([exit, -lane]);
            }
        }
        let points: Vec<Vec2> = local
            .into_iter()
            .map(|p| rotate(p, approach.quarter_turns()))
            .collect();
        let mut cumulative = Vec::with_capacity(points.len());
        let mut total = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            total += dist(w[0], w[1]);
            cumulative.push(total);
        }
        // points[1] is the zone entry, the second-to-last point the zone exit.
        let zone_entry = cumulative[1];
        let zone_exit = cumulative[cumulative.len() - 2];
        Route {
            approach,
            turn,
            points,
            cumulative,
            zone_entry,
            zone_exit,
        }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("route has points")
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).expect("finite arc length"))
        {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Position and heading at arc length `s` (clamped to the route).
    pub fn pose_at(&self, s: f64) -> (Vec2, f64) {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg > 0.0 {
            ((s - self.cumulative[i]) / seg).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let pos = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        (pos, heading)
    }

    /// Closest point of the polyline to `p`.
    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: f64::INFINITY,
            heading: 0.0,
        };
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = [a[0] + t * d[0], a[1] + t * d[1]];
            let lateral = dist(p, q);
            if lateral < best.lateral {
                best = Projection {
                    s: self.cumulative[i] + t * len2.sqrt(),
                    lateral,
                    heading: d[1].atan2(d[0]),
                };
            }
        }
        best
    }

    /// Signed distance to the conflict zone: positive before entering, zero
    /// while inside, negative once past it.
    pub fn distance_to_conflict(&self, s: f64) -> f64 {
        if s < self.zone_entry {
            self.zone_entry - s
        } else if s <= self.zone_exit {
            0.0
        } else {
            self.zone_exit - s
        }
    }
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Smallest absolute difference between two angles.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

pub fn in_conflict_zone(p: Vec2) -> bool {
    p[0].abs() <= ZONE_HALF && p[1].abs() <= ZONE_HALF
}
