//! Intelligent-driver-model car following for human-driven vehicles.

use serde::{Deserialize, Serialize};

use super::geometry::angle_diff;
use super::{SimState, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum free-road acceleration (m/s²).
    pub accel: f64,
    /// Comfortable deceleration (m/s², positive).
    pub comfort_decel: f64,
    /// Minimum bumper-to-bumper spacing (m).
    pub min_gap: f64,
    /// Desired time headway (s).
    pub time_headway: f64,
    pub delta: f64,
    /// Vehicles farther ahead than this are ignored (m).
    pub lookahead: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            accel: 3.0,
            comfort_decel: 4.0,
            min_gap: 2.0,
            time_headway: 1.5,
            delta: 4.0,
            lookahead: 40.0,
        }
    }
}

/// A vehicle ahead in the same lane: bumper gap and its speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

impl IdmParams {
    /// Closed-form IDM acceleration, before any actuator limit.
    pub fn acceleration(&self, speed: f64, target_speed: f64, leader: Option<Leader>) -> f64 {
        let free = if target_speed > 0.0 {
            1.0 - (speed / target_speed).powf(self.delta)
        } else {
            -1.0
        };
        let interaction = match leader {
            Some(l) => {
                let dv = speed - l.speed;
                let desired = self.min_gap
                    + (speed * self.time_headway
                        + speed * dv / (2.0 * (self.accel * self.comfort_decel).sqrt()))
                    .max(0.0);
                let gap = l.gap.max(1e-3);
                (desired / gap).powi(2)
            }
            None => 0.0,
        };
        self.accel * (free - interaction)
    }
}

/// Nearest vehicle ahead of `vehicle` that sits in its lane and drives the
/// same way. The ego counts too: HVs never yield at the crossing, but they do
/// not drive into the back of a car already in their lane.
pub fn find_leader(vehicle: &VehicleState, state: &SimState, params: &IdmParams) -> Option<Leader> {
    let lane_tolerance = super::geometry::LANE_WIDTH / 2.0 - 0.5;
    let mut best: Option<Leader> = None;
    for other in state.vehicles() {
        if other.id == vehicle.id {
            continue;
        }
        let dx = other.position[0] - vehicle.position[0];
        let dy = other.position[1] - vehicle.position[1];
        if dx * dx + dy * dy > (params.lookahead + other.length).powi(2) {
            continue;
        }
        let proj = vehicle.route.project(other.position);
        if proj.lateral > lane_tolerance
            || angle_diff(proj.heading, other.heading) > std::f64::consts::FRAC_PI_4
        {
            continue;
        }
        let ahead = proj.s - vehicle.s;
        if ahead <= 0.0 || ahead > params.lookahead {
            continue;
        }
        let gap = ahead - (vehicle.length + other.length) / 2.0;
        if best.is_none_or(|b| gap < b.gap) {
            best = Some(Leader {
                gap,
                speed: other.speed,
            });
        }
    }
    best
}

/// Acceleration command for a human-driven vehicle.
pub fn hv_policy(vehicle: &VehicleState, state: &SimState, params: &IdmParams) -> f64 {
    debug_assert!(!vehicle.is_ego, "hv_policy called on the ego vehicle");
    let leader = find_leader(vehicle, state, params);
    params.acceleration(vehicle.speed, vehicle.target_speed, leader)
}
