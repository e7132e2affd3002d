//! Deterministic unsignalized four-way intersection.
//!
//! The ego vehicle drives a fixed left turn from the south arm to the west
//! exit and only chooses among three speed meta-actions at the policy rate.
//! Human vehicles (HVs) follow their own routes under IDM car following and
//! never yield at the crossing.

pub mod collision;
pub mod geometry;
pub mod idm;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::Observation;
use collision::OrientedRect;
use geometry::{Approach, Route, Turn};
use idm::IdmParams;

pub const VEHICLE_LENGTH: f64 = 5.0;
pub const VEHICLE_WIDTH: f64 = 2.0;
/// Proportional gain of the ego speed controller (1/s).
pub const SPEED_GAIN: f64 = 2.0;
/// Actuator limit shared by all vehicles (m/s²).
pub const MAX_ACCEL: f64 = 5.0;
/// No vehicle ever exceeds this speed (m/s).
pub const SPEED_LIMIT: f64 = 10.0;
/// The ego has arrived once it is this close to the end of its route (m).
pub const ARRIVAL_MARGIN: f64 = 1.0;
/// Extra bumper clearance required when placing or spawning an HV (m).
const PLACEMENT_CLEARANCE: f64 = 2.0;
const PLACEMENT_TRIES: usize = 200;
const HV_SPEED_MEAN: f64 = 8.0;
const HV_SPEED_STD: f64 = 1.0;
const HV_SPEED_RANGE: (f64, f64) = (5.0, 10.0);

/// The three speed commands available to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MetaAction {
    Slower = 0,
    Idle = 1,
    Faster = 2,
}

impl MetaAction {
    pub const ALL: [MetaAction; 3] = [MetaAction::Slower, MetaAction::Idle, MetaAction::Faster];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<MetaAction> {
        MetaAction::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MetaAction::Slower => "slower",
            MetaAction::Idle => "idle",
            MetaAction::Faster => "faster",
        }
    }
}

/// Scenario parameters (the `[env]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub initial_vehicle_count: usize,
    pub spawn_probability: f64,
    pub sim_frequency_hz: u32,
    pub policy_frequency_hz: u32,
    pub seed: u64,
    /// Discrete ego speed levels (m/s), ascending.
    pub target_speeds: Vec<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            duration_s: 30.0,
            initial_vehicle_count: 5,
            spawn_probability: 0.2,
            sim_frequency_hz: 15,
            policy_frequency_hz: 1,
            seed: 0,
            target_speeds: vec![0.0, 4.5, 9.0],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("env.{key}: {why}")));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.spawn_probability) {
            return bad("spawn_probability", "must lie in [0, 1]");
        }
        if self.policy_frequency_hz == 0 {
            return bad("policy_frequency_hz", "must be positive");
        }
        if self.sim_frequency_hz == 0 || !self.sim_frequency_hz.is_multiple_of(self.policy_frequency_hz) {
            return bad(
                "sim_frequency_hz",
                "must be a positive multiple of policy_frequency_hz",
            );
        }
        if self.target_speeds.is_empty()
            || self
                .target_speeds
                .iter()
                .any(|v| !v.is_finite() || *v < 0.0 || *v > SPEED_LIMIT)
            || self.target_speeds.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(
                "target_speeds",
                "must be strictly ascending speeds within [0, 10] m/s",
            );
        }
        Ok(())
    }

    pub fn ticks_per_decision(&self) -> u32 {
        self.sim_frequency_hz / self.policy_frequency_hz
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_frequency_hz as f64
    }

    fn initial_speed_level(&self) -> usize {
        self.target_speeds.len() / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u32,
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub target_speed: f64,
    pub route: Arc<Route>,
    /// Arc length travelled along `route`.
    pub s: f64,
    pub length: f64,
    pub width: f64,
    pub is_ego: bool,
}

impl VehicleState {
    pub fn on_route(id: u32, route: Arc<Route>, s: f64, speed: f64, is_ego: bool) -> Self {
        let (position, heading) = route.pose_at(s);
        VehicleState {
            id,
            position,
            heading,
            speed,
            target_speed: speed,
            route,
            s,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
            is_ego,
        }
    }

    pub fn footprint(&self) -> OrientedRect {
        OrientedRect {
            center: self.position,
            heading: self.heading,
            length: self.length,
            width: self.width,
        }
    }

    fn padded_footprint(&self, clearance: f64) -> OrientedRect {
        OrientedRect {
            length: self.length + 2.0 * clearance,
            ..self.footprint()
        }
    }

    pub fn distance_to_conflict(&self) -> f64 {
        self.route.distance_to_conflict(self.s)
    }

    fn advance(&mut self, accel: f64, dt: f64) {
        let accel = accel.clamp(-MAX_ACCEL, MAX_ACCEL);
        self.speed = (self.speed + accel * dt).clamp(0.0, SPEED_LIMIT);
        self.s += self.speed * dt;
        let (p, h) = self.route.pose_at(self.s);
        self.position = p;
        self.heading = h;
    }
}

/// Outcome flags of one decision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub collided: bool,
    pub arrived: bool,
    pub truncated: bool,
    pub ego_speed: f64,
    pub sim_time: f64,
}

impl StepOutcome {
    pub fn is_terminal(&self) -> bool {
        self.collided || self.arrived || self.truncated
    }
}

/// Full world state, including the scenario's private random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub config: ScenarioConfig,
    pub ego: VehicleState,
    pub hvs: Vec<VehicleState>,
    /// Physics ticks elapsed.
    pub ticks: u64,
    /// Decision steps elapsed.
    pub decisions: u64,
    /// Index into `config.target_speeds` currently commanded for the ego.
    pub speed_level: usize,
    pub terminal: bool,
    /// Decision steps on which the spawn draw fired.
    pub spawn_triggers: u64,
    /// HVs actually inserted by the spawner (triggers minus rejections).
    pub spawned: u64,
    pub idm: IdmParams,
    next_id: u32,
    rng: ChaCha8Rng,
}

/// Starts an episode: validated config in, initial state and observation out.
pub fn reset(config: &ScenarioConfig) -> Result<(SimState, Observation)> {
    let state = SimState::new(config)?;
    let obs = Observation::initial(&state);
    Ok((state, obs))
}

impl SimState {
    pub fn new(config: &ScenarioConfig) -> Result<SimState> {
        let mut state = SimState::empty(config)?;
        for _ in 0..config.initial_vehicle_count {
            state.place_random_hv()?;
        }
        Ok(state)
    }

    /// Ego only, no traffic, regardless of `initial_vehicle_count`.
    pub fn empty(config: &ScenarioConfig) -> Result<SimState> {
        config.validate()?;
        let level = config.initial_speed_level();
        let speed = config.target_speeds[level];
        let ego = VehicleState::on_route(0, Arc::new(Route::ego()), 0.0, speed, true);
        Ok(SimState {
            config: config.clone(),
            ego,
            hvs: Vec::new(),
            ticks: 0,
            decisions: 0,
            speed_level: level,
            terminal: false,
            spawn_triggers: 0,
            spawned: 0,
            idm: IdmParams::default(),
            next_id: 1,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        std::iter::once(&self.ego).chain(self.hvs.iter())
    }

    pub fn sim_time(&self) -> f64 {
        self.ticks as f64 / self.config.sim_frequency_hz as f64
    }

    /// Inserts an HV at arc length `s` of the given route; no overlap check.
    pub fn add_hv(&mut self, approach: Approach, turn: Turn, s: f64, speed: f64) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        let route = Arc::new(Route::new(approach, turn));
        self.hvs.push(VehicleState::on_route(id, route, s, speed, false));
        id
    }

    /// Moves the ego to arc length `s` with the given speed, keeping the
    /// commanded level.
    pub fn set_ego(&mut self, s: f64, speed: f64) {
        let route = self.ego.route.clone();
        let target = self.ego.target_speed;
        self.ego = VehicleState::on_route(0, route, s, speed, true);
        self.ego.target_speed = target;
    }

    fn clear_of_traffic(&self, candidate: &VehicleState) -> bool {
        let padded = candidate.padded_footprint(PLACEMENT_CLEARANCE);
        self.vehicles()
            .all(|v| !padded.overlaps(&v.padded_footprint(PLACEMENT_CLEARANCE)))
    }

    fn sample_hv_speed(&mut self) -> f64 {
        let normal = Normal::new(HV_SPEED_MEAN, HV_SPEED_STD).expect("valid normal");
        normal
            .sample(&mut self.rng)
            .clamp(HV_SPEED_RANGE.0, HV_SPEED_RANGE.1)
    }

    fn sample_route(&mut self) -> Route {
        let approach = Approach::NON_EGO[self.rng.random_range(0..Approach::NON_EGO.len())];
        let turn = Turn::ALL[self.rng.random_range(0..Turn::ALL.len())];
        Route::new(approach, turn)
    }

    fn place_random_hv(&mut self) -> Result<()> {
        for _ in 0..PLACEMENT_TRIES {
            let route = self.sample_route();
            // Keep initial traffic upstream of the crossing, at least one car
            // length short of the zone.
            let span = (route.zone_entry - VEHICLE_LENGTH - 1.0).max(0.0);
            let s = self.rng.random_range(0.0..=span);
            let speed = self.sample_hv_speed();
            let candidate = VehicleState::on_route(self.next_id, Arc::new(route), s, speed, false);
            if self.clear_of_traffic(&candidate) {
                self.next_id += 1;
                self.hvs.push(candidate);
                return Ok(());
            }
        }
        Err(Error::Placement(format!(
            "{} HVs requested, only {} placed after {PLACEMENT_TRIES} tries",
            self.config.initial_vehicle_count,
            self.hvs.len()
        )))
    }

    fn try_spawn(&mut self) {
        self.spawn_triggers += 1;
        let route = self.sample_route();
        let speed = self.sample_hv_speed();
        let candidate = VehicleState::on_route(self.next_id, Arc::new(route), 0.0, speed, false);
        if self.clear_of_traffic(&candidate) {
            self.next_id += 1;
            self.spawned += 1;
            self.hvs.push(candidate);
        }
    }

    fn ego_collides(&self) -> bool {
        let ego = self.ego.footprint();
        self.hvs.iter().any(|v| ego.overlaps(&v.footprint()))
    }

    fn tick(&mut self) {
        let dt = self.config.dt();
        let accels: Vec<f64> = self
            .hvs
            .iter()
            .map(|v| idm::hv_policy(v, self, &self.idm))
            .collect();
        let ego_accel = SPEED_GAIN * (self.ego.target_speed - self.ego.speed);
        self.ego.advance(ego_accel, dt);
        for (v, a) in self.hvs.iter_mut().zip(accels) {
            v.advance(a, dt);
        }
        self.hvs.retain(|v| v.s < v.route.length());
        self.ticks += 1;
    }

    /// Applies one meta-action and advances the physics until the next
    /// decision point or a terminal event.
    pub fn step(&mut self, action: MetaAction) -> Result<StepOutcome> {
        if self.terminal {
            return Err(Error::Protocol("step called on a terminal episode".into()));
        }
        let top = self.config.target_speeds.len() - 1;
        self.speed_level = match action {
            MetaAction::Slower => self.speed_level.saturating_sub(1),
            MetaAction::Idle => self.speed_level,
            MetaAction::Faster => (self.speed_level + 1).min(top),
        };
        self.ego.target_speed = self.config.target_speeds[self.speed_level];

        // Always draw, so the stream does not depend on the spawn outcome.
        let draw: f64 = self.rng.random();
        if draw < self.config.spawn_probability {
            self.try_spawn();
        }

        let mut collided = false;
        let mut arrived = false;
        for _ in 0..self.config.ticks_per_decision() {
            self.tick();
            if self.ego_collides() {
                collided = true;
                break;
            }
            if self.ego.s >= self.ego.route.length() - ARRIVAL_MARGIN {
                arrived = true;
                break;
            }
        }
        self.decisions += 1;
        let sim_time = self.sim_time();
        let truncated = !collided && !arrived && sim_time >= self.config.duration_s - 1e-9;
        self.terminal = collided || arrived || truncated;
        Ok(StepOutcome {
            collided,
            arrived,
            truncated,
            ego_speed: self.ego.speed,
            sim_time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(count: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            initial_vehicle_count: count,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let (a, oa) = reset(&cfg(1, 7)).unwrap();
        let (b, ob) = reset(&cfg(1, 7)).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(oa, ob);
    }

    #[test]
    fn reset_places_requested_traffic() {
        let (s, _) = reset(&cfg(5, 3)).unwrap();
        assert_eq!(s.vehicles().count(), 6);
        assert!(s.hvs.iter().all(|v| v.route.approach != Approach::South));
        let (s, _) = reset(&cfg(0, 3)).unwrap();
        assert_eq!(s.vehicles().count(), 1);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cfg(1, 0);
        c.sim_frequency_hz = 16;
        c.policy_frequency_hz = 3;
        assert!(matches!(SimState::new(&c), Err(Error::Config(_))));
        let mut c = cfg(1, 0);
        c.spawn_probability = 1.5;
        assert!(matches!(SimState::new(&c), Err(Error::Config(_))));
    }

    #[test]
    fn overcrowded_scenario_fails_placement() {
        assert!(matches!(
            SimState::new(&cfg(40, 1)),
            Err(Error::Placement(_))
        ));
    }

    #[test]
    fn empty_road_cannot_collide() {
        let mut c = cfg(0, 1);
        c.spawn_probability = 0.0;
        let mut s = SimState::new(&c).unwrap();
        let out = s.step(MetaAction::Faster).unwrap();
        assert!(!out.collided);
    }

    #[test]
    fn idle_at_cruise_speed_covers_nine_meters() {
        let mut c = cfg(0, 1);
        c.spawn_probability = 0.0;
        let mut s = SimState::empty(&c).unwrap();
        s.speed_level = 2;
        s.ego.target_speed = 9.0;
        s.set_ego(0.0, 9.0);
        let out = s.step(MetaAction::Idle).unwrap();
        assert_eq!(s.ticks, 15);
        assert!((out.ego_speed - 9.0).abs() < 1e-9);
        assert!((s.ego.s - 9.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_collides_on_first_tick() {
        let mut c = cfg(0, 1);
        c.spawn_probability = 0.0;
        let mut s = SimState::empty(&c).unwrap();
        // A stopped HV sitting on top of the ego.
        s.hvs.push(VehicleState::on_route(
            99,
            s.ego.route.clone(),
            s.ego.s,
            0.0,
            false,
        ));
        let out = s.step(MetaAction::Idle).unwrap();
        assert!(out.collided);
        assert_eq!(s.ticks, 1);
        assert!(s.terminal);
        assert!(matches!(s.step(MetaAction::Idle), Err(Error::Protocol(_))));
    }

    #[test]
    fn truncates_at_duration() {
        let mut c = cfg(0, 1);
        c.spawn_probability = 0.0;
        let mut s = SimState::new(&c).unwrap();
        let mut last = None;
        for _ in 0..30 {
            let out = s.step(MetaAction::Slower).unwrap();
            last = Some(out);
            if out.is_terminal() {
                break;
            }
        }
        let out = last.unwrap();
        assert!(out.truncated && !out.arrived && !out.collided);
        assert!((out.sim_time - 30.0).abs() < 1e-9);
    }

    #[test]
    fn faster_on_empty_road_arrives() {
        let mut c = cfg(0, 1);
        c.spawn_probability = 0.0;
        let mut s = SimState::new(&c).unwrap();
        let mut outcome = None;
        while !s.terminal {
            outcome = Some(s.step(MetaAction::Faster).unwrap());
        }
        let out = outcome.unwrap();
        assert!(out.arrived, "{out:?}");
        assert!(out.sim_time < 10.0);
    }
}
