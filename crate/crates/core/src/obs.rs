//! Top-down grayscale rendering, the four-frame stack, and the kinematic
//! feature vector consumed by reward models.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::sim::geometry::{Approach, LANE_WIDTH};
use crate::sim::{SimState, VehicleState};

pub const FRAME_WIDTH: usize = 128;
pub const FRAME_HEIGHT: usize = 64;
pub const FRAME_PIXELS: usize = FRAME_WIDTH * FRAME_HEIGHT;
pub const STACK_SIZE: usize = 4;
/// Rendering scale.
pub const PIXELS_PER_METER: f64 = 2.0;
/// Half extents of the rendered world window (m).
pub const VIEW_HALF_WIDTH: f64 = 32.0;
pub const VIEW_HALF_HEIGHT: f64 = 16.0;

pub const BACKGROUND: u8 = 0;
pub const ROAD: u8 = 100;
pub const HV: u8 = 200;
pub const EGO: u8 = 255;

pub const FINGERPRINT_WIDTH: usize = 32;
pub const FINGERPRINT_HEIGHT: usize = 16;
pub const FINGERPRINT_LEN: usize = FINGERPRINT_WIDTH * FINGERPRINT_HEIGHT;
const POOL: usize = FRAME_WIDTH / FINGERPRINT_WIDTH;

/// One 128×64 grayscale image, row-major, row 0 at the top (north).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pixels: Box<[u8]>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lit = self.pixels.iter().filter(|&&p| p != BACKGROUND).count();
        write!(f, "Frame({FRAME_WIDTH}x{FRAME_HEIGHT}, {lit} lit)")
    }
}

impl Frame {
    pub fn blank() -> Frame {
        Frame {
            pixels: vec![BACKGROUND; FRAME_PIXELS].into_boxed_slice(),
        }
    }

    pub fn from_pixels(pixels: Vec<u8>) -> Result<Frame> {
        if pixels.len() != FRAME_PIXELS {
            return Err(Error::Shape(format!(
                "frame needs {FRAME_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Frame {
            pixels: pixels.into_boxed_slice(),
        })
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * FRAME_WIDTH + col]
    }

    /// Binary PGM with header `P5 128 64 255`.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "P5 {FRAME_WIDTH} {FRAME_HEIGHT} 255")?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(mut r: R) -> Result<Frame> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Shape("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        let expected = ["P5", "128", "64", "255"];
        if fields != expected {
            return Err(Error::Shape(format!(
                "expected PGM header {expected:?}, got {fields:?}"
            )));
        }
        Frame::from_pixels(bytes[pos + 1..].to_vec())
    }

    /// Mean-pooled 32×16 thumbnail (4×4 blocks, rounded to nearest).
    pub fn fingerprint(&self) -> [u8; FINGERPRINT_LEN] {
        let mut out = [0u8; FINGERPRINT_LEN];
        for fy in 0..FINGERPRINT_HEIGHT {
            for fx in 0..FINGERPRINT_WIDTH {
                let mut sum = 0u32;
                for dy in 0..POOL {
                    let row = (fy * POOL + dy) * FRAME_WIDTH + fx * POOL;
                    sum += self.pixels[row..row + POOL]
                        .iter()
                        .map(|&p| p as u32)
                        .sum::<u32>();
                }
                out[fy * FINGERPRINT_WIDTH + fx] = ((sum + 8) / 16) as u8;
            }
        }
        out
    }
}

/// Pixel column/row whose center is nearest to world point `(x, y)`; may be
/// outside the frame.
pub fn world_to_pixel(x: f64, y: f64) -> (f64, f64) {
    (
        (x + VIEW_HALF_WIDTH) * PIXELS_PER_METER - 0.5,
        (VIEW_HALF_HEIGHT - y) * PIXELS_PER_METER - 0.5,
    )
}

fn pixel_center(col: usize, row: usize) -> [f64; 2] {
    [
        (col as f64 + 0.5) / PIXELS_PER_METER - VIEW_HALF_WIDTH,
        VIEW_HALF_HEIGHT - (row as f64 + 0.5) / PIXELS_PER_METER,
    ]
}

fn road_layer() -> &'static [u8] {
    static ROADS: std::sync::OnceLock<Box<[u8]>> = std::sync::OnceLock::new();
    ROADS.get_or_init(|| {
        let mut px = vec![BACKGROUND; FRAME_PIXELS];
        for row in 0..FRAME_HEIGHT {
            for col in 0..FRAME_WIDTH {
                let [x, y] = pixel_center(col, row);
                if x.abs() <= LANE_WIDTH || y.abs() <= LANE_WIDTH {
                    px[row * FRAME_WIDTH + col] = ROAD;
                }
            }
        }
        px.into_boxed_slice()
    })
}

/// Scan-fills a vehicle footprint: every pixel whose center lies inside.
fn fill_vehicle(pixels: &mut [u8], v: &VehicleState, value: u8) {
    let rect = v.footprint();
    let corners = rect.corners();
    let (mut c0, mut c1, mut r0, mut r1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for [x, y] in corners {
        let (c, r) = world_to_pixel(x, y);
        c0 = c0.min(c);
        c1 = c1.max(c);
        r0 = r0.min(r);
        r1 = r1.max(r);
    }
    let clamp_col = |v: f64| v.clamp(0.0, (FRAME_WIDTH - 1) as f64) as usize;
    let clamp_row = |v: f64| v.clamp(0.0, (FRAME_HEIGHT - 1) as f64) as usize;
    if c1 < -0.5 || r1 < -0.5 || c0 > FRAME_WIDTH as f64 || r0 > FRAME_HEIGHT as f64 {
        return;
    }
    for row in clamp_row(r0.floor())..=clamp_row(r1.ceil()) {
        for col in clamp_col(c0.floor())..=clamp_col(c1.ceil()) {
            if rect.contains(pixel_center(col, row)) {
                pixels[row * FRAME_WIDTH + col] = value;
            }
        }
    }
}

/// Renders roads, then human vehicles, then the ego on top.
pub fn render(state: &SimState) -> Frame {
    let mut pixels = road_layer().to_vec();
    for v in &state.hvs {
        fill_vehicle(&mut pixels, v, HV);
    }
    fill_vehicle(&mut pixels, &state.ego, EGO);
    Frame {
        pixels: pixels.into_boxed_slice(),
    }
}

/// Large finite stand-in for "no vehicle on this approach".
pub const NO_VEHICLE: f64 = 1e4;
pub const FEATURE_DIM: usize = 10;

/// `[ego_speed, ego_distance_to_conflict, dist_S, dist_E, dist_N, dist_W,
/// speed_S, speed_E, speed_N, speed_W]`, per-approach slots holding the
/// nearest HV that has not yet cleared the conflict zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVec(pub [f64; FEATURE_DIM]);

impl FeatureVec {
    pub fn ego_speed(&self) -> f64 {
        self.0[0]
    }

    pub fn ego_distance_to_conflict(&self) -> f64 {
        self.0[1]
    }

    pub fn hv_distance(&self, approach: Approach) -> f64 {
        self.0[2 + approach.index()]
    }

    pub fn hv_speed(&self, approach: Approach) -> f64 {
        self.0[6 + approach.index()]
    }

    /// `(distance, speed)` for every occupied approach slot.
    pub fn occupied(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        Approach::ALL
            .into_iter()
            .map(|a| (self.hv_distance(a), self.hv_speed(a)))
            .filter(|&(d, _)| d < NO_VEHICLE)
    }
}

pub fn features(state: &SimState) -> FeatureVec {
    let mut f = [NO_VEHICLE; FEATURE_DIM];
    f[0] = state.ego.speed;
    f[1] = state.ego.distance_to_conflict();
    for v in &state.hvs {
        let d = v.distance_to_conflict();
        if d < 0.0 {
            continue;
        }
        let slot = v.route.approach.index();
        if d < f[2 + slot] {
            f[2 + slot] = d;
            f[6 + slot] = v.speed;
        }
    }
    FeatureVec(f)
}

/// The agent's view: four most recent frames (oldest first) plus features.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frames: [Arc<Frame>; STACK_SIZE],
    pub features: FeatureVec,
}

impl Observation {
    /// Reset contract: the first frame repeated across the whole stack.
    pub fn initial(state: &SimState) -> Observation {
        let first = Arc::new(render(state));
        Observation {
            frames: std::array::from_fn(|_| first.clone()),
            features: features(state),
        }
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push_frame(&self, frame: Arc<Frame>) -> Observation {
        let mut frames = self.frames.clone();
        frames.rotate_left(1);
        frames[STACK_SIZE - 1] = frame;
        Observation {
            frames,
            features: self.features,
        }
    }

    /// Observation of `state` following this one.
    pub fn advance(&self, state: &SimState) -> Observation {
        let mut next = self.push_frame(Arc::new(render(state)));
        next.features = features(state);
        next
    }

    pub fn newest(&self) -> &Frame {
        &self.frames[STACK_SIZE - 1]
    }

    /// Writes the stack as a `(4, 64, 128)` network input scaled to [0, 1].
    pub fn write_input<T: Scalar>(&self, out: &mut [T]) {
        assert_eq!(out.len(), STACK_SIZE * FRAME_PIXELS);
        for (chunk, frame) in out.chunks_exact_mut(FRAME_PIXELS).zip(&self.frames) {
            for (o, &p) in chunk.iter_mut().zip(frame.pixels.iter()) {
                *o = T::from_f32(p as f32 / 255.0);
            }
        }
    }

    /// Appends the network input to `out`.
    pub fn extend_input<T: Scalar>(&self, out: &mut Vec<T>) {
        out.reserve(STACK_SIZE * FRAME_PIXELS);
        for frame in &self.frames {
            out.extend(frame.pixels.iter().map(|&p| T::from_f32(p as f32 / 255.0)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::Turn;
    use crate::sim::ScenarioConfig;

    fn empty_state() -> SimState {
        let cfg = ScenarioConfig {
            initial_vehicle_count: 0,
            ..ScenarioConfig::default()
        };
        SimState::empty(&cfg).unwrap()
    }

    fn count(frame: &Frame, value: u8) -> usize {
        frame.pixels().iter().filter(|&&p| p == value).count()
    }

    /// Reference scan-fill for an axis-aligned box: pixels whose centers fall
    /// inside `[x0, x1] × [y0, y1]`.
    fn reference_box(x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for row in 0..FRAME_HEIGHT {
            for col in 0..FRAME_WIDTH {
                let x = (col as f64 + 0.5) / 2.0 - 32.0;
                let y = 16.0 - (row as f64 + 0.5) / 2.0;
                if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                    out.push((col, row));
                }
            }
        }
        out
    }

    fn lit(frame: &Frame, value: u8) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for row in 0..FRAME_HEIGHT {
            for col in 0..FRAME_WIDTH {
                if frame.get(col, row) == value {
                    out.push((col, row));
                }
            }
        }
        out
    }

    #[test]
    fn empty_scene_has_no_vehicles() {
        let mut s = empty_state();
        // Park the ego outside the window.
        s.ego.position = [500.0, 500.0];
        let f = render(&s);
        assert_eq!(count(&f, HV) + count(&f, EGO), 0);
        assert!(count(&f, ROAD) > 0);
        assert_eq!(f.get(0, 0), BACKGROUND);
    }

    #[test]
    fn ego_at_origin_is_a_ten_by_four_block() {
        let mut s = empty_state();
        s.ego.position = [0.0, 0.0];
        s.ego.heading = 0.0;
        let f = render(&s);
        let expected = reference_box(-2.5, 2.5, -1.0, 1.0);
        assert_eq!(expected.len(), 40);
        assert_eq!(lit(&f, EGO), expected);
        let cols: Vec<_> = expected.iter().map(|p| p.0).collect();
        assert_eq!((cols[0], *cols.iter().max().unwrap()), (59, 68));
    }

    #[test]
    fn translation_shifts_by_two_pixels_per_meter() {
        let mut s = empty_state();
        s.ego.position = [3.0, 1.0];
        s.ego.heading = std::f64::consts::FRAC_PI_2;
        let a = lit(&render(&s), EGO);
        s.ego.position[0] += 1.0;
        let b = lit(&render(&s), EGO);
        let shifted: Vec<_> = a.iter().map(|&(c, r)| (c + 2, r)).collect();
        assert_eq!(b, shifted);
    }

    #[test]
    fn render_is_deterministic_and_ego_on_top() {
        let mut s = empty_state();
        s.add_hv(Approach::East, Turn::Straight, 20.0, 8.0);
        let a = render(&s);
        assert_eq!(a, render(&s));
        assert!(count(&a, HV) > 0 && count(&a, EGO) > 0);
    }

    #[test]
    fn push_frame_is_a_queue() {
        let frames: Vec<Arc<Frame>> = (0..5u8)
            .map(|i| Arc::new(Frame::from_pixels(vec![i; FRAME_PIXELS]).unwrap()))
            .collect();
        let obs = Observation {
            frames: [
                frames[0].clone(),
                frames[1].clone(),
                frames[2].clone(),
                frames[3].clone(),
            ],
            features: FeatureVec([0.0; FEATURE_DIM]),
        };
        let next = obs.push_frame(frames[4].clone());
        let ids: Vec<u8> = next.frames.iter().map(|f| f.pixels()[0]).collect();
        assert_eq!(ids, vec![1, 2, 3, 4]);
    }

    #[test]
    fn reset_stack_repeats_first_frame() {
        let s = empty_state();
        let obs = Observation::initial(&s);
        assert!(obs.frames.iter().all(|f| **f == *obs.frames[0]));
        let again = obs.push_frame(obs.frames[0].clone());
        assert!(again.frames.iter().all(|f| **f == *obs.frames[0]));
    }

    #[test]
    fn features_without_traffic_are_sentinels() {
        let f = features(&empty_state());
        assert!(f.0[2..].iter().all(|&v| v == NO_VEHICLE));
        assert_eq!(f.occupied().count(), 0);
    }

    #[test]
    fn features_read_ego_and_pick_nearest_hv() {
        let mut s = empty_state();
        // Stretch the ego route so it can sit 20 m short of the zone.
        s.ego.route = Arc::new(crate::sim::geometry::Route::with_extents(
            Approach::South,
            Turn::Left,
            30.0,
            30.0,
        ));
        s.set_ego(4.0, 9.0);
        let east_entry = crate::sim::geometry::Route::new(Approach::East, Turn::Straight).zone_entry;
        s.add_hv(Approach::East, Turn::Straight, east_entry - 27.0, 7.0);
        s.add_hv(Approach::East, Turn::Left, east_entry - 15.0, 8.0);
        let f = features(&s);
        assert_eq!(f.ego_speed(), 9.0);
        assert!((f.ego_distance_to_conflict() - 20.0).abs() < 1e-12);
        assert!((f.hv_distance(Approach::East) - 15.0).abs() < 1e-12);
        assert_eq!(f.hv_speed(Approach::East), 8.0);
        assert_eq!(f.hv_distance(Approach::North), NO_VEHICLE);
    }

    #[test]
    fn pgm_round_trip_and_header() {
        let s = empty_state();
        let f = render(&s);
        let mut buf = Vec::new();
        f.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5 128 64 255\n"));
        assert_eq!(buf.len(), 14 + FRAME_PIXELS);
        assert_eq!(Frame::read_pgm(&buf[..]).unwrap(), f);
        assert!(Frame::read_pgm(&b"P2 128 64 255\n"[..]).is_err());
    }

    #[test]
    fn fingerprint_mean_pools() {
        let mut px = vec![0u8; FRAME_PIXELS];
        // One 4×4 block at fingerprint cell (1, 0) set to 10, one pixel to 255.
        for r in 0..4 {
            for c in 4..8 {
                px[r * FRAME_WIDTH + c] = 10;
            }
        }
        px[0] = 255;
        let fp = Frame::from_pixels(px).unwrap().fingerprint();
        assert_eq!(fp[1], 10);
        assert_eq!(fp[0], 16); // (255 + 8) / 16
        assert_eq!(fp[2], 0);
    }

    #[test]
    fn network_input_is_scaled() {
        let s = empty_state();
        let obs = Observation::initial(&s);
        let mut buf = vec![0f32; STACK_SIZE * FRAME_PIXELS];
        obs.write_input(&mut buf);
        assert!(buf.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(buf.contains(&1.0));
    }
}
