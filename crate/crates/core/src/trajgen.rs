//! Reference trajectories: generators, constant-chord resampling, the
//! bundled validation circuit, pose sampling and nearest-waypoint search.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{Observation, VehicleParams, VehicleState};

/// Forward search window of [`nearest_ref_index`], in waypoints.
pub const SEARCH_WINDOW: usize = 50;

/// Waypoints at uniform spacing with the heading of the chord to the next point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefTrajectory {
    points: Vec<Observation>,
    headings: Vec<f64>,
    spacing: f64,
}

impl RefTrajectory {
    /// Wraps already-spaced points; headings are derived from the chords.
    pub fn from_points(points: Vec<Observation>, spacing: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a trajectory needs at least two points"));
        }
        if !(spacing > 0.0) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite points or non-positive spacing"));
        }
        let mut headings: Vec<f64> = points
            .windows(2)
            .map(|w| (w[1].y - w[0].y).atan2(w[1].x - w[0].x))
            .collect();
        headings.push(*headings.last().unwrap());
        Ok(Self {
            points,
            headings,
            spacing,
        })
    }

    /// Resamples a polyline so consecutive points are exactly `spacing` apart (chord length).
    pub fn from_polyline(polyline: &[Observation], spacing: f64) -> Result<Self> {
        Self::from_points(resample_polyline(polyline, spacing)?, spacing)
    }

    pub fn points(&self) -> &[Observation] {
        &self.points
    }

    pub fn headings(&self) -> &[f64] {
        &self.headings
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest index whose `horizon` successors all exist.
    pub fn last_usable_index(&self, horizon: usize) -> usize {
        self.points.len().saturating_sub(horizon + 1)
    }

    /// Pose sitting on waypoint `k` and aligned with its tangent.
    pub fn pose_at(&self, k: usize) -> VehicleState {
        let p = self.points[k];
        VehicleState::new(p.x, p.y, self.headings[k])
    }

    /// Finite-difference curvature: turn angle between consecutive chords over the spacing.
    pub fn max_curvature(&self) -> f64 {
        self.headings[..self.len() - 1]
            .windows(2)
            .map(|w| crate::features::wrap_angle(w[1] - w[0]).abs() / self.spacing)
            .fold(0.0, f64::max)
    }

    /// Reflection across the x-axis.
    pub fn mirrored(&self) -> Self {
        Self {
            points: self.points.iter().map(|p| Observation::new(p.x, -p.y)).collect(),
            headings: self.headings.iter().map(|h| -h).collect(),
            spacing: self.spacing,
        }
    }

    /// Rotation by `angle` about the origin followed by translation.
    pub fn transformed(&self, angle: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            points: self
                .points
                .iter()
                .map(|p| Observation::new(c * p.x - s * p.y + dx, s * p.x + c * p.y + dy))
                .collect(),
            headings: self.headings.iter().map(|h| h + angle).collect(),
            spacing: self.spacing,
        }
    }
}

/// Walks the polyline emitting points at exact chord distance `spacing` from the previous one.
pub fn resample_polyline(polyline: &[Observation], spacing: f64) -> Result<Vec<Observation>> {
    if polyline.len() < 2 || !(spacing > 0.0) {
        return Err(Error::invalid("resampling needs two or more points and positive spacing"));
    }
    let mut out = vec![polyline[0]];
    let mut cur = polyline[0];
    // Position along the polyline: start of the remaining part of segment `seg`.
    let mut seg = 0;
    let mut from = polyline[0];
    let r2 = spacing * spacing;
    while seg + 1 < polyline.len() {
        let to = polyline[seg + 1];
        if to.distance_squared(&cur) < r2 {
            seg += 1;
            from = to;
            continue;
        }
        // |from + s (to - from) - cur| = spacing with |from - cur| < spacing: the larger root.
        let (dx, dy) = (to.x - from.x, to.y - from.y);
        let (fx, fy) = (from.x - cur.x, from.y - cur.y);
        let a = dx * dx + dy * dy;
        let b = 2.0 * (fx * dx + fy * dy);
        let c = fx * fx + fy * fy - r2;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let s = ((-b + disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0);
        let p = Observation::new(from.x + s * dx, from.y + s * dy);
        out.push(p);
        cur = p;
        from = p;
    }
    Ok(out)
}

/// Straight line along +x, `point[i] = (spacing * i, 0)`.
pub fn gen_straight(length: f64, spacing: f64) -> Result<RefTrajectory> {
    if !(spacing > 0.0) || !(length >= spacing) {
        return Err(Error::invalid(format!("straight of length {length} with spacing {spacing}")));
    }
    let n = (length / spacing + 1e-9).floor() as usize + 1;
    let points = (0..n).map(|i| Observation::new(spacing * i as f64, 0.0)).collect();
    RefTrajectory::from_points(points, spacing)
}

/// `y = amplitude * sin(omega * x)` for `x` in `[0, length]`, resampled.
pub fn gen_sine(amplitude: f64, omega: f64, length: f64, spacing: f64, max_curvature: f64) -> Result<RefTrajectory> {
    if amplitude == 0.0 {
        return gen_straight(length, spacing);
    }
    let peak = amplitude.abs() * omega * omega;
    if peak >= max_curvature {
        return Err(Error::Untrackable {
            curvature: peak,
            limit: max_curvature,
        });
    }
    let n = (length / 0.002).ceil() as usize;
    let poly: Vec<Observation> = (0..=n)
        .map(|i| {
            let x = length * i as f64 / n as f64;
            Observation::new(x, amplitude * (omega * x).sin())
        })
        .collect();
    RefTrajectory::from_polyline(&poly, spacing)
}

/// Archimedean spiral `r = a + b phi`, counter-clockwise and outward from `(a, 0)`.
pub fn gen_spiral(a: f64, b: f64, turns: f64, spacing: f64, max_curvature: f64) -> Result<RefTrajectory> {
    if !(a > 0.0) || !(b > 0.0) || !(turns > 0.0) {
        return Err(Error::invalid(format!("spiral a={a} b={b} turns={turns}")));
    }
    let inner = (a * a + 2.0 * b * b) / (a * a + b * b).powf(1.5);
    if inner >= max_curvature {
        return Err(Error::Untrackable {
            curvature: inner,
            limit: max_curvature,
        });
    }
    let phi_end = TAU * turns;
    let mut poly = Vec::new();
    let mut phi = 0.0;
    while phi < phi_end {
        let r = a + b * phi;
        poly.push(Observation::new(r * phi.cos(), r * phi.sin()));
        phi += 0.002 / r;
    }
    let r = a + b * phi_end;
    poly.push(Observation::new(r * phi_end.cos(), r * phi_end.sin()));
    RefTrajectory::from_polyline(&poly, spacing)
}

/// Index of the waypoint closest to `pos` in `[prev, prev + SEARCH_WINDOW]`,
/// saturated at the last index that still has `horizon` successors.
pub fn nearest_ref_index(traj: &RefTrajectory, pos: &Observation, prev: usize, horizon: usize) -> usize {
    let last = traj.last_usable_index(horizon);
    let start = prev.min(last);
    let end = (start + SEARCH_WINDOW).min(last);
    let mut best = start;
    let mut best_d = f64::INFINITY;
    for (i, p) in traj.points[start..=end].iter().enumerate() {
        let d = p.distance_squared(pos);
        if d < best_d {
            best_d = d;
            best = start + i;
        }
    }
    best
}

/// Symmetric uniform perturbation ranges for initial poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRanges {
    /// Half-width of the lateral offset interval, m.
    pub lateral: f64,
    /// Half-width of the heading offset interval, rad.
    pub heading: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            lateral: 0.5,
            heading: PI / 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialPose {
    pub state: VehicleState,
    pub anchor: usize,
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

/// Random pose near a uniformly chosen waypoint (the last `horizon` points excluded).
pub fn sample_initial_pose<R: Rng + ?Sized>(
    traj: &RefTrajectory,
    ranges: &PoseRanges,
    horizon: usize,
    rng: &mut R,
) -> InitialPose {
    let upper = traj.len().saturating_sub(horizon).max(1);
    let anchor = rng.random_range(0..upper);
    let lateral = symmetric(rng, ranges.lateral);
    let dheading = symmetric(rng, ranges.heading);
    let p = traj.points[anchor];
    let h = traj.headings[anchor];
    InitialPose {
        state: VehicleState::new(p.x - lateral * h.sin(), p.y + lateral * h.cos(), h + dheading),
        anchor,
    }
}

/// Shape parameters of the training trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub straight_length: f64,
    pub sine_amplitude: f64,
    /// Low and high angular frequencies, rad/m; the high one is twice the low one.
    pub sine_omegas: [f64; 2],
    pub sine_length: f64,
    pub spiral_a: f64,
    pub spiral_b: f64,
    pub spiral_turns: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            straight_length: 20.0,
            sine_amplitude: 1.0,
            sine_omegas: [0.5, 1.0],
            sine_length: 30.0,
            spiral_a: 1.0,
            spiral_b: 0.2,
            spiral_turns: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Straight,
    SineLow,
    SineHigh,
    Spiral,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] = [Self::Straight, Self::SineLow, Self::SineHigh, Self::Spiral];

    pub fn name(self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::SineLow => "sine_low",
            Self::SineHigh => "sine_high",
            Self::Spiral => "spiral",
        }
    }
}

/// Training data set identifier; each set adds trajectory kinds to the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DatasetId(u8);

impl DatasetId {
    pub const ONE: DatasetId = DatasetId(1);
    pub const TWO: DatasetId = DatasetId(2);
    pub const THREE: DatasetId = DatasetId(3);

    pub fn new(id: u8) -> Result<Self> {
        Self::try_from(id)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn kinds(self) -> &'static [TrajectoryKind] {
        use TrajectoryKind::*;
        match self.0 {
            1 => &[Straight],
            2 => &[Straight, SineLow, SineHigh],
            _ => &[Straight, SineLow, SineHigh, Spiral],
        }
    }
}

impl TryFrom<u8> for DatasetId {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        if (1..=3).contains(&id) {
            Ok(DatasetId(id))
        } else {
            Err(Error::invalid(format!("data set id must be 1, 2 or 3, got {id}")))
        }
    }
}

impl From<DatasetId> for u8 {
    fn from(id: DatasetId) -> u8 {
        id.0
    }
}

impl std::fmt::Display for DatasetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One pre-generated trajectory per kind, plus its mirror image.
#[derive(Debug, Clone)]
pub struct TrajectoryLibrary {
    entries: Vec<(TrajectoryKind, [RefTrajectory; 2])>,
}

impl TrajectoryLibrary {
    pub fn new(params: &VehicleParams, gen: &GeneratorConfig) -> Result<Self> {
        let s = params.spacing();
        let kmax = params.max_curvature();
        let mut entries = Vec::new();
        for kind in TrajectoryKind::ALL {
            let t = match kind {
                TrajectoryKind::Straight => gen_straight(gen.straight_length, s)?,
                TrajectoryKind::SineLow => gen_sine(gen.sine_amplitude, gen.sine_omegas[0], gen.sine_length, s, kmax)?,
                TrajectoryKind::SineHigh => gen_sine(gen.sine_amplitude, gen.sine_omegas[1], gen.sine_length, s, kmax)?,
                TrajectoryKind::Spiral => gen_spiral(gen.spiral_a, gen.spiral_b, gen.spiral_turns, s, kmax)?,
            };
            let m = t.mirrored();
            entries.push((kind, [t, m]));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, kind: TrajectoryKind, mirrored: bool) -> &RefTrajectory {
        let (_, pair) = self.entries.iter().find(|(k, _)| *k == kind).expect("every kind is generated");
        &pair[mirrored as usize]
    }
}

/// Closed-circuit description: turtle segments starting at the origin heading +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Straight(f64),
    /// Constant-radius arc; positive angle turns left.
    Arc { radius: f64, angle: f64 },
}

/// A centerline given as a dense polyline, possibly closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub centerline: Vec<Observation>,
    pub closed: bool,
}

impl Track {
    pub fn from_segments(segments: &[Segment], closed: bool) -> Self {
        const STEP: f64 = 0.005;
        let mut pts = vec![Observation::new(0.0, 0.0)];
        let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.0f64);
        for seg in segments {
            match *seg {
                Segment::Straight(len) => {
                    x += len * h.cos();
                    y += len * h.sin();
                    pts.push(Observation::new(x, y));
                }
                Segment::Arc { radius, angle } => {
                    let side = angle.signum();
                    let (cx, cy) = (x - side * radius * h.sin(), y + side * radius * h.cos());
                    let n = ((radius * angle.abs()) / STEP).ceil().max(1.0) as usize;
                    for i in 1..=n {
                        let hh = h + angle * i as f64 / n as f64;
                        pts.push(Observation::new(cx + side * radius * hh.sin(), cy - side * radius * hh.cos()));
                    }
                    h += angle;
                    x = cx + side * radius * h.sin();
                    y = cy - side * radius * h.cos();
                }
            }
        }
        Self { centerline: pts, closed }
    }

    pub fn length(&self) -> f64 {
        self.centerline.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    /// One lap, resampled.
    pub fn lap(&self, spacing: f64) -> Result<RefTrajectory> {
        RefTrajectory::from_polyline(&self.centerline, spacing)
    }

    /// `laps` traversals plus `tail` extra waypoints, resampled in one pass so
    /// spacing stays uniform across lap boundaries. Returns the trajectory and
    /// the number of steps that cover the laps.
    pub fn unrolled(&self, laps: usize, tail: usize, spacing: f64) -> Result<(RefTrajectory, usize)> {
        if laps == 0 {
            return Err(Error::invalid("at least one lap"));
        }
        let lap_len = self.length();
        let steps = if self.closed {
            (laps as f64 * lap_len / spacing).floor() as usize
        } else {
            (lap_len / spacing).floor() as usize
        };
        let mut poly = self.centerline.clone();
        if self.closed {
            for _ in 0..laps + 1 {
                let skip = usize::from(poly.last().unwrap().distance(&self.centerline[0]) < 1e-9);
                poly.extend_from_slice(&self.centerline[skip..]);
            }
        } else {
            // Open tracks are extended straight along their final chord.
            let n = poly.len();
            let (a, b) = (poly[n - 2], poly[n - 1]);
            let d = a.distance(&b);
            let ext = spacing * (tail + 2) as f64;
            poly.push(Observation::new(b.x + (b.x - a.x) / d * ext, b.y + (b.y - a.y) / d * ext));
        }
        let mut pts = resample_polyline(&poly, spacing)?;
        pts.truncate(steps + tail + 1);
        if pts.len() < steps + tail + 1 {
            return Err(Error::invalid("track too short to unroll"));
        }
        Ok((RefTrajectory::from_points(pts, spacing)?, steps))
    }

    /// Reads a `x,y` CSV of waypoints (meters). The track counts as closed when
    /// its end lies within three times the largest waypoint gap of its start.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "x" || &headers[1] != "y" {
            return Err(Error::DataFormat {
                path: path.to_owned(),
                reason: "expected header `x,y`".into(),
            });
        }
        let mut pts = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::DataFormat {
                    path: path.to_owned(),
                    reason: format!("bad number in row {:?}", rec.position().map(|p| p.line())),
                })
            };
            pts.push(Observation::new(parse(0)?, parse(1)?));
        }
        if pts.len() < 3 {
            return Err(Error::DataFormat {
                path: path.to_owned(),
                reason: "fewer than three waypoints".into(),
            });
        }
        let max_gap = pts.windows(2).map(|w| w[0].distance(&w[1])).fold(0.0, f64::max);
        let closed = pts[0].distance(pts.last().unwrap()) <= 3.0 * max_gap;
        Ok(Self { centerline: pts, closed })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_track_csv(path, &self.centerline)
    }
}

pub fn write_track_csv(path: &Path, points: &[Observation]) -> Result<()> {
    crate::io::write_atomically(path, |w| {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wtr.write_record(["x", "y"])?;
        for p in points {
            wtr.write_record([crate::io::fmt_f64(p.x), crate::io::fmt_f64(p.y)])?;
        }
        wtr.flush()?;
        Ok(())
    })
}

/// The bundled closed circuit: straights, left and right arcs and a chicane.
///
/// Two straights are sized so the loop closes exactly.
pub fn validation_circuit() -> Track {
    let deg = PI / 180.0;
    let arc = |radius: f64, angle_deg: f64| Segment::Arc {
        radius,
        angle: angle_deg * deg,
    };
    let body = |south: f64| {
        vec![
            arc(3.0, 90.0),
            Segment::Straight(6.0),
            arc(2.0, -40.0),
            arc(2.0, 80.0),
            arc(2.0, -40.0),
            Segment::Straight(2.0),
            arc(2.5, 90.0),
            Segment::Straight(8.0),
            arc(2.0, 90.0),
            Segment::Straight(3.0),
            arc(3.0, -90.0),
            Segment::Straight(3.0),
            arc(2.0, 90.0),
            Segment::Straight(south),
            arc(3.0, 90.0),
        ]
    };
    let end = |segs: &[Segment]| {
        let t = Track::from_segments(segs, true);
        *t.centerline.last().unwrap()
    };
    let south = end(&body(0.0)).y;
    let mut segs = body(south);
    let back = -end(&segs).x;
    segs.insert(0, Segment::Straight(back));
    Track::from_segments(&segs, true)
}

/// One lap of the bundled validation circuit at the default waypoint spacing.
pub fn build_validation_track() -> RefTrajectory {
    validation_circuit()
        .lap(VehicleParams::default().spacing())
        .expect("bundled circuit resamples")
}
