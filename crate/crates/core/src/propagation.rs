//! Two-dimensional ray-fan transmission-loss model.
//!
//! Rays are launched from the transmitter over a symmetric fan and
//! integrated through the sound-speed field with the ray equations in
//! arc length, together with the dynamic-ray quantities `q` and `p` that
//! carry geometric spreading and wavefront curvature. The complex pressure
//! at a receiver is the coherent sum of Gaussian-beam-weighted ray
//! contributions, normalised to unit pressure at 1 m from the source.
//!
//! Depth is positive downwards. Launch angles are positive towards the
//! surface.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point, Region, SpeedSample, SspField};

/// Anything that can report sound speed and its spatial derivatives.
pub trait SoundSpeed: Sync {
    fn sample(&self, range: f64, depth: f64) -> SpeedSample;
}

impl SoundSpeed for SspField {
    fn sample(&self, range: f64, depth: f64) -> SpeedSample {
        SspField::sample(self, range, depth)
    }
}

/// `c(r, z) = c0 + g_r·r + g_z·z`. Used for analytic checks of the tracer.
#[derive(Debug, Clone, Copy)]
pub struct LinearProfile {
    pub c0: f64,
    pub gradient_range: f64,
    pub gradient_depth: f64,
}

impl LinearProfile {
    pub fn homogeneous(c0: f64) -> Self {
        Self {
            c0,
            gradient_range: 0.0,
            gradient_depth: 0.0,
        }
    }
}

impl SoundSpeed for LinearProfile {
    fn sample(&self, range: f64, depth: f64) -> SpeedSample {
        SpeedSample {
            c: self.c0 + self.gradient_range * range + self.gradient_depth * depth,
            dr: self.gradient_range,
            dz: self.gradient_depth,
            ..Default::default()
        }
    }
}

/// How the surface and bottom treat incident rays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundaries {
    /// Pressure-release surface and a fluid half-space bottom.
    #[default]
    Physical,
    /// Pressure-release surface, fully absorbing bottom.
    AbsorbingBottom,
    /// Both boundaries absorb; only direct arrivals reach a receiver.
    Absorbing,
}

/// Acoustic environment around the field region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Environment {
    pub water_depth: f64,
    pub max_range: f64,
    pub tx_position: Point,
    pub frequency: f64,
    pub bottom_speed: f64,
    pub bottom_density: f64,
    pub water_density: f64,
    pub boundaries: Boundaries,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            water_depth: 50.0,
            max_range: 2000.0,
            tx_position: Point::new(0.0, 25.0),
            frequency: 5000.0,
            bottom_speed: 5000.0,
            bottom_density: 2500.0,
            water_density: 1000.0,
            boundaries: Boundaries::Physical,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        self.region().validate()?;
        let tx = self.tx_position;
        if !(tx.depth > 0.0 && tx.depth < self.water_depth) {
            return Err(Error::Config(format!(
                "transmitter depth {} m must lie strictly inside (0, {})",
                tx.depth, self.water_depth
            )));
        }
        if !(0.0..=self.max_range).contains(&tx.range) {
            return Err(Error::Config("transmitter range outside the region".into()));
        }
        if !(self.frequency > 0.0) {
            return Err(Error::Config("frequency must be positive".into()));
        }
        if !(self.bottom_speed > 0.0 && self.bottom_density > 0.0 && self.water_density > 0.0) {
            return Err(Error::Config("bottom speed and densities must be positive".into()));
        }
        Ok(())
    }

    pub fn region(&self) -> Region {
        Region {
            max_range: self.max_range,
            max_depth: self.water_depth,
        }
    }
}

/// Discretisation of the ray fan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RayFanConfig {
    pub num_rays: usize,
    /// Half-width of the fan; rays span `[-max, +max]` degrees.
    pub max_launch_angle_deg: f64,
    pub step_length: f64,
    pub max_bounces: usize,
}

impl Default for RayFanConfig {
    fn default() -> Self {
        Self {
            num_rays: 181,
            max_launch_angle_deg: 60.0,
            step_length: 1.0,
            max_bounces: 20,
        }
    }
}

impl RayFanConfig {
    pub fn validate(&self, env: &Environment) -> Result<()> {
        if self.num_rays < 2 {
            return Err(Error::Config("ray fan needs at least two rays".into()));
        }
        if !(self.max_launch_angle_deg > 0.0 && self.max_launch_angle_deg < 90.0) {
            return Err(Error::LaunchAngle(self.max_launch_angle_deg));
        }
        check_step(self.step_length, env)
    }

    /// Launch angles in degrees, ascending.
    pub fn launch_angles(&self) -> Vec<f64> {
        let n = self.num_rays;
        let a = self.max_launch_angle_deg;
        (0..n).map(|i| -a + 2.0 * a * i as f64 / (n - 1) as f64).collect()
    }

    fn spacing_rad(&self) -> f64 {
        (2.0 * self.max_launch_angle_deg / (self.num_rays - 1) as f64).to_radians()
    }
}

fn check_step(step: f64, env: &Environment) -> Result<()> {
    let scale = env.max_range.max(env.water_depth);
    if !(step > 0.0) || !step.is_finite() || scale + step == scale {
        return Err(Error::StepUnderflow(step));
    }
    Ok(())
}

/// Plane-wave reflection coefficient of the fluid half-space bottom.
///
/// `grazing_angle` is in radians; `water_speed` is the sound speed just
/// above the bottom. Below the critical angle the transmitted wave is
/// evanescent and `|R| = 1`.
pub fn bottom_reflection_coefficient(env: &Environment, grazing_angle: f64, water_speed: f64) -> Complex64 {
    let m = env.bottom_density / env.water_density;
    let n = water_speed / env.bottom_speed;
    let sin_g = grazing_angle.sin();
    // n² - cos² written as (n² - 1) + sin² so equal media give R = 0 exactly.
    let root = Complex64::new((n * n - 1.0) + sin_g * sin_g, 0.0).sqrt();
    let num = m * sin_g - root;
    let den = m * sin_g + root;
    if den.norm() == 0.0 {
        // Exactly grazing: the total-reflection limit.
        return Complex64::new(-1.0, 0.0);
    }
    num / den
}

/// Which boundary a ray reflected from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Surface,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounce {
    pub range: f64,
    pub depth: f64,
    pub boundary: Boundary,
    pub coefficient: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxRange,
    MaxBounces,
    MaxPathLength,
    Absorbed,
    Reversed,
}

/// One sample along a traced ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPoint {
    pub range: f64,
    pub depth: f64,
    /// Travel time from the source, s.
    pub time: f64,
    /// Angle below the horizontal, rad (positive towards the bottom).
    pub angle: f64,
}

/// Result of tracing a single ray.
#[derive(Debug, Clone)]
pub struct RayPath {
    pub points: Vec<RayPoint>,
    pub travel_time: f64,
    pub bounces: Vec<Bounce>,
    /// Product of all reflection coefficients.
    pub boundary_factor: Complex64,
    pub termination: Termination,
}

/// Integration state along a ray.
#[derive(Debug, Clone, Copy)]
struct RayState {
    r: f64,
    z: f64,
    /// Slowness components: `(ξ, ζ) = (cos θ, sin θ) / c`.
    xi: f64,
    zeta: f64,
    tau: f64,
    q: f64,
    p: f64,
    s: f64,
}

impl RayState {
    fn lerp(&self, other: &RayState, f: f64) -> RayState {
        let l = |a: f64, b: f64| a + (b - a) * f;
        RayState {
            r: l(self.r, other.r),
            z: l(self.z, other.z),
            xi: l(self.xi, other.xi),
            zeta: l(self.zeta, other.zeta),
            tau: l(self.tau, other.tau),
            q: l(self.q, other.q),
            p: l(self.p, other.p),
            s: l(self.s, other.s),
        }
    }

    fn angle(&self) -> f64 {
        self.zeta.atan2(self.xi)
    }
}

/// Boundary history shared by every point of one ray segment.
#[derive(Debug, Clone, Copy)]
struct SegmentMeta {
    factor: Complex64,
    caustics: u32,
}

fn derivative(y: &RayState, s: &SpeedSample) -> [f64; 7] {
    let c = s.c;
    let c2 = c * c;
    let cos = c * y.xi;
    let sin = c * y.zeta;
    let cnn = s.drr * sin * sin - 2.0 * s.drz * sin * cos + s.dzz * cos * cos;
    [
        c * y.xi,
        c * y.zeta,
        -s.dr / c2,
        -s.dz / c2,
        1.0 / c,
        c * y.p,
        -cnn / c2 * y.q,
    ]
}

fn advance(y: &RayState, d: &[f64; 7], h: f64) -> RayState {
    RayState {
        r: y.r + h * d[0],
        z: y.z + h * d[1],
        xi: y.xi + h * d[2],
        zeta: y.zeta + h * d[3],
        tau: y.tau + h * d[4],
        q: y.q + h * d[5],
        p: y.p + h * d[6],
        s: y.s + h,
    }
}

/// Integrates one ray, calling `on_segment(start, end, meta)` for every
/// step between boundary events. Returns how the ray ended.
fn trace_segments<S: SoundSpeed + ?Sized>(
    env: &Environment,
    speed: &S,
    launch_angle_deg: f64,
    cfg: &RayFanConfig,
    range_stop: f64,
    bounces: &mut Vec<Bounce>,
    mut on_segment: impl FnMut(&RayState, &RayState, &SegmentMeta),
) -> Termination {
    let tx = env.tx_position;
    let ds = cfg.step_length;
    let depth = env.water_depth;
    let max_path = 3.0 * env.max_range.max(range_stop) + 10.0 * depth;

    let s0 = speed.sample(tx.range, tx.depth);
    let theta = -launch_angle_deg.to_radians();
    let mut y = RayState {
        r: tx.range,
        z: tx.depth,
        xi: theta.cos() / s0.c,
        zeta: theta.sin() / s0.c,
        tau: 0.0,
        q: 0.0,
        p: 1.0 / s0.c,
        s: 0.0,
    };
    let mut meta = SegmentMeta {
        factor: Complex64::new(1.0, 0.0),
        caustics: 0,
    };
    let mut sample = s0;

    loop {
        // Keep |(ξ, ζ)| = 1/c against drift.
        let norm = y.xi.hypot(y.zeta) * sample.c;
        y.xi /= norm;
        y.zeta /= norm;

        let k1 = derivative(&y, &sample);
        let mid = advance(&y, &k1, 0.5 * ds);
        let k2 = derivative(&mid, &speed.sample(mid.r, mid.z));
        let mut next = advance(&y, &k2, ds);

        let hit = if next.z < 0.0 {
            Some((Boundary::Surface, 0.0))
        } else if next.z > depth {
            Some((Boundary::Bottom, depth))
        } else {
            None
        };
        if let Some((_, zb)) = hit {
            let f = ((zb - y.z) / (next.z - y.z)).clamp(0.0, 1.0);
            next = y.lerp(&next, f);
            next.z = zb;
        }

        on_segment(&y, &next, &meta);
        if (y.q > 0.0) != (next.q > 0.0) && y.q != 0.0 {
            meta.caustics += 1;
        }

        if next.r >= range_stop {
            return Termination::MaxRange;
        }
        if next.xi <= 0.0 {
            return Termination::Reversed;
        }
        if next.s > max_path {
            return Termination::MaxPathLength;
        }

        y = next;
        sample = speed.sample(y.r, y.z);

        if let Some((boundary, _)) = hit {
            let coefficient = match (boundary, env.boundaries) {
                (_, Boundaries::Absorbing) | (Boundary::Bottom, Boundaries::AbsorbingBottom) => {
                    return Termination::Absorbed;
                }
                (Boundary::Surface, _) => Complex64::new(-1.0, 0.0),
                (Boundary::Bottom, Boundaries::Physical) => {
                    let grazing = (y.zeta.abs()).atan2(y.xi);
                    bottom_reflection_coefficient(env, grazing, sample.c)
                }
            };
            bounces.push(Bounce {
                range: y.r,
                depth: y.z,
                boundary,
                coefficient,
            });
            if bounces.len() > cfg.max_bounces {
                return Termination::MaxBounces;
            }
            // Flat boundary: mirror the vertical slowness.
            y.zeta = -y.zeta;
            meta.factor *= coefficient;
        }
    }
}

/// Traces a single ray from the transmitter out to `env.max_range`.
pub fn ray_trace<S: SoundSpeed + ?Sized>(
    env: &Environment,
    speed: &S,
    launch_angle_deg: f64,
    cfg: &RayFanConfig,
) -> Result<RayPath> {
    if !(launch_angle_deg.abs() < 90.0) {
        return Err(Error::LaunchAngle(launch_angle_deg));
    }
    check_step(cfg.step_length, env)?;
    let range_stop = env.max_range;
    let mut bounces = Vec::new();
    let mut points = Vec::new();
    let termination = trace_segments(
        env,
        speed,
        launch_angle_deg,
        cfg,
        range_stop,
        &mut bounces,
        |a, b, _| {
            if points.is_empty() {
                points.push(point_of(a));
            }
            let end = if b.r > range_stop {
                let mut e = a.lerp(b, (range_stop - a.r) / (b.r - a.r));
                e.r = range_stop;
                e
            } else {
                *b
            };
            points.push(point_of(&end));
        },
    );
    let boundary_factor = bounces
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, b| acc * b.coefficient);
    let travel_time = points.last().map_or(0.0, |p| p.time);
    Ok(RayPath {
        points,
        travel_time,
        bounces,
        boundary_factor,
        termination,
    })
}

fn point_of(y: &RayState) -> RayPoint {
    RayPoint {
        range: y.r,
        depth: y.z,
        time: y.tau,
        angle: y.angle(),
    }
}

/// Accumulates beam contributions for one receiver.
#[derive(Debug, Clone, Copy)]
struct ReceiverSum {
    pressure: Complex64,
    captured: bool,
    nearest_ratio: f64,
    nearest: Complex64,
}

/// Gaussian beams contribute within this many beam half-widths.
const CAPTURE_WIDTHS: f64 = 4.0;
/// Pressure magnitudes are floored here before conversion to dB.
const PRESSURE_FLOOR: f64 = 1e-15;

/// Coherent complex pressure at each receiver for one sound-speed field.
pub fn coherent_pressure<S: SoundSpeed + ?Sized>(
    env: &Environment,
    speed: &S,
    receivers: &[Point],
    cfg: &RayFanConfig,
) -> Result<Vec<Complex64>> {
    cfg.validate(env)?;
    let region = env.region();
    for rx in receivers {
        region.check(rx)?;
        if rx.distance(&env.tx_position) < 1e-6 {
            return Err(Error::ReceiverAtSource);
        }
    }
    if receivers.is_empty() {
        return Ok(Vec::new());
    }

    let mut order: Vec<usize> = (0..receivers.len()).collect();
    order.sort_by(|&a, &b| receivers[a].range.total_cmp(&receivers[b].range));
    let sorted_ranges: Vec<f64> = order.iter().map(|&i| receivers[i].range).collect();
    let range_stop = (sorted_ranges[sorted_ranges.len() - 1] + cfg.step_length).min(env.max_range + cfg.step_length);

    let omega = 2.0 * PI * env.frequency;
    let spacing = cfg.spacing_rad();
    let c_source = speed.sample(env.tx_position.range, env.tx_position.depth).c;
    let min_width = c_source / env.frequency;
    let norm = 1.0 / (2.0 * PI).sqrt();

    let mut sums = vec![
        ReceiverSum {
            pressure: Complex64::new(0.0, 0.0),
            captured: false,
            nearest_ratio: f64::INFINITY,
            nearest: Complex64::new(0.0, 0.0),
        };
        receivers.len()
    ];
    let mut bounces = Vec::with_capacity(cfg.max_bounces + 1);

    for angle in cfg.launch_angles() {
        let cos0 = angle.to_radians().cos();
        bounces.clear();
        trace_segments(env, speed, angle, cfg, range_stop, &mut bounces, |a, b, meta| {
            let (lo, hi) = if a.r <= b.r { (a.r, b.r) } else { (b.r, a.r) };
            if hi <= lo {
                return;
            }
            let start = sorted_ranges.partition_point(|r| *r < lo);
            let end = sorted_ranges.partition_point(|r| *r < hi);
            for &idx in &order[start..end] {
                let rx = receivers[idx];
                let f = (rx.range - a.r) / (b.r - a.r);
                let y = a.lerp(b, f);
                let c = 1.0 / y.xi.hypot(y.zeta);
                let (sin, cos) = (c * y.zeta, c * y.xi);
                let dz = rx.depth - y.z;
                let n = dz * cos;
                let along = dz * sin;
                let q = y.q.abs();
                let width = (q * spacing).max(min_width);
                let ratio = n.abs() / width;
                let spread = (c * cos0 / (c_source * rx.range.max(1e-9))).sqrt();
                let amplitude = spread * q.sqrt() * spacing / width * norm * (-0.5 * ratio * ratio).exp();
                let curvature = if q > 1e-9 { 0.5 * y.p / y.q * n * n } else { 0.0 };
                let phase = omega * (y.tau + along / c + curvature) - FRAC_PI_2 * meta.caustics as f64;
                let contribution = meta.factor * Complex64::from_polar(amplitude, phase);
                let sum = &mut sums[idx];
                if ratio <= CAPTURE_WIDTHS {
                    sum.pressure += contribution;
                    sum.captured = true;
                } else if ratio < sum.nearest_ratio {
                    sum.nearest_ratio = ratio;
                    sum.nearest = contribution;
                }
            }
        });
    }

    Ok(sums
        .into_iter()
        .map(|s| if s.captured { s.pressure } else { s.nearest })
        .collect())
}

/// Converts a complex pressure (re 1 Pa at 1 m) to transmission loss in dB.
pub fn pressure_to_tl(p: Complex64) -> f64 {
    amplitude_to_tl(p.norm())
}

pub fn amplitude_to_tl(amplitude: f64) -> f64 {
    -20.0 * amplitude.abs().max(PRESSURE_FLOOR).log10()
}

/// Transmission loss from the transmitter to `rx` in dB.
pub fn transmission_loss<S: SoundSpeed + ?Sized>(
    env: &Environment,
    speed: &S,
    rx: &Point,
    cfg: &RayFanConfig,
) -> Result<f64> {
    Ok(pressure_to_tl(
        coherent_pressure(env, speed, std::slice::from_ref(rx), cfg)?[0],
    ))
}

/// Forward acoustic model mapping a sound-speed field to complex receiver
/// pressures. The ray fan is the in-repo implementation; other solvers can
/// be slotted in behind the same trait.
pub trait PropagationModel: Send + Sync {
    fn pressure(&self, field: &SspField, receivers: &[Point]) -> Result<Vec<Complex64>>;

    fn transmission_loss(&self, field: &SspField, receivers: &[Point]) -> Result<Vec<f64>> {
        Ok(self
            .pressure(field, receivers)?
            .into_iter()
            .map(pressure_to_tl)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayFanModel {
    pub env: Environment,
    pub cfg: RayFanConfig,
}

impl RayFanModel {
    pub fn new(env: Environment, cfg: RayFanConfig) -> Result<Self> {
        env.validate()?;
        cfg.validate(&env)?;
        Ok(Self { env, cfg })
    }
}

impl PropagationModel for RayFanModel {
    fn pressure(&self, field: &SspField, receivers: &[Point]) -> Result<Vec<Complex64>> {
        coherent_pressure(&self.env, field, receivers, &self.cfg)
    }
}

/// Transmission loss sampled on a regular range × depth raster, for
/// plotting. Rows are depth samples.
pub fn tl_field<S: SoundSpeed + ?Sized>(
    env: &Environment,
    speed: &S,
    cfg: &RayFanConfig,
    range_samples: usize,
    depth_samples: usize,
) -> Result<Vec<(Point, f64)>> {
    let mut pts = Vec::with_capacity(range_samples * depth_samples);
    for i in 0..depth_samples {
        let z = env.water_depth * (i as f64 + 0.5) / depth_samples as f64;
        for j in 0..range_samples {
            let r = env.max_range * (j as f64 + 1.0) / range_samples as f64;
            pts.push(Point::new(r, z));
        }
    }
    let p = coherent_pressure(env, speed, &pts, cfg)?;
    Ok(pts.into_iter().zip(p.into_iter().map(pressure_to_tl)).collect())
}
