//! Kinematic bicycle model of the vehicle and Bezier steering rollouts.
//!
//! Positions are `(range, cross-range, depth)` with depth positive
//! downwards. Positive pitch climbs towards the surface.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point, Region};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuvState {
    pub position: Vector3<f64>,
    pub speed: f64,
    pub yaw: f64,
    pub pitch: f64,
}

impl AuvState {
    pub fn new(range: f64, depth: f64, speed: f64, yaw: f64) -> Self {
        Self {
            position: Vector3::new(range, 0.0, depth),
            speed,
            yaw,
            pitch: 0.0,
        }
    }

    /// Range–depth projection.
    pub fn point(&self) -> Point {
        Point::new(self.position.x, self.position.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionLimits {
    /// Steering bound, degrees.
    pub delta_max_deg: f64,
    /// m/s².
    pub a_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Bicycle length, m.
    pub length: f64,
    /// Sampling period, s.
    pub dt: f64,
    pub substeps: usize,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self {
            delta_max_deg: 10.0,
            a_max: 0.0,
            v_min: 2.0,
            v_max: 2.0,
            length: 25.0,
            dt: 2.5,
            substeps: 4,
        }
    }
}

impl MotionLimits {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta_max_deg > 0.0
            && self.delta_max_deg < 90.0
            && self.a_max >= 0.0
            && self.v_min > 0.0
            && self.v_max >= self.v_min
            && self.length > 0.0
            && self.dt > 0.0
            && self.substeps >= 1
            && [self.a_max, self.v_max, self.length, self.dt]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid motion limits {self:?}")))
        }
    }

    pub fn delta_max(&self) -> f64 {
        self.delta_max_deg.to_radians()
    }
}

/// Controls held over one integration interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub accel: f64,
    pub yaw_steer: f64,
    pub pitch_steer: f64,
}

impl Action {
    pub fn clamped(self, limits: &MotionLimits) -> Self {
        let d = limits.delta_max();
        Self {
            accel: self.accel.clamp(-limits.a_max, limits.a_max),
            yaw_steer: self.yaw_steer.clamp(-d, d),
            pitch_steer: self.pitch_steer.clamp(-d, d),
        }
    }
}

/// `[r, y, z, ψ, θ]` derivative at fixed speed.
fn rates(s: &[f64; 5], v: f64, a: &Action, length: f64) -> [f64; 5] {
    let (sy, cy) = s[3].sin_cos();
    let (sp, cp) = s[4].sin_cos();
    [
        v * cy * cp,
        v * sy * cp,
        -v * sp,
        v * a.yaw_steer.tan() / length,
        v * a.pitch_steer.tan() / length,
    ]
}

/// RK4 over `[t, t + h]` with the controls evaluated at each stage time.
fn rk4<F: FnMut(f64) -> Action>(
    s: [f64; 5],
    v: f64,
    control: &mut F,
    t: f64,
    h: f64,
    limits: &MotionLimits,
) -> [f64; 5] {
    let at = |base: &[f64; 5], k: &[f64; 5], f: f64| {
        let mut o = *base;
        for i in 0..5 {
            o[i] += f * k[i];
        }
        o
    };
    let l = limits.length;
    let mid = control(t + h / 2.0).clamped(limits);
    let k1 = rates(&s, v, &control(t).clamped(limits), l);
    let k2 = rates(&at(&s, &k1, h / 2.0), v, &mid, l);
    let k3 = rates(&at(&s, &k2, h / 2.0), v, &mid, l);
    let k4 = rates(&at(&s, &k3, h), v, &control(t + h).clamped(limits), l);
    let mut o = s;
    for i in 0..5 {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    o
}

/// Integrates one sampling period. `control` maps the elapsed time within
/// the period, in seconds, to the steering input.
///
/// Depth reflects off the surface and bottom with the pitch negated; range
/// is clamped. Returns the new state and whether any boundary was touched.
pub fn integrate<F>(state: &AuvState, limits: &MotionLimits, region: &Region, mut control: F) -> (AuvState, bool)
where
    F: FnMut(f64) -> Action,
{
    let h = limits.dt / limits.substeps as f64;
    let mut s = [
        state.position.x,
        state.position.y,
        state.position.z,
        state.yaw,
        state.pitch,
    ];
    let mut v = state.speed;
    let mut touched = false;
    for k in 0..limits.substeps {
        let t = k as f64 * h;
        let accel = control(t).clamped(limits).accel;
        s = rk4(s, v, &mut control, t, h, limits);
        v = (v + accel * h).clamp(limits.v_min, limits.v_max);
        let depth = region.max_depth;
        // A single substep moves at most a few metres, so one fold suffices.
        if s[2] < 0.0 {
            s[2] = -s[2];
            s[4] = -s[4];
            touched = true;
        } else if s[2] > depth {
            s[2] = 2.0 * depth - s[2];
            s[4] = -s[4];
            touched = true;
        }
        s[2] = s[2].clamp(0.0, depth);
        if s[0] < 0.0 || s[0] > region.max_range {
            s[0] = s[0].clamp(0.0, region.max_range);
            touched = true;
        }
    }
    let next = AuvState {
        position: Vector3::new(s[0], s[1], s[2]),
        speed: v,
        yaw: s[3],
        pitch: s[4],
    };
    (next, touched)
}

/// One sampling period under a constant action.
pub fn step(state: &AuvState, action: Action, limits: &MotionLimits, region: &Region) -> (AuvState, bool) {
    integrate(state, limits, region, |_| action)
}

/// Quadratic Bezier steering over a horizon of `horizon` steps. The first
/// control point of each axis is the previously executed steering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierSteering {
    pub yaw: [f64; 3],
    pub pitch: [f64; 3],
    pub horizon: usize,
}

pub fn bezier(b: &[f64; 3], tau: f64) -> f64 {
    let u = 1.0 - tau;
    u * u * b[0] + 2.0 * u * tau * b[1] + tau * tau * b[2]
}

impl BezierSteering {
    pub fn straight(horizon: usize) -> Self {
        Self {
            yaw: [0.0; 3],
            pitch: [0.0; 3],
            horizon,
        }
    }

    /// `(δ_ψ, δ_θ)` at normalised time `τ ∈ [0, 1]`.
    pub fn at(&self, tau: f64) -> (f64, f64) {
        (bezier(&self.yaw, tau), bezier(&self.pitch, tau))
    }

    pub fn within(&self, delta_max: f64) -> bool {
        self.yaw.iter().chain(&self.pitch).all(|b| b.abs() <= delta_max)
    }

    /// Controls at `elapsed` seconds into step `t`.
    fn action(&self, t: usize, elapsed: f64, dt: f64) -> Action {
        let tau = (t as f64 + elapsed / dt) / self.horizon as f64;
        let (yaw_steer, pitch_steer) = self.at(tau);
        Action {
            accel: 0.0,
            yaw_steer,
            pitch_steer,
        }
    }

    /// Steering at the end of step `t`, the value the next plan pins as b₀.
    pub fn executed(&self, t: usize) -> (f64, f64) {
        self.at((t + 1) as f64 / self.horizon as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<AuvState>,
    /// Steps on which a boundary was touched.
    pub boundary_steps: usize,
}

impl Rollout {
    pub fn points(&self) -> Vec<Point> {
        self.states.iter().map(AuvState::point).collect()
    }
}

/// Advances `steps` sampling periods under the steering curve.
pub fn rollout_steps(
    state: &AuvState,
    steering: &BezierSteering,
    limits: &MotionLimits,
    region: &Region,
    steps: usize,
) -> Rollout {
    let mut states = Vec::with_capacity(steps);
    let mut s = *state;
    let mut boundary_steps = 0;
    for t in 0..steps {
        let (next, touched) = integrate(&s, limits, region, |e| steering.action(t, e, limits.dt));
        boundary_steps += touched as usize;
        states.push(next);
        s = next;
    }
    Rollout { states, boundary_steps }
}

/// The `T` states realised by a candidate, `T = steering.horizon`.
pub fn rollout(state: &AuvState, steering: &BezierSteering, limits: &MotionLimits, region: &Region) -> Rollout {
    rollout_steps(state, steering, limits, region, steering.horizon)
}
