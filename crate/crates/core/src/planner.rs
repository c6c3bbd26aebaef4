//! Receding-horizon path planning.
//!
//! Each step the planner searches quadratic Bezier steering curves with
//! differential evolution. A candidate's cost is the discounted sum of the
//! predicted total field variance along its rollout, with the covariance
//! predicted from summed Fisher information of the measurements the
//! vehicle would take. Measurement Jacobians are computed once per step on
//! a coarse grid spanning the reachable box and interpolated bilinearly.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::GaussianBelief;
use crate::field::{BasisGrid, Point, Region, SspField};
use crate::metrics::total_variance;
use crate::motion::{rollout, AuvState, BezierSteering, MotionLimits};
use crate::propagation::PropagationModel;
use crate::sensing::SensorModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    /// Steps per candidate.
    pub horizon: usize,
    pub discount: f64,
    pub population: usize,
    pub generations: usize,
    pub mutation: f64,
    pub crossover: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Padding around the reachable envelope, m.
    pub grid_padding: f64,
    /// Central-difference step on each coefficient, m/s.
    pub fd_step: f64,
    /// Penalty per boundary-touching step, as a multiple of the prior total
    /// variance.
    pub boundary_penalty: f64,
    /// Freeze yaw and steer only in pitch.
    pub planar: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            discount: 0.95,
            population: 20,
            generations: 50,
            mutation: 0.7,
            crossover: 0.9,
            grid_rows: 10,
            grid_cols: 10,
            grid_padding: 10.0,
            fd_step: 0.1,
            boundary_penalty: 1e3,
            planar: true,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && self.discount > 0.0
            && self.discount <= 1.0
            && self.population >= 4
            && self.mutation > 0.0
            && (0.0..=1.0).contains(&self.crossover)
            && self.grid_rows >= 2
            && self.grid_cols >= 2
            && self.grid_padding >= 0.0
            && self.fd_step > 0.0
            && self.boundary_penalty >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid planner configuration {self:?}")))
        }
    }

    /// Objective evaluations per planning step.
    pub fn evaluations(&self) -> usize {
        self.population * (self.generations + 1)
    }

    fn dim(&self) -> usize {
        if self.planar {
            2
        } else {
            4
        }
    }
}

/// Source of per-position measurement Jacobians, `(K+1) × channels`.
pub trait JacobianSource: Sync {
    fn channels(&self) -> usize;
    fn jacobian(&self, p: &Point) -> DMatrix<f64>;
}

/// Jacobians at a set of positions, with the count of coefficients whose
/// finite difference was not finite and was zeroed.
#[derive(Debug, Clone)]
pub struct JacobianSet {
    pub jacobians: Vec<DMatrix<f64>>,
    pub flagged: usize,
}

/// `∂h/∂θ` at θ̂ for each position. The CTD column is the basis vector;
/// the TL column is a central difference with step `h` on every
/// coefficient, one ray trace per perturbation shared by all positions.
pub fn measurement_jacobian(model: &SensorModel, field: &SspField, points: &[Point], h: f64) -> Result<JacobianSet> {
    let tl = if model.config.has_tl() {
        Some(tl_gradients(model, field, points, h)?)
    } else {
        None
    };
    let flagged = tl.as_ref().map_or(0, |t| t.1);
    let jacobians = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut cols = Vec::with_capacity(2);
            if model.config.has_ctd() {
                cols.push(field.basis().basis_vector(p));
            }
            if let Some((g, _)) = &tl {
                cols.push(g[i].clone());
            }
            DMatrix::from_columns(&cols)
        })
        .collect();
    Ok(JacobianSet { jacobians, flagged })
}

fn tl_gradients(model: &SensorModel, field: &SspField, points: &[Point], h: f64) -> Result<(Vec<DVector<f64>>, usize)> {
    for p in points {
        field.region().check(p)?;
    }
    let n = field.theta().len();
    let prop = &model.propagation;
    let columns = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut plus = field.theta().clone();
            plus[k] += h;
            let mut minus = field.theta().clone();
            minus[k] -= h;
            let up = prop.transmission_loss(&field.with_theta(plus)?, points)?;
            let down = prop.transmission_loss(&field.with_theta(minus)?, points)?;
            Ok(up
                .iter()
                .zip(&down)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut flagged = 0;
    let grads = (0..points.len())
        .map(|i| {
            DVector::from_fn(n, |k, _| {
                let v = columns[k][i];
                if v.is_finite() {
                    v
                } else {
                    flagged += 1;
                    0.0
                }
            })
        })
        .collect();
    Ok((grads, flagged))
}

/// Axis-aligned planning box in range and depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanBox {
    pub range_min: f64,
    pub range_max: f64,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl PlanBox {
    /// Envelope of the extreme-steering rollouts from `state`, padded and
    /// clipped to the region.
    pub fn reachable(
        state: &AuvState,
        prev: (f64, f64),
        limits: &MotionLimits,
        region: &Region,
        cfg: &PlanConfig,
    ) -> Self {
        let d = limits.delta_max();
        let levels = [-d, 0.0, d];
        let mut pts = vec![state.point()];
        let yaw_choices: Vec<[f64; 2]> = if cfg.planar {
            vec![[0.0, 0.0]]
        } else {
            levels
                .iter()
                .flat_map(|&a| levels.iter().map(move |&b| [a, b]))
                .collect()
        };
        for y in &yaw_choices {
            for &p1 in &levels {
                for &p2 in &levels {
                    let steering = BezierSteering {
                        yaw: if cfg.planar { [0.0; 3] } else { [prev.0, y[0], y[1]] },
                        pitch: [prev.1, p1, p2],
                        horizon: cfg.horizon,
                    };
                    pts.extend(rollout(state, &steering, limits, region).points());
                }
            }
        }
        let fold = |f: fn(f64, f64) -> f64, init: f64, get: fn(&Point) -> f64| pts.iter().map(get).fold(init, f);
        let pad = cfg.grid_padding;
        Self {
            range_min: (fold(f64::min, f64::INFINITY, |p| p.range) - pad).max(0.0),
            range_max: (fold(f64::max, f64::NEG_INFINITY, |p| p.range) + pad).min(region.max_range),
            depth_min: (fold(f64::min, f64::INFINITY, |p| p.depth) - pad).max(0.0),
            depth_max: (fold(f64::max, f64::NEG_INFINITY, |p| p.depth) + pad).min(region.max_depth),
        }
    }
}

/// Jacobians on a regular grid over a planning box. The nonlinear TL
/// column is interpolated bilinearly; the linear CTD column is evaluated
/// exactly at the query point.
#[derive(Debug)]
pub struct GradientGrid {
    bounds: PlanBox,
    rows: usize,
    cols: usize,
    basis: Arc<BasisGrid>,
    ctd: bool,
    /// TL gradients in depth-major node order, empty without a TL channel.
    tl: Vec<DVector<f64>>,
    outside: AtomicUsize,
    pub flagged: usize,
}

impl GradientGrid {
    pub fn build(
        model: &SensorModel,
        field: &SspField,
        bounds: PlanBox,
        rows: usize,
        cols: usize,
        h: f64,
    ) -> Result<Self> {
        let nodes = Self::node_points(&bounds, rows, cols);
        let (tl, flagged) = if model.config.has_tl() {
            tl_gradients(model, field, &nodes, h)?
        } else {
            (Vec::new(), 0)
        };
        Ok(Self {
            bounds,
            rows,
            cols,
            basis: field.basis().clone(),
            ctd: model.config.has_ctd(),
            tl,
            outside: AtomicUsize::new(0),
            flagged,
        })
    }

    /// Grid from precomputed TL node gradients (depth-major).
    pub fn from_nodes(
        bounds: PlanBox,
        rows: usize,
        cols: usize,
        basis: Arc<BasisGrid>,
        ctd: bool,
        tl: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if rows < 2 || cols < 2 || !(tl.is_empty() || tl.len() == rows * cols) {
            return Err(Error::Config(format!(
                "gradient grid {rows}x{cols} with {} nodes",
                tl.len()
            )));
        }
        Ok(Self {
            bounds,
            rows,
            cols,
            basis,
            ctd,
            tl,
            outside: AtomicUsize::new(0),
            flagged: 0,
        })
    }

    pub fn node_points(bounds: &PlanBox, rows: usize, cols: usize) -> Vec<Point> {
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                out.push(Self::node(bounds, rows, cols, i, j));
            }
        }
        out
    }

    fn node(b: &PlanBox, rows: usize, cols: usize, i: usize, j: usize) -> Point {
        let r = b.range_min + (b.range_max - b.range_min) * j as f64 / (cols - 1) as f64;
        let z = b.depth_min + (b.depth_max - b.depth_min) * i as f64 / (rows - 1) as f64;
        Point::new(r, z)
    }

    pub fn bounds(&self) -> &PlanBox {
        &self.bounds
    }

    /// Queries that fell outside the box and were clamped to its edge.
    pub fn outside_queries(&self) -> usize {
        self.outside.load(Ordering::Relaxed)
    }

    /// Bilinear blend of the TL node gradients.
    pub fn interpolate_tl(&self, p: &Point) -> Option<DVector<f64>> {
        if self.tl.is_empty() {
            return None;
        }
        let b = &self.bounds;
        let loc = |x: f64, lo: f64, hi: f64, n: usize| -> (usize, f64, bool) {
            let span = hi - lo;
            let mut u = if span > 0.0 {
                (x - lo) / span * (n - 1) as f64
            } else {
                0.0
            };
            // Node coordinates round-trip up to a few ulps; land on the node.
            if (u - u.round()).abs() < 1e-9 {
                u = u.round();
            }
            let out = !(0.0..=(n - 1) as f64).contains(&u);
            let u = u.clamp(0.0, (n - 1) as f64);
            let k = (u.floor() as usize).min(n - 2);
            (k, u - k as f64, out)
        };
        let (j, fr, out_r) = loc(p.range, b.range_min, b.range_max, self.cols);
        let (i, fz, out_z) = loc(p.depth, b.depth_min, b.depth_max, self.rows);
        if out_r || out_z {
            self.outside.fetch_add(1, Ordering::Relaxed);
        }
        let at = |i: usize, j: usize| &self.tl[i * self.cols + j];
        let mut v = at(i, j) * ((1.0 - fr) * (1.0 - fz));
        v.axpy(fr * (1.0 - fz), at(i, j + 1), 1.0);
        v.axpy((1.0 - fr) * fz, at(i + 1, j), 1.0);
        v.axpy(fr * fz, at(i + 1, j + 1), 1.0);
        Some(v)
    }
}

impl JacobianSource for GradientGrid {
    fn channels(&self) -> usize {
        self.ctd as usize + !self.tl.is_empty() as usize
    }

    fn jacobian(&self, p: &Point) -> DMatrix<f64> {
        let n = self.basis.dim();
        let mut h = DMatrix::zeros(n, self.channels());
        let mut c = 0;
        if self.ctd {
            self.basis.basis_into(p, h.column_mut(0).as_mut_slice());
            c = 1;
        }
        if let Some(g) = self.interpolate_tl(p) {
            h.set_column(c, &g);
        }
        h
    }
}

fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let chol = match m.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = 1e-9 * m.trace().abs() / n.max(1) as f64;
            (m + DMatrix::identity(n, n) * jitter)
                .cholesky()
                .ok_or_else(|| Error::Factorization("information matrix not positive definite".into()))?
        }
    };
    let mut inv = chol.inverse();
    inv = (&inv + inv.transpose()) * 0.5;
    Ok(inv)
}

/// `Σ = (Σ₀⁻¹ + Σ_j H_j R⁻¹ H_jᵀ)⁻¹`.
pub fn predict_covariance(prior: &DMatrix<f64>, jacobians: &[DMatrix<f64>], r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut info = inverse_spd(prior)?;
    if !jacobians.is_empty() {
        let r_inv = inverse_spd(r)?;
        for h in jacobians {
            if h.shape() != (prior.nrows(), r.nrows()) {
                return Err(Error::Dimension {
                    expected: prior.nrows() * r.nrows(),
                    actual: h.len(),
                });
            }
            info += h * &r_inv * h.transpose();
        }
    }
    inverse_spd(&info)
}

/// Everything a candidate's cost depends on, frozen for one planning step.
pub struct Objective<'a> {
    pub prior: &'a DMatrix<f64>,
    pub gram: &'a DMatrix<f64>,
    /// Diagonal of R, one entry per channel.
    pub noise: Vec<f64>,
    pub source: &'a dyn JacobianSource,
    pub discount: f64,
    /// Absolute penalty per boundary step.
    pub penalty: f64,
    prior_variance: f64,
}

impl<'a> Objective<'a> {
    pub fn new(
        prior: &'a DMatrix<f64>,
        gram: &'a DMatrix<f64>,
        r: &DMatrix<f64>,
        source: &'a dyn JacobianSource,
        discount: f64,
        penalty_factor: f64,
    ) -> Result<Self> {
        let prior_variance = total_variance(prior, gram)?;
        if r.nrows() != source.channels() {
            return Err(Error::Dimension {
                expected: source.channels(),
                actual: r.nrows(),
            });
        }
        Ok(Self {
            prior,
            gram,
            noise: r.diagonal().iter().copied().collect(),
            source,
            discount,
            penalty: penalty_factor * prior_variance,
            prior_variance,
        })
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_variance
    }

    /// `Σ_i λⁱ trace(Σ_i G) + penalty·boundary_steps`, with Σ_i updated by
    /// one rank-1 information step per position and channel.
    pub fn cost(&self, positions: &[Point], boundary_steps: usize) -> f64 {
        let mut sigma = self.prior.clone();
        let mut tv = self.prior_variance;
        let mut weight = 1.0;
        let mut cost = 0.0;
        for p in positions {
            let h = self.source.jacobian(p);
            for (j, &r) in self.noise.iter().enumerate() {
                let hj = h.column(j);
                let u = &sigma * hj;
                let s = hj.dot(&u) + r;
                if !(s > 0.0) || u.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let gu = self.gram * &u;
                tv -= u.dot(&gu) / s;
                sigma.ger(-1.0 / s, &u, &u, 1.0);
            }
            weight *= self.discount;
            cost += weight * tv;
        }
        cost + self.penalty * boundary_steps as f64
    }
}

#[derive(Debug, Clone)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub best_cost: f64,
    /// Cost of the injected seed member.
    pub seed_cost: f64,
    pub evaluations: usize,
    /// Best cost after initialisation and after each generation.
    pub history: Vec<f64>,
    pub reseeded: bool,
}

/// DE/rand/1/bin on the box `[-bound, bound]^dim`, with `seed` injected as
/// the first member. Trials of a generation are evaluated together; a
/// trial replaces its target when it is no worse.
pub fn differential_evolution<F>(f: F, seed: &[f64], bound: f64, cfg: &PlanConfig, rng: &mut ChaCha20Rng) -> DeOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = seed.len();
    let np = cfg.population;
    let counter = AtomicUsize::new(0);
    let eval = |xs: &[Vec<f64>]| -> Vec<f64> {
        xs.par_iter()
            .map(|x| {
                counter.fetch_add(1, Ordering::Relaxed);
                let c = f(x);
                if c.is_nan() {
                    f64::INFINITY
                } else {
                    c
                }
            })
            .collect()
    };
    let uniform = |rng: &mut ChaCha20Rng| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-bound..=bound)).collect() };

    let mut pop: Vec<Vec<f64>> = Vec::with_capacity(np);
    pop.push(seed.iter().map(|v| v.clamp(-bound, bound)).collect());
    while pop.len() < np {
        pop.push(uniform(rng));
    }
    let mut costs = eval(&pop);
    let seed_cost = costs[0];
    let best_of = |costs: &[f64]| {
        costs
            .iter()
            .enumerate()
            .fold(0, |b, (i, &c)| if c < costs[b] { i } else { b })
    };
    let mut history = vec![costs[best_of(&costs)]];
    let mut reseeded = false;

    for _ in 0..cfg.generations {
        let degenerate = (0..dim).all(|d| {
            let (lo, hi) = pop.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x[d]), hi.max(x[d]))
            });
            hi - lo <= 1e-12 * bound
        });
        let trials: Vec<Vec<f64>> = if degenerate && !reseeded {
            reseeded = true;
            (0..np).map(|_| uniform(rng)).collect()
        } else {
            (0..np)
                .map(|i| {
                    let mut pick = |avoid: &[usize]| loop {
                        let k = rng.random_range(0..np);
                        if !avoid.contains(&k) {
                            break k;
                        }
                    };
                    let a = pick(&[i]);
                    let b = pick(&[i, a]);
                    let c = pick(&[i, a, b]);
                    let forced = rng.random_range(0..dim);
                    (0..dim)
                        .map(|d| {
                            if d == forced || rng.random::<f64>() < cfg.crossover {
                                (pop[a][d] + cfg.mutation * (pop[b][d] - pop[c][d])).clamp(-bound, bound)
                            } else {
                                pop[i][d]
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let trial_costs = eval(&trials);
        for (i, (t, c)) in trials.into_iter().zip(trial_costs).enumerate() {
            if c <= costs[i] {
                pop[i] = t;
                costs[i] = c;
            }
        }
        history.push(costs[best_of(&costs)]);
    }
    let b = best_of(&costs);
    DeOutcome {
        best: pop[b].clone(),
        best_cost: costs[b],
        seed_cost,
        evaluations: counter.into_inner(),
        history,
        reseeded,
    }
}

/// Inputs to one planning step.
pub struct PlanInputs<'a> {
    pub state: &'a AuvState,
    /// Last executed `(yaw, pitch)` steering.
    pub previous: (f64, f64),
    /// Posterior at the current step.
    pub belief: &'a GaussianBelief,
    pub model: &'a SensorModel,
    /// Field carrying the current mean coefficients.
    pub estimate: &'a SspField,
    /// Measurement noise, frozen over the horizon.
    pub noise: &'a DMatrix<f64>,
    pub gram: &'a DMatrix<f64>,
    pub limits: &'a MotionLimits,
    pub region: &'a Region,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub steering: BezierSteering,
    pub cost: f64,
    /// Cost of the zero-steering candidate.
    pub straight_cost: f64,
    pub evaluations: usize,
    pub history: Vec<f64>,
    pub reseeded: bool,
    pub bounds: PlanBox,
    pub outside_queries: usize,
    pub jacobian_flags: usize,
}

fn steering_from(x: &[f64], previous: (f64, f64), cfg: &PlanConfig) -> BezierSteering {
    if cfg.planar {
        BezierSteering {
            yaw: [0.0; 3],
            pitch: [previous.1, x[0], x[1]],
            horizon: cfg.horizon,
        }
    } else {
        BezierSteering {
            yaw: [previous.0, x[0], x[1]],
            pitch: [previous.1, x[2], x[3]],
            horizon: cfg.horizon,
        }
    }
}

/// Chooses the steering curve for the next horizon.
pub fn plan_step(inputs: &PlanInputs<'_>, cfg: &PlanConfig, rng: &mut ChaCha20Rng) -> Result<PlanResult> {
    cfg.validate()?;
    let bounds = PlanBox::reachable(inputs.state, inputs.previous, inputs.limits, inputs.region, cfg);
    let grid = GradientGrid::build(
        inputs.model,
        inputs.estimate,
        bounds,
        cfg.grid_rows,
        cfg.grid_cols,
        cfg.fd_step,
    )?;
    let objective = Objective::new(
        &inputs.belief.covariance,
        inputs.gram,
        inputs.noise,
        &grid,
        cfg.discount,
        cfg.boundary_penalty,
    )?;
    let cost_of = |x: &[f64]| {
        let steering = steering_from(x, inputs.previous, cfg);
        let r = rollout(inputs.state, &steering, inputs.limits, inputs.region);
        objective.cost(&r.points(), r.boundary_steps)
    };
    let de = differential_evolution(cost_of, &vec![0.0; cfg.dim()], inputs.limits.delta_max(), cfg, rng);
    Ok(PlanResult {
        steering: steering_from(&de.best, inputs.previous, cfg),
        cost: de.best_cost,
        straight_cost: de.seed_cost,
        evaluations: de.evaluations,
        history: de.history,
        reseeded: de.reseeded,
        bounds,
        outside_queries: grid.outside_queries(),
        jacobian_flags: grid.flagged,
    })
}
