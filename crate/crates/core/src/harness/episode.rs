//! One closed-loop episode: move, measure, update, score.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, Steering};
use super::seeds::{stream_rng, Stream};
use crate::error::{Error, Result};
use crate::estimator::{predict, update, GaussianBelief};
use crate::field::{gram_matrix, BasisGrid, QuadratureGrid, Region, SspField};
use crate::metrics::{rmse, rrmse, ssim_with, total_variance, FieldRaster, SsimParams};
use crate::motion::{rollout_steps, step, Action, AuvState};
use crate::planner::{plan_step, PlanInputs};
use crate::propagation::RayFanModel;
use crate::sensing::{MeasurementPair, Sensor, SensorConfig, SensorModel};

/// Planner diagnostics for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub best_cost: f64,
    pub straight_cost: f64,
    pub evaluations: usize,
    pub reseeded: bool,
    pub outside_queries: usize,
    pub jacobian_flags: usize,
}

/// State of the loop after step `step`; step 0 holds the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub state: AuvState,
    /// Executed pitch steering angle, rad.
    pub steering: f64,
    pub measurement: Option<MeasurementPair>,
    pub mean: DVector<f64>,
    /// Diagonal of the posterior covariance.
    pub variances: DVector<f64>,
    pub rrmse: f64,
    pub ssim: f64,
    pub total_variance: f64,
    /// Reason the filter kept its prior, if it did.
    pub skipped: Option<String>,
    pub plan: Option<PlanRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub sensors: SensorConfig,
    pub steering: Steering,
    pub true_theta: DVector<f64>,
    /// `num_steps + 1` entries.
    pub steps: Vec<StepRecord>,
    pub final_belief: GaussianBelief,
}

impl RunRecord {
    pub fn flagged_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.skipped.is_some()).count()
    }

    pub fn last(&self) -> &StepRecord {
        self.steps.last().expect("record holds at least the prior")
    }
}

/// `θ̂₀ + L z` with `L Lᵀ = Σ₀`, `z` standard normal from `rng`.
///
/// A singular but PSD prior falls back to a symmetric square root, so a zero
/// covariance returns the mean exactly.
pub fn draw_theta<R: Rng + ?Sized>(prior: &GaussianBelief, rng: &mut R) -> Result<DVector<f64>> {
    let n = prior.dim();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let factor = match prior.covariance.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = prior.covariance.clone().symmetric_eigen();
            if eig
                .eigenvalues
                .iter()
                .any(|l| *l < -1e-12 * (1.0 + prior.covariance.trace().abs()))
            {
                return Err(Error::Factorization("prior covariance is not PSD".into()));
            }
            &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        }
    };
    Ok(&prior.mean + factor * z)
}

/// Shared, immutable pieces of an experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub region: Region,
    pub basis: Arc<BasisGrid>,
    pub gram: DMatrix<f64>,
    pub prior: GaussianBelief,
    pub propagation: RayFanModel,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let region = config.environment.region();
        let (ds, rs) = config.basis.spreads(&config.environment);
        let basis = Arc::new(BasisGrid::uniform(
            &region,
            config.basis.rows,
            config.basis.cols,
            ds,
            rs,
        )?);
        let nodes = config.metrics.gram_nodes;
        let gram = gram_matrix(&region, &basis, QuadratureGrid::new(nodes, nodes))?;
        let n = basis.dim();
        let mut mean = DVector::zeros(n);
        mean[0] = config.prior.mean;
        let prior = GaussianBelief::isotropic(mean, config.prior.variance)?;
        let propagation = RayFanModel::new(config.environment, config.ray_fan)?;
        Ok(Self {
            config,
            region,
            basis,
            gram,
            prior,
            propagation,
        })
    }

    pub fn field(&self, theta: DVector<f64>) -> Result<SspField> {
        SspField::new(theta, self.basis.clone(), self.region)
    }

    /// True field of run `run_id`; shared by every configuration.
    pub fn draw_true_field(&self, run_id: usize) -> Result<SspField> {
        let mut rng = stream_rng(self.config.run.seed, run_id as u64, Stream::Field);
        self.field(draw_theta(&self.prior, &mut rng)?)
    }

    pub fn raster(&self, field: &SspField) -> Result<FieldRaster> {
        let m = &self.config.metrics;
        FieldRaster::sample(field, &self.region, m.raster_rows, m.raster_cols)
    }

    pub fn start_state(&self) -> AuvState {
        let s = &self.config.start;
        AuvState::new(s.range, s.depth, s.speed, s.yaw_deg.to_radians())
    }

    pub fn sensor_model(&self, sensors: SensorConfig, run_id: usize) -> Result<SensorModel> {
        let mut noise = self.config.noise;
        noise.rng_seed = super::seeds::derive_seed(self.config.run.seed, run_id as u64, Stream::Noise);
        SensorModel::new(sensors, noise, self.propagation)
    }

    /// Runs `num_steps` steps of the configured loop.
    pub fn run_episode(&self, sensors: SensorConfig, steering: Steering, run_id: usize) -> Result<RunRecord> {
        self.run_steps(sensors, steering, run_id, self.config.run.num_steps)
    }

    pub fn run_steps(
        &self,
        sensors: SensorConfig,
        steering: Steering,
        run_id: usize,
        num_steps: usize,
    ) -> Result<RunRecord> {
        let cfg = &self.config;
        let truth = self.draw_true_field(run_id)?;
        let truth_raster = self.raster(&truth)?;
        let model = self.sensor_model(sensors, run_id)?;
        let mut sensor = Sensor::new(model);
        let mut planner_rng = stream_rng(cfg.run.seed, run_id as u64, Stream::Planner);
        let ssim_params = SsimParams {
            window: cfg.metrics.ssim_window,
            ..SsimParams::default()
        };
        let q = cfg.ukf.process_matrix(self.prior.dim());

        let mut belief = self.prior.clone();
        let mut estimate = self.field(belief.mean.clone())?;
        let est_raster = self.raster(&estimate)?;
        let rmse0 = rmse(&truth_raster, &est_raster)?;
        let mut state = self.start_state();
        let mut previous = (0.0, 0.0);
        let mut noise = model.noise_covariance(&model.predict(&estimate, &state.point())?);

        let mut steps = Vec::with_capacity(num_steps + 1);
        steps.push(StepRecord {
            step: 0,
            state,
            steering: 0.0,
            measurement: None,
            mean: belief.mean.clone(),
            variances: belief.covariance.diagonal(),
            rrmse: rrmse(rmse0, rmse0)?,
            ssim: ssim_with(&truth_raster, &est_raster, &ssim_params)?,
            total_variance: total_variance(&belief.covariance, &self.gram)?,
            skipped: None,
            plan: None,
        });

        for t in 1..=num_steps {
            let mut plan = None;
            match steering {
                Steering::Straight => {
                    state = step(&state, Action::default(), &cfg.motion, &self.region).0;
                }
                Steering::Planned => {
                    let inputs = PlanInputs {
                        state: &state,
                        previous,
                        belief: &belief,
                        model: &model,
                        estimate: &estimate,
                        noise: &noise,
                        gram: &self.gram,
                        limits: &cfg.motion,
                        region: &self.region,
                    };
                    let result = plan_step(&inputs, &cfg.planner, &mut planner_rng)?;
                    state = *rollout_steps(&state, &result.steering, &cfg.motion, &self.region, 1)
                        .states
                        .last()
                        .expect("one step");
                    previous = result.steering.executed(0);
                    plan = Some(PlanRecord {
                        best_cost: result.cost,
                        straight_cost: result.straight_cost,
                        evaluations: result.evaluations,
                        reseeded: result.reseeded,
                        outside_queries: result.outside_queries,
                        jacobian_flags: result.jacobian_flags,
                    });
                }
            }

            let p = state.point();
            let measurement = sensor.measure(&truth, &p, t)?;
            let predicted = predict(&belief, &q)?;
            let at_mean = self.field(predicted.mean.clone())?;
            let r = model.noise_covariance(&model.predict(&at_mean, &p)?);
            let h = |theta: &DVector<f64>| model.h_joint(&at_mean.with_theta(theta.clone())?, &p);
            let outcome = update(&predicted, &measurement.vector(), &r, h, &cfg.ukf)?;
            belief = outcome.belief;
            noise = outcome.effective_noise;
            estimate = self.field(belief.mean.clone())?;

            let est_raster = self.raster(&estimate)?;
            steps.push(StepRecord {
                step: t,
                state,
                steering: previous.1,
                measurement: Some(measurement),
                mean: belief.mean.clone(),
                variances: belief.covariance.diagonal(),
                rrmse: rrmse(rmse(&truth_raster, &est_raster)?, rmse0)?,
                ssim: ssim_with(&truth_raster, &est_raster, &ssim_params)?,
                total_variance: total_variance(&belief.covariance, &self.gram)?,
                skipped: outcome.skipped,
                plan,
            });
        }

        Ok(RunRecord {
            run_id,
            sensors,
            steering,
            true_theta: truth.theta().clone(),
            steps,
            final_belief: belief,
        })
    }
}
