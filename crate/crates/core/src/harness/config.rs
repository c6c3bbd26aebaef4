//! Experiment configuration file.
//!
//! One TOML document with a section per subsystem. Every section falls back
//! to the default parameter set when omitted and every unknown key is an
//! error, so a typo never silently reverts to a default.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::UkfParams;
use crate::motion::MotionLimits;
use crate::planner::PlanConfig;
use crate::propagation::{Environment, RayFanConfig};
use crate::sensing::{NoiseSpec, SensorConfig};

/// How the vehicle is steered during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Steering {
    /// Zero steering: constant depth, heading for the transmitter.
    Straight,
    /// Receding-horizon planning.
    Planned,
}

impl Steering {
    pub const ALL: [Steering; 2] = [Steering::Straight, Steering::Planned];

    pub fn name(self) -> &'static str {
        match self {
            Steering::Straight => "straight",
            Steering::Planned => "planned",
        }
    }
}

impl fmt::Display for Steering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Steering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "straight" => Ok(Steering::Straight),
            "planned" => Ok(Steering::Planned),
            other => Err(Error::Config(format!(
                "unknown steering `{other}`, expected straight or planned"
            ))),
        }
    }
}

/// Basis layout. Spreads default to the squared cell size along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub rows: usize,
    pub cols: usize,
    /// Λ⁻¹ depth entry, m².
    pub depth_spread: Option<f64>,
    /// Λ⁻¹ range entry, m².
    pub range_spread: Option<f64>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            rows: 6,
            cols: 6,
            depth_spread: None,
            range_spread: None,
        }
    }
}

impl BasisConfig {
    pub fn spreads(&self, env: &Environment) -> (f64, f64) {
        let depth = self
            .depth_spread
            .unwrap_or_else(|| (env.water_depth / self.rows.max(1) as f64).powi(2));
        let range = self
            .range_spread
            .unwrap_or_else(|| (env.max_range / self.cols.max(1) as f64).powi(2));
        (depth, range)
    }
}

/// Initial belief `N([mean, 0, …], variance·I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Constant-term estimate, m/s.
    pub mean: f64,
    /// Variance of every coefficient, (m/s)².
    pub variance: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mean: 1500.0,
            variance: 25.0,
        }
    }
}

/// Initial vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartConfig {
    pub range: f64,
    pub depth: f64,
    pub speed: f64,
    /// Heading in degrees; 180 points at the transmitter.
    pub yaw_deg: f64,
}

impl Default for StartConfig {
    fn default() -> Self {
        Self {
            range: 2000.0,
            depth: 15.0,
            speed: 2.0,
            yaw_deg: 180.0,
        }
    }
}

/// Evaluation rasters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub raster_rows: usize,
    pub raster_cols: usize,
    /// Nodes per axis of the Gram-matrix quadrature.
    pub gram_nodes: usize,
    pub ssim_window: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            raster_rows: 100,
            raster_cols: 100,
            gram_nodes: 200,
            ssim_window: 7,
        }
    }
}

/// Run-set selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sensors: SensorConfig,
    pub steering: Steering,
    pub num_runs: usize,
    pub num_steps: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sensors: SensorConfig::Both,
            steering: Steering::Planned,
            num_runs: 50,
            num_steps: 100,
            seed: 1,
            output: PathBuf::from("out"),
        }
    }
}

/// The whole experiment. The noise section's `rng_seed` is ignored: noise
/// streams are derived from `run.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub environment: Environment,
    pub ray_fan: RayFanConfig,
    pub basis: BasisConfig,
    pub prior: PriorConfig,
    pub noise: NoiseSpec,
    pub ukf: UkfParams,
    pub motion: MotionLimits,
    pub start: StartConfig,
    pub planner: PlanConfig,
    pub metrics: MetricsConfig,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            environment: Environment::default(),
            ray_fan: desk_fan(),
            basis: BasisConfig::default(),
            prior: PriorConfig::default(),
            noise: NoiseSpec::default(),
            ukf: UkfParams::default(),
            motion: MotionLimits::default(),
            start: StartConfig::default(),
            planner: PlanConfig::default(),
            metrics: MetricsConfig::default(),
            run: RunConfig::default(),
        }
    }
}

/// Ray fan sized for Monte-Carlo work on a desktop: about 3 ms per trace
/// over the full region.
pub fn desk_fan() -> RayFanConfig {
    RayFanConfig {
        num_rays: 41,
        max_launch_angle_deg: 30.0,
        step_length: 10.0,
        max_bounces: 20,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Table {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Table {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.validate()?;
        self.ray_fan.validate(&self.environment)?;
        self.noise.validate()?;
        self.ukf.validate()?;
        self.motion.validate()?;
        self.planner.validate()?;
        if self.basis.rows == 0 || self.basis.cols == 0 {
            return Err(Error::Config("basis needs at least one row and column".into()));
        }
        let (ds, rs) = self.basis.spreads(&self.environment);
        if !(ds > 0.0 && rs > 0.0 && ds.is_finite() && rs.is_finite()) {
            return Err(Error::Config("basis spreads must be positive and finite".into()));
        }
        if !(self.prior.mean.is_finite() && self.prior.variance >= 0.0 && self.prior.variance.is_finite()) {
            return Err(Error::Config(
                "prior mean must be finite and variance nonnegative".into(),
            ));
        }
        let s = &self.start;
        if !(s.range.is_finite() && s.depth.is_finite() && s.speed.is_finite() && s.yaw_deg.is_finite()) {
            return Err(Error::Config("start state must be finite".into()));
        }
        self.environment
            .region()
            .check(&crate::field::Point::new(s.range, s.depth))?;
        let m = &self.metrics;
        if m.raster_rows < m.ssim_window || m.raster_cols < m.ssim_window || m.ssim_window == 0 {
            return Err(Error::Config(format!(
                "metric raster {}×{} must be at least the SSIM window {}",
                m.raster_rows, m.raster_cols, m.ssim_window
            )));
        }
        if m.gram_nodes == 0 {
            return Err(Error::Config("gram quadrature needs nodes".into()));
        }
        if self.run.num_runs == 0 {
            return Err(Error::Config("num_runs must be at least 1".into()));
        }
        if self.run.num_steps == 0 {
            return Err(Error::Config("num_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let (ds, rs) = cfg.basis.spreads(&cfg.environment);
        assert!((ds - (50.0f64 / 6.0).powi(2)).abs() < 1e-12);
        assert!((rs - (2000.0f64 / 6.0).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.sensors = SensorConfig::Ctd;
        cfg.run.steering = Steering::Straight;
        cfg.basis.depth_spread = Some(70.0);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            "bogus = 1",
            "[environment]\nwater_dept = 40.0",
            "[planner]\npopulaton = 10",
            "[run]\nruns = 3",
        ] {
            assert!(ExperimentConfig::from_toml_str(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn zero_runs_or_steps_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[run]\nnum_runs = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("[run]\nnum_steps = 0").is_err());
    }

    #[test]
    fn start_outside_region_is_rejected() {
        assert!(ExperimentConfig::from_toml_str("[start]\ndepth = 60.0").is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let default = ExperimentConfig::load(&dir.join("default.toml")).unwrap();
        let mut expected = ExperimentConfig::default();
        expected.basis.depth_spread = default.basis.depth_spread;
        expected.basis.range_spread = default.basis.range_spread;
        assert_eq!(default, expected);
        assert_eq!(
            default.basis.spreads(&default.environment),
            expected.basis.spreads(&expected.environment)
        );
        ExperimentConfig::load(&dir.join("smoke.toml")).unwrap();
    }

    #[test]
    fn steering_parses_case_insensitively() {
        assert_eq!("PLANNED".parse::<Steering>().unwrap(), Steering::Planned);
        assert!("curvy".parse::<Steering>().is_err());
    }
}
