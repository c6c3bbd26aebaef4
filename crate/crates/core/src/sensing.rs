//! CTD and transmission-loss measurement channels.
//!
//! The joint measurement function stacks the enabled channels in a fixed
//! order, CTD first and TL second. It is shared by the simulator (with
//! noise) and the filter and planner (without).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point, SspField};
use crate::propagation::{amplitude_to_tl, PropagationModel, RayFanModel};

/// Which channels the vehicle carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorConfig {
    Ctd,
    Tl,
    Both,
}

impl SensorConfig {
    pub const ALL: [SensorConfig; 3] = [SensorConfig::Ctd, SensorConfig::Tl, SensorConfig::Both];

    pub fn has_ctd(self) -> bool {
        matches!(self, SensorConfig::Ctd | SensorConfig::Both)
    }

    pub fn has_tl(self) -> bool {
        matches!(self, SensorConfig::Tl | SensorConfig::Both)
    }

    /// Length of the measurement vector.
    pub fn channels(self) -> usize {
        self.has_ctd() as usize + self.has_tl() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorConfig::Ctd => "ctd",
            SensorConfig::Tl => "tl",
            SensorConfig::Both => "both",
        }
    }
}

impl fmt::Display for SensorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ctd" => Ok(SensorConfig::Ctd),
            "tl" => Ok(SensorConfig::Tl),
            "both" => Ok(SensorConfig::Both),
            other => Err(Error::Config(format!("unknown sensor configuration `{other}`"))),
        }
    }
}

/// Where TL noise is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlNoiseDomain {
    /// Gaussian noise on the pressure amplitude (Pa) before the dB conversion.
    #[default]
    Pressure,
    /// Gaussian noise directly on the TL value (dB).
    Decibel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// CTD standard deviation, m/s.
    pub sigma_ctd: f64,
    /// TL channel standard deviation: Pa in the pressure domain, dB otherwise.
    pub sigma_tl: f64,
    pub tl_domain: TlNoiseDomain,
    pub rng_seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_ctd: 1e-2,
            sigma_tl: 1e-5,
            tl_domain: TlNoiseDomain::Pressure,
            rng_seed: 0,
        }
    }
}

/// Smallest TL variance handed to the filter, dB².
pub const TL_VARIANCE_FLOOR: f64 = 1e-6;

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_ctd >= 0.0 && self.sigma_tl >= 0.0) || !self.sigma_ctd.is_finite() || !self.sigma_tl.is_finite()
        {
            return Err(Error::Config(format!(
                "noise deviations must be finite and nonnegative, got ctd {}, tl {}",
                self.sigma_ctd, self.sigma_tl
            )));
        }
        Ok(())
    }

    /// TL variance in dB² seen by the filter at predicted pressure
    /// amplitude `amplitude`.
    ///
    /// In the pressure domain this is the first-order propagation of the
    /// amplitude noise through `-20 log10`.
    pub fn tl_variance(&self, amplitude: f64) -> f64 {
        let var = match self.tl_domain {
            TlNoiseDomain::Decibel => self.sigma_tl * self.sigma_tl,
            TlNoiseDomain::Pressure => {
                let slope = 20.0 / std::f64::consts::LN_10 / amplitude.abs().max(1e-15);
                (slope * self.sigma_tl).powi(2)
            }
        };
        var.max(TL_VARIANCE_FLOOR)
    }
}

/// One time step's measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementPair {
    pub time_index: usize,
    pub position: Point,
    /// Sound speed, m/s.
    pub ctd: Option<f64>,
    /// Transmission loss, dB.
    pub tl: Option<f64>,
}

impl MeasurementPair {
    /// Stacked vector in channel order.
    pub fn vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.ctd.is_some() as usize + self.tl.is_some() as usize,
            self.ctd.into_iter().chain(self.tl),
        )
    }

    pub fn matches(&self, config: SensorConfig) -> bool {
        self.ctd.is_some() == config.has_ctd() && self.tl.is_some() == config.has_tl()
    }
}

/// Noise-free prediction of the enabled channels at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y: DVector<f64>,
    /// Coherent pressure amplitude when the TL channel is enabled.
    pub amplitude: Option<f64>,
}

/// The joint measurement function together with its noise description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub config: SensorConfig,
    pub noise: NoiseSpec,
    pub propagation: RayFanModel,
}

impl SensorModel {
    pub fn new(config: SensorConfig, noise: NoiseSpec, propagation: RayFanModel) -> Result<Self> {
        noise.validate()?;
        Ok(Self {
            config,
            noise,
            propagation,
        })
    }

    pub fn channels(&self) -> usize {
        self.config.channels()
    }

    /// `h(θ, p)` for the field's coefficients.
    pub fn h_joint(&self, field: &SspField, p: &Point) -> Result<DVector<f64>> {
        Ok(self.predict(field, p)?.y)
    }

    pub fn predict(&self, field: &SspField, p: &Point) -> Result<Prediction> {
        Ok(self.predict_many(field, std::slice::from_ref(p))?.remove(0))
    }

    /// Predictions at several positions sharing one ray trace.
    pub fn predict_many(&self, field: &SspField, points: &[Point]) -> Result<Vec<Prediction>> {
        for p in points {
            field.region().check(p)?;
        }
        let amplitudes = if self.config.has_tl() {
            Some(self.propagation.pressure(field, points)?)
        } else {
            None
        };
        Ok(points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let amplitude = amplitudes.as_ref().map(|a| a[i].norm());
                let ctd = self.config.has_ctd().then(|| field.evaluate(p));
                let tl = amplitude.map(amplitude_to_tl);
                Prediction {
                    y: DVector::from_iterator(self.channels(), ctd.into_iter().chain(tl)),
                    amplitude,
                }
            })
            .collect())
    }

    /// `R = diag(σ_ctd², σ_tl-eff²)` restricted to the enabled channels,
    /// linearised at the predicted amplitude for the pressure-domain TL.
    pub fn noise_covariance(&self, prediction: &Prediction) -> DMatrix<f64> {
        let mut diag = Vec::with_capacity(2);
        if self.config.has_ctd() {
            diag.push(self.noise.sigma_ctd * self.noise.sigma_ctd);
        }
        if self.config.has_tl() {
            diag.push(self.noise.tl_variance(prediction.amplitude.unwrap_or(0.0)));
        }
        DMatrix::from_diagonal(&DVector::from_vec(diag))
    }
}

/// Noisy measurement generator owning its random stream.
#[derive(Debug, Clone)]
pub struct Sensor {
    model: SensorModel,
    rng: ChaCha20Rng,
}

impl Sensor {
    pub fn new(model: SensorModel) -> Self {
        let rng = ChaCha20Rng::seed_from_u64(model.noise.rng_seed);
        Self { model, rng }
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    /// Measures the true field at `p`.
    ///
    /// Two normals are drawn every call, CTD then TL, whatever the
    /// configuration, so that runs with different sensor sets see the same
    /// noise sequence.
    pub fn measure(&mut self, truth: &SspField, p: &Point, time_index: usize) -> Result<MeasurementPair> {
        let e_ctd: f64 = StandardNormal.sample(&mut self.rng);
        let e_tl: f64 = StandardNormal.sample(&mut self.rng);
        let pred = self.model.predict(truth, p)?;
        let noise = &self.model.noise;
        let ctd = self.model.config.has_ctd().then(|| pred.y[0] + noise.sigma_ctd * e_ctd);
        let tl = pred.amplitude.map(|a| match noise.tl_domain {
            TlNoiseDomain::Pressure => amplitude_to_tl(a + noise.sigma_tl * e_tl),
            TlNoiseDomain::Decibel => amplitude_to_tl(a) + noise.sigma_tl * e_tl,
        });
        Ok(MeasurementPair {
            time_index,
            position: *p,
            ctd,
            tl,
        })
    }
}
