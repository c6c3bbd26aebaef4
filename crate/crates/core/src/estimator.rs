//! Unscented Kalman filter over a random-walk coefficient state.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.shape() != (n, n) {
            return Err(Error::Dimension {
                expected: n,
                actual: covariance.nrows(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("belief contains non-finite entries".into()));
        }
        let mut b = Self { mean, covariance };
        b.symmetrize();
        Ok(b)
    }

    /// `N(mean, variance·I)`.
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn symmetrize(&mut self) {
        let t = self.covariance.transpose();
        self.covariance = (&self.covariance + t) * 0.5;
    }

    /// Smallest eigenvalue is at least `-1e-8·trace`.
    pub fn is_psd(&self) -> bool {
        let tol = 1e-8 * self.covariance.trace().abs();
        let eig = SymmetricEigen::new(self.covariance.clone()).eigenvalues;
        eig.iter().all(|&l| l >= -tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    /// `None` picks `3 - n`.
    pub kappa: Option<f64>,
    /// Per-step process noise variance; `Q = q·I`.
    pub process_noise: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            kappa: None,
            process_noise: 1e-3,
        }
    }
}

impl UkfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.beta.is_finite() || !(self.process_noise >= 0.0) {
            return Err(Error::Config(format!("invalid unscented parameters {self:?}")));
        }
        Ok(())
    }

    /// `λ = α²(n+κ) - n`, raised if needed so that `n + λ ≥ 1e-3·n`.
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        let kappa = self.kappa.unwrap_or(3.0 - n);
        let lambda = self.alpha * self.alpha * (n + kappa) - n;
        lambda.max(1e-3 * n - n)
    }

    pub fn process_matrix(&self, n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * self.process_noise
    }
}

/// Random-walk prediction: `Σ + Q`, mean unchanged.
pub fn predict(belief: &GaussianBelief, q: &DMatrix<f64>) -> Result<GaussianBelief> {
    let n = belief.dim();
    if q.shape() != (n, n) {
        return Err(Error::Dimension {
            expected: n,
            actual: q.nrows(),
        });
    }
    let mut out = GaussianBelief {
        mean: belief.mean.clone(),
        covariance: &belief.covariance + q,
    };
    out.symmetrize();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SigmaPoints {
    /// One point per column, `2n + 1` columns.
    pub points: DMatrix<f64>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
    /// `n + λ`.
    pub scale: f64,
}

fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let jitter = 1e-9 * m.trace().abs() / n as f64;
    let shifted = m + DMatrix::identity(n, n) * jitter;
    shifted
        .cholesky()
        .ok_or_else(|| Error::Factorization(format!("{n}x{n} matrix not positive definite after jitter {jitter:e}")))
}

pub fn sigma_points(belief: &GaussianBelief, params: &UkfParams) -> Result<SigmaPoints> {
    let n = belief.dim();
    let lambda = params.lambda(n);
    let scale = n as f64 + lambda;
    let chol = cholesky_with_jitter(&(&belief.covariance * scale))?;
    let l = chol.l();
    let mut points = DMatrix::zeros(n, 2 * n + 1);
    points.set_column(0, &belief.mean);
    for i in 0..n {
        let col = l.column(i);
        points.set_column(1 + i, &(&belief.mean + col));
        points.set_column(1 + n + i, &(&belief.mean - col));
    }
    let w = 0.5 / scale;
    let mut mean_weights = vec![w; 2 * n + 1];
    let mut cov_weights = vec![w; 2 * n + 1];
    mean_weights[0] = lambda / scale;
    cov_weights[0] = lambda / scale + (1.0 - params.alpha * params.alpha + params.beta);
    Ok(SigmaPoints {
        points,
        mean_weights,
        cov_weights,
        scale,
    })
}

#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub belief: GaussianBelief,
    /// Predicted measurement mean.
    pub predicted: DVector<f64>,
    /// Set when the innovation covariance was singular and the prior was kept.
    pub skipped: Option<String>,
    /// Noise covariance the gain was formed with: `R` plus the clipped
    /// linearisation residual. Equals `R` when the update was skipped.
    pub effective_noise: DMatrix<f64>,
}

/// Unscented measurement update.
///
/// The covariance is formed in Joseph form with the statistically
/// linearised Jacobian `H = CᵀΣ⁻¹`. The part of the predicted measurement
/// spread that `H` does not explain, `P_yy - HΣHᵀ`, is treated as extra
/// measurement noise (clipped to be PSD), so for a linear channel the
/// result is the ordinary Kalman update.
pub fn update<H>(
    belief: &GaussianBelief,
    y: &DVector<f64>,
    r: &DMatrix<f64>,
    h: H,
    params: &UkfParams,
) -> Result<UpdateOutcome>
where
    H: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let n = belief.dim();
    let m = y.len();
    if r.shape() != (m, m) {
        return Err(Error::Dimension {
            expected: m,
            actual: r.nrows(),
        });
    }
    if m == 0 {
        return Ok(UpdateOutcome {
            belief: belief.clone(),
            predicted: DVector::zeros(0),
            skipped: None,
            effective_noise: r.clone(),
        });
    }
    let sp = sigma_points(belief, params)?;
    let outputs = (0..sp.points.ncols())
        .into_par_iter()
        .map(|i| h(&sp.points.column(i).into_owned()))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = outputs.iter().find(|o| o.len() != m) {
        return Err(Error::Dimension {
            expected: m,
            actual: bad.len(),
        });
    }

    let mut y_hat = DVector::zeros(m);
    for (w, o) in sp.mean_weights.iter().zip(&outputs) {
        y_hat += o * *w;
    }
    let mut pyy = DMatrix::zeros(m, m);
    let mut cross = DMatrix::zeros(n, m);
    for (i, o) in outputs.iter().enumerate() {
        let w = sp.cov_weights[i];
        let dy = o - &y_hat;
        let dx = sp.points.column(i) - &belief.mean;
        pyy += &dy * dy.transpose() * w;
        cross += dx * dy.transpose() * w;
    }

    let keep = |why: String| UpdateOutcome {
        belief: belief.clone(),
        predicted: y_hat.clone(),
        skipped: Some(why),
        effective_noise: r.clone(),
    };
    if pyy.iter().chain(cross.iter()).any(|v| !v.is_finite()) {
        return Ok(keep("non-finite predicted measurements".into()));
    }

    let sigma_chol = cholesky_with_jitter(&belief.covariance)?;
    // Σ⁻¹C, so that H = (Σ⁻¹C)ᵀ.
    let sinv_c = sigma_chol.solve(&cross);
    let mut explained = cross.transpose() * &sinv_c;
    explained = (&explained + explained.transpose()) * 0.5;
    let mut residual = &pyy - &explained;
    residual = (&residual + residual.transpose()) * 0.5;
    let eig = SymmetricEigen::new(residual);
    let clipped =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0))) * eig.eigenvectors.transpose();
    let r_eff = r + clipped;
    let s = &explained + &r_eff;
    let Some(s_chol) = s.clone().cholesky() else {
        return Ok(keep("innovation covariance not positive definite".into()));
    };
    // Innovation spread below rounding level of the predicted values.
    let singular = (0..m).any(|i| !(s[(i, i)].sqrt() > 1e-12 * (y_hat[i].abs() + 1.0)));
    if singular {
        return Ok(keep("innovation covariance numerically singular".into()));
    }
    let gain = s_chol.solve(&cross.transpose()).transpose();
    let mean = &belief.mean + &gain * (y - &y_hat);
    let a = DMatrix::identity(n, n) - &gain * sinv_c.transpose();
    let covariance = &a * &belief.covariance * a.transpose() + &gain * &r_eff * gain.transpose();
    let mut post = GaussianBelief { mean, covariance };
    post.symmetrize();
    Ok(UpdateOutcome {
        belief: post,
        predicted: y_hat,
        skipped: None,
        effective_noise: r_eff,
    })
}

#[derive(Debug, Clone)]
pub struct FilterStep {
    pub belief: GaussianBelief,
    pub skipped: Option<String>,
}

/// Folds predict and update over a measurement sequence. `step` supplies
/// the measurement function and its noise covariance for each time index,
/// given the predicted belief.
pub fn run_filter<F, H>(
    initial: &GaussianBelief,
    measurements: &[DVector<f64>],
    params: &UkfParams,
    mut step: F,
) -> Result<Vec<FilterStep>>
where
    F: FnMut(usize, &GaussianBelief) -> Result<(H, DMatrix<f64>)>,
    H: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let q = params.process_matrix(initial.dim());
    let mut belief = initial.clone();
    let mut out = Vec::with_capacity(measurements.len());
    for (t, y) in measurements.iter().enumerate() {
        let predicted = predict(&belief, &q)?;
        let (h, r) = step(t, &predicted)?;
        let res = update(&predicted, y, &r, h, params)?;
        belief = res.belief;
        out.push(FilterStep {
            belief: belief.clone(),
            skipped: res.skipped,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn prediction_adds_process_noise() {
        let b = GaussianBelief::isotropic(DVector::from_element(37, 3.0), 25.0).unwrap();
        let p = predict(&b, &UkfParams::default().process_matrix(37)).unwrap();
        assert_eq!(p.mean, b.mean);
        assert_relative_eq!(p.covariance, DMatrix::identity(37, 37) * 25.001, epsilon = 1e-12);
        assert_eq!(predict(&b, &DMatrix::zeros(37, 37)).unwrap(), b);
    }

    #[test]
    fn lambda_follows_defaults_and_clamp() {
        let p = UkfParams::default();
        assert_eq!(p.lambda(37), -34.0);
        let tight = UkfParams { alpha: 1e-3, ..p };
        assert_relative_eq!(37.0 + tight.lambda(37), 37e-3, epsilon = 1e-12);
    }

    #[test]
    fn sigma_points_reproduce_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 37;
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let cov = random_spd(n, &mut rng);
        let b = GaussianBelief::new(mean.clone(), cov.clone()).unwrap();
        let sp = sigma_points(&b, &UkfParams::default()).unwrap();
        assert_eq!(sp.points.ncols(), 75);
        assert_relative_eq!(sp.mean_weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let mut m = DVector::zeros(n);
        for i in 0..75 {
            m += sp.points.column(i) * sp.mean_weights[i];
        }
        assert!((&m - &mean).norm() <= 1e-12 * mean.norm());
        // Covariance weights minus the centre correction reconstruct Σ.
        let mut c = DMatrix::zeros(n, n);
        for i in 1..75 {
            let d = sp.points.column(i) - &mean;
            c += &d * d.transpose() * sp.cov_weights[i];
        }
        assert!((&c - &cov).norm() <= 1e-8 * cov.norm());
    }

    #[test]
    fn degenerate_spread_collapses_points() {
        let b = GaussianBelief::isotropic(DVector::from_element(5, 1500.0), 1e-18).unwrap();
        let sp = sigma_points(&b, &UkfParams::default()).unwrap();
        for i in 0..11 {
            assert!((sp.points.column(i) - &b.mean).amax() < 1e-8);
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let mut cov = DMatrix::identity(3, 3);
        cov[(2, 2)] = -1.0;
        let b = GaussianBelief::new(DVector::zeros(3), cov).unwrap();
        assert!(matches!(
            sigma_points(&b, &UkfParams::default()),
            Err(Error::Factorization(_))
        ));
    }

    fn kalman(b: &GaussianBelief, h: &DVector<f64>, r: f64, y: f64) -> GaussianBelief {
        let ph = &b.covariance * h;
        let s = h.dot(&ph) + r;
        let k = &ph / s;
        let mean = &b.mean + &k * (y - h.dot(&b.mean));
        let cov = &b.covariance - &k * ph.transpose();
        GaussianBelief::new(mean, cov).unwrap()
    }

    #[test]
    fn linear_channel_matches_kalman_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        let b = GaussianBelief::new(
            DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            random_spd(n, &mut rng),
        )
        .unwrap();
        let hv = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let r = 0.3;
        let y = 0.7;
        let hh = hv.clone();
        let out = update(
            &b,
            &DVector::from_element(1, y),
            &DMatrix::from_element(1, 1, r),
            move |t| Ok(DVector::from_element(1, hh.dot(t))),
            &UkfParams::default(),
        )
        .unwrap();
        assert!(out.skipped.is_none());
        let oracle = kalman(&b, &hv, r, y);
        assert!((&out.belief.mean - &oracle.mean).amax() < 1e-10);
        assert!((&out.belief.covariance - &oracle.covariance).amax() < 1e-10);
        assert!(out.belief.covariance.trace() <= b.covariance.trace() + 1e-6);
    }

    #[test]
    fn huge_noise_leaves_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = GaussianBelief::new(DVector::zeros(4), random_spd(4, &mut rng)).unwrap();
        let r = DMatrix::from_element(1, 1, 1e24);
        let out = update(
            &b,
            &DVector::from_element(1, 5.0),
            &r,
            |t: &DVector<f64>| Ok(DVector::from_element(1, t.sum())),
            &UkfParams::default(),
        )
        .unwrap();
        assert!((&out.belief.covariance - &b.covariance).amax() <= 1e-6 * b.covariance.amax());
        assert!((&out.belief.mean - &b.mean).amax() < 1e-6);
    }

    #[test]
    fn singular_innovation_skips_update() {
        let b = GaussianBelief::isotropic(DVector::zeros(3), 1.0).unwrap();
        let out = update(
            &b,
            &DVector::from_element(1, 1.0),
            &DMatrix::zeros(1, 1),
            |_: &DVector<f64>| Ok(DVector::from_element(1, 2.0)),
            &UkfParams::default(),
        )
        .unwrap();
        assert!(out.skipped.is_some());
        assert_eq!(out.belief, b);
    }

    #[test]
    fn repeated_noiseless_observation_shrinks_point_variance() {
        let n = 5;
        let hv = DVector::from_vec(vec![1.0, 0.5, 0.2, 0.0, 0.1]);
        let mut b = GaussianBelief::isotropic(DVector::zeros(n), 4.0).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..6 {
            let hh = hv.clone();
            b = update(
                &b,
                &DVector::from_element(1, 0.0),
                &DMatrix::from_element(1, 1, 1e-12),
                move |t| Ok(DVector::from_element(1, hh.dot(t))),
                &UkfParams::default(),
            )
            .unwrap()
            .belief;
            let v = hv.dot(&(&b.covariance * &hv));
            assert!(v <= prev);
            prev = v;
        }
        assert!(prev < 1e-9);
    }

    #[test]
    fn nonlinear_update_stays_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        let b = GaussianBelief::new(DVector::zeros(n), random_spd(n, &mut rng)).unwrap();
        let out = update(
            &b,
            &DVector::from_vec(vec![0.2, 1.0]),
            &DMatrix::from_diagonal(&DVector::from_vec(vec![1e-4, 1e-3])),
            |t: &DVector<f64>| Ok(DVector::from_vec(vec![t[0], (3.0 * t[1]).sin() + t[2] * t[2]])),
            &UkfParams::default(),
        )
        .unwrap();
        assert!(out.skipped.is_none());
        assert!(out.belief.is_psd());
        assert_relative_eq!(out.belief.covariance, out.belief.covariance.transpose(), epsilon = 0.0);
    }

    #[test]
    fn run_filter_without_measurements_only_accumulates_noise() {
        let b = GaussianBelief::isotropic(DVector::zeros(3), 1.0).unwrap();
        let ys = vec![DVector::<f64>::zeros(0); 4];
        let steps = run_filter(&b, &ys, &UkfParams::default(), |_, _| {
            Ok((|_: &DVector<f64>| Ok(DVector::zeros(0)), DMatrix::zeros(0, 0)))
        })
        .unwrap();
        assert_eq!(steps.len(), 4);
        assert_relative_eq!(
            steps[3].belief.covariance,
            DMatrix::identity(3, 3) * 1.004,
            epsilon = 1e-12
        );
        assert_eq!(steps[3].belief.mean, b.mean);
    }
}
