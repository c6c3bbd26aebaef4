//! Field error and similarity metrics on a midpoint raster.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{Point, Region, SspField};

/// Sound speed sampled at cell midpoints; rows are depth, columns range.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRaster {
    pub values: DMatrix<f64>,
    pub cell_range: f64,
    pub cell_depth: f64,
}

impl FieldRaster {
    pub fn sample(field: &SspField, region: &Region, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("raster needs at least one cell".into()));
        }
        let cell_range = region.max_range / cols as f64;
        let cell_depth = region.max_depth / rows as f64;
        let values = DMatrix::from_fn(rows, cols, |i, j| {
            field.evaluate(&Point::new(
                (j as f64 + 0.5) * cell_range,
                (i as f64 + 0.5) * cell_depth,
            ))
        });
        Ok(Self {
            values,
            cell_range,
            cell_depth,
        })
    }

    pub fn from_values(values: DMatrix<f64>, cell_range: f64, cell_depth: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("raster values must be finite".into()));
        }
        Ok(Self {
            values,
            cell_range,
            cell_depth,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_range * self.cell_depth
    }

    fn check_same(&self, other: &FieldRaster) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        Ok(())
    }
}

/// `√∫(ĉ - c)² dp` by midpoint quadrature. Units m/s·m.
pub fn rmse(truth: &FieldRaster, estimate: &FieldRaster) -> Result<f64> {
    truth.check_same(estimate)?;
    let sum: f64 = truth
        .values
        .iter()
        .zip(estimate.values.iter())
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    Ok((sum * truth.cell_area()).sqrt())
}

pub fn rrmse(rmse_t: f64, rmse_0: f64) -> Result<f64> {
    if !(rmse_0 > 0.0) {
        return Err(Error::Degenerate(format!("initial error {rmse_0} must be positive")));
    }
    Ok(rmse_t / rmse_0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub stride: usize,
    /// Dynamic range `D`. `None` uses the first raster's range, floored at 1.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            stride: 1,
            dynamic_range: None,
        }
    }
}

/// Mean SSIM over square windows, with `D` taken from the true raster.
pub fn ssim(truth: &FieldRaster, estimate: &FieldRaster) -> Result<f64> {
    ssim_with(truth, estimate, &SsimParams::default())
}

pub fn ssim_with(truth: &FieldRaster, estimate: &FieldRaster, params: &SsimParams) -> Result<f64> {
    truth.check_same(estimate)?;
    let (rows, cols) = truth.shape();
    let w = params.window;
    if w == 0 || params.stride == 0 || rows < w || cols < w {
        return Err(Error::Config(format!(
            "ssim window {w} (stride {}) does not fit a {rows}x{cols} raster",
            params.stride
        )));
    }
    let d = params.dynamic_range.unwrap_or_else(|| {
        let (lo, hi) = truth
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        (hi - lo).max(1.0)
    });
    let c1 = (0.01 * d).powi(2);
    let c2 = (0.03 * d).powi(2);
    let x = &truth.values;
    let y = &estimate.values;
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in (0..=rows - w).step_by(params.stride) {
        for j0 in (0..=cols - w).step_by(params.stride) {
            let (mut sx, mut sy) = (0.0, 0.0);
            for j in j0..j0 + w {
                for i in i0..i0 + w {
                    sx += x[(i, j)];
                    sy += y[(i, j)];
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in j0..j0 + w {
                for i in i0..i0 + w {
                    let a = x[(i, j)] - mx;
                    let b = y[(i, j)] - my;
                    vx += a * a;
                    vy += b * b;
                    cxy += a * b;
                }
            }
            let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
            let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `trace(Σ G)`: the region integral of the pointwise field variance.
pub fn total_variance(covariance: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<f64> {
    if covariance.shape() != gram.shape() {
        return Err(Error::Dimension {
            expected: gram.nrows(),
            actual: covariance.nrows(),
        });
    }
    // G is symmetric, so trace(ΣG) is the elementwise inner product.
    Ok(covariance.iter().zip(gram.iter()).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gram_matrix, BasisGrid, QuadratureGrid};
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn table_basis() -> (Region, Arc<BasisGrid>) {
        let region = Region::new(2000.0, 50.0).unwrap();
        let basis = BasisGrid::uniform(&region, 6, 6, (50.0f64 / 6.0).powi(2), (2000.0f64 / 6.0).powi(2)).unwrap();
        (region, Arc::new(basis))
    }

    fn random_field(seed: u64) -> SspField {
        let (region, basis) = table_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = DVector::from_fn(37, |i, _| {
            if i == 0 {
                1500.0
            } else {
                5.0 * rng.sample::<f64, _>(StandardNormal)
            }
        });
        SspField::new(theta, basis, region).unwrap()
    }

    fn raster(f: &SspField, n: usize) -> FieldRaster {
        FieldRaster::sample(f, f.region(), n, n).unwrap()
    }

    #[test]
    fn rmse_of_identical_fields_is_zero() {
        let f = random_field(1);
        assert_eq!(rmse(&raster(&f, 100), &raster(&f, 100)).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_rmse() {
        let (region, basis) = table_basis();
        let a = SspField::constant(1500.0, basis.clone(), region).unwrap();
        let b = SspField::constant(1501.0, basis, region).unwrap();
        let e = rmse(&raster(&a, 100), &raster(&b, 100)).unwrap();
        assert!((e - 316.23).abs() <= 0.005 * 316.23, "{e}");
    }

    #[test]
    fn rmse_matches_finer_quadrature() {
        let a = random_field(2);
        let b = random_field(3);
        let coarse = rmse(&raster(&a, 100), &raster(&b, 100)).unwrap();
        let fine = rmse(&raster(&a, 400), &raster(&b, 400)).unwrap();
        assert!((coarse - fine).abs() <= 0.01 * fine, "{coarse} {fine}");
    }

    #[test]
    fn rrmse_definition() {
        assert_eq!(rrmse(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(rrmse(1.5, 3.0).unwrap(), 0.5);
        assert!(rrmse(1.0, 0.0).is_err());
    }

    #[test]
    fn ssim_self_similarity_is_exact() {
        let r = raster(&random_field(4), 100);
        assert_eq!(ssim(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn ssim_penalises_offset() {
        let r = raster(&random_field(5), 100);
        let (lo, hi) = (r.values.min(), r.values.max());
        let shifted = FieldRaster {
            values: r.values.add_scalar(0.1 * (hi - lo)),
            ..r.clone()
        };
        assert!(ssim(&r, &shifted).unwrap() < 1.0);
    }

    #[test]
    fn ssim_matches_direct_two_window_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(4, 8, |_, _| rng.random_range(0.0..10.0));
        let y = DMatrix::from_fn(4, 8, |_, _| rng.random_range(0.0..10.0));
        let params = SsimParams {
            window: 4,
            stride: 4,
            dynamic_range: None,
        };
        let rx = FieldRaster::from_values(x.clone(), 1.0, 1.0).unwrap();
        let ry = FieldRaster::from_values(y.clone(), 1.0, 1.0).unwrap();
        let got = ssim_with(&rx, &ry, &params).unwrap();

        let d = (x.max() - x.min()).max(1.0);
        let (c1, c2) = ((0.01 * d).powi(2), (0.03 * d).powi(2));
        let window = |m: &DMatrix<f64>, j0: usize| m.view((0, j0), (4, 4)).iter().copied().collect::<Vec<f64>>();
        let mut acc = 0.0;
        for j0 in [0, 4] {
            let a = window(&x, j0);
            let b = window(&y, j0);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / 16.0;
            let (ma, mb) = (mean(&a), mean(&b));
            let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / 16.0;
            let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / 16.0;
            let cab = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / 16.0;
            let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            let cs = (2.0 * cab + c2) / (va + vb + c2);
            acc += l * cs;
        }
        assert!((got - acc / 2.0).abs() < 1e-10, "{got} {}", acc / 2.0);
    }

    #[test]
    fn ssim_rejects_small_raster() {
        let r = FieldRaster::from_values(DMatrix::zeros(5, 5), 1.0, 1.0).unwrap();
        assert!(ssim(&r, &r).is_err());
    }

    #[test]
    fn ssim_of_constant_rasters_is_finite() {
        let a = FieldRaster::from_values(DMatrix::from_element(10, 10, 1500.0), 1.0, 1.0).unwrap();
        let b = FieldRaster::from_values(DMatrix::from_element(10, 10, 1500.0), 1.0, 1.0).unwrap();
        assert_eq!(ssim(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn total_variance_identities() {
        let (region, basis) = table_basis();
        let g = gram_matrix(&region, &basis, QuadratureGrid::new(200, 200)).unwrap();
        assert_eq!(total_variance(&DMatrix::zeros(37, 37), &g).unwrap(), 0.0);
        let tv = total_variance(&(DMatrix::identity(37, 37) * 25.0), &g).unwrap();
        assert!((tv - 25.0 * g.trace()).abs() <= 1e-12 * tv);
        assert!(total_variance(&DMatrix::zeros(3, 3), &g).is_err());
    }

    #[test]
    fn total_variance_matches_sampled_field_variance() {
        let (region, basis) = table_basis();
        let g = gram_matrix(&region, &basis, QuadratureGrid::new(200, 200)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = DMatrix::from_fn(37, 37, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() * 0.2 + DMatrix::identity(37, 37) * 2.0;
        let chol = cov.clone().cholesky().unwrap().l();
        let (rows, cols) = (20, 40);
        let nodes: Vec<Point> = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| Point::new((j as f64 + 0.5) * 50.0, (i as f64 + 0.5) * 2.5)))
            .collect();
        let phis: Vec<DVector<f64>> = nodes.iter().map(|p| basis.basis_vector(p)).collect();
        let draws = 10_000;
        let mut sum = vec![0.0; nodes.len()];
        let mut sq = vec![0.0; nodes.len()];
        for _ in 0..draws {
            let z = DVector::from_fn(37, |_, _| rng.sample::<f64, _>(StandardNormal));
            let theta = &chol * z;
            for (k, phi) in phis.iter().enumerate() {
                let c = phi.dot(&theta);
                sum[k] += c;
                sq[k] += c * c;
            }
        }
        let cell = region.area() / nodes.len() as f64;
        let mc: f64 = (0..nodes.len())
            .map(|k| {
                let m = sum[k] / draws as f64;
                (sq[k] / draws as f64 - m * m) * cell
            })
            .sum();
        let tv = total_variance(&cov, &g).unwrap();
        assert!((mc - tv).abs() <= 0.02 * tv, "{mc} {tv}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rmse_is_a_metric(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000) {
            let (a, b, c) = (raster(&random_field(s1), 30), raster(&random_field(s2), 30), raster(&random_field(s3), 30));
            let ab = rmse(&a, &b).unwrap();
            prop_assert_eq!(ab, rmse(&b, &a).unwrap());
            prop_assert!(rmse(&a, &c).unwrap() <= ab + rmse(&b, &c).unwrap() + 1e-9);
        }

        #[test]
        fn ssim_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let (a, b) = (raster(&random_field(s1), 30), raster(&random_field(s2), 30));
            let params = SsimParams { dynamic_range: Some(20.0), ..Default::default() };
            let ab = ssim_with(&a, &b, &params).unwrap();
            let ba = ssim_with(&b, &a, &params).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            let d = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&d));
        }
    }
}
