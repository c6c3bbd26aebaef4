//! Gaussian basis-function representation of the sound-speed field.
//!
//! `c(p) = φ(p)ᵀ θ`, where `φ(p) = [1, φ_1(p), …, φ_K(p)]` and each
//! `φ_k(p) = exp(-(p - p_k)ᵀ Λ (p - p_k))` with a diagonal `Λ`. Basis
//! centers sit on a rectangular rows × columns layout, which makes every
//! basis function separable into a range factor and a depth factor.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A range–depth position in metres. Depth is positive downwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub range: f64,
    pub depth: f64,
}

impl Point {
    pub const fn new(range: f64, depth: f64) -> Self {
        Self { range, depth }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.range - other.range).hypot(self.depth - other.depth)
    }

    pub fn is_finite(&self) -> bool {
        self.range.is_finite() && self.depth.is_finite()
    }
}

/// Axis-aligned region `[0, max_range] × [0, max_depth]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub max_range: f64,
    pub max_depth: f64,
}

impl Region {
    pub fn new(max_range: f64, max_depth: f64) -> Result<Self> {
        let region = Self { max_range, max_depth };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0 && self.max_depth > 0.0) || !self.max_range.is_finite() || !self.max_depth.is_finite()
        {
            return Err(Error::DegenerateRegion(format!(
                "{} m × {} m",
                self.max_range, self.max_depth
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.max_range * self.max_depth
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0.0..=self.max_range).contains(&p.range) && (0.0..=self.max_depth).contains(&p.depth)
    }

    pub fn check(&self, p: &Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutsideRegion {
                range: p.range,
                depth: p.depth,
            })
        }
    }
}

/// Rectangular layout of Gaussian basis functions.
///
/// Basis index `k` (1-based inside φ) maps to `row = (k-1) / cols` (depth)
/// and `col = (k-1) % cols` (range).
#[derive(Debug, Clone, PartialEq)]
pub struct BasisGrid {
    range_centers: Vec<f64>,
    depth_centers: Vec<f64>,
    /// Diagonal of Λ: 1/m² along range and depth.
    inv_range: f64,
    inv_depth: f64,
    /// Center spacing when an axis is evenly spaced and ascending.
    range_step: Option<f64>,
    depth_step: Option<f64>,
}

fn even_step(centers: &[f64]) -> Option<f64> {
    if centers.len() < 2 {
        return None;
    }
    let step = centers[1] - centers[0];
    let even = step > 0.0 && centers.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step);
    even.then_some(step)
}

/// Gaussian factors `exp(-a (x - x_i)²)` with first and second derivatives
/// for every center on one axis, written into `out[i] = [g, g', g'']`.
fn axis_factors(x: f64, centers: &[f64], inv: f64, step: Option<f64>, out: &mut [[f64; 3]]) {
    let fill = |o: &mut [f64; 3], d: f64, e: f64| {
        let s = -2.0 * d * inv;
        *o = [e, s * e, (s * s - 2.0 * inv) * e];
    };
    match step {
        // exp(-a(d - kΔ)²) = exp(-a d²) · exp(2 a d Δ)^k · exp(-a Δ² k²), walked
        // outwards from the nearest center so the factors stay well scaled.
        Some(delta) if inv * delta * delta < 50.0 => {
            let n = centers.len();
            let i0 = (((x - centers[0]) / delta).round().max(0.0) as usize).min(n - 1);
            let d0 = x - centers[i0];
            let base = (-inv * d0 * d0).exp();
            let ratio = (2.0 * inv * d0 * delta).exp();
            let decay = (-inv * delta * delta).exp();
            fill(&mut out[i0], d0, base);
            // Going up: multiply by ratio·decay^(2k-1); going down: by decay^(2k-1)/ratio.
            let (mut up, mut fup) = (base, ratio * decay);
            let (mut down, mut fdown) = (base, decay / ratio);
            let decay2 = decay * decay;
            for k in 1..n {
                if i0 + k < n {
                    up *= fup;
                    fup *= decay2;
                    fill(&mut out[i0 + k], x - centers[i0 + k], up);
                }
                if k <= i0 {
                    down *= fdown;
                    fdown *= decay2;
                    fill(&mut out[i0 - k], x - centers[i0 - k], down);
                }
            }
        }
        _ => {
            for (o, c) in out.iter_mut().zip(centers) {
                let d = x - c;
                fill(o, d, (-d * d * inv).exp());
            }
        }
    }
}

impl BasisGrid {
    /// Builds a grid from explicit center coordinates and spreads (`Λ⁻¹`
    /// diagonal entries, m²).
    pub fn new(range_centers: Vec<f64>, depth_centers: Vec<f64>, depth_spread: f64, range_spread: f64) -> Result<Self> {
        if range_centers.is_empty() || depth_centers.is_empty() {
            return Err(Error::Config("basis grid needs at least one row and column".into()));
        }
        if !(depth_spread > 0.0 && range_spread > 0.0) || !depth_spread.is_finite() || !range_spread.is_finite() {
            return Err(Error::Config(format!(
                "basis spreads must be positive, got depth {depth_spread}, range {range_spread}"
            )));
        }
        for axis in [&range_centers, &depth_centers] {
            if axis.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config("basis centers must be finite".into()));
            }
            for (i, a) in axis.iter().enumerate() {
                if axis[i + 1..].iter().any(|b| b == a) {
                    return Err(Error::Config("basis centers must be distinct".into()));
                }
            }
        }
        Ok(Self {
            range_step: even_step(&range_centers),
            depth_step: even_step(&depth_centers),
            range_centers,
            depth_centers,
            inv_range: 1.0 / range_spread,
            inv_depth: 1.0 / depth_spread,
        })
    }

    /// Centers at the cell midpoints of a `rows × cols` partition of the region.
    pub fn uniform(region: &Region, rows: usize, cols: usize, depth_spread: f64, range_spread: f64) -> Result<Self> {
        region.validate()?;
        let midpoints =
            |n: usize, extent: f64| -> Vec<f64> { (0..n).map(|i| (i as f64 + 0.5) * extent / n as f64).collect() };
        Self::new(
            midpoints(cols, region.max_range),
            midpoints(rows, region.max_depth),
            depth_spread,
            range_spread,
        )
    }

    /// Number of Gaussian basis functions K.
    pub fn count(&self) -> usize {
        self.range_centers.len() * self.depth_centers.len()
    }

    /// Length of θ and φ.
    pub fn dim(&self) -> usize {
        self.count() + 1
    }

    pub fn rows(&self) -> usize {
        self.depth_centers.len()
    }

    pub fn cols(&self) -> usize {
        self.range_centers.len()
    }

    pub fn range_centers(&self) -> &[f64] {
        &self.range_centers
    }

    pub fn depth_centers(&self) -> &[f64] {
        &self.depth_centers
    }

    pub fn depth_spread(&self) -> f64 {
        1.0 / self.inv_depth
    }

    pub fn range_spread(&self) -> f64 {
        1.0 / self.inv_range
    }

    /// Center of Gaussian basis function `k`, 0-based over the K Gaussians.
    pub fn center(&self, k: usize) -> Point {
        let cols = self.cols();
        Point::new(self.range_centers[k % cols], self.depth_centers[k / cols])
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.count()).map(|k| self.center(k)).collect()
    }

    /// Writes φ(p) into `out` (length K+1).
    pub fn basis_into(&self, p: &Point, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let cols = self.cols();
        out[0] = 1.0;
        for (row, zc) in self.depth_centers.iter().enumerate() {
            let dz = p.depth - zc;
            let ez = dz * dz * self.inv_depth;
            for (col, rc) in self.range_centers.iter().enumerate() {
                let dr = p.range - rc;
                out[1 + row * cols + col] = (-(dr * dr * self.inv_range + ez)).exp();
            }
        }
    }

    /// φ(p) as a vector of length K+1.
    pub fn basis_vector(&self, p: &Point) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.basis_into(p, out.as_mut_slice());
        out
    }
}

/// Sound speed and its first and second spatial derivatives at one point.
///
/// Derivatives are taken with respect to range (`r`) and depth (`z`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpeedSample {
    pub c: f64,
    pub dr: f64,
    pub dz: f64,
    pub drr: f64,
    pub drz: f64,
    pub dzz: f64,
}

/// Basis functions, their coefficients, and the region they describe.
#[derive(Debug, Clone)]
pub struct SspField {
    theta: DVector<f64>,
    basis: Arc<BasisGrid>,
    region: Region,
    /// θ rows padded to a fixed width for the fast evaluation path.
    padded: Vec<[f64; LANES]>,
}

const LANES: usize = 8;

impl SspField {
    pub fn new(theta: DVector<f64>, basis: Arc<BasisGrid>, region: Region) -> Result<Self> {
        if theta.len() != basis.dim() {
            return Err(Error::Dimension {
                expected: basis.dim(),
                actual: theta.len(),
            });
        }
        region.validate()?;
        let padded = if basis.cols() <= LANES {
            let cols = basis.cols();
            (0..basis.rows())
                .map(|row| {
                    let mut r = [0.0; LANES];
                    r[..cols].copy_from_slice(&theta.as_slice()[1 + row * cols..1 + (row + 1) * cols]);
                    r
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            theta,
            basis,
            region,
            padded,
        })
    }

    /// A field with only the constant offset set.
    pub fn constant(speed: f64, basis: Arc<BasisGrid>, region: Region) -> Result<Self> {
        let mut theta = DVector::zeros(basis.dim());
        theta[0] = speed;
        Self::new(theta, basis, region)
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn basis(&self) -> &Arc<BasisGrid> {
        &self.basis
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        Self::new(theta, self.basis.clone(), self.region)
    }

    /// Sound speed c(p) in m/s.
    pub fn evaluate(&self, p: &Point) -> f64 {
        let mut phi = vec![0.0; self.basis.dim()];
        self.basis.basis_into(p, &mut phi);
        phi.iter().zip(self.theta.iter()).map(|(a, b)| a * b).sum()
    }

    /// Sound speed with analytic first and second derivatives, using the
    /// separable range × depth structure of the basis.
    pub fn sample(&self, range: f64, depth: f64) -> SpeedSample {
        let b = &*self.basis;
        let cols = b.cols();
        let rows = b.rows();
        if cols > LANES || rows > 4 * LANES {
            return self.sample_direct(range, depth);
        }
        let mut g = [[0.0f64; 3]; LANES];
        let mut h = [[0.0f64; 3]; 4 * LANES];
        axis_factors(range, &b.range_centers, b.inv_range, b.range_step, &mut g[..cols]);
        axis_factors(depth, &b.depth_centers, b.inv_depth, b.depth_step, &mut h[..rows]);
        let mut g0 = [0.0f64; LANES];
        let mut g1 = [0.0f64; LANES];
        let mut g2 = [0.0f64; LANES];
        for i in 0..cols {
            g0[i] = g[i][0];
            g1[i] = g[i][1];
            g2[i] = g[i][2];
        }
        let mut acc = SpeedSample {
            c: self.theta[0],
            ..Default::default()
        };
        for (t, hz) in self.padded.iter().zip(&h[..rows]) {
            let (mut u0, mut u1, mut u2) = (0.0, 0.0, 0.0);
            for i in 0..LANES {
                u0 += t[i] * g0[i];
                u1 += t[i] * g1[i];
                u2 += t[i] * g2[i];
            }
            acc.c += u0 * hz[0];
            acc.dz += u0 * hz[1];
            acc.dzz += u0 * hz[2];
            acc.dr += u1 * hz[0];
            acc.drz += u1 * hz[1];
            acc.drr += u2 * hz[0];
        }
        acc
    }

    fn sample_direct(&self, range: f64, depth: f64) -> SpeedSample {
        let b = &*self.basis;
        let mut g = vec![[0.0; 3]; b.cols()];
        let mut h = vec![[0.0; 3]; b.rows()];
        axis_factors(range, &b.range_centers, b.inv_range, None, &mut g);
        axis_factors(depth, &b.depth_centers, b.inv_depth, None, &mut h);
        let mut acc = SpeedSample {
            c: self.theta[0],
            ..Default::default()
        };
        for (row, hz) in h.iter().enumerate() {
            for (col, gr) in g.iter().enumerate() {
                let t = self.theta[1 + row * b.cols() + col];
                acc.c += t * gr[0] * hz[0];
                acc.dr += t * gr[1] * hz[0];
                acc.dz += t * gr[0] * hz[1];
                acc.drr += t * gr[2] * hz[0];
                acc.drz += t * gr[1] * hz[1];
                acc.dzz += t * gr[0] * hz[2];
            }
        }
        acc
    }
}

/// Tensor-product midpoint quadrature over a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub range_nodes: usize,
    pub depth_nodes: usize,
}

impl QuadratureGrid {
    pub const fn new(range_nodes: usize, depth_nodes: usize) -> Self {
        Self {
            range_nodes,
            depth_nodes,
        }
    }

    pub fn cell_area(&self, region: &Region) -> f64 {
        region.area() / (self.range_nodes * self.depth_nodes) as f64
    }

    /// Midpoint nodes, depth-major (row = depth index).
    pub fn nodes(&self, region: &Region) -> Vec<Point> {
        let dr = region.max_range / self.range_nodes as f64;
        let dz = region.max_depth / self.depth_nodes as f64;
        let mut out = Vec::with_capacity(self.range_nodes * self.depth_nodes);
        for i in 0..self.depth_nodes {
            for j in 0..self.range_nodes {
                out.push(Point::new((j as f64 + 0.5) * dr, (i as f64 + 0.5) * dz));
            }
        }
        out
    }
}

/// `G = ∫_V φ(p) φ(p)ᵀ dp`, so that the region-integrated variance of a
/// belief with covariance Σ is `trace(Σ G)`.
pub fn gram_matrix(region: &Region, basis: &BasisGrid, grid: QuadratureGrid) -> Result<DMatrix<f64>> {
    region.validate()?;
    if grid.range_nodes < 50 || grid.depth_nodes < 50 {
        return Err(Error::Config(format!(
            "gram quadrature needs at least 50×50 nodes, got {}×{}",
            grid.range_nodes, grid.depth_nodes
        )));
    }
    let n = basis.dim();
    let w = grid.cell_area(region);
    let mut g = DMatrix::zeros(n, n);
    let mut phi = vec![0.0; n];
    for p in grid.nodes(region) {
        basis.basis_into(&p, &mut phi);
        for a in 0..n {
            let fa = phi[a] * w;
            for b in a..n {
                g[(a, b)] += fa * phi[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    Ok(g)
}
