//! Spiked population model and panel generation.
//!
//! Observations follow y_t = xi_t * Sigma^(1/2) u_t with u_t uniform on the
//! unit sphere and E[xi_t^2] = 1. Columns are scaled by sqrt(p) so that the
//! population covariance of a column is exactly Sigma; on the 1/n eigenvalue
//! scale spikes then sit near sigma_i and noise-driven outliers near
//! sigma_bar * xi^2_(k) when p = n, matching the scale the detection
//! thresholds are written for.
//!
//! Draw order is fixed for reproducibility: the n radii come first (stream 0
//! of the seeded generator), then the sphere directions column by column
//! (stream 1).

use crate::error::{EfmError, Result};
use crate::radius::{sample_radius_squared, RadiusLaw};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Diagonal spiked covariance: m descending spikes followed by p-m bounded
/// tail entries (all 1 by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    p: usize,
    spikes: Vec<f64>,
    tail_values: Vec<f64>,
}

impl PopulationModel {
    pub fn new(p: usize, spikes: Vec<f64>, tail_values: Vec<f64>) -> Result<Self> {
        if p < 2 {
            return Err(EfmError::Dimension(format!("population dimension p={p} < 2")));
        }
        if spikes.len() + tail_values.len() != p {
            return Err(EfmError::Dimension(format!(
                "spikes ({}) + tail values ({}) must equal p={p}",
                spikes.len(),
                tail_values.len()
            )));
        }
        for w in spikes.windows(2) {
            if !(w[0] > w[1]) {
                return Err(EfmError::Domain(format!(
                    "spikes must be strictly descending, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let (Some(&last), Some(tmax)) =
            (spikes.last(), tail_values.iter().cloned().reduce(f64::max))
        {
            if last <= tmax {
                return Err(EfmError::Domain(format!(
                    "smallest spike {last} must exceed the largest tail value {tmax}"
                )));
            }
        }
        // zero tail entries are admitted as a degenerate case for the
        // fixed-point oracles (noise-free directions)
        if tail_values.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(EfmError::Domain("tail values must be nonnegative and finite".into()));
        }
        if spikes.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(EfmError::Domain("spikes must be positive and finite".into()));
        }
        // The theory assumes bounded spike ratios; nearly tied spikes break
        // the strict-descent assumption in spirit, so warn but proceed.
        for w in spikes.windows(2) {
            let r = w[0] / w[1];
            if r < 1.05 {
                log::warn!("spike ratio {:.4} is close to 1; the spiked-model assumptions are strained", r);
            }
        }
        Ok(Self { p, spikes, tail_values })
    }

    /// Spiked model with unit tail: Sigma = diag(spikes, 1, ..., 1).
    pub fn spiked(p: usize, spikes: Vec<f64>) -> Result<Self> {
        let m = spikes.len();
        if m > p {
            return Err(EfmError::Dimension(format!("{m} spikes exceed dimension {p}")));
        }
        Self::new(p, spikes, vec![1.0; p - m])
    }

    pub fn dimension(&self) -> usize {
        self.p
    }

    pub fn spike_count(&self) -> usize {
        self.spikes.len()
    }

    pub fn spikes(&self) -> &[f64] {
        &self.spikes
    }

    pub fn tail_values(&self) -> &[f64] {
        &self.tail_values
    }

    /// sigma_bar = tr(Sigma_2) / p, the average bulk variance.
    pub fn sigma_bar(&self) -> f64 {
        self.tail_values.iter().sum::<f64>() / self.p as f64
    }

    /// Full diagonal of Sigma in descending-spike order.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = self.spikes.clone();
        d.extend_from_slice(&self.tail_values);
        d
    }
}

/// Where a panel came from; simulated panels retain their radius draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Simulated { radius_sample: Vec<f64>, seed: u64 },
    Loaded { source: PathBuf },
}

/// A p x n data matrix (variables by observations).
#[derive(Debug, Clone)]
pub struct PanelMatrix {
    pub values: Array2<f64>,
    pub provenance: Provenance,
}

impl PanelMatrix {
    pub fn from_loaded(values: Array2<f64>, source: PathBuf) -> Result<Self> {
        Self::validate_dims(&values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EfmError::Data("panel contains non-finite entries".into()));
        }
        Ok(Self { values, provenance: Provenance::Loaded { source } })
    }

    fn validate_dims(values: &Array2<f64>) -> Result<()> {
        let (p, n) = values.dim();
        if p < 2 || n < 4 {
            return Err(EfmError::Dimension(format!(
                "panel must be at least 2 x 4, got {p} x {n}"
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }
}

/// Uniform draw from the unit sphere in R^p via normalized Gaussians.
pub fn sample_unit_sphere<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<Array1<f64>> {
    if p == 0 {
        return Err(EfmError::Dimension("sphere dimension must be positive".into()));
    }
    loop {
        let v: Array1<f64> = Array1::from_iter((0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-300 {
            return Ok(v / norm);
        }
        // astronomically unlikely; redraw rather than divide by zero
    }
}

/// Generate a p x n panel Y whose column t is xi_t * Sigma^(1/2) u_t * sqrt(p).
///
/// Deterministic given the seed. Radii consume generator stream 0, sphere
/// directions stream 1.
pub fn generate_panel(
    model: &PopulationModel,
    law: &RadiusLaw,
    n: usize,
    seed: u64,
) -> Result<PanelMatrix> {
    if n < 4 {
        return Err(EfmError::Dimension(format!("need n >= 4 observations, got {n}")));
    }
    let p = model.dimension();
    let law = law.for_dimension(p);

    let mut radius_rng = ChaCha8Rng::seed_from_u64(seed);
    radius_rng.set_stream(0);
    let radii = sample_radius_squared(&law, n, &mut radius_rng)?;

    let threshold = law.tail_order_threshold(n);
    if let Some(&sigma_m) = model.spikes().last() {
        if sigma_m < 3.0 * threshold {
            log::warn!(
                "smallest spike {sigma_m} is below 3x the typical max radius order {threshold:.1}; \
                 spurious eigenvalues may dominate the spikes at this scale"
            );
        }
    }

    let mut sphere_rng = ChaCha8Rng::seed_from_u64(seed);
    sphere_rng.set_stream(1);

    let sqrt_diag: Vec<f64> = model.diagonal().iter().map(|d| d.sqrt()).collect();
    let sqrt_p = (p as f64).sqrt();
    let mut values = Array2::<f64>::zeros((p, n));
    for t in 0..n {
        let u = sample_unit_sphere(p, &mut sphere_rng)?;
        let xi = radii[t].sqrt();
        let mut col = values.column_mut(t);
        for i in 0..p {
            col[i] = xi * sqrt_p * sqrt_diag[i] * u[i];
        }
    }

    Ok(PanelMatrix { values, provenance: Provenance::Simulated { radius_sample: radii, seed } })
}
