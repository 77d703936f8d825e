//! Radius laws for the elliptical model.
//!
//! The squared radius xi^2 drives tail heaviness. Every law is normalized so
//! that E[xi^2] = 1; the polynomial families carry a tail index alpha (for the
//! multivariate t construction alpha = nu/2), the exponential family a shape
//! beta. The slowly varying factor is fixed to a constant: laws are pure
//! Pareto / pure t.

use crate::error::{EfmError, Result};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Pareto, Weibull};
use serde::{Deserialize, Serialize};

/// Tail family of the squared-radius distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailFamily {
    /// Radius of a p-dimensional multivariate t with `dof` degrees of freedom:
    /// xi^2 = ((dof-2)/p) * chi2(p) / chi2(dof). Requires dof > 2; the
    /// effective polynomial tail index is dof/2.
    MultivariateT { dof: f64 },
    /// xi^2 = ((alpha-1)/alpha) * P with P Pareto(alpha) on [1, inf).
    ParetoTail { alpha: f64 },
    /// Weibull with shape beta, rescaled to mean one.
    ExponentialTail { beta: f64 },
    /// Degenerate xi^2 = 1 (light-tail reference point).
    Constant,
}

/// A mean-one squared-radius law, plus the ambient dimension context the
/// multivariate t construction needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusLaw {
    #[serde(flatten)]
    pub family: TailFamily,
    /// Ambient dimension p; set at generation time. `None` means "not yet
    /// bound"; moments then use the p -> infinity limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
}

impl RadiusLaw {
    pub fn new(family: TailFamily) -> Result<Self> {
        match family {
            TailFamily::MultivariateT { dof } if !(dof > 2.0) => Err(EfmError::Domain(format!(
                "multivariate t radius needs dof > 2 for E[xi^2] to exist, got {dof}"
            ))),
            TailFamily::ParetoTail { alpha } if !(alpha > 1.0) => Err(EfmError::Domain(format!(
                "pareto tail needs alpha > 1, got {alpha}"
            ))),
            TailFamily::ExponentialTail { beta } if !(beta > 0.0) => Err(EfmError::Domain(
                format!("exponential tail needs beta > 0, got {beta}"),
            )),
            _ => Ok(Self { family, dimension: None }),
        }
    }

    pub fn multivariate_t(dof: f64) -> Result<Self> {
        Self::new(TailFamily::MultivariateT { dof })
    }

    pub fn pareto(alpha: f64) -> Result<Self> {
        Self::new(TailFamily::ParetoTail { alpha })
    }

    pub fn exponential(beta: f64) -> Result<Self> {
        Self::new(TailFamily::ExponentialTail { beta })
    }

    pub fn constant() -> Self {
        Self { family: TailFamily::Constant, dimension: None }
    }

    /// Bind the ambient dimension (a no-op for families that ignore it).
    pub fn for_dimension(mut self, p: usize) -> Self {
        self.dimension = Some(p);
        self
    }

    /// Polynomial tail index alpha, or `None` for exponential-type laws.
    pub fn poly_index(&self) -> Option<f64> {
        match self.family {
            TailFamily::MultivariateT { dof } => Some(dof / 2.0),
            TailFamily::ParetoTail { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// Typical maximal order of xi_t^2 over n draws:
    /// n^(1/alpha) * log n for polynomial tails, (log n)^(1/beta) for
    /// exponential tails, 1 for the constant law.
    pub fn tail_order_threshold(&self, n: usize) -> f64 {
        let ln_n = (n as f64).ln();
        match self.family {
            TailFamily::MultivariateT { .. } | TailFamily::ParetoTail { .. } => {
                let alpha = self.poly_index().unwrap();
                (n as f64).powf(1.0 / alpha) * ln_n
            }
            TailFamily::ExponentialTail { beta } => ln_n.powf(1.0 / beta),
            TailFamily::Constant => 1.0,
        }
    }

    fn require_dimension(&self) -> Result<usize> {
        self.dimension.ok_or_else(|| {
            EfmError::Config(
                "multivariate t radius law is not bound to a dimension; call for_dimension(p)"
                    .into(),
            )
        })
    }
}

/// Draw n i.i.d. squared radii with E[xi^2] = 1.
pub fn sample_radius_squared<R: Rng + ?Sized>(
    law: &RadiusLaw,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(EfmError::Dimension("need n >= 1 radius draws".into()));
    }
    match law.family {
        TailFamily::Constant => Ok(vec![1.0; n]),
        TailFamily::MultivariateT { dof } => {
            let p = law.require_dimension()?;
            if p == 0 {
                return Err(EfmError::Dimension("radius dimension must be positive".into()));
            }
            let chi_p = ChiSquared::new(p as f64)
                .map_err(|e| EfmError::Domain(format!("chi2(p): {e}")))?;
            let chi_nu = ChiSquared::new(dof)
                .map_err(|e| EfmError::Domain(format!("chi2(dof): {e}")))?;
            let scale = (dof - 2.0) / p as f64;
            Ok((0..n)
                .map(|_| {
                    let num: f64 = chi_p.sample(rng);
                    let den: f64 = chi_nu.sample(rng);
                    scale * num / den
                })
                .collect())
        }
        TailFamily::ParetoTail { alpha } => {
            let par = Pareto::new(1.0, alpha)
                .map_err(|e| EfmError::Domain(format!("pareto: {e}")))?;
            let scale = (alpha - 1.0) / alpha;
            Ok((0..n).map(|_| scale * par.sample(rng)).collect())
        }
        TailFamily::ExponentialTail { beta } => {
            let wb = Weibull::new(1.0, beta)
                .map_err(|e| EfmError::Domain(format!("weibull: {e}")))?;
            let mean = gamma_fn(1.0 + 1.0 / beta);
            Ok((0..n).map(|_| wb.sample(rng) / mean).collect())
        }
    }
}

/// E[xi^(2*order)] for order in {2, 4}; `f64::INFINITY` marks divergence.
///
/// Order 2 is exactly 1 by normalization. Order 4 closed forms:
/// multivariate t: p(p+2)(nu-2) / (p^2 (nu-4)) for nu > 4 (limit
/// (nu-2)/(nu-4) when no dimension is bound); Pareto: finite iff alpha > 2;
/// Weibull-type: Gamma(1+2/beta) / Gamma(1+1/beta)^2.
pub fn radius_moment(law: &RadiusLaw, order: u32) -> Result<f64> {
    match order {
        2 => Ok(1.0),
        4 => Ok(match law.family {
            TailFamily::Constant => 1.0,
            TailFamily::MultivariateT { dof } => {
                if dof <= 4.0 {
                    f64::INFINITY
                } else {
                    match law.dimension {
                        Some(p) => {
                            let p = p as f64;
                            p * (p + 2.0) * (dof - 2.0) / (p * p * (dof - 4.0))
                        }
                        None => (dof - 2.0) / (dof - 4.0),
                    }
                }
            }
            TailFamily::ParetoTail { alpha } => {
                if alpha <= 2.0 {
                    f64::INFINITY
                } else {
                    let c = (alpha - 1.0) / alpha;
                    c * c * alpha / (alpha - 2.0)
                }
            }
            TailFamily::ExponentialTail { beta } => {
                let g1 = gamma_fn(1.0 + 1.0 / beta);
                gamma_fn(1.0 + 2.0 / beta) / (g1 * g1)
            }
        }),
        other => Err(EfmError::Domain(format!("radius_moment supports order 2 or 4, got {other}"))),
    }
}

/// Lanczos approximation of the Gamma function, accurate to ~1e-13 on the
/// positive reals used here.
pub(crate) fn gamma_fn(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + G + 0.5;
        for (i, &c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}
