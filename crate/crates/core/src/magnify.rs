//! First-round spurious-signal detection by fluctuation magnification.
//!
//! Each replication reweights the observations with i.i.d. mean-one weights
//! and re-solves the spectrum through the cached Gram matrix. Eigenvalues
//! driven by population spikes barely move; eigenvalues driven by a single
//! extreme radius inherit the weight fluctuation, so their relative variance
//! across replications plateaus near Var(w) instead of decaying like 1/n.

use crate::error::{EfmError, Result};
use crate::model::PanelMatrix;
use crate::seeding::replication_rng;
use crate::spectral::{
    gram_matrix, magnified_top_eigs, spectrum, EigenBackend, GramCache, MagnifyScratch, Spectrum,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const SCHEMA_VERSION: u32 = 1;

/// How the magnifier interval [a, b] is chosen per index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MagnifierMode {
    /// One fixed interval for every index (the simulation-study choice
    /// U[0.1, 1.9]).
    Fixed { a: f64, b: f64 },
    /// Feasible interval recomputed from the spectrum at every index, with
    /// fresh weight draws per index (o*K eigensolves).
    AdaptivePerIndex,
    /// Adaptive interval fitted at the top index, one weight draw shared by
    /// all indices per replication (K eigensolves).
    SharedAdaptive,
}

impl Default for MagnifierMode {
    fn default() -> Self {
        MagnifierMode::Fixed { a: 0.1, b: 1.9 }
    }
}

/// Law of the i.i.d. weights inside [a, b]; both have mean one under the
/// (a+b)/2 = 1 bounds contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    #[default]
    Uniform,
    /// w = a or b with probability 1/2 each.
    TwoPoint,
}

/// Threshold schedule for flagging T_i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Verbatim printed schedule with tau_i = ceil(log lambda_i / log n).
    PaperCeil,
    /// Same schedule with the un-ceiled exponent clamped to [0, 1].
    PaperFrac,
    /// kappa * log^2 n / n for every index.
    FixedSmall { kappa: f64 },
    /// rho * median(T_1..T_{i-1}) for i >= 2; rho * log^2 n / n at i = 1.
    Jump { rho: f64 },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::FixedSmall { kappa: 1.0 }
    }
}

/// Full configuration of the first-round detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnificationConfig {
    /// Replication count K.
    pub replications: usize,
    /// Number of leading indices examined (o).
    pub leading: usize,
    pub magnifier: MagnifierMode,
    pub weight_law: WeightLaw,
    pub threshold: ThresholdPolicy,
    pub seed: u64,
    pub backend: EigenBackend,
}

impl Default for MagnificationConfig {
    fn default() -> Self {
        Self {
            replications: 1000,
            leading: 15,
            magnifier: MagnifierMode::default(),
            weight_law: WeightLaw::default(),
            threshold: ThresholdPolicy::default(),
            seed: 0,
            backend: EigenBackend::Dense,
        }
    }
}

impl MagnificationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(EfmError::Config(format!(
                "need K >= 2 replications, got {}",
                self.replications
            )));
        }
        if self.leading < 1 {
            return Err(EfmError::Config("need o >= 1 leading indices".into()));
        }
        if let MagnifierMode::Fixed { a, b } = self.magnifier {
            validate_interval(a, b)?;
        }
        match self.threshold {
            ThresholdPolicy::FixedSmall { kappa } if !(kappa > 0.0) => {
                return Err(EfmError::Config(format!("FixedSmall kappa must be positive, got {kappa}")))
            }
            ThresholdPolicy::Jump { rho } if !(rho > 1.0) => {
                return Err(EfmError::Config(format!("Jump rho must exceed 1, got {rho}")))
            }
            _ => {}
        }
        Ok(())
    }
}

fn validate_interval(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0) || !(b >= a) {
        return Err(EfmError::Domain(format!("need 0 < a <= b, got a={a}, b={b}")));
    }
    if ((a + b) / 2.0 - 1.0).abs() > 1e-12 {
        return Err(EfmError::Domain(format!(
            "magnifier midpoint (a+b)/2 = {} must equal 1",
            (a + b) / 2.0
        )));
    }
    Ok(())
}

/// A magnifier interval together with the constraint slacks recorded when it
/// was fitted adaptively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnifierBounds {
    pub a: f64,
    pub b: f64,
    /// 1-based eigenvalue index the interval was built for.
    pub index: usize,
    pub adaptive: bool,
    /// Slack of the ratio condition b/a <= lambda_i / lambda_{i+1}.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack_ratio: Option<f64>,
    /// Slack of the damping condition b log n lambda_i / lambda_{i-1} < 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack_damping: Option<f64>,
}

/// Choose the magnifier interval for eigenvalue index `i` (1-based).
///
/// Adaptive mode solves the two feasibility conditions with the plug-in
/// surrogates lambda_i/lambda_{i+1} and lambda_{i-1}/lambda_i, setting
/// b = min(2r/(1+r), lambda_{i-1}/(lambda_i log n)) * (1 - 1e-3) and
/// a = 2 - b, with lambda_0 := log^2 n * lambda_1. Infeasibility (b <= 1)
/// reports which condition binds.
pub fn magnifier_bounds(
    spec: &Spectrum,
    i: usize,
    n: usize,
    mode: MagnifierMode,
) -> Result<MagnifierBounds> {
    if n < 8 {
        return Err(EfmError::Dimension(format!("need n >= 8, got {n}")));
    }
    match mode {
        MagnifierMode::Fixed { a, b } => {
            validate_interval(a, b)?;
            Ok(MagnifierBounds { a, b, index: i, adaptive: false, slack_ratio: None, slack_damping: None })
        }
        MagnifierMode::AdaptivePerIndex | MagnifierMode::SharedAdaptive => {
            if i == 0 || spec.len() < i + 1 {
                return Err(EfmError::Dimension(format!(
                    "adaptive bounds at index {i} need {} eigenvalues, have {}",
                    i + 1,
                    spec.len()
                )));
            }
            let ln_n = (n as f64).ln();
            let v = spec.values();
            let lam_i = v[i - 1];
            let lam_next = v[i];
            if !(lam_next > 0.0) {
                return Err(EfmError::InfeasibleMagnifier { index: i, condition: 2 });
            }
            let r = lam_i / lam_next;
            let lam_prev = if i == 1 { ln_n * ln_n * v[0] } else { v[i - 2] };
            let cap_ratio = 2.0 * r / (1.0 + r);
            let cap_damping = lam_prev / (lam_i * ln_n);
            let b = cap_ratio.min(cap_damping) * (1.0 - 1e-3);
            if b <= 1.0 {
                let condition = if cap_ratio <= cap_damping { 2 } else { 3 };
                return Err(EfmError::InfeasibleMagnifier { index: i, condition });
            }
            let a = 2.0 - b;
            Ok(MagnifierBounds {
                a,
                b,
                index: i,
                adaptive: true,
                slack_ratio: Some(r - b / a),
                slack_damping: Some(1.0 - b * ln_n * lam_i / lam_prev),
            })
        }
    }
}

/// Relative fluctuation of the replicated eigenvalues:
/// K^{-1} sum_j (x_j / mean - 1)^2.
pub fn fluctuation_statistic(samples: &[f64]) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(EfmError::Dimension(format!("need K >= 2 samples, got {k}")));
    }
    let mean = samples.iter().sum::<f64>() / k as f64;
    if !(mean > 0.0) {
        return Err(EfmError::Domain(format!("sample mean must be positive, got {mean}")));
    }
    Ok(samples.iter().map(|x| (x / mean - 1.0).powi(2)).sum::<f64>() / k as f64)
}

/// Threshold L_i for the statistic at base eigenvalue `lambda_i`.
///
/// `t_prefix` carries T_1..T_{i-1} (used by the Jump policy only; the current
/// index is `t_prefix.len() + 1`).
pub fn threshold_value(lambda_i: f64, n: usize, policy: ThresholdPolicy, t_prefix: &[f64]) -> f64 {
    let nf = n as f64;
    let ln2 = nf.ln() * nf.ln();
    let small = ln2 / nf;
    match policy {
        ThresholdPolicy::PaperCeil => {
            if lambda_i <= nf.sqrt() {
                small
            } else {
                let tau = (lambda_i.ln() / nf.ln()).ceil();
                ln2 / nf.powf(1.0 - tau)
            }
        }
        ThresholdPolicy::PaperFrac => {
            if lambda_i <= nf.sqrt() {
                small
            } else {
                let tau = (lambda_i.ln() / nf.ln()).clamp(0.0, 1.0);
                ln2 / nf.powf(1.0 - tau)
            }
        }
        ThresholdPolicy::FixedSmall { kappa } => kappa * small,
        ThresholdPolicy::Jump { rho } => {
            if t_prefix.is_empty() {
                rho * small
            } else {
                let mut sorted = t_prefix.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite T stats"));
                let mid = sorted.len() / 2;
                let median = if sorted.len() % 2 == 1 {
                    sorted[mid]
                } else {
                    0.5 * (sorted[mid - 1] + sorted[mid])
                };
                rho * median
            }
        }
    }
}

/// Per-index record of the first-round detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexRecord {
    /// 1-based eigenvalue index.
    pub index: usize,
    /// Base (unmagnified) eigenvalue.
    pub lambda: f64,
    /// Relative fluctuation statistic T_i.
    pub t_stat: f64,
    /// Threshold L_i.
    pub threshold: f64,
    pub flagged: bool,
    /// Mean of the magnified i-th eigenvalue across replications.
    pub magnified_mean: f64,
    pub bounds: MagnifierBounds,
    /// Set when an adaptive interval was infeasible and the fixed default
    /// stood in.
    pub fixed_fallback: bool,
}

/// Output of the first-round detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema_version: u32,
    pub per_index: Vec<IndexRecord>,
    /// Number of flagged indices.
    pub f_hat: usize,
    /// Smallest flagged index (1-based); `None` when nothing flagged.
    pub r_star: Option<usize>,
    pub replications: usize,
    pub leading: usize,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
}

impl DetectionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plot data with columns (i, T, L, flagged).
    pub fn write_plot_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,T,L,flagged")?;
        for rec in &self.per_index {
            writeln!(w, "{},{},{},{}", rec.index, rec.t_stat, rec.threshold, rec.flagged)?;
        }
        Ok(())
    }
}

fn draw_weights<R: Rng + ?Sized>(
    law: WeightLaw,
    a: f64,
    b: f64,
    n: usize,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    out.clear();
    match law {
        WeightLaw::Uniform => {
            if a == b {
                out.resize(n, a);
            } else {
                out.extend((0..n).map(|_| rng.gen_range(a..b)));
            }
        }
        WeightLaw::TwoPoint => {
            out.extend((0..n).map(|_| if rng.gen::<bool>() { a } else { b }));
        }
    }
}

/// Run the first-round detector on a cached Gram matrix.
///
/// Fixed and SharedAdaptive modes draw one weight vector per replication and
/// read all o leading eigenvalues from the same magnified solve (K solves in
/// total); AdaptivePerIndex redraws per index (o*K solves). Deterministic
/// given the seed: replication j at index i consumes the generator derived
/// from (seed, i, j), with i = 0 denoting the shared stream.
pub fn detect_spurious(cache: &GramCache, config: &MagnificationConfig) -> Result<DetectionReport> {
    config.validate()?;
    let n = cache.n();
    let p = cache.p();
    let o = config.leading;
    if o + 2 > p.min(n) {
        return Err(EfmError::Dimension(format!(
            "need o + 2 = {} <= min(p, n) = {}",
            o + 2,
            p.min(n)
        )));
    }
    let base = spectrum(cache)?;
    let k_eigs = o;

    // resolve bounds per index, falling back to the fixed default when an
    // adaptive fit is infeasible
    let fixed_default = MagnifierMode::default();
    let mut bounds: Vec<(MagnifierBounds, bool)> = Vec::with_capacity(o);
    match config.magnifier {
        MagnifierMode::Fixed { .. } => {
            for i in 1..=o {
                bounds.push((magnifier_bounds(&base, i, n, config.magnifier)?, false));
            }
        }
        MagnifierMode::SharedAdaptive => {
            let shared = match magnifier_bounds(&base, 1, n, config.magnifier) {
                Ok(b) => (b, false),
                Err(EfmError::InfeasibleMagnifier { .. }) => {
                    (magnifier_bounds(&base, 1, n, fixed_default)?, true)
                }
                Err(e) => return Err(e),
            };
            for i in 1..=o {
                let mut b = shared.0;
                b.index = i;
                bounds.push((b, shared.1));
            }
        }
        MagnifierMode::AdaptivePerIndex => {
            for i in 1..=o {
                match magnifier_bounds(&base, i, n, config.magnifier) {
                    Ok(b) => bounds.push((b, false)),
                    Err(EfmError::InfeasibleMagnifier { .. }) => {
                        bounds.push((magnifier_bounds(&base, i, n, fixed_default)?, true))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let per_index_draws = matches!(config.magnifier, MagnifierMode::AdaptivePerIndex);
    let k_reps = config.replications;

    // lambda_samples[i][j]: i-th magnified eigenvalue in replication j
    let mut lambda_samples: Vec<Vec<f64>> = vec![vec![0.0; k_reps]; o];

    if per_index_draws {
        for (idx, (bnd, _)) in bounds.iter().enumerate() {
            let i = idx + 1;
            let col: Vec<f64> = (0..k_reps)
                .into_par_iter()
                .map_init(
                    || (MagnifyScratch::default(), Vec::new()),
                    |(scratch, wbuf), j| -> Result<f64> {
                        let mut rng = replication_rng(config.seed, i as u64, j as u64);
                        draw_weights(config.weight_law, bnd.a, bnd.b, n, &mut rng, wbuf);
                        for w in wbuf.iter_mut() {
                            *w = w.sqrt();
                        }
                        let top = magnified_top_eigs(cache, wbuf, i, config.backend, scratch)?;
                        Ok(top[i - 1])
                    },
                )
                .collect::<Result<Vec<f64>>>()?;
            lambda_samples[idx] = col;
        }
    } else {
        let (bnd, _) = bounds[0];
        let rows: Vec<Vec<f64>> = (0..k_reps)
            .into_par_iter()
            .map_init(
                || (MagnifyScratch::default(), Vec::new()),
                |(scratch, wbuf), j| -> Result<Vec<f64>> {
                    let mut rng = replication_rng(config.seed, 0, j as u64);
                    draw_weights(config.weight_law, bnd.a, bnd.b, n, &mut rng, wbuf);
                    for w in wbuf.iter_mut() {
                        *w = w.sqrt();
                    }
                    magnified_top_eigs(cache, wbuf, k_eigs, config.backend, scratch)
                },
            )
            .collect::<Result<Vec<Vec<f64>>>>()?;
        for (j, row) in rows.iter().enumerate() {
            for idx in 0..o {
                lambda_samples[idx][j] = row[idx];
            }
        }
    }

    let mut per_index = Vec::with_capacity(o);
    let mut t_stats: Vec<f64> = Vec::with_capacity(o);
    for idx in 0..o {
        let samples = &lambda_samples[idx];
        let t = fluctuation_statistic(samples)?;
        let lambda = base.values()[idx];
        let threshold = threshold_value(lambda, n, config.threshold, &t_stats);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let (bnd, fell_back) = bounds[idx];
        per_index.push(IndexRecord {
            index: idx + 1,
            lambda,
            t_stat: t,
            threshold,
            flagged: t > threshold,
            magnified_mean: mean,
            bounds: bnd,
            fixed_fallback: fell_back,
        });
        t_stats.push(t);
    }

    let f_hat = per_index.iter().filter(|r| r.flagged).count();
    let r_star = per_index.iter().find(|r| r.flagged).map(|r| r.index);
    Ok(DetectionReport {
        schema_version: SCHEMA_VERSION,
        per_index,
        f_hat,
        r_star,
        replications: k_reps,
        leading: o,
        seed: config.seed,
        n,
        p,
    })
}

/// Convenience wrapper forming the Gram cache first.
pub fn detect_spurious_panel(
    panel: &PanelMatrix,
    config: &MagnificationConfig,
) -> Result<DetectionReport> {
    detect_spurious(&gram_matrix(panel)?, config)
}
