//! Sample-covariance spectra via Gram duality.
//!
//! All eigenvalue work happens on the n x n Gram matrix (1/n) Y'Y, which
//! shares its nonzero spectrum with S = (1/n) YY'. Magnification by a
//! diagonal weight matrix W reuses the cached Gram:
//! (1/n) Y W Y' and W^(1/2) ((1/n) Y'Y) W^(1/2) share nonzero eigenvalues,
//! so each replication costs one n x n solve and never re-forms a p x p
//! matrix.
//!
//! Two eigensolver backends share one output contract (agreement within 1e-8
//! relative, enforced by tests): a dense LAPACK eigenvalues-only solve, and a
//! matrix-free Lanczos iteration for the leading k eigenvalues that falls
//! back to the dense path whenever it cannot certify convergence.

use crate::error::{EfmError, Result};
use crate::model::PanelMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::sync::Once;

/// Relative threshold below which a gap-ratio denominator counts as a tie.
const EPS_GAP_REL: f64 = 1e-12;
/// Eigenvalues below -NEG_TOL_REL * lambda_1 abort; above it they clamp to 0.
const NEG_TOL_REL: f64 = 1e-10;

static BLAS_SINGLE_THREAD: Once = Once::new();

extern "C" {
    fn openblas_set_num_threads(num: std::os::raw::c_int);
}

/// Parallelism lives at the replication level; a threaded BLAS underneath
/// would oversubscribe and can reorder reductions, so pin it once.
fn pin_blas_single_thread() {
    BLAS_SINGLE_THREAD.call_once(|| unsafe {
        openblas_set_num_threads(1);
    });
}

/// Which eigensolver serves the magnification loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenBackend {
    /// Full dense symmetric solve (LAPACK dsyev, eigenvalues only).
    #[default]
    Dense,
    /// Lanczos with full reorthogonalization for the leading k eigenvalues;
    /// falls back to `Dense` when convergence cannot be certified.
    TopK,
}

/// Cached n x n Gram matrix (1/n) Y'Y.
#[derive(Debug, Clone)]
pub struct GramCache {
    gram: Array2<f64>,
    p: usize,
    n: usize,
}

impl GramCache {
    /// Wrap an existing symmetric PSD matrix as a Gram cache (p is the row
    /// dimension of the panel that would have produced it).
    pub fn from_gram(gram: Array2<f64>, p: usize) -> Result<Self> {
        let (r, c) = gram.dim();
        if r != c {
            return Err(EfmError::Dimension(format!("gram must be square, got {r} x {c}")));
        }
        let scale = gram.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
        for i in 0..r {
            for j in 0..i {
                if (gram[[i, j]] - gram[[j, i]]).abs() > 1e-12 * scale {
                    return Err(EfmError::Data(format!(
                        "gram asymmetric at ({i},{j}): {} vs {}",
                        gram[[i, j]],
                        gram[[j, i]]
                    )));
                }
            }
        }
        Ok(Self { gram, p, n: r })
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Descending eigenvalues of a sample covariance on the 1/n scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    values: Vec<f64>,
    pub p: usize,
    pub n: usize,
}

impl Spectrum {
    /// Validate and adopt a descending, clamped eigenvalue list.
    pub fn from_values(values: Vec<f64>, p: usize, n: usize) -> Result<Self> {
        if values.len() != p.min(n) {
            return Err(EfmError::Dimension(format!(
                "spectrum length {} != min(p={p}, n={n})",
                values.len()
            )));
        }
        for w in values.windows(2) {
            if w[0] < w[1] {
                return Err(EfmError::Data("spectrum must be descending".into()));
            }
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(EfmError::Data("spectrum must be nonnegative".into()));
        }
        Ok(Self { values, p, n })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Form the Gram cache (1/n) Y'Y with exact symmetry.
pub fn gram_matrix(panel: &PanelMatrix) -> Result<GramCache> {
    if panel.values.iter().any(|v| !v.is_finite()) {
        return Err(EfmError::Data("panel contains non-finite entries".into()));
    }
    let (p, n) = panel.values.dim();
    let mut gram = panel.values.t().dot(&panel.values);
    gram.mapv_inplace(|v| v / n as f64);
    // enforce exact symmetry against rounding in the matrix product
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (gram[[i, j]] + gram[[j, i]]);
            gram[[i, j]] = s;
            gram[[j, i]] = s;
        }
    }
    Ok(GramCache { gram, p, n })
}

/// Dense symmetric eigenvalues (ascending) of a row-major square matrix.
fn dense_eigvalsh_from_buf(buf: &mut [f64], n: usize) -> Result<Vec<f64>> {
    pin_blas_single_thread();
    let layout = lax::layout::MatrixLayout::C { row: n as i32, lda: n as i32 };
    <f64 as lax::Lapack>::eigh(false, layout, lax::UPLO::Lower, buf).map_err(|e| {
        EfmError::Numeric {
            msg: format!("symmetric eigensolver failed: {e}"),
            diagnostics: format!("n = {n}, first entries {:?}", &buf[..buf.len().min(4)]),
        }
    })
}

/// Sort descending, clamp numerically-negative values, truncate to min(p,n).
fn finalize_spectrum(mut evals: Vec<f64>, p: usize, n: usize) -> Result<Spectrum> {
    evals.sort_by(|a, b| b.partial_cmp(a).expect("non-NaN eigenvalues"));
    let top = evals.first().copied().unwrap_or(0.0).max(0.0);
    let floor = -NEG_TOL_REL * top.max(1e-300);
    if let Some(&worst) = evals.last() {
        if worst < floor {
            return Err(EfmError::Numeric {
                msg: format!("eigenvalue {worst:.6e} below the PSD tolerance {floor:.6e}"),
                diagnostics: format!(
                    "p = {p}, n = {n}, top = {top:.6e}, bottom five = {:?}",
                    &evals[evals.len().saturating_sub(5)..]
                ),
            });
        }
    }
    let mut clamped = 0usize;
    for v in evals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} slightly negative eigenvalues to zero");
    }
    evals.truncate(p.min(n));
    Spectrum::from_values(evals, p, n)
}

/// Eigenvalues of the cached Gram matrix, descending on the 1/n scale.
pub fn spectrum(cache: &GramCache) -> Result<Spectrum> {
    let n = cache.n;
    let mut buf = cache.gram.as_slice().expect("gram is contiguous").to_vec();
    let evals = dense_eigvalsh_from_buf(&mut buf, n)?;
    finalize_spectrum(evals, cache.p, n)
}

fn validate_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(EfmError::Dimension(format!(
            "got {} weights for n = {n} observations",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(EfmError::Domain("magnification weights must be strictly positive".into()));
    }
    Ok(())
}

/// Spectrum of W^(1/2) gram W^(1/2) (equivalently of (1/n) Y W Y').
pub fn magnified_spectrum(cache: &GramCache, weights: &[f64]) -> Result<Spectrum> {
    validate_weights(weights, cache.n)?;
    let n = cache.n;
    let g = cache.gram.as_slice().expect("gram is contiguous");
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut buf = vec![0.0; n * n];
    fill_magnified(g, &sqrt_w, &mut buf, n);
    let evals = dense_eigvalsh_from_buf(&mut buf, n)?;
    finalize_spectrum(evals, cache.p, n)
}

fn fill_magnified(g: &[f64], sqrt_w: &[f64], buf: &mut [f64], n: usize) {
    for s in 0..n {
        let ws = sqrt_w[s];
        let row = &g[s * n..(s + 1) * n];
        let out = &mut buf[s * n..(s + 1) * n];
        for t in 0..n {
            out[t] = ws * sqrt_w[t] * row[t];
        }
    }
}

/// Reusable buffers for the magnification loop.
#[derive(Debug, Default)]
pub(crate) struct MagnifyScratch {
    dense: Vec<f64>,
    lanczos: LanczosScratch,
}

/// Leading k eigenvalues (descending) of W^(1/2) gram W^(1/2).
///
/// Backend `TopK` runs matrix-free Lanczos on v -> d o (G (d o v)) with
/// d = sqrt(w); if convergence is not certified it silently takes the dense
/// path, keeping the output contract identical.
pub(crate) fn magnified_top_eigs(
    cache: &GramCache,
    sqrt_w: &[f64],
    k: usize,
    backend: EigenBackend,
    scratch: &mut MagnifyScratch,
) -> Result<Vec<f64>> {
    let n = cache.n;
    debug_assert_eq!(sqrt_w.len(), n);
    let k = k.min(n);
    if backend == EigenBackend::TopK && n >= 64 && 3 * k < n {
        let g = cache.gram.as_slice().expect("gram is contiguous");
        if let Some(vals) = lanczos_top_k(g, sqrt_w, n, k, &mut scratch.lanczos) {
            return Ok(vals);
        }
    }
    let g = cache.gram.as_slice().expect("gram is contiguous");
    scratch.dense.resize(n * n, 0.0);
    fill_magnified(g, sqrt_w, &mut scratch.dense, n);
    let evals = dense_eigvalsh_from_buf(&mut scratch.dense, n)?;
    Ok(evals.iter().rev().take(k).copied().collect())
}

#[derive(Debug, Default)]
struct LanczosScratch {
    basis: Vec<f64>,
    tmp: Vec<f64>,
    tmp2: Vec<f64>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    small: Vec<f64>,
}

/// Matrix-free Lanczos for the top k eigenvalues of D G D with D = diag(d).
///
/// Full reorthogonalization keeps the basis clean (no ghost Ritz values); a
/// step certifies convergence when every wanted Ritz pair has residual bound
/// beta * |last component| below 1e-10 * spectral scale. Returns `None` when
/// the iteration cap is hit first.
fn lanczos_top_k(
    g: &[f64],
    d: &[f64],
    n: usize,
    k: usize,
    s: &mut LanczosScratch,
) -> Option<Vec<f64>> {
    let max_iter = (8 * k + 140).min(n);
    if max_iter < k + 2 {
        return None;
    }
    s.basis.clear();
    s.basis.reserve(max_iter * n);
    s.alphas.clear();
    s.betas.clear();
    s.tmp.resize(n, 0.0);
    s.tmp2.resize(n, 0.0);

    // deterministic start vector; the perturbation breaks symmetry with any
    // single eigenvector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i as f64) * 0.7211).sin()).collect();
    normalize(&mut v)?;
    let mut v_prev: Vec<f64> = vec![0.0; n];
    let mut beta = 0.0f64;

    let mut converged: Option<Vec<f64>> = None;
    for m in 0..max_iter {
        s.basis.extend_from_slice(&v);
        // w = A v - beta v_prev, with A v = d o (G (d o v))
        for i in 0..n {
            s.tmp[i] = d[i] * v[i];
        }
        matvec_sym(g, &s.tmp, &mut s.tmp2, n);
        for i in 0..n {
            s.tmp2[i] = d[i] * s.tmp2[i] - beta * v_prev[i];
        }
        let alpha = dot(&s.tmp2, &v);
        for i in 0..n {
            s.tmp2[i] -= alpha * v[i];
        }
        // two rounds of reorthogonalization against the whole basis
        for _ in 0..2 {
            for b in 0..=m {
                let base = &s.basis[b * n..(b + 1) * n];
                let c = dot(&s.tmp2, base);
                for i in 0..n {
                    s.tmp2[i] -= c * base[i];
                }
            }
        }
        s.alphas.push(alpha);
        let beta_next = dot(&s.tmp2, &s.tmp2).sqrt();

        let steps = m + 1;
        let check = steps >= k + 2 && (steps % 8 == 0 || steps == max_iter || beta_next < 1e-300);
        if check {
            if let Some(vals) = ritz_converged(&s.alphas, &s.betas, beta_next, k, &mut s.small) {
                converged = Some(vals);
                break;
            }
        }
        if beta_next < 1e-300 {
            // exact invariant subspace smaller than requested accuracy needs
            break;
        }
        s.betas.push(beta_next);
        std::mem::swap(&mut v_prev, &mut v);
        v.copy_from_slice(&s.tmp2);
        for x in v.iter_mut() {
            *x /= beta_next;
        }
        beta = beta_next;
    }
    converged
}

/// Ritz values of the current tridiagonal block; `Some(top k descending)`
/// when all k residual bounds pass.
fn ritz_converged(
    alphas: &[f64],
    betas: &[f64],
    beta_next: f64,
    k: usize,
    small: &mut Vec<f64>,
) -> Option<Vec<f64>> {
    let m = alphas.len();
    if m < k {
        return None;
    }
    small.clear();
    small.resize(m * m, 0.0);
    for i in 0..m {
        small[i * m + i] = alphas[i];
        if i + 1 < m {
            small[i * m + (i + 1)] = betas[i];
            small[(i + 1) * m + i] = betas[i];
        }
    }
    let layout = lax::layout::MatrixLayout::C { row: m as i32, lda: m as i32 };
    let evals = <f64 as lax::Lapack>::eigh(true, layout, lax::UPLO::Lower, small).ok()?;
    // eigenvectors land row-major in `small`: row i is the vector for evals[i]
    let scale = evals.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    let tol = 1e-10 * scale;
    let mut top = Vec::with_capacity(k);
    for idx in (m - k..m).rev() {
        let resid = beta_next * small[idx * m + (m - 1)].abs();
        if resid > tol {
            return None;
        }
        top.push(evals[idx]);
    }
    Some(top)
}

fn normalize(v: &mut [f64]) -> Option<()> {
    let norm = dot(v, v).sqrt();
    if norm < 1e-300 {
        return None;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Some(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn matvec_sym(g: &[f64], x: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        out[i] = dot(&g[i * n..(i + 1) * n], x);
    }
}

/// Gap ratios G_i = (l_i - l_{i+1}) / (l_{i+1} - l_{i+2}) for i = 1..o.
///
/// A denominator below 1e-12 * l_1 reports +inf: numerically tied
/// eigenvalues are not evidence of a gap.
pub fn gap_ratios(spec: &Spectrum, o: usize) -> Result<Vec<f64>> {
    if o == 0 {
        return Err(EfmError::Dimension("need o >= 1 gap ratios".into()));
    }
    if spec.len() < o + 2 {
        return Err(EfmError::Dimension(format!(
            "gap_ratios needs {} eigenvalues, spectrum has {}",
            o + 2,
            spec.len()
        )));
    }
    let v = spec.values();
    let eps = EPS_GAP_REL * v[0].max(1e-300);
    Ok((0..o)
        .map(|i| {
            let den = v[i + 1] - v[i + 2];
            if den < eps {
                f64::INFINITY
            } else {
                (v[i] - v[i + 1]) / den
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PanelMatrix, Provenance};
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn panel_from(values: Array2<f64>) -> PanelMatrix {
        PanelMatrix {
            values,
            provenance: Provenance::Loaded { source: "test".into() },
        }
    }

    fn random_panel(p: usize, n: usize, rng: &mut ChaCha8Rng) -> PanelMatrix {
        let values = Array2::from_shape_fn((p, n), |_| rng.gen::<f64>() * 2.0 - 1.0);
        panel_from(values)
    }

    /// Independent oracle: (1/n) Y W Y' formed explicitly on the p side and
    /// solved densely.
    fn p_side_eigs(panel: &PanelMatrix, weights: &[f64]) -> Vec<f64> {
        let (p, n) = panel.values.dim();
        let y = &panel.values;
        let mut s = vec![0.0; p * p];
        for a in 0..p {
            for b in 0..p {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += y[[a, t]] * weights[t] * y[[b, t]];
                }
                s[a * p + b] = acc / n as f64;
            }
        }
        let layout = lax::layout::MatrixLayout::C { row: p as i32, lda: p as i32 };
        let mut evals = <f64 as lax::Lapack>::eigh(false, layout, lax::UPLO::Lower, &mut s).unwrap();
        evals.reverse();
        evals
    }

    #[test]
    fn gram_of_orthonormal_columns() {
        // columns e1, e2 of R^2: gram = (1/2) I
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let cache = gram_matrix(&panel_from(y)).unwrap();
        assert!((cache.gram()[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((cache.gram()[[1, 1]] - 0.5).abs() < 1e-15);
        assert!(cache.gram()[[0, 1]].abs() < 1e-15);
    }

    #[test]
    fn gram_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let panel = random_panel(4, 6, &mut rng);
        let scaled = panel_from(panel.values.mapv(|v| 3.0 * v));
        let g1 = gram_matrix(&panel).unwrap();
        let g2 = gram_matrix(&scaled).unwrap();
        for (a, b) in g1.gram().iter().zip(g2.gram().iter()) {
            assert!((9.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let panel = random_panel(5, 7, &mut rng);
        let cache = gram_matrix(&panel).unwrap();
        let y = &panel.values;
        for s in 0..7 {
            for t in 0..7 {
                let mut acc = 0.0;
                for i in 0..5 {
                    acc += y[[i, s]] * y[[i, t]];
                }
                acc /= 7.0;
                assert!((cache.gram()[[s, t]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_rejects_non_finite() {
        let mut y = Array2::zeros((3, 4));
        y[[1, 2]] = f64::NAN;
        assert!(gram_matrix(&panel_from(y)).is_err());
    }

    #[test]
    fn spectrum_of_diagonal_gram() {
        let g = Array2::from_diag(&array![3.0, 2.0, 1.0]);
        let cache = GramCache::from_gram(g, 5).unwrap();
        let spec = spectrum(&cache).unwrap();
        assert_eq!(spec.values(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn duality_p_side_vs_gram_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let panel = random_panel(6, 4, &mut rng);
        let cache = gram_matrix(&panel).unwrap();
        let spec = spectrum(&cache).unwrap();
        let oracle = p_side_eigs(&panel, &vec![1.0; 4]);
        assert_eq!(spec.len(), 4);
        for i in 0..4 {
            let rel = (spec.values()[i] - oracle[i]).abs() / oracle[0].max(1e-12);
            assert!(rel < 1e-8, "eig {i}: {} vs {}", spec.values()[i], oracle[i]);
        }
    }

    #[test]
    fn rank_one_panel_single_eigenvalue() {
        let u = array![2.0, -1.0, 0.5];
        let v = array![1.0, 3.0, -2.0, 0.5];
        let sigma = 1.7;
        let (p, n) = (3, 4);
        let mut y = Array2::zeros((p, n));
        for i in 0..p {
            for t in 0..n {
                y[[i, t]] = sigma * u[i] * v[t];
            }
        }
        let spec = spectrum(&gram_matrix(&panel_from(y)).unwrap()).unwrap();
        let expect = sigma * sigma * u.dot(&u) * v.dot(&v) / n as f64;
        assert!((spec.values()[0] - expect).abs() < 1e-10 * expect);
        for &rest in &spec.values()[1..] {
            assert!(rest < 1e-10 * expect);
        }
    }

    #[test]
    fn magnified_identity_weights_is_plain_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let panel = random_panel(8, 10, &mut rng);
        let cache = gram_matrix(&panel).unwrap();
        let a = spectrum(&cache).unwrap();
        let b = magnified_spectrum(&cache, &vec![1.0; 10]).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn magnified_constant_weights_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let panel = random_panel(8, 10, &mut rng);
        let cache = gram_matrix(&panel).unwrap();
        let a = spectrum(&cache).unwrap();
        let b = magnified_spectrum(&cache, &vec![2.5; 10]).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.5 * x - y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn magnified_matches_p_side_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let panel = random_panel(8, 10, &mut rng);
        let cache = gram_matrix(&panel).unwrap();
        let weights: Vec<f64> = (0..10).map(|_| rng.gen::<f64>() + 0.25).collect();
        let spec = magnified_spectrum(&cache, &weights).unwrap();
        let oracle = p_side_eigs(&panel, &weights);
        for i in 0..8 {
            let rel = (spec.values()[i] - oracle[i]).abs() / oracle[0];
            assert!(rel < 1e-8);
        }
    }

    #[test]
    fn magnified_rejects_bad_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let panel = random_panel(4, 5, &mut rng);
        let cache = gram_matrix(&panel).unwrap();
        assert!(magnified_spectrum(&cache, &[1.0, 1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(magnified_spectrum(&cache, &[1.0; 4]).is_err());
    }

    #[test]
    fn duality_property_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..25 {
            let p = rng.gen_range(2..=60);
            let n = rng.gen_range(2.max(p / 2)..=90);
            let panel = random_panel(p, n, &mut rng);
            let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 1.8 + 0.1).collect();
            let cache = gram_matrix(&panel).unwrap();
            let spec = magnified_spectrum(&cache, &weights).unwrap();
            let oracle = p_side_eigs(&panel, &weights);
            let k = p.min(n);
            for i in 0..k {
                let rel = (spec.values()[i] - oracle[i]).abs() / oracle[0].max(1e-12);
                assert!(rel < 1e-8, "case {case} ({p}x{n}) eig {i}");
            }
        }
    }

    #[test]
    fn scale_equivariance_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let panel = random_panel(7, 9, &mut rng);
        let c = 3.7;
        let scaled = panel_from(panel.values.mapv(|v| c * v));
        let a = spectrum(&gram_matrix(&panel).unwrap()).unwrap();
        let b = spectrum(&gram_matrix(&scaled).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((c * c * x - y).abs() <= 1e-10 * (1.0 + c * c * x.abs()));
        }
        // permute columns
        let perm = [3usize, 1, 4, 0, 8, 7, 2, 6, 5];
        let mut permuted = Array2::zeros((7, 9));
        for (new, &old) in perm.iter().enumerate() {
            permuted.column_mut(new).assign(&panel.values.column(old));
        }
        let pspec = spectrum(&gram_matrix(&panel_from(permuted)).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(pspec.values()) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn gap_ratio_examples() {
        let spec = Spectrum::from_values(vec![4.0, 2.0, 1.0, 0.5], 4, 4).unwrap();
        let g = gap_ratios(&spec, 2).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert!((g[1] - 2.0).abs() < 1e-12);

        let spec = Spectrum::from_values(vec![100.0, 10.0, 5.0, 4.0], 4, 4).unwrap();
        let g = gap_ratios(&spec, 1).unwrap();
        assert!((g[0] - 18.0).abs() < 1e-12);

        let spec = Spectrum::from_values(vec![3.0, 2.0, 2.0, 2.0], 4, 4).unwrap();
        let g = gap_ratios(&spec, 1).unwrap();
        assert!(g[0].is_infinite());

        assert!(gap_ratios(&spec, 3).is_err());
    }

    #[test]
    fn gap_ratios_scale_free() {
        let vals = vec![9.0, 5.0, 3.0, 2.5, 1.0];
        let a = Spectrum::from_values(vals.clone(), 5, 5).unwrap();
        let b = Spectrum::from_values(vals.iter().map(|v| v * 7.3).collect(), 5, 5).unwrap();
        let ga = gap_ratios(&a, 3).unwrap();
        let gb = gap_ratios(&b, 3).unwrap();
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-10 * x.abs());
        }
    }

    #[test]
    fn topk_matches_dense_on_magnified_grams() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(p, n, k) in &[(80usize, 100usize, 5usize), (120, 150, 17), (90, 200, 10)] {
            let panel = random_panel(p, n, &mut rng);
            let cache = gram_matrix(&panel).unwrap();
            let sqrt_w: Vec<f64> =
                (0..n).map(|_| (rng.gen::<f64>() * 1.8 + 0.1).sqrt()).collect();
            let mut scratch = MagnifyScratch::default();
            let dense =
                magnified_top_eigs(&cache, &sqrt_w, k, EigenBackend::Dense, &mut scratch).unwrap();
            let topk =
                magnified_top_eigs(&cache, &sqrt_w, k, EigenBackend::TopK, &mut scratch).unwrap();
            assert_eq!(dense.len(), k);
            for i in 0..k {
                let rel = (dense[i] - topk[i]).abs() / dense[0].max(1e-12);
                assert!(rel < 1e-8, "({p},{n}) k={k} i={i}: {} vs {}", dense[i], topk[i]);
            }
        }
    }

    #[test]
    fn topk_on_detached_spikes() {
        // spiked gram: a few detached outliers plus noise, the regime the
        // TopK backend exists for
        let n = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut g = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = 0.01 * (rng.gen::<f64>() - 0.5);
                g[[i, j]] = v;
                g[[j, i]] = v;
            }
        }
        for (i, &s) in [240.0, 120.0, 60.0].iter().enumerate() {
            g[[i, i]] = s;
        }
        for i in 3..n {
            g[[i, i]] = 1.0 + 0.1 * rng.gen::<f64>();
        }
        let cache = GramCache::from_gram(g, n).unwrap();
        let sqrt_w = vec![1.0; n];
        let mut scratch = MagnifyScratch::default();
        let dense =
            magnified_top_eigs(&cache, &sqrt_w, 4, EigenBackend::Dense, &mut scratch).unwrap();
        let topk =
            magnified_top_eigs(&cache, &sqrt_w, 4, EigenBackend::TopK, &mut scratch).unwrap();
        for i in 0..4 {
            assert!((dense[i] - topk[i]).abs() / dense[0] < 1e-8);
        }
    }
}
