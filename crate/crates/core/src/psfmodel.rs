//! Gaussian-mixture models of PSF dispersion: density, EM fitting,
//! expert transforms, deterministic offset generation and the latent KL term.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Axis-aligned 2-D Gaussian mixture over pixel offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture2D {
    #[serde(rename = "K")]
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub variances: Vec<[f64; 2]>,
}

impl GaussianMixture2D {
    pub fn new(weights: Vec<f64>, means: Vec<[f64; 2]>, variances: Vec<[f64; 2]>) -> Result<Self> {
        let m = Self { k: weights.len(), weights, means, variances };
        m.validate()?;
        Ok(m)
    }

    pub fn single(mean: [f64; 2], variance: [f64; 2]) -> Self {
        Self { k: 1, weights: vec![1.0], means: vec![mean], variances: vec![variance] }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 || self.weights.len() != k || self.means.len() != k || self.variances.len() != k {
            return Err(Error::dim("mixture", k, self.weights.len()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("mixture weights must be non-negative and sum to 1".into()));
        }
        if self.variances.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("mixture variances must be positive".into()));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("mixture means must be finite".into()));
        }
        Ok(())
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m[0] += w * mu[0];
            m[1] += w * mu[1];
        }
        m
    }
}

fn log_normal(p: [f64; 2], mu: [f64; 2], var: [f64; 2]) -> f64 {
    let dx = p[0] - mu[0];
    let dy = p[1] - mu[1];
    -0.5 * (dx * dx / var[0] + dy * dy / var[1]) - 0.5 * (var[0] * var[1]).ln() - (2.0 * PI).ln()
}

fn normal(p: [f64; 2], mu: [f64; 2], var: [f64; 2]) -> f64 {
    log_normal(p, mu, var).exp()
}

/// `sum_k pi_k N(dp | mu_k, diag(sigma_k^2))`
pub fn gmm_pdf(mixture: &GaussianMixture2D, dp: [f64; 2]) -> f64 {
    mixture
        .weights
        .iter()
        .zip(&mixture.means)
        .zip(&mixture.variances)
        .map(|((&w, &mu), &var)| w * normal(dp, mu, var))
        .sum()
}

/// Input to [`fit_gmm_em`].
#[derive(Debug, Clone, Copy)]
pub enum EmData<'a> {
    Samples(&'a [[f64; 2]]),
    /// Non-negative mass per pixel; coordinates are pixel offsets with
    /// sample `(h/2, w/2)` at the origin.
    Raster(&'a Array2<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Independent k-means++ initializations; the best final likelihood wins.
    pub restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { k: 3, tol: 1e-9, max_iter: 500, seed: 0, restarts: 4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmFit {
    pub mixture: GaussianMixture2D,
    /// Weighted mean log-likelihood per iteration of the reported run.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeded: bool,
    pub warnings: Vec<String>,
}

struct Weighted {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

fn weighted_points(data: EmData<'_>) -> Result<Weighted> {
    let (points, raw): (Vec<[f64; 2]>, Vec<f64>) = match data {
        EmData::Samples(s) => (s.to_vec(), vec![1.0; s.len()]),
        EmData::Raster(r) => {
            let (h, w) = r.dim();
            let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
            if r.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument("raster masses must be finite and non-negative".into()));
            }
            r.indexed_iter()
                .filter(|(_, &v)| v > 0.0)
                .map(|((y, x), &v)| ([x as f64 - cx, y as f64 - cy], v))
                .unzip()
        }
    };
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("EM data has no mass".into()));
    }
    Ok(Weighted { points, weights: raw.into_iter().map(|w| w / total).collect() })
}

fn distinct_support(points: &[[f64; 2]], need: usize) -> bool {
    let mut seen: Vec<[u64; 2]> = Vec::new();
    for p in points {
        let key = [p[0].to_bits(), p[1].to_bits()];
        if !seen.contains(&key) {
            seen.push(key);
            if seen.len() >= need {
                return true;
            }
        }
    }
    false
}

fn weighted_moments(d: &Weighted, resp: Option<&[f64]>) -> (f64, [f64; 2], [f64; 2]) {
    let (mut s, mut m) = (0.0, [0.0; 2]);
    for (i, (p, w)) in d.points.iter().zip(&d.weights).enumerate() {
        let r = w * resp.map_or(1.0, |r| r[i]);
        s += r;
        m[0] += r * p[0];
        m[1] += r * p[1];
    }
    if s <= 0.0 {
        return (0.0, [0.0; 2], [1.0; 2]);
    }
    m = [m[0] / s, m[1] / s];
    let mut v = [0.0; 2];
    for (i, (p, w)) in d.points.iter().zip(&d.weights).enumerate() {
        let r = w * resp.map_or(1.0, |r| r[i]);
        v[0] += r * (p[0] - m[0]).powi(2);
        v[1] += r * (p[1] - m[1]).powi(2);
    }
    (s, m, [v[0] / s, v[1] / s])
}

fn pick_weighted(rng: &mut ChaCha8Rng, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..w.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// k-means++ seeding followed by one hard assignment for initial moments.
fn kmeanspp_init(d: &Weighted, k: usize, rng: &mut ChaCha8Rng) -> GaussianMixture2D {
    let mut centers = vec![d.points[pick_weighted(rng, &d.weights)]];
    let dist2 = |p: &[f64; 2], c: &[f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
    while centers.len() < k {
        let score: Vec<f64> = d
            .points
            .iter()
            .zip(&d.weights)
            .map(|(p, w)| w * centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        centers.push(d.points[pick_weighted(rng, &score)]);
    }
    let (_, _, global_var) = weighted_moments(d, None);
    let assign: Vec<usize> = d
        .points
        .iter()
        .map(|p| {
            (0..k)
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .unwrap_or(0)
        })
        .collect();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        let r: Vec<f64> = assign.iter().map(|&a| if a == c { 1.0 } else { 0.0 }).collect();
        let (s, m, v) = weighted_moments(d, Some(&r));
        if s > 0.0 {
            weights.push(s);
            means.push(m);
            variances.push([v[0].max(VARIANCE_FLOOR).max(1e-3 * global_var[0]), v[1].max(VARIANCE_FLOOR).max(1e-3 * global_var[1])]);
        } else {
            weights.push(1e-3);
            means.push(centers[c]);
            variances.push(global_var);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GaussianMixture2D { k, weights, means, variances }
}

/// E-step: responsibilities (row-major `[point][component]`) and the
/// weighted mean log-likelihood of `m`.
fn e_step(d: &Weighted, m: &GaussianMixture2D, resp: &mut [f64]) -> f64 {
    let k = m.k;
    let log_w: Vec<f64> = m.weights.iter().map(|w| if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
    let mut ll = 0.0;
    for (i, (p, w)) in d.points.iter().zip(&d.weights).enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        let mut best = f64::NEG_INFINITY;
        for c in 0..k {
            row[c] = log_w[c] + log_normal(*p, m.means[c], m.variances[c]);
            best = best.max(row[c]);
        }
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - best).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
        ll += w * (best + s.ln());
    }
    ll
}

/// M-step; returns components whose unfloored variance fell below the floor.
fn m_step(d: &Weighted, resp: &[f64], m: &mut GaussianMixture2D) -> Vec<usize> {
    let k = m.k;
    let mut degenerate = Vec::new();
    for c in 0..k {
        let r: Vec<f64> = (0..d.points.len()).map(|i| resp[i * k + c]).collect();
        let (s, mu, var) = weighted_moments(d, Some(&r));
        m.weights[c] = s;
        if s > 0.0 {
            m.means[c] = mu;
            if var[0] < VARIANCE_FLOOR || var[1] < VARIANCE_FLOOR {
                degenerate.push(c);
            }
            m.variances[c] = [var[0].max(VARIANCE_FLOOR), var[1].max(VARIANCE_FLOOR)];
        } else {
            degenerate.push(c);
        }
    }
    let total: f64 = m.weights.iter().sum();
    m.weights.iter_mut().for_each(|w| *w /= total);
    degenerate
}

struct Run {
    mixture: GaussianMixture2D,
    trace: Vec<f64>,
    converged: bool,
    reseeded: bool,
    warnings: Vec<String>,
}

fn run_em(d: &Weighted, k: usize, cfg: &EmConfig, rng: &mut ChaCha8Rng) -> Run {
    let mut m = kmeanspp_init(d, k, rng);
    let mut resp = vec![0.0; d.points.len() * k];
    let mut trace = Vec::new();
    let mut reseeded = false;
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    while iter < cfg.max_iter {
        iter += 1;
        let ll = e_step(d, &m, &mut resp);
        if let Some(&prev) = trace.last() {
            if ll - prev < cfg.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        let bad = m_step(d, &resp, &mut m);
        if !bad.is_empty() {
            if !reseeded {
                reseeded = true;
                // move each collapsed component to the worst-explained point
                // and restart the likelihood trace from the new state
                let (_, _, gvar) = weighted_moments(d, None);
                for &c in &bad {
                    let worst = d
                        .points
                        .iter()
                        .enumerate()
                        .min_by(|a, b| gmm_pdf(&m, *a.1).total_cmp(&gmm_pdf(&m, *b.1)))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    m.means[c] = d.points[worst];
                    m.variances[c] = [gvar[0].max(VARIANCE_FLOOR), gvar[1].max(VARIANCE_FLOOR)];
                    m.weights[c] = 1.0 / k as f64;
                }
                let total: f64 = m.weights.iter().sum();
                m.weights.iter_mut().for_each(|w| *w /= total);
                trace.clear();
            } else {
                let msg = format!("components {bad:?} variance-floored at {VARIANCE_FLOOR} px^2");
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
            }
        }
    }
    if !converged {
        // likelihood of the final parameters
        trace.push(e_step(d, &m, &mut resp));
    }
    Run { mixture: m, trace, converged, reseeded, warnings }
}

pub fn fit_gmm_em(data: EmData<'_>, cfg: &EmConfig) -> Result<EmFit> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let d = weighted_points(data)?;
    if !distinct_support(&d.points, cfg.k) {
        return Err(Error::InvalidArgument(format!("EM needs at least {} distinct support points", cfg.k)));
    }
    let mut best: Option<Run> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let run = run_em(&d, cfg.k, cfg, &mut rng);
        let better = best.as_ref().is_none_or(|b| run.trace.last() > b.trace.last());
        if better {
            best = Some(run);
        }
    }
    let run = best.expect("at least one run");
    for w in &run.warnings {
        log::warn!("{w}");
    }
    Ok(EmFit {
        iterations: run.trace.len(),
        mixture: run.mixture,
        trace: run.trace,
        converged: run.converged,
        reseeded: run.reseeded,
        warnings: run.warnings,
    })
}

/// Gaussian parameters `(mu, log sigma^2)` per latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLatent {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianLatent {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::dim("latent log_var", mean.len(), log_var.len()));
        }
        if mean.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("latent entries must be finite".into()));
        }
        Ok(Self { mean, log_var })
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| l.exp()).collect()
    }
}

/// `N(a mu + b, a^2 sigma^2)`, elementwise. A zero scale gives a point mass
/// (`log_var = -inf`).
pub fn meg_transform(latent: &GaussianLatent, a: &[f64], b: &[f64]) -> Result<GaussianLatent> {
    let n = latent.mean.len();
    if a.len() != n || b.len() != n {
        return Err(Error::dim("meg scale/shift", n, if a.len() != n { a.len() } else { b.len() }));
    }
    let mean = latent.mean.iter().zip(a).zip(b).map(|((m, a), b)| a * m + b).collect();
    let log_var = latent
        .log_var
        .iter()
        .zip(a)
        .map(|(l, &a)| if a == 1.0 || a == -1.0 { *l } else { l + 2.0 * a.abs().ln() })
        .collect();
    Ok(GaussianLatent { mean, log_var })
}

/// `sum 0.5 (-log sigma^2 + sigma^2 + mu^2 - 1)`
pub fn kl_to_standard_normal(latent: &GaussianLatent) -> f64 {
    latent
        .mean
        .iter()
        .zip(&latent.log_var)
        .map(|(m, l)| 0.5 * (-l + l.exp() + m * m - 1.0))
        .sum()
}

/// Deterministic offset candidates with their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSet {
    pub m: usize,
    pub offsets: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Per-position offset candidates for feature aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub height: usize,
    pub width: usize,
    pub m: usize,
    /// `[(y * width + x) * m^2 + i]`
    pub offsets: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl OffsetField {
    pub fn uniform(height: usize, width: usize, set: &OffsetSet) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            m: set.m,
            offsets: set.offsets.iter().cycle().take(n * set.offsets.len()).copied().collect(),
            weights: set.weights.iter().cycle().take(n * set.weights.len()).copied().collect(),
        }
    }

    pub fn taps(&self) -> usize {
        self.m * self.m
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width * self.taps();
        if self.offsets.len() != n || self.weights.len() != n {
            return Err(Error::dim("offset field", n, self.offsets.len()));
        }
        if self.offsets.iter().flatten().any(|v| !v.is_finite()) || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("offsets must be finite and weights non-negative".into()));
        }
        Ok(())
    }
}

/// Lattice directions in placement order: centre, then each ring by
/// increasing Manhattan length with every point followed by its mirror.
fn sigma_pattern(count: usize) -> Vec<[i64; 2]> {
    let mut out = vec![[0, 0]];
    let mut ring = 1i64;
    while out.len() < count {
        let mut reps: Vec<[i64; 2]> = Vec::new();
        for i in -ring..=ring {
            for j in -ring..=ring {
                if i.abs().max(j.abs()) == ring && (i > 0 || (i == 0 && j > 0)) {
                    reps.push([i, j]);
                }
            }
        }
        reps.sort_by_key(|&[i, j]| (i.abs() + j.abs(), -i, -j));
        for [i, j] in reps {
            out.push([i, j]);
            out.push([-i, -j]);
        }
        ring += 1;
    }
    out.truncate(count);
    out
}

/// Largest-remainder split of `slots` proportional to `weights`; ties go to
/// the lower component index.
pub fn allocate_slots(weights: &[f64], slots: usize) -> Vec<usize> {
    let quota: Vec<f64> = weights.iter().map(|w| w * slots as f64).collect();
    let mut alloc: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let mut left = slots - alloc.iter().sum::<usize>().min(slots);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quota[b] - quota[b].floor()).total_cmp(&(quota[a] - quota[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    alloc
}

/// Sigma-point placement: component `k` receives a share of the `M^2` slots
/// proportional to its weight and places them at `mu_k + s (i sigma_x, j sigma_y)`
/// with dilation `s = k + 1`. Weights are `pi_k N(point)`, renormalized.
/// A component at the variance floor is a point mass; its slots collapse onto the mean.
pub fn offsets_from_mixture(mixture: &GaussianMixture2D, m: usize) -> Result<OffsetSet> {
    mixture.validate()?;
    if m == 0 {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    let slots = m * m;
    if slots < mixture.k {
        return Err(Error::InsufficientSlots { slots, components: mixture.k });
    }
    let alloc = allocate_slots(&mixture.weights, slots);
    let mut offsets = Vec::with_capacity(slots);
    let mut weights = Vec::with_capacity(slots);
    for (c, &n) in alloc.iter().enumerate() {
        let mu = mixture.means[c];
        let var = mixture.variances[c];
        let s = (c + 1) as f64;
        let sd = |v: f64| if v <= VARIANCE_FLOOR { 0.0 } else { v.sqrt() };
        let (sx, sy) = (sd(var[0]), sd(var[1]));
        for [i, j] in sigma_pattern(n) {
            let p = [mu[0] + s * i as f64 * sx, mu[1] + s * j as f64 * sy];
            offsets.push(p);
            weights.push(mixture.weights[c] * normal(p, mu, var));
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(OffsetSet { m, offsets, weights })
}

/// Draws `n` samples from `mixture`.
pub fn sample_mixture(mixture: &GaussianMixture2D, n: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>();
            let mut c = mixture.k - 1;
            for (i, w) in mixture.weights.iter().enumerate() {
                if u < *w {
                    c = i;
                    break;
                }
                u -= w;
            }
            let zx: f64 = StandardNormal.sample(rng);
            let zy: f64 = StandardNormal.sample(rng);
            [mixture.means[c][0] + zx * mixture.variances[c][0].sqrt(), mixture.means[c][1] + zy * mixture.variances[c][1].sqrt()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pdf_values_and_symmetry() {
        let m = GaussianMixture2D::single([0.0, 0.0], [1.0, 1.0]);
        assert!((gmm_pdf(&m, [0.0, 0.0]) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let m = GaussianMixture2D::new(vec![0.5, 0.5], vec![[2.0, 0.0], [-2.0, 0.0]], vec![[1.0, 0.5], [1.0, 0.5]]).unwrap();
        for (x, y) in [(0.3, 0.1), (1.7, -0.4), (3.0, 2.0)] {
            assert!((gmm_pdf(&m, [x, y]) - gmm_pdf(&m, [-x, y])).abs() < 1e-15);
        }
    }

    fn quad_integral(m: &GaussianMixture2D) -> f64 {
        let (lo, hi, n) = (-30.0, 30.0, 1200);
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                s += gmm_pdf(m, [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h]);
            }
        }
        s * h * h
    }

    #[test]
    fn pdf_integrates_to_one() {
        let m = GaussianMixture2D::new(vec![0.2, 0.3, 0.5], vec![[1.0, -2.0], [-3.0, 4.0], [0.0, 0.0]], vec![[0.5, 2.0], [1.0, 1.0], [3.0, 0.7]]).unwrap();
        assert!((quad_integral(&m) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn em_single_component() {
        let truth = GaussianMixture2D::single([3.0, -1.0], [0.25, 0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = sample_mixture(&truth, 10_000, &mut rng);
        let fit = fit_gmm_em(EmData::Samples(&s), &EmConfig { k: 1, ..Default::default() }).unwrap();
        let m = &fit.mixture;
        assert!((m.means[0][0] - 3.0).abs() < 0.05 && (m.means[0][1] + 1.0).abs() < 0.05);
        assert!((m.variances[0][0] / 0.25 - 1.0).abs() < 0.1 && (m.variances[0][1] / 0.25 - 1.0).abs() < 0.1);
    }

    #[test]
    fn em_two_components_weights() {
        let truth = GaussianMixture2D::new(vec![0.7, 0.3], vec![[-4.0, 0.0], [4.0, 0.0]], vec![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = sample_mixture(&truth, 10_000, &mut rng);
        let fit = fit_gmm_em(EmData::Samples(&s), &EmConfig { k: 2, ..Default::default() }).unwrap();
        let mut pairs: Vec<(f64, f64)> = fit.mixture.means.iter().zip(&fit.mixture.weights).map(|(m, w)| (m[0], *w)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((pairs[0].1 - 0.7).abs() < 0.03 && (pairs[1].1 - 0.3).abs() < 0.03);
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn em_raster_single_matches_centroid() {
        let r = Array2::from_shape_fn((21, 21), |(y, x)| {
            let (dx, dy) = (x as f64 - 11.3, y as f64 - 9.6);
            (-(dx * dx) / 4.0 - dy * dy / 2.0).exp()
        });
        let fit = fit_gmm_em(EmData::Raster(&r), &EmConfig { k: 1, ..Default::default() }).unwrap();
        let total: f64 = r.sum();
        let cx: f64 = r.indexed_iter().map(|((_, x), v)| v * (x as f64 - 10.0)).sum::<f64>() / total;
        let cy: f64 = r.indexed_iter().map(|((y, _), v)| v * (y as f64 - 10.0)).sum::<f64>() / total;
        assert!((fit.mixture.means[0][0] - cx).abs() < 1e-6);
        assert!((fit.mixture.means[0][1] - cy).abs() < 1e-6);
    }

    #[test]
    fn em_rejects_degenerate_input() {
        let s = [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(fit_gmm_em(EmData::Samples(&s), &EmConfig { k: 2, ..Default::default() }).is_err());
        assert!(fit_gmm_em(EmData::Samples(&s), &EmConfig { k: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn em_collapse_is_floored() {
        // three points exactly repeated: any component can collapse onto one
        let s: Vec<[f64; 2]> = (0..300).map(|i| [(i % 3) as f64 * 10.0, 0.0]).collect();
        let fit = fit_gmm_em(EmData::Samples(&s), &EmConfig { k: 3, restarts: 1, ..Default::default() }).unwrap();
        assert!(fit.mixture.variances.iter().flatten().all(|&v| v >= VARIANCE_FLOOR));
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn em_is_seed_deterministic() {
        let truth = GaussianMixture2D::new(vec![0.5, 0.5], vec![[-3.0, 1.0], [3.0, -1.0]], vec![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let s = sample_mixture(&truth, 2000, &mut ChaCha8Rng::seed_from_u64(5));
        let cfg = EmConfig { k: 2, seed: 9, ..Default::default() };
        let a = fit_gmm_em(EmData::Samples(&s), &cfg).unwrap();
        let b = fit_gmm_em(EmData::Samples(&s), &cfg).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn meg_examples() {
        let l = GaussianLatent::new(vec![1.0], vec![4f64.ln()]).unwrap();
        assert_eq!(meg_transform(&l, &[1.0], &[0.0]).unwrap(), l);
        let t = meg_transform(&l, &[2.0], &[3.0]).unwrap();
        assert_eq!(t.mean, vec![5.0]);
        assert!((t.variance()[0] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn meg_monte_carlo() {
        use rand_distr::{Distribution, StandardNormal};
        let l = GaussianLatent::new(vec![0.7], vec![0.3]).unwrap();
        let (a, b) = (-1.8, 0.4);
        let t = meg_transform(&l, &[a], &[b]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let sd = (0.5 * l.log_var[0]).exp();
        let n = 100_000;
        let z: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                a * (l.mean[0] + sd * e) + b
            })
            .collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let tv = t.variance()[0];
        let se_mean = (tv / n as f64).sqrt();
        let se_var = tv * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - t.mean[0]).abs() < 3.0 * se_mean);
        assert!((var - tv).abs() < 3.0 * se_var);
    }

    /// KL(N(mu, s2) || N(0, 1)) by midpoint quadrature over +-12 sd.
    fn kl_quadrature(mu: f64, s2: f64) -> f64 {
        let sd = s2.sqrt();
        let (lo, hi) = (mu - 12.0 * sd, mu + 12.0 * sd);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            let lq = -0.5 * (x - mu).powi(2) / s2 - 0.5 * (2.0 * PI * s2).ln();
            let lp = -0.5 * x * x - 0.5 * (2.0 * PI).ln();
            acc += lq.exp() * (lq - lp);
        }
        acc * h
    }

    #[test]
    fn kl_examples() {
        let kl = |m: f64, v: f64| kl_to_standard_normal(&GaussianLatent::new(vec![m], vec![v.ln()]).unwrap());
        assert_eq!(kl(0.0, 1.0), 0.0);
        assert!((kl(1.0, 1.0) - kl_quadrature(1.0, 1.0)).abs() < 1e-6);
        assert!((kl(1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((kl(0.0, 4.0) - kl_quadrature(0.0, 4.0)).abs() < 1e-6);
        assert!((kl(0.0, 4.0) - 0.5 * (3.0 - 4f64.ln())).abs() < 1e-15);
        assert!((kl(0.0, 4.0) - 0.80685).abs() < 1e-5);
    }

    #[test]
    fn offsets_examples() {
        let one = offsets_from_mixture(&GaussianMixture2D::single([0.0, 0.0], [1.0, 1.0]), 1).unwrap();
        assert_eq!(one.offsets, vec![[0.0, 0.0]]);
        assert_eq!(one.weights, vec![1.0]);
        let s = offsets_from_mixture(&GaussianMixture2D::single([2.0, 0.0], [1.0, 1.0]), 3).unwrap();
        assert_eq!(s.offsets.len(), 9);
        let want: Vec<[f64; 2]> = [[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1], [1, -1], [-1, 1]]
            .iter()
            .map(|[i, j]| [2.0 + *i as f64, *j as f64])
            .collect();
        assert_eq!(s.offsets, want);
        let mx: f64 = s.offsets.iter().zip(&s.weights).map(|(o, w)| o[0] * w).sum();
        let my: f64 = s.offsets.iter().zip(&s.weights).map(|(o, w)| o[1] * w).sum();
        assert!((mx - 2.0).abs() < 1e-12 && my.abs() < 1e-12);
        let three = GaussianMixture2D::new(vec![0.5, 0.3, 0.2], vec![[0.0; 2]; 3], vec![[1.0; 2]; 3]).unwrap();
        assert!(matches!(offsets_from_mixture(&three, 1), Err(Error::InsufficientSlots { slots: 1, components: 3 })));
        assert_eq!(allocate_slots(&three.weights, 9), vec![4, 3, 2]);
    }

    fn arb_mixture() -> impl Strategy<Value = GaussianMixture2D> {
        (1usize..4).prop_flat_map(|k| {
            (
                proptest::collection::vec(0.05f64..1.0, k),
                proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), k),
                proptest::collection::vec((0.1f64..4.0, 0.1f64..4.0), k),
            )
                .prop_map(|(w, m, v)| {
                    let s: f64 = w.iter().sum();
                    let mut w: Vec<f64> = w.iter().map(|x| x / s).collect();
                    let rest: f64 = w[1..].iter().sum();
                    w[0] = 1.0 - rest;
                    GaussianMixture2D {
                        k: w.len(),
                        weights: w,
                        means: m.into_iter().map(|(a, b)| [a, b]).collect(),
                        variances: v.into_iter().map(|(a, b)| [a, b]).collect(),
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn kl_non_negative_and_matches_quadrature(mu in -3.0f64..3.0, sd in 0.3f64..3.0) {
            let l = GaussianLatent::new(vec![mu], vec![(sd * sd).ln()]).unwrap();
            let kl = kl_to_standard_normal(&l);
            prop_assert!(kl >= 0.0);
            prop_assert!((kl - kl_quadrature(mu, sd * sd)).abs() < 1e-6);
        }

        #[test]
        fn meg_composition(mu in -3.0f64..3.0, lv in -2.0f64..2.0, a1 in 0.2f64..3.0, b1 in -2.0f64..2.0, a2 in -3.0f64..-0.2, b2 in -2.0f64..2.0) {
            let l = GaussianLatent::new(vec![mu], vec![lv]).unwrap();
            let two = meg_transform(&meg_transform(&l, &[a2], &[b2]).unwrap(), &[a1], &[b1]).unwrap();
            let one = meg_transform(&l, &[a1 * a2], &[a1 * b2 + b1]).unwrap();
            prop_assert!((two.mean[0] - one.mean[0]).abs() < 1e-12);
            prop_assert!((two.log_var[0] - one.log_var[0]).abs() < 1e-12);
        }

        #[test]
        fn offset_weights_sum_to_one(m in arb_mixture(), side in 2usize..6) {
            let s = offsets_from_mixture(&m, side).unwrap();
            prop_assert_eq!(s.offsets.len(), side * side);
            prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.weights.iter().all(|w| *w >= 0.0));
        }

        #[test]
        fn single_component_offset_mean(mx in -5.0f64..5.0, my in -5.0f64..5.0, vx in 0.1f64..4.0, vy in 0.1f64..4.0, side in 1usize..6) {
            let m = GaussianMixture2D::single([mx, my], [vx, vy]);
            let s = offsets_from_mixture(&m, side).unwrap();
            let cx: f64 = s.offsets.iter().zip(&s.weights).map(|(o, w)| o[0] * w).sum();
            let cy: f64 = s.offsets.iter().zip(&s.weights).map(|(o, w)| o[1] * w).sum();
            // an odd number of ring points leaves one unpaired sigma point
            let q = if (side * side) % 2 == 0 { 2.0 * (side as f64) } else { 1e-9 };
            prop_assert!((cx - mx).abs() <= q * vx.sqrt() && (cy - my).abs() <= q * vy.sqrt());
        }

        #[test]
        fn em_trace_monotone(seed in 0u64..50, k in 1usize..4) {
            let truth = GaussianMixture2D::new(vec![0.4, 0.35, 0.25], vec![[-5.0, 0.0], [4.0, 3.0], [1.0, -5.0]], vec![[1.0, 0.6], [0.8, 1.2], [1.5, 1.0]]).unwrap();
            let s = sample_mixture(&truth, 800, &mut ChaCha8Rng::seed_from_u64(seed));
            let fit = fit_gmm_em(EmData::Samples(&s), &EmConfig { k, seed, restarts: 1, ..Default::default() }).unwrap();
            prop_assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
            prop_assert!((fit.mixture.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
