//! Monte Carlo estimators for both sides of the counting identity
//! `∫∫ n_T(x, y) dx dy = ∫_0^T ∫_SM |det α(θ, t)| dθ dt`, growth-rate fits
//! and the comparison reports.

use rayon::prelude::*;
use serde::Serialize;

use crate::counter::{count_connections, CountOptions};
use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, SurfaceModel, SurfaceKind};
use crate::rng::{substream, DOMAIN_DIRECTIONS, DOMAIN_PAIRS, DOMAIN_THETA};
use crate::variational::alpha_determinant_along;

pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;
/// Minimum number of points inside a fit window.
pub const MIN_FIT_POINTS: usize = 8;
/// Largest tolerated fraction of failed or degenerate samples.
pub const MAX_REJECT_FRACTION: f64 = 0.01;
/// Absolute tolerance of an entropy-rate comparison.
pub const RATE_TOLERANCE: f64 = 0.05;
/// Redraws allowed for one pair slot before it counts as failed.
const PAIR_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegralEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    #[serde(rename = "T")]
    pub t: f64,
    /// Samples that failed to integrate or to converge.
    pub n_failed: usize,
    /// Pairs redrawn because of a continuum-degenerate count.
    pub n_resampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthEstimate {
    /// Abscissae used by the fit.
    #[serde(rename = "T_values")]
    pub t_values: Vec<f64>,
    pub log_values: Vec<f64>,
    pub rate: f64,
    pub ci_half_width: f64,
    pub window: (f64, f64),
    /// Points in the window dropped below the floor.
    pub n_excluded: usize,
}

/// Least-squares slope of `log(value)` against `t` over the final
/// `window_fraction` of the `t` range.
///
/// With a `floor`, window points with `value < floor` are dropped and
/// counted; without one any nonpositive value is an error.
pub fn fit_growth(
    times: &[f64],
    values: &[f64],
    window_fraction: f64,
    floor: Option<f64>,
) -> Result<GrowthEstimate> {
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::DegenerateFit(format!(
            "series lengths {} and {}",
            times.len(),
            values.len()
        )));
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::DegenerateFit(format!("window fraction {window_fraction} not in (0, 1]")));
    }
    let t_first = times[0];
    let t_last = times[times.len() - 1];
    let t_lo = t_last - window_fraction * (t_last - t_first);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut n_excluded = 0;
    for (&t, &v) in times.iter().zip(values) {
        if t < t_lo {
            continue;
        }
        match floor {
            Some(f) if !(v >= f) => n_excluded += 1,
            None if !(v > 0.0) => {
                return Err(Error::DegenerateFit(format!("nonpositive value {v} at T = {t}")))
            }
            _ => {
                xs.push(t);
                ys.push(v.ln());
            }
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::DegenerateFit(format!(
            "{} usable points in window [{t_lo}, {t_last}], need {MIN_FIT_POINTS}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("window has a single abscissa".into()));
    }
    let rate = sxy / sxx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - rate * (x - mx)).powi(2))
        .sum();
    let se = (ssr / (n - 2.0) / sxx).sqrt();
    if !rate.is_finite() {
        return Err(Error::DegenerateFit(format!("non-finite slope {rate}")));
    }
    Ok(GrowthEstimate {
        t_values: xs,
        log_values: ys,
        rate,
        ci_half_width: 2.0 * se,
        window: (t_lo, t_last),
        n_excluded,
    })
}

/// Growth rate of a `(T, value)` series.
pub fn growth_rate(series: &[(f64, f64)], window_fraction: f64) -> Result<GrowthEstimate> {
    let (t, v): (Vec<f64>, Vec<f64>) = series.iter().copied().unzip();
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DegenerateFit("T values must be increasing".into()));
    }
    fit_growth(&t, &v, window_fraction, None)
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn check_horizons(t_list: &[f64]) -> Result<()> {
    if t_list.is_empty() || t_list.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Config(format!("horizons must be finite and nonnegative: {t_list:?}")));
    }
    Ok(())
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `∫_0^T |det(t)| dt` for every horizon, by the trapezoid rule on the
/// integration grid (linear interpolation inside the last cell).
fn nested_trapezoid(times: &[f64], abs_det: &[f64], horizons: &[f64]) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for k in 1..times.len() {
        acc += 0.5 * (times[k] - times[k - 1]) * (abs_det[k] + abs_det[k - 1]);
        cumulative.push(acc);
    }
    horizons
        .iter()
        .map(|&t| {
            let k = times.partition_point(|&s| s <= t);
            if k == 0 {
                return 0.0;
            }
            let k = k - 1;
            if k + 1 >= times.len() || t <= times[k] {
                return cumulative[k];
            }
            let w = (t - times[k]) / (times[k + 1] - times[k]);
            let mid = abs_det[k] + w * (abs_det[k + 1] - abs_det[k]);
            cumulative[k] + 0.5 * (t - times[k]) * (abs_det[k] + mid)
        })
        .collect()
}

/// Right side for several horizons from one set of θ samples.
pub fn rhs_series(
    surface: &SurfaceModel,
    t_list: &[f64],
    n_theta: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<IntegralEstimate>> {
    check_horizons(t_list)?;
    let volume = surface.liouville_volume()?;
    if n_theta == 0 {
        return Err(Error::Config("n_theta must be positive".into()));
    }
    let t_max = t_list.iter().copied().fold(0.0, f64::max);
    let per_sample: Vec<Result<Option<Vec<f64>>>> = (0..n_theta as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, DOMAIN_THETA, i);
            let theta = surface.sample_unit_tangent(&mut rng)?;
            match alpha_determinant_along(surface, &theta, t_max, h) {
                Ok(trace) => {
                    let abs: Vec<f64> = trace.det_values.iter().map(|d| d.abs()).collect();
                    Ok(Some(nested_trapezoid(&trace.times, &abs, t_list)))
                }
                Err(Error::Integration(_)) | Err(Error::Domain(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(n_theta);
    let mut failed = 0;
    for r in per_sample {
        match r? {
            Some(v) => rows.push(v),
            None => failed += 1,
        }
    }
    if failed as f64 > MAX_REJECT_FRACTION * n_theta as f64 {
        return Err(Error::Rejected(format!(
            "{failed} of {n_theta} determinant integrations failed"
        )));
    }
    Ok(t_list
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let xs: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let (mean, se) = mean_and_se(&xs);
            IntegralEstimate {
                value: volume * mean,
                std_error: volume * se,
                n_samples: xs.len(),
                t,
                n_failed: failed,
                n_resampled: 0,
            }
        })
        .collect())
}

pub fn rhs_integral(
    surface: &SurfaceModel,
    t_end: f64,
    n_theta: usize,
    h: f64,
    seed: u64,
) -> Result<IntegralEstimate> {
    Ok(rhs_series(surface, &[t_end], n_theta, h, seed)?.remove(0))
}

enum PairOutcome {
    Counts(Vec<usize>, usize),
    Failed(usize),
}

/// Left side for several horizons: one root set per pair at the longest
/// horizon, filtered by arrival time.
pub fn lhs_series(
    surface: &SurfaceModel,
    t_list: &[f64],
    n_pairs: usize,
    opts: &CountOptions,
    seed: u64,
) -> Result<Vec<IntegralEstimate>> {
    check_horizons(t_list)?;
    let area = surface.area()?;
    opts.validate()?;
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be positive".into()));
    }
    let t_max = t_list.iter().copied().fold(0.0, f64::max);
    let outcomes: Vec<Result<PairOutcome>> = (0..n_pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, DOMAIN_PAIRS, i);
            let mut resampled = 0;
            for _ in 0..PAIR_ATTEMPTS {
                let x = surface.sample_point(&mut rng)?;
                let y = surface.sample_point(&mut rng)?;
                match count_connections(surface, x, y, t_max, opts) {
                    Ok(r) if !r.flags.continuum_degenerate => {
                        let counts = t_list.iter().map(|&t| r.count_up_to(t)).collect();
                        return Ok(PairOutcome::Counts(counts, resampled));
                    }
                    Ok(_) | Err(Error::CoincidentEndpoints) => resampled += 1,
                    Err(Error::Integration(_)) | Err(Error::Domain(_)) => resampled += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(PairOutcome::Failed(resampled))
        })
        .collect();
    let mut rows = Vec::with_capacity(n_pairs);
    let (mut failed, mut resampled) = (0, 0);
    for o in outcomes {
        match o? {
            PairOutcome::Counts(c, r) => {
                rows.push(c);
                resampled += r;
            }
            PairOutcome::Failed(r) => {
                failed += 1;
                resampled += r;
            }
        }
    }
    if (failed + resampled) as f64 > MAX_REJECT_FRACTION * n_pairs as f64 {
        return Err(Error::Rejected(format!(
            "{failed} failed and {resampled} degenerate pairs out of {n_pairs}"
        )));
    }
    let area2 = area * area;
    Ok(t_list
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let xs: Vec<f64> = rows.iter().map(|r| r[k] as f64).collect();
            let (mean, se) = mean_and_se(&xs);
            IntegralEstimate {
                value: area2 * mean,
                std_error: area2 * se,
                n_samples: xs.len(),
                t,
                n_failed: failed,
                n_resampled: resampled,
            }
        })
        .collect())
}

pub fn lhs_integral(
    surface: &SurfaceModel,
    t_end: f64,
    n_pairs: usize,
    opts: &CountOptions,
    seed: u64,
) -> Result<IntegralEstimate> {
    Ok(lhs_series(surface, &[t_end], n_pairs, opts, seed)?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Incomplete,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Incomplete => "INCOMPLETE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub discrepancy: f64,
    pub band: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub system: String,
    pub rows: Vec<LemmaRow>,
    pub pass: bool,
    pub status: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

impl LemmaReport {
    /// Compares matched estimates: a row passes if
    /// `|lhs − rhs| ≤ 3·√(se_l² + se_r²) + h·rhs`.
    pub fn from_estimates(system: String, lhs: &[IntegralEstimate], rhs: &[IntegralEstimate], h: f64) -> Self {
        let rows: Vec<LemmaRow> = lhs
            .iter()
            .zip(rhs)
            .map(|(l, r)| {
                let band = 3.0 * l.std_error.hypot(r.std_error) + h * r.value;
                let discrepancy = (l.value - r.value).abs();
                LemmaRow {
                    t: r.t,
                    lhs: l.value,
                    lhs_se: l.std_error,
                    rhs: r.value,
                    rhs_se: r.std_error,
                    discrepancy,
                    band,
                    pass: discrepancy <= band,
                }
            })
            .collect();
        let pass = !rows.is_empty() && rows.iter().all(|r| r.pass);
        Self {
            system,
            rows,
            pass,
            status: if pass { Verdict::Pass } else { Verdict::Fail },
            cause: None,
        }
    }

    fn incomplete(system: String, cause: String) -> Self {
        Self {
            system,
            rows: Vec::new(),
            pass: false,
            status: Verdict::Incomplete,
            cause: Some(cause),
        }
    }
}

/// Estimates both sides at each horizon and compares them.
#[allow(clippy::too_many_arguments)]
pub fn lemma_check(
    surface: &SurfaceModel,
    t_list: &[f64],
    n_theta: usize,
    n_pairs: usize,
    opts: &CountOptions,
    h: f64,
    seed: u64,
) -> Result<LemmaReport> {
    let system = surface.describe();
    let rhs = match rhs_series(surface, t_list, n_theta, h, seed) {
        Ok(r) => r,
        Err(Error::Rejected(cause)) => return Ok(LemmaReport::incomplete(system, format!("rhs: {cause}"))),
        Err(e) => return Err(e),
    };
    let lhs = match lhs_series(surface, t_list, n_pairs, opts, seed) {
        Ok(l) => l,
        Err(Error::Rejected(cause)) => return Ok(LemmaReport::incomplete(system, format!("lhs: {cause}"))),
        Err(e) => return Err(e),
    };
    Ok(LemmaReport::from_estimates(system, &lhs, &rhs, h))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub system: String,
    pub rate: f64,
    pub ci: f64,
    pub window: (f64, f64),
    pub reference: Option<f64>,
    pub deviation: Option<f64>,
    pub pass: Option<bool>,
    /// The fitted `(T, value)` series.
    pub series: Vec<(f64, f64)>,
}

/// Points in the series fitted by `entropy_report`.
pub const ENTROPY_SERIES_POINTS: usize = 40;

/// Growth rate of the determinant series.
///
/// On the hyperbolic plane the series is the mean `|det(t)|` over directions
/// at `(0, 1)` (the plane is homogeneous); on tori it is the right side of the
/// counting identity on `ENTROPY_SERIES_POINTS` equally spaced horizons.
pub fn entropy_report(
    surface: &SurfaceModel,
    t_max: f64,
    n_theta: usize,
    h: f64,
    seed: u64,
    reference: Option<f64>,
) -> Result<EntropyReport> {
    if !(t_max > 0.0) || n_theta == 0 {
        return Err(Error::Config(format!("entropy report needs T > 0 and n_theta > 0 (T = {t_max})")));
    }
    let n = ENTROPY_SERIES_POINTS;
    let series: Vec<(f64, f64)> = match surface.kind() {
        SurfaceKind::HyperbolicPlane => {
            let base = ChartPoint::new(0.0, 1.0);
            let traces: Vec<Result<Vec<f64>>> = (0..n_theta as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = substream(seed, DOMAIN_DIRECTIONS, i);
                    let angle = rand::Rng::random::<f64>(&mut rng) * std::f64::consts::TAU;
                    let trace = alpha_determinant_along(surface, &surface.unit_state(base, angle), t_max, h)?;
                    let abs: Vec<f64> = trace.det_values.iter().map(|d| d.abs()).collect();
                    let horizons: Vec<f64> = (1..=n).map(|k| t_max * k as f64 / n as f64).collect();
                    Ok(horizons.iter().map(|&t| interpolate(&trace.times, &abs, t)).collect())
                })
                .collect();
            let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;
            (1..=n)
                .map(|k| {
                    let mean = traces.iter().map(|tr| tr[k - 1]).sum::<f64>() / n_theta as f64;
                    (t_max * k as f64 / n as f64, mean)
                })
                .collect()
        }
        _ => {
            let horizons: Vec<f64> = (1..=n).map(|k| t_max * k as f64 / n as f64).collect();
            rhs_series(surface, &horizons, n_theta, h, seed)?
                .iter()
                .map(|e| (e.t, e.value))
                .collect()
        }
    };
    let fit = growth_rate(&series, DEFAULT_WINDOW_FRACTION)?;
    let deviation = reference.map(|r| (fit.rate - r).abs());
    Ok(EntropyReport {
        system: surface.describe(),
        rate: fit.rate,
        ci: fit.ci_half_width,
        window: fit.window,
        reference,
        deviation,
        pass: deviation.map(|d| d <= RATE_TOLERANCE),
        series,
    })
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|&s| s <= t);
    if k == 0 {
        return values[0];
    }
    if k >= times.len() {
        return values[values.len() - 1];
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    values[k - 1] + w * (values[k] - values[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::DEFAULT_STEP;
    use std::f64::consts::PI;

    fn flat(s: f64) -> SurfaceModel {
        SurfaceModel::flat_torus(1.0, 1.0).unwrap().with_constant_field(s)
    }

    #[test]
    fn exact_exponential_fit() {
        let series: Vec<(f64, f64)> = (1..=20).map(|t| (t as f64, (0.8 * t as f64).exp())).collect();
        let g = growth_rate(&series, 0.5).unwrap();
        assert!((g.rate - 0.8).abs() < 1e-12);
        assert!(g.ci_half_width < 1e-10);
        assert_eq!(g.window, (10.5, 20.0));
        assert_eq!(g.t_values.len(), 10);
    }

    #[test]
    fn quadratic_series_is_subexponential() {
        // slope of log T² over the window is bounded by 2/T_lo = 0.08
        let series: Vec<(f64, f64)> = (10..=40).map(|t| (t as f64, (t * t) as f64)).collect();
        let g = growth_rate(&series, 0.5).unwrap();
        assert!(g.rate > 0.0 && g.rate <= 2.0 / 25.0, "{g:?}");
    }

    #[test]
    fn fit_rejects_bad_series() {
        let short: Vec<(f64, f64)> = (1..=10).map(|t| (t as f64, 1.0)).collect();
        assert!(matches!(growth_rate(&short, 0.5), Err(Error::DegenerateFit(_))));
        let mut s: Vec<(f64, f64)> = (1..=40).map(|t| (t as f64, t as f64)).collect();
        s[35].1 = 0.0;
        assert!(matches!(growth_rate(&s, 0.5), Err(Error::DegenerateFit(_))));
        let zeros = vec![0.0; 40];
        let t: Vec<f64> = (0..40).map(f64::from).collect();
        assert!(matches!(fit_growth(&t, &zeros, 0.5, Some(1e-8)), Err(Error::DegenerateFit(_))));
        s[35].1 = 36.0;
        s.swap(3, 4);
        assert!(growth_rate(&s, 0.5).is_err());
    }

    #[test]
    fn floor_excludes_and_counts() {
        let t: Vec<f64> = (0..40).map(f64::from).collect();
        let mut v: Vec<f64> = t.iter().map(|x| (0.3 * x).exp()).collect();
        v[30] = 0.0;
        v[31] = 1e-12;
        let g = fit_growth(&t, &v, 0.5, Some(1e-8)).unwrap();
        assert_eq!(g.n_excluded, 2);
        assert!((g.rate - 0.3).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_matches_closed_forms() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let vals: Vec<f64> = times.iter().map(|t| t * t).collect();
        let got = nested_trapezoid(&times, &vals, &[0.0, 5.0, 10.0, 7.255]);
        assert_eq!(got[0], 0.0);
        assert!((got[1] - 125.0 / 3.0).abs() < 1e-3);
        assert!((got[2] - 1000.0 / 3.0).abs() < 1e-3);
        assert!((got[3] - 7.255f64.powi(3) / 3.0).abs() < 1e-3);
    }

    #[test]
    fn flat_rhs_is_pi_t_squared() {
        let e = rhs_integral(&flat(0.0), 10.0, 8, DEFAULT_STEP, 1).unwrap();
        assert!((e.value - PI * 100.0).abs() / (PI * 100.0) < 1e-6, "{e:?}");
        assert!(e.std_error < 1e-6);
    }

    #[test]
    fn constant_field_rhs() {
        // 2π ∫_0^10 |sin t| dt = 2π (6 + 1 − cos(10 − 3π))
        let want = 2.0 * PI * (7.0 - (10.0 - 3.0 * PI).cos());
        let e = rhs_integral(&flat(1.0), 10.0, 4, DEFAULT_STEP, 2).unwrap();
        assert!((e.value - want).abs() / want < 1e-5, "{} vs {want}", e.value);
    }

    #[test]
    fn zero_horizon_is_zero() {
        let e = rhs_integral(&flat(0.5), 0.0, 4, DEFAULT_STEP, 0).unwrap();
        assert_eq!(e.value, 0.0);
        let l = lhs_integral(&flat(0.0), 0.001, 4, &CountOptions::default(), 0).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn rhs_is_nested_and_monotone() {
        let s = SurfaceModel::flat_torus(1.0, 1.0).unwrap().with_constant_field(0.9);
        let t: Vec<f64> = (0..=12).map(|k| 0.5 * k as f64).collect();
        let series = rhs_series(&s, &t, 6, DEFAULT_STEP, 3).unwrap();
        for w in series.windows(2) {
            assert!(w[0].value <= w[1].value);
        }
        let single = rhs_integral(&s, 4.0, 6, DEFAULT_STEP, 3).unwrap();
        assert_eq!(single.value, series[8].value);
    }

    #[test]
    fn short_flat_lhs() {
        let e = lhs_integral(&flat(0.0), 0.4, 300, &CountOptions::default(), 5).unwrap();
        let want = PI * 0.16;
        assert!((e.value - want).abs() <= 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = flat(0.7);
        let a = with_workers(Some(1), || rhs_series(&s, &[1.0, 2.0], 12, 0.01, 9)).unwrap().unwrap();
        let b = with_workers(Some(3), || rhs_series(&s, &[1.0, 2.0], 12, 0.01, 9)).unwrap().unwrap();
        assert_eq!(a, b);
        let opts = CountOptions {
            n_angle: 90,
            ..CountOptions::with_step(0.01)
        };
        let a = with_workers(Some(1), || lhs_series(&s, &[1.0], 6, &opts, 9)).unwrap().unwrap();
        let b = with_workers(Some(4), || lhs_series(&s, &[1.0], 6, &opts, 9)).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn verdict_detects_corrupted_rhs() {
        let est = |v: f64, t: f64| IntegralEstimate {
            value: v,
            std_error: 1.0,
            n_samples: 100,
            t,
            n_failed: 0,
            n_resampled: 0,
        };
        let lhs = [est(12.5, 2.0), est(78.6, 5.0)];
        let rhs = [est(12.6, 2.0), est(78.5, 5.0)];
        let ok = LemmaReport::from_estimates("x".into(), &lhs, &rhs, 1e-3);
        assert_eq!(ok.status, Verdict::Pass);
        let doubled: Vec<_> = rhs.iter().map(|e| est(2.0 * e.value, e.t)).collect();
        let bad = LemmaReport::from_estimates("x".into(), &lhs, &doubled, 1e-3);
        assert_eq!(bad.status, Verdict::Fail);
        assert!(bad.rows.iter().all(|r| !r.pass && r.discrepancy > r.band));
    }

    #[test]
    fn non_torus_is_unsupported() {
        let h = SurfaceModel::hyperbolic_plane();
        assert!(matches!(rhs_integral(&h, 1.0, 4, 0.01, 0), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn hyperbolic_entropy_rates() {
        let h = SurfaceModel::hyperbolic_plane();
        let r = entropy_report(&h, 20.0, 4, DEFAULT_STEP, 0, Some(1.0)).unwrap();
        assert_eq!(r.pass, Some(true), "{r:?}");
        let m = SurfaceModel::hyperbolic_plane().with_constant_field(0.6);
        let r = entropy_report(&m, 20.0, 4, DEFAULT_STEP, 0, Some(0.8)).unwrap();
        assert_eq!(r.pass, Some(true), "{r:?}");
    }

    #[test]
    fn flat_entropy_rate_is_the_slope_of_log_pi_t_squared() {
        let r = entropy_report(&flat(0.0), 40.0, 2, DEFAULT_STEP, 0, Some(0.0)).unwrap();
        let pts: Vec<(f64, f64)> = (1..=40)
            .map(|k| k as f64)
            .filter(|&t| t >= r.window.0)
            .map(|t| (t, (PI * t * t).ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((r.rate - slope).abs() < 1e-6, "{} vs {slope}", r.rate);
        // polynomial growth, but 2/T on the tail window is not below the tolerance
        assert!(r.rate > 0.0 && r.rate <= 2.0 / r.window.0);
        assert_eq!(r.pass, Some(r.rate <= RATE_TOLERANCE));
    }
}
