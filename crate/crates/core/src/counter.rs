//! Counting connecting trajectories `n_T(x, y)`.
//!
//! Roots of the shooting map `f(angle, t) = π∘φ_t(x, angle) = y` are located
//! by a coarse grid scan over `[0, 2π) × [t_min, T]` and polished by damped
//! Newton iteration. The Newton matrix has columns `∂f/∂angle = J(t)` (the
//! projected unit vertical variation) and `∂f/∂t = γ̇(t)`, so its g-determinant
//! is the α-determinant of the variational module.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{base_rhs, finish_step, pack, rk4, FlowOptions, DEFAULT_STEP};
use crate::geometry::{ChartPoint, SurfaceModel, TangentVector, UnitTangentState};
use crate::variational::{step_count, variational_endpoint, VariationalState};

/// Time resolution of the scan grid when `n_time` is not given.
pub const DEFAULT_TIME_CELL: f64 = 0.05;
/// Jacobian determinant below which a root is flagged as a possible merger.
pub const MULTIPLICITY_DET: f64 = 1e-4;
/// Jacobian determinant below which Newton stops at a conjugate point.
pub const SINGULAR_DET: f64 = 1e-10;
/// Step halvings allowed per damped Newton update.
const MAX_HALVINGS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct CountOptions {
    pub n_angle: usize,
    /// Time cells of the scan grid; `None` uses cells of `DEFAULT_TIME_CELL`.
    pub n_time: Option<usize>,
    /// Position tolerance in chart length.
    pub tol_pos: f64,
    /// Angle half-width for merging roots; `None` is half an angle cell.
    pub dedupe_angle: Option<f64>,
    /// Time half-width for merging roots; `None` is half a time cell.
    pub dedupe_time: Option<f64>,
    pub t_min: f64,
    pub max_newton: usize,
    /// Integration step of the shooting map at accepted roots.
    pub step: f64,
    /// Integration step of the coarse scan and of the first Newton stage.
    pub scan_step: f64,
    /// Accept `x = y` (continuum-degenerate on constant-field systems).
    pub allow_coincident: bool,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self::with_step(DEFAULT_STEP)
    }
}

impl CountOptions {
    /// Defaults tied to an integration step: `t_min = 10·h`, refinement at `h`.
    pub fn with_step(h: f64) -> Self {
        Self {
            n_angle: 720,
            n_time: None,
            tol_pos: 1e-6,
            dedupe_angle: None,
            dedupe_time: None,
            t_min: 10.0 * h,
            max_newton: 12,
            step: h,
            scan_step: DEFAULT_TIME_CELL.max(h),
            allow_coincident: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_pos, self.t_min, self.step, self.scan_step];
        if self.n_angle == 0
            || self.n_time == Some(0)
            || self.max_newton == 0
            || positive.iter().any(|x| !(*x > 0.0) || !x.is_finite())
        {
            return Err(Error::Config(format!("count options must be positive: {self:?}")));
        }
        Ok(())
    }

    fn time_nodes(&self, t_end: f64) -> Vec<f64> {
        let span = t_end - self.t_min;
        let n = self
            .n_time
            .unwrap_or_else(|| ((span / DEFAULT_TIME_CELL) - 1e-9).ceil().max(1.0) as usize);
        let dt = span / n as f64;
        (0..=n).map(|j| self.t_min + j as f64 * dt).collect()
    }

    fn dedupe_radii(&self, nodes: &[f64]) -> (f64, f64) {
        let da = self.dedupe_angle.unwrap_or(0.5 * TAU / self.n_angle as f64);
        let cell = if nodes.len() > 1 { nodes[1] - nodes[0] } else { DEFAULT_TIME_CELL };
        (da, self.dedupe_time.unwrap_or(0.5 * cell))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConnectionRoot {
    pub launch_angle: f64,
    pub arrival_time: f64,
    /// g-length of the remaining displacement to the target.
    pub residual: f64,
    /// α-determinant at arrival.
    pub jacobian_det: f64,
    pub arc_length: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CountFlags {
    /// Some root has `|jacobian_det| < 1e-4`.
    pub suspected_multiplicity: bool,
    /// A quarter of the angle grid lands at one arrival time.
    pub continuum_degenerate: bool,
    pub candidates: usize,
    pub refinement_failures: usize,
    pub singular_stops: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CountResult {
    pub count: usize,
    pub roots: Vec<ConnectionRoot>,
    pub flags: CountFlags,
}

impl CountResult {
    /// Roots with arrival time at most `t`, for nested horizons.
    pub fn count_up_to(&self, t: f64) -> usize {
        self.roots.iter().filter(|r| r.arrival_time <= t).count()
    }
}

/// Endpoint of the trajectory leaving `x` at euclidean angle `angle`, after time `t`.
pub fn shoot(surface: &SurfaceModel, x: ChartPoint, angle: f64, t: f64, h: f64) -> Result<ChartPoint> {
    let theta = surface.unit_state(x, angle);
    Ok(advance(surface, theta, t, h)?.point)
}

/// Advances a state by `t` in equal steps no longer than `h`.
pub(crate) fn advance(
    surface: &SurfaceModel,
    mut state: UnitTangentState,
    t: f64,
    h: f64,
) -> Result<UnitTangentState> {
    surface.check_domain(state.point)?;
    let n = step_count(t, h)?;
    if n == 0 {
        return Ok(state);
    }
    let dt = t / n as f64;
    for _ in 0..n {
        let y = rk4(&pack(&state), dt, |y| base_rhs(surface, y))?;
        state = finish_step(surface, y, FlowOptions::default())?.0;
    }
    if surface.kind().is_torus() {
        state.point = surface.wrap(state.point)?;
    }
    Ok(state)
}

/// Number of connecting trajectories of length at most `T` from `x` to `y`.
pub fn count_connections(
    surface: &SurfaceModel,
    x: ChartPoint,
    y: ChartPoint,
    t_end: f64,
    opts: &CountOptions,
) -> Result<CountResult> {
    opts.validate()?;
    let x = surface.wrap(x)?;
    let y = surface.wrap(y)?;
    if !opts.allow_coincident && surface.displacement(x, y)?.euclidean_norm() <= opts.tol_pos {
        return Err(Error::CoincidentEndpoints);
    }
    if t_end < opts.t_min {
        return Ok(CountResult {
            count: 0,
            roots: Vec::new(),
            flags: CountFlags::default(),
        });
    }

    let nodes = opts.time_nodes(t_end);
    let n_angle = opts.n_angle;
    let angles: Vec<f64> = (0..n_angle).map(|i| TAU * i as f64 / n_angle as f64).collect();

    // images of the grid nodes, row i = angle i
    let images: Vec<Vec<ChartPoint>> = angles
        .par_iter()
        .map(|&a| scan_row(surface, x, a, &nodes, opts.scan_step))
        .collect::<Result<_>>()?;
    let residual = |i: usize, j: usize| -> f64 {
        surface
            .displacement(images[i][j], y)
            .map(|d| d.euclidean_norm())
            .unwrap_or(f64::INFINITY)
    };
    let res: Vec<Vec<f64>> = (0..n_angle)
        .map(|i| (0..nodes.len()).map(|j| residual(i, j)).collect())
        .collect();

    let mut candidates = Vec::new();
    for (i, &angle) in angles.iter().enumerate() {
        for j in 0..nodes.len() {
            if is_candidate(surface, &images, &res, i, j) {
                let guess = (angle, nodes[j]);
                candidates.push(grid_newton_guess(surface, &images, &nodes, y, i, j).unwrap_or(guess));
            }
        }
    }

    let outcomes: Vec<Result<ConnectionRoot>> = candidates
        .par_iter()
        .map(|&guess| refine_root(surface, x, y, guess, opts))
        .collect();

    let (da, dt) = opts.dedupe_radii(&nodes);
    let mut flags = CountFlags {
        candidates: candidates.len(),
        ..CountFlags::default()
    };
    let mut converged = Vec::new();
    // (angle, time) of every cell whose Newton run ended on the target
    let mut landings = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(root) => {
                landings.push((root.launch_angle, root.arrival_time));
                converged.push(root);
            }
            Err(Error::SingularJacobian {
                angle,
                time,
                residual,
                ..
            }) => {
                flags.singular_stops += 1;
                if residual <= opts.tol_pos {
                    landings.push((angle.rem_euclid(TAU), time));
                }
            }
            Err(Error::RefinementFailed { .. }) => flags.refinement_failures += 1,
            Err(e) => return Err(e),
        }
    }
    flags.continuum_degenerate = detect_continuum(&mut landings, da, dt, n_angle / 4);

    converged.retain(|r| r.arrival_time >= opts.t_min && r.arrival_time <= t_end);
    let roots = dedupe(converged, da, dt);
    flags.suspected_multiplicity = roots.iter().any(|r| r.jacobian_det.abs() < MULTIPLICITY_DET);
    Ok(CountResult {
        count: roots.len(),
        roots,
        flags,
    })
}

fn scan_row(
    surface: &SurfaceModel,
    x: ChartPoint,
    angle: f64,
    nodes: &[f64],
    h: f64,
) -> Result<Vec<ChartPoint>> {
    let mut state = surface.unit_state(x, angle);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(nodes.len());
    for &tn in nodes {
        state = advance(surface, state, tn - t, h)?;
        t = tn;
        out.push(state.point);
    }
    Ok(out)
}

/// One Newton step on the grid images, with differences standing in for the
/// jacobian columns. `None` if the step leaves the neighbouring cells.
fn grid_newton_guess(
    surface: &SurfaceModel,
    images: &[Vec<ChartPoint>],
    nodes: &[f64],
    y: ChartPoint,
    i: usize,
    j: usize,
) -> Option<(f64, f64)> {
    let n_angle = images.len();
    let da = TAU / n_angle as f64;
    let (j0, j1) = (j.saturating_sub(1), (j + 1).min(nodes.len() - 1));
    if j0 == j1 {
        return None;
    }
    let diff = |p: ChartPoint, q: ChartPoint| surface.displacement(p, q).ok();
    let col_a = diff(images[(i + n_angle - 1) % n_angle][j], images[(i + 1) % n_angle][j])? * (0.5 / da);
    let col_t = diff(images[i][j0], images[i][j1])? * (1.0 / (nodes[j1] - nodes[j0]));
    let r = diff(images[i][j], y)?;
    let det = col_a.cross(col_t);
    if det == 0.0 {
        return None;
    }
    let step_a = r.cross(col_t) / det;
    let step_t = col_a.cross(r) / det;
    let dt = nodes[j1] - nodes[j0];
    if step_a.abs() > da || step_t.abs() > dt || !(nodes[j] + step_t > 0.0) {
        return None;
    }
    Some((TAU * i as f64 / n_angle as f64 + step_a, nodes[j] + step_t))
}

/// A cell is a candidate if its residual is a (non-strict) local minimum of
/// the grid and no larger than twice the local image spacing.
fn is_candidate(
    surface: &SurfaceModel,
    images: &[Vec<ChartPoint>],
    res: &[Vec<f64>],
    i: usize,
    j: usize,
) -> bool {
    let n_angle = res.len();
    let n_time = res[i].len();
    let r = res[i][j];
    let neighbours = [n_angle - 1, 0, 1]
        .into_iter()
        .flat_map(|di| [-1i64, 0, 1].into_iter().map(move |dj| (di, dj)))
        .filter(|&(di, dj)| !(di == 0 && dj == 0))
        .filter_map(|(di, dj)| {
            let jj = j as i64 + dj;
            (0..n_time as i64).contains(&jj).then(|| ((i + di) % n_angle, jj as usize))
        });
    if neighbours.clone().any(|(ii, jj)| r > res[ii][jj] * (1.0 + 1e-9) + 1e-13) {
        return false;
    }
    let spacing = neighbours
        .filter_map(|(ii, jj)| surface.displacement(images[i][j], images[ii][jj]).ok())
        .map(|d| d.euclidean_norm())
        .fold(0.0, f64::max);
    r <= 2.0 * spacing
}

struct Probe {
    residual_vec: TangentVector,
    residual: f64,
    state: VariationalState,
}

fn probe(surface: &SurfaceModel, x: ChartPoint, y: ChartPoint, angle: f64, t: f64, h: f64) -> Result<Probe> {
    let theta = surface.unit_state(x, angle);
    let state = variational_endpoint(surface, &theta, t, h)?;
    let residual_vec = surface.displacement(state.base.point, y)?;
    Ok(Probe {
        residual_vec,
        residual: residual_vec.euclidean_norm(),
        state,
    })
}

/// Damped Newton on `f(angle, t) = y`.
///
/// Iterates first with the coarse `scan_step` integrator, then finishes with
/// `step`; the returned residual and determinant are those of the fine
/// shooting map. Errors with `SingularJacobian` at a conjugate point and
/// `RefinementFailed` when no step halving reduces the residual.
pub fn refine_root(
    surface: &SurfaceModel,
    x: ChartPoint,
    y: ChartPoint,
    guess: (f64, f64),
    opts: &CountOptions,
) -> Result<ConnectionRoot> {
    let mut iterations = 0;
    let mut at = guess;
    if opts.scan_step > opts.step {
        match newton(surface, x, y, at, opts.scan_step, opts.tol_pos, opts.max_newton) {
            Ok((p, n, _)) => {
                at = p;
                iterations += n;
            }
            // the coarse stage only supplies a better guess
            Err(Error::RefinementFailed { .. }) | Err(Error::SingularJacobian { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let budget = opts.max_newton.saturating_sub(iterations).max(2);
    let ((angle, t), n, pr) = newton(surface, x, y, at, opts.step, opts.tol_pos, budget)?;
    iterations += n;
    let f = surface.conformal_factor(y)?.sqrt();
    Ok(ConnectionRoot {
        launch_angle: angle.rem_euclid(TAU),
        arrival_time: t,
        residual: f * pr.residual,
        jacobian_det: pr.state.alpha_determinant(surface),
        arc_length: t,
        newton_iterations: iterations,
    })
}

fn newton(
    surface: &SurfaceModel,
    x: ChartPoint,
    y: ChartPoint,
    start: (f64, f64),
    h: f64,
    tol: f64,
    max_iter: usize,
) -> Result<((f64, f64), usize, Probe)> {
    let (mut a, mut t) = start;
    if !(t > 0.0) {
        return Err(Error::RefinementFailed {
            residual: f64::INFINITY,
            iterations: 0,
        });
    }
    let gfac = surface.conformal_factor(y)?.sqrt();
    let mut cur = probe(surface, x, y, a, t, h)?;
    for it in 0..=max_iter {
        let det = cur.state.alpha_determinant(surface);
        if det.abs() < SINGULAR_DET {
            return Err(Error::SingularJacobian {
                det,
                angle: a,
                time: t,
                residual: cur.residual,
            });
        }
        if cur.residual.max(gfac * cur.residual) < tol {
            return Ok(((a, t), it, cur));
        }
        if it == max_iter {
            break;
        }
        // columns: ∂f/∂angle = δx, ∂f/∂t = γ̇
        let jx = cur.state.delta_x;
        let jt = cur.state.base.velocity;
        let r = cur.residual_vec;
        let chart_det = jx.cross(jt);
        let da = r.cross(jt) / chart_det;
        let dtime = jx.cross(r) / chart_det;
        let mut accepted = None;
        let mut mu = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let (na, nt) = (a + mu * da, t + mu * dtime);
            if nt > 0.0 && nt.is_finite() && na.is_finite() {
                let trial = probe(surface, x, y, na, nt, h)?;
                if trial.residual < cur.residual {
                    accepted = Some((na, nt, trial));
                    break;
                }
            }
            mu *= 0.5;
        }
        match accepted {
            Some((na, nt, trial)) => {
                a = na;
                t = nt;
                cur = trial;
            }
            None => {
                return Err(Error::RefinementFailed {
                    residual: cur.residual,
                    iterations: it,
                })
            }
        }
    }
    Err(Error::RefinementFailed {
        residual: cur.residual,
        iterations: max_iter,
    })
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Merges roots closer than the dedupe radii, scanning in `(angle, t)` order.
fn dedupe(mut roots: Vec<ConnectionRoot>, da: f64, dt: f64) -> Vec<ConnectionRoot> {
    roots.sort_by(|p, q| {
        p.launch_angle
            .total_cmp(&q.launch_angle)
            .then(p.arrival_time.total_cmp(&q.arrival_time))
    });
    let mut kept: Vec<ConnectionRoot> = Vec::with_capacity(roots.len());
    for r in roots {
        let dup = kept.iter().any(|k| {
            angle_gap(k.launch_angle, r.launch_angle) <= da && (k.arrival_time - r.arrival_time).abs() <= dt
        });
        if !dup {
            kept.push(r);
        }
    }
    kept
}

/// True if some arrival-time cluster holds at least `threshold` distinct angles.
fn detect_continuum(landings: &mut [(f64, f64)], da: f64, dt: f64, threshold: usize) -> bool {
    if threshold == 0 || landings.len() < threshold {
        return false;
    }
    landings.sort_by(|p, q| p.1.total_cmp(&q.1).then(p.0.total_cmp(&q.0)));
    let mut start = 0;
    while start < landings.len() {
        let t0 = landings[start].1;
        let mut end = start;
        while end < landings.len() && landings[end].1 - t0 <= dt {
            end += 1;
        }
        let mut angles: Vec<f64> = landings[start..end].iter().map(|l| l.0).collect();
        angles.sort_by(f64::total_cmp);
        let mut distinct = 0;
        let mut last = f64::NEG_INFINITY;
        for a in angles {
            if a - last > da {
                distinct += 1;
                last = a;
            }
        }
        if distinct >= threshold {
            return true;
        }
        start = end;
    }
    false
}
