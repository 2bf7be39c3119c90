//! Linearized flow along a trajectory and the determinant of
//! `d(π∘φ_t)` restricted to `α(θ) = V(θ) ⊕ ⟨X(θ)⟩`.
//!
//! Only the vertical variation is integrated. The image of `X(θ)` under
//! `dπ∘dφ_t` is `γ̇(t)` identically, so it is read off the base trajectory.
//! The domain basis {unit vertical, X} is treated as orthonormal (product
//! metric on `S_xM × [0, T]`), which makes the determinant the oriented
//! g-area `dA_g(γ̇(t), J(t))` spanned at `γ(t)` by the velocity and the
//! projected vertical variation `J = δx`.

use serde::Serialize;

use crate::error::{Error, IntegrationFailure, Result};
use crate::estimators::{fit_growth, GrowthEstimate, DEFAULT_WINDOW_FRACTION};
use crate::flow::{base_rhs, rk4, time_grid, FlowOptions, TrajectorySample};
use crate::geometry::{rotate90, ChartPoint, SurfaceModel, TangentVector, UnitTangentState};

/// `log|det|` samples below this floor are excluded from growth fits.
pub const DET_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationalState {
    pub base: UnitTangentState,
    pub delta_x: TangentVector,
    pub delta_v: TangentVector,
}

impl VariationalState {
    /// Base state with the unit vertical variation `δx = 0`, `δv = i_g v`.
    pub fn vertical(base: UnitTangentState) -> Self {
        Self {
            base,
            delta_x: TangentVector::default(),
            delta_v: rotate90(base.velocity),
        }
    }

    /// The α-determinant `dA_g(γ̇, δx)` at the base point.
    pub fn alpha_determinant(&self, surface: &SurfaceModel) -> f64 {
        let lambda = surface.lambda_value(self.base.point);
        (2.0 * lambda).exp() * self.base.velocity.cross(self.delta_x)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VariationalPath {
    pub times: Vec<f64>,
    pub states: Vec<VariationalState>,
    pub energy_drift: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DeterminantTrace {
    pub times: Vec<f64>,
    /// Signed α-determinant; integrals use the absolute value.
    pub det_values: Vec<f64>,
    pub trajectory: TrajectorySample,
}

/// Integrates `(θ, δθ)` from the unit vertical variation over `[0, T]`.
pub fn variational_flow(
    surface: &SurfaceModel,
    theta0: &UnitTangentState,
    t_end: f64,
    h: f64,
) -> Result<VariationalPath> {
    variational_flow_with(surface, theta0, t_end, h, FlowOptions::default())
}

pub fn variational_flow_with(
    surface: &SurfaceModel,
    theta0: &UnitTangentState,
    t_end: f64,
    h: f64,
    opts: FlowOptions,
) -> Result<VariationalPath> {
    surface.check_domain(theta0.point)?;
    let grid = time_grid(t_end, h)?;
    let mut state = VariationalState::vertical(*theta0);
    let mut out = VariationalPath {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        energy_drift: 0.0,
    };
    out.times.push(0.0);
    out.states.push(state);
    for w in grid.windows(2) {
        match variational_step(surface, &state, w[1] - w[0], opts) {
            Ok((next, dev)) => {
                out.energy_drift = out.energy_drift.max(dev);
                state = next;
                out.times.push(w[1]);
                out.states.push(state);
            }
            Err(Error::Domain(_)) => {
                let partial = TrajectorySample {
                    times: out.times.clone(),
                    states: out.states.iter().map(|s| s.base).collect(),
                    energy_drift: out.energy_drift,
                };
                return Err(Error::Integration(Box::new(IntegrationFailure {
                    time: w[0],
                    partial,
                })));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Final variational state at time `t`, without storing the path.
pub fn variational_endpoint(
    surface: &SurfaceModel,
    theta0: &UnitTangentState,
    t_end: f64,
    h: f64,
) -> Result<VariationalState> {
    let n = step_count(t_end, h)?;
    let mut state = VariationalState::vertical(*theta0);
    if n == 0 {
        return Ok(state);
    }
    let dt = t_end / n as f64;
    for _ in 0..n {
        state = variational_step(surface, &state, dt, FlowOptions::default())?.0;
    }
    Ok(state)
}

/// Number of equal steps no longer than `h` covering `[0, t]`.
pub(crate) fn step_count(t: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Config(format!("invalid integration span t = {t}, h = {h}")));
    }
    Ok((t / h - 1e-9).ceil().max(0.0) as usize)
}

pub fn alpha_determinant_along(
    surface: &SurfaceModel,
    theta0: &UnitTangentState,
    t_end: f64,
    h: f64,
) -> Result<DeterminantTrace> {
    let path = variational_flow(surface, theta0, t_end, h)?;
    let det_values = path.states.iter().map(|s| s.alpha_determinant(surface)).collect();
    Ok(DeterminantTrace {
        trajectory: TrajectorySample {
            times: path.times.clone(),
            states: path.states.iter().map(|s| s.base).collect(),
            energy_drift: path.energy_drift,
        },
        times: path.times,
        det_values,
    })
}

/// Least-squares slope of `log|det(t)|` over the tail half of `[0, T]`.
pub fn log_det_growth(
    surface: &SurfaceModel,
    theta0: &UnitTangentState,
    t_end: f64,
    h: f64,
) -> Result<GrowthEstimate> {
    let trace = alpha_determinant_along(surface, theta0, t_end, h)?;
    let abs: Vec<f64> = trace.det_values.iter().map(|d| d.abs()).collect();
    fit_growth(&trace.times, &abs, DEFAULT_WINDOW_FRACTION, Some(DET_FLOOR))
}

/// One RK4 step of the coupled system, followed by the same projection as
/// the base flow (and its derivative applied to the variation).
pub(crate) fn variational_step(
    surface: &SurfaceModel,
    state: &VariationalState,
    h: f64,
    opts: FlowOptions,
) -> Result<(VariationalState, f64)> {
    let y0 = pack8(state);
    let mut y = rk4(&y0, h, |y| coupled_rhs(surface, y))?;
    let p = ChartPoint::new(y[0], y[1]);
    surface.check_domain(p)?;
    let el = surface.lambda_value(p).exp();
    let g = surface.lambda_grad(p).1;
    let vnorm = (y[2] * y[2] + y[3] * y[3]).sqrt();
    let speed = el * vnorm;
    let deviation = (speed - 1.0).abs();
    if opts.renormalize {
        // N(x, v) = v / n, n = e^λ |v|:  δN = δv/n − v δn/n²
        let dn = speed * (g[0] * y[4] + g[1] * y[5]) + el * (y[2] * y[6] + y[3] * y[7]) / vnorm;
        let (vu, vv) = (y[2], y[3]);
        y[6] = y[6] / speed - vu * dn / (speed * speed);
        y[7] = y[7] / speed - vv * dn / (speed * speed);
        y[2] = vu / speed;
        y[3] = vv / speed;
    }
    let mut next = unpack8(&y);
    if surface.kind().is_torus() {
        next.base.point = surface.wrap(next.base.point)?;
    }
    Ok((next, deviation))
}

fn pack8(s: &VariationalState) -> [f64; 8] {
    [
        s.base.point.u,
        s.base.point.v,
        s.base.velocity.du,
        s.base.velocity.dv,
        s.delta_x.du,
        s.delta_x.dv,
        s.delta_v.du,
        s.delta_v.dv,
    ]
}

fn unpack8(y: &[f64; 8]) -> VariationalState {
    VariationalState {
        base: UnitTangentState::new(ChartPoint::new(y[0], y[1]), TangentVector::new(y[2], y[3])),
        delta_x: TangentVector::new(y[4], y[5]),
        delta_v: TangentVector::new(y[6], y[7]),
    }
}

/// Base right-hand side plus its exact Jacobian applied to `(δx, δv)`.
///
/// With `F(x, v) = −2 (∇λ·v) v + |v|² ∇λ + s b R v`:
///   `∂_x F δx = −2 (Hδx·v) v + |v|² Hδx + s (∇b·δx) R v`
///   `∂_v F δv = −2 (∇λ·δv) v − 2 (∇λ·v) δv + 2 (v·δv) ∇λ + s b R δv`
fn coupled_rhs(surface: &SurfaceModel, y: &[f64; 8]) -> Result<[f64; 8]> {
    let base = base_rhs(surface, &[y[0], y[1], y[2], y[3]])?;
    let p = ChartPoint::new(y[0], y[1]);
    let jet = surface.lambda_jet(p);
    let (g, hs) = (jet.grad, jet.hess);
    let profile = surface.field_profile();
    let s = surface.field_strength();
    let (b, gb) = profile.value_grad(p.u, p.v);

    let (vu, vv) = (y[2], y[3]);
    let (xu, xv) = (y[4], y[5]);
    let (wu, wv) = (y[6], y[7]);

    let hx = [hs[0][0] * xu + hs[0][1] * xv, hs[1][0] * xu + hs[1][1] * xv];
    let hxv = hx[0] * vu + hx[1] * vv;
    let v2 = vu * vu + vv * vv;
    let bx = s * (gb[0] * xu + gb[1] * xv);
    let gv = g[0] * vu + g[1] * vv;
    let gw = g[0] * wu + g[1] * wv;
    let vw = vu * wu + vv * wv;
    let sb = s * b;

    let dvu = -2.0 * hxv * vu + v2 * hx[0] - bx * vv - 2.0 * gw * vu - 2.0 * gv * wu
        + 2.0 * vw * g[0]
        - sb * wv;
    let dvv = -2.0 * hxv * vv + v2 * hx[1] + bx * vu - 2.0 * gw * vv - 2.0 * gv * wv
        + 2.0 * vw * g[1]
        + sb * wu;

    Ok([base[0], base[1], base[2], base[3], wu, wv, dvu, dvv])
}
