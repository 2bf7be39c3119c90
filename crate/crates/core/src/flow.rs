//! The magnetic geodesic flow `D/dt γ̇ = Y(γ̇)` on the unit tangent bundle.
//!
//! Integration is classical fixed-step RK4 in chart coordinates. By default
//! the velocity is projected back onto `|v|_g = 1` after every step; the
//! deviation before projection is recorded as the energy drift.

use serde::Serialize;

use crate::error::{Error, IntegrationFailure, Result};
use crate::geometry::{rotate90, ChartPoint, SurfaceModel, TangentVector, UnitTangentState};

/// Default integration step.
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Rescale the velocity to unit g-speed after each step.
    pub renormalize: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { renormalize: true }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrajectorySample {
    pub times: Vec<f64>,
    pub states: Vec<UnitTangentState>,
    /// Largest `| |v|_g − 1 |` seen after a step, before any renormalization.
    pub energy_drift: f64,
}

impl TrajectorySample {
    pub fn final_state(&self) -> UnitTangentState {
        *self.states.last().expect("trajectory always holds the initial state")
    }
}

/// `(ẋ, v̇)` with `ẋ = v` and `v̇^k = −Γ^k_ij v^i v^j + s·b(x)·(i_g v)^k`.
pub fn vector_field(
    surface: &SurfaceModel,
    state: &UnitTangentState,
) -> Result<(TangentVector, TangentVector)> {
    let d = base_rhs(surface, &pack(state))?;
    Ok((TangentVector::new(d[0], d[1]), TangentVector::new(d[2], d[3])))
}

/// `|v|_g`, so that `2H = energy²`.
pub fn energy(surface: &SurfaceModel, state: &UnitTangentState) -> f64 {
    let lambda = surface.lambda_value(state.point);
    lambda.exp() * state.velocity.euclidean_norm()
}

/// One RK4 step with default options (renormalized, torus points wrapped).
pub fn step(surface: &SurfaceModel, state: &UnitTangentState, h: f64) -> Result<UnitTangentState> {
    step_with(surface, state, h, FlowOptions::default()).map(|(s, _)| s)
}

/// One RK4 step; also returns `| |v|_g − 1 |` measured before renormalization.
pub fn step_with(
    surface: &SurfaceModel,
    state: &UnitTangentState,
    h: f64,
    opts: FlowOptions,
) -> Result<(UnitTangentState, f64)> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let y = rk4(&pack(state), h, |y| base_rhs(surface, y))?;
    let (next, deviation) = finish_step(surface, y, opts)?;
    Ok((next, deviation))
}

/// States at `0, h, 2h, …, T`, the last step shortened to land on `T`.
pub fn flow(
    surface: &SurfaceModel,
    theta0: &UnitTangentState,
    t_end: f64,
    h: f64,
) -> Result<TrajectorySample> {
    flow_with(surface, theta0, t_end, h, FlowOptions::default())
}

pub fn flow_with(
    surface: &SurfaceModel,
    theta0: &UnitTangentState,
    t_end: f64,
    h: f64,
    opts: FlowOptions,
) -> Result<TrajectorySample> {
    surface.check_domain(theta0.point)?;
    let grid = time_grid(t_end, h)?;
    let mut out = TrajectorySample {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        energy_drift: 0.0,
    };
    out.times.push(0.0);
    out.states.push(*theta0);
    let mut state = *theta0;
    for w in grid.windows(2) {
        match step_with(surface, &state, w[1] - w[0], opts) {
            Ok((next, dev)) => {
                out.energy_drift = out.energy_drift.max(dev);
                state = next;
                out.times.push(w[1]);
                out.states.push(state);
            }
            Err(Error::Domain(_)) => {
                return Err(Error::Integration(Box::new(IntegrationFailure {
                    time: w[0],
                    partial: out,
                })))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Sample times `0, h, …, T`; a trailing step shorter than `1e-9·h` is merged.
pub fn time_grid(t_end: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Config(format!("final time must be nonnegative, got {t_end}")));
    }
    let full = (t_end / h).floor() as usize;
    let mut grid: Vec<f64> = (0..=full).map(|k| k as f64 * h).collect();
    let last = *grid.last().unwrap();
    if t_end - last > 1e-9 * h {
        grid.push(t_end);
    } else if let Some(l) = grid.last_mut() {
        if full > 0 {
            *l = t_end;
        }
    }
    Ok(grid)
}

pub(crate) fn pack(state: &UnitTangentState) -> [f64; 4] {
    [
        state.point.u,
        state.point.v,
        state.velocity.du,
        state.velocity.dv,
    ]
}

pub(crate) fn unpack(y: &[f64]) -> UnitTangentState {
    UnitTangentState::new(ChartPoint::new(y[0], y[1]), TangentVector::new(y[2], y[3]))
}

/// Right-hand side on `(u, v, du, dv)`. For `g = e^{2λ}δ` the geodesic
/// term `Γ^k_ij v^i v^j` equals `2 (∇λ·v) v^k − |v|² ∂_k λ`.
pub(crate) fn base_rhs(surface: &SurfaceModel, y: &[f64; 4]) -> Result<[f64; 4]> {
    let p = ChartPoint::new(y[0], y[1]);
    surface.check_domain(p)?;
    let (vu, vv) = (y[2], y[3]);
    let (_, g) = surface.lambda_grad(p);
    let lv = g[0] * vu + g[1] * vv;
    let v2 = vu * vu + vv * vv;
    let sb = surface.field_strength() * surface.field_profile().value(p.u, p.v);
    Ok([
        vu,
        vv,
        -2.0 * lv * vu + v2 * g[0] - sb * vv,
        -2.0 * lv * vv + v2 * g[1] + sb * vu,
    ])
}

/// Classical RK4 on a fixed-size state.
pub(crate) fn rk4<const N: usize>(
    y: &[f64; N],
    h: f64,
    mut f: impl FnMut(&[f64; N]) -> Result<[f64; N]>,
) -> Result<[f64; N]> {
    let axpy = |a: &[f64; N], k: &[f64; N], s: f64| {
        let mut out = *a;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += s * ki;
        }
        out
    };
    let k1 = f(y)?;
    let k2 = f(&axpy(y, &k1, 0.5 * h))?;
    let k3 = f(&axpy(y, &k2, 0.5 * h))?;
    let k4 = f(&axpy(y, &k3, h))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Domain check, optional renormalization and torus wrapping after a step.
/// Returns the state and the pre-projection speed deviation.
pub(crate) fn finish_step(
    surface: &SurfaceModel,
    mut y: [f64; 4],
    opts: FlowOptions,
) -> Result<(UnitTangentState, f64)> {
    let p = ChartPoint::new(y[0], y[1]);
    surface.check_domain(p)?;
    let speed = surface.lambda_value(p).exp() * (y[2] * y[2] + y[3] * y[3]).sqrt();
    let deviation = (speed - 1.0).abs();
    if opts.renormalize {
        y[2] /= speed;
        y[3] /= speed;
    }
    let mut state = unpack(&y);
    if surface.kind().is_torus() {
        state.point = surface.wrap(state.point)?;
    }
    Ok((state, deviation))
}

/// Lorentz force `Y(w) = s·b(x)·i_g w`.
pub fn lorentz_force(surface: &SurfaceModel, p: ChartPoint, w: TangentVector) -> Result<TangentVector> {
    surface.check_domain(p)?;
    let sb = surface.field_strength() * surface.field_profile().value(p.u, p.v);
    Ok(rotate90(w) * sb)
}
