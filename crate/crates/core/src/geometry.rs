//! Surfaces in conformal charts.
//!
//! Every model metric has the form `g = e^{2λ} (du² + dv²)`. Conformality
//! makes the metric rotation by +90° the euclidean rotation of chart
//! components, and reduces the Christoffel symbols to first derivatives of λ.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Jet, ScalarField};

/// Points per side of the tensor grid used for area quadrature and for the
/// rejection-sampling bound on non-constant conformal factors. The integrand
/// is smooth and periodic, so the midpoint rule converges spectrally.
pub const AREA_GRID: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    FlatTorus,
    HyperbolicPlane,
    ConformalTorus,
}

impl SurfaceKind {
    pub fn is_torus(self) -> bool {
        !matches!(self, SurfaceKind::HyperbolicPlane)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ChartPoint {
    pub u: f64,
    pub v: f64,
}

impl ChartPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn offset(self, w: TangentVector) -> Self {
        Self::new(self.u + w.du, self.v + w.dv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TangentVector {
    pub du: f64,
    pub dv: f64,
}

impl TangentVector {
    pub const fn new(du: f64, dv: f64) -> Self {
        Self { du, dv }
    }

    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, other: Self) -> f64 {
        self.du * other.du + self.dv * other.dv
    }

    /// Euclidean `self × other` (signed chart area).
    pub fn cross(self, other: Self) -> f64 {
        self.du * other.dv - self.dv * other.du
    }

    pub fn euclidean_norm(self) -> f64 {
        self.du.hypot(self.dv)
    }

    pub fn is_finite(self) -> bool {
        self.du.is_finite() && self.dv.is_finite()
    }
}

impl Add for TangentVector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.du + o.du, self.dv + o.dv)
    }
}

impl Sub for TangentVector {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.du - o.du, self.dv - o.dv)
    }
}

impl Neg for TangentVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.du, -self.dv)
    }
}

impl Mul<f64> for TangentVector {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.du * k, self.dv * k)
    }
}

/// A point of the unit tangent bundle: base point and g-unit velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UnitTangentState {
    pub point: ChartPoint,
    pub velocity: TangentVector,
}

impl UnitTangentState {
    pub const fn new(point: ChartPoint, velocity: TangentVector) -> Self {
        Self { point, velocity }
    }
}

/// Christoffel symbols indexed `[k][i][j]` for `Γ^k_{ij}`.
pub type Christoffel = [[[f64; 2]; 2]; 2];

#[derive(Debug, Clone)]
enum ConformalExponent {
    Zero,
    HalfPlane,
    Field(ScalarField),
}

/// A model surface together with its magnetic field `Ω = s·b·dA_g`.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    kind: SurfaceKind,
    periods: (f64, f64),
    lambda: ConformalExponent,
    field_profile: ScalarField,
    field_strength: f64,
    area: f64,
    factor_bound: f64,
}

impl SurfaceModel {
    pub fn flat_torus(lx: f64, ly: f64) -> Result<Self> {
        check_periods(lx, ly)?;
        Ok(Self {
            kind: SurfaceKind::FlatTorus,
            periods: (lx, ly),
            lambda: ConformalExponent::Zero,
            field_profile: ScalarField::constant(1.0),
            field_strength: 0.0,
            area: lx * ly,
            factor_bound: 1.0,
        })
    }

    /// Upper half-plane `v > 0` with `λ = −log v` (curvature −1).
    pub fn hyperbolic_plane() -> Self {
        Self {
            kind: SurfaceKind::HyperbolicPlane,
            periods: (f64::INFINITY, f64::INFINITY),
            lambda: ConformalExponent::HalfPlane,
            field_profile: ScalarField::constant(1.0),
            field_strength: 0.0,
            area: f64::INFINITY,
            factor_bound: f64::INFINITY,
        }
    }

    pub fn conformal_torus(lx: f64, ly: f64, lambda: ScalarField) -> Result<Self> {
        check_periods(lx, ly)?;
        let (area, factor_bound) = match lambda.as_constant() {
            Some(c) => {
                let f = (2.0 * c).exp();
                (f * lx * ly, f)
            }
            None => grid_area_and_bound(&lambda, lx, ly),
        };
        if !area.is_finite() || area <= 0.0 {
            return Err(Error::Config(format!(
                "conformal factor of `{}` does not integrate to a finite positive area",
                lambda.source()
            )));
        }
        Ok(Self {
            kind: SurfaceKind::ConformalTorus,
            periods: (lx, ly),
            lambda: ConformalExponent::Field(lambda),
            field_profile: ScalarField::constant(1.0),
            field_strength: 0.0,
            area,
            factor_bound,
        })
    }

    /// Replaces the magnetic field with `s·b(x)·dA_g`.
    pub fn with_field(mut self, profile: ScalarField, strength: f64) -> Self {
        self.field_profile = profile;
        self.field_strength = strength;
        self
    }

    pub fn with_constant_field(self, strength: f64) -> Self {
        self.with_field(ScalarField::constant(1.0), strength)
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn periods(&self) -> (f64, f64) {
        self.periods
    }

    pub fn field_strength(&self) -> f64 {
        self.field_strength
    }

    pub fn field_profile(&self) -> &ScalarField {
        &self.field_profile
    }

    pub fn lambda_source(&self) -> String {
        match &self.lambda {
            ConformalExponent::Zero => "0".into(),
            ConformalExponent::HalfPlane => "-log(v)".into(),
            ConformalExponent::Field(f) => f.source().into(),
        }
    }

    /// Short human-readable identifier used in reports.
    pub fn describe(&self) -> String {
        let kind = match self.kind {
            SurfaceKind::FlatTorus => "flat_torus",
            SurfaceKind::HyperbolicPlane => "hyperbolic_plane",
            SurfaceKind::ConformalTorus => "conformal_torus",
        };
        let mut s = kind.to_string();
        if self.kind.is_torus() {
            s += &format!(" Lx={} Ly={}", self.periods.0, self.periods.1);
        }
        if self.kind == SurfaceKind::ConformalTorus {
            s += &format!(" lambda={}", self.lambda_source());
        }
        s += &format!(" b={} s={}", self.field_profile.source(), self.field_strength);
        s
    }

    pub fn check_domain(&self, p: ChartPoint) -> Result<()> {
        let ok = p.u.is_finite()
            && p.v.is_finite()
            && (self.kind != SurfaceKind::HyperbolicPlane || p.v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(p))
        }
    }

    /// `λ` and its gradient; the domain is assumed checked.
    pub(crate) fn lambda_grad(&self, p: ChartPoint) -> (f64, [f64; 2]) {
        match &self.lambda {
            ConformalExponent::Zero => (0.0, [0.0; 2]),
            ConformalExponent::HalfPlane => (-p.v.ln(), [0.0, -1.0 / p.v]),
            ConformalExponent::Field(f) => f.value_grad(p.u, p.v),
        }
    }

    pub(crate) fn lambda_value(&self, p: ChartPoint) -> f64 {
        match &self.lambda {
            ConformalExponent::Zero => 0.0,
            ConformalExponent::HalfPlane => -p.v.ln(),
            ConformalExponent::Field(f) => f.value(p.u, p.v),
        }
    }

    pub(crate) fn lambda_jet(&self, p: ChartPoint) -> Jet {
        match &self.lambda {
            ConformalExponent::Zero => Jet::default(),
            ConformalExponent::HalfPlane => Jet {
                value: -p.v.ln(),
                grad: [0.0, -1.0 / p.v],
                hess: [[0.0, 0.0], [0.0, 1.0 / (p.v * p.v)]],
            },
            ConformalExponent::Field(f) => f.jet(p.u, p.v),
        }
    }

    pub(crate) fn lambda_is_zero(&self) -> bool {
        matches!(self.lambda, ConformalExponent::Zero)
    }

    /// `e^{2λ(p)}`.
    pub fn conformal_factor(&self, p: ChartPoint) -> Result<f64> {
        self.check_domain(p)?;
        Ok((2.0 * self.lambda_value(p)).exp())
    }

    pub fn christoffel(&self, p: ChartPoint) -> Result<Christoffel> {
        self.check_domain(p)?;
        let (_, g) = self.lambda_grad(p);
        Ok(christoffel_from_gradient(g))
    }

    /// Metric rotation by +90°: `(du, dv) ↦ (−dv, du)`.
    pub fn rotate90(&self, p: ChartPoint, w: TangentVector) -> Result<TangentVector> {
        self.check_domain(p)?;
        Ok(rotate90(w))
    }

    /// `|w|_g` at `p`.
    pub fn norm(&self, p: ChartPoint, w: TangentVector) -> Result<f64> {
        self.check_domain(p)?;
        Ok(self.lambda_value(p).exp() * w.euclidean_norm())
    }

    /// Oriented g-area `dA_g(a, b)` at `p`.
    pub fn area_form(&self, p: ChartPoint, a: TangentVector, b: TangentVector) -> Result<f64> {
        Ok(self.conformal_factor(p)? * a.cross(b))
    }

    pub fn wrap(&self, p: ChartPoint) -> Result<ChartPoint> {
        let (lx, ly) = self.torus_periods("wrap")?;
        Ok(ChartPoint::new(wrap_coord(p.u, lx), wrap_coord(p.v, ly)))
    }

    /// Shortest chart difference `q − p`, each component in `(−L/2, L/2]`.
    pub fn displacement(&self, p: ChartPoint, q: ChartPoint) -> Result<TangentVector> {
        let (lx, ly) = self.torus_periods("displacement")?;
        Ok(TangentVector::new(
            wrap_half(q.u - p.u, lx),
            wrap_half(q.v - p.v, ly),
        ))
    }

    pub fn area(&self) -> Result<f64> {
        self.torus_periods("area")?;
        Ok(self.area)
    }

    /// Liouville volume `2π·area` of the unit tangent bundle.
    pub fn liouville_volume(&self) -> Result<f64> {
        Ok(2.0 * PI * self.area()?)
    }

    /// Draws `θ` from the normalized Liouville measure: base point by
    /// rejection against `sup e^{2λ}`, direction uniform.
    pub fn sample_unit_tangent<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<UnitTangentState> {
        let point = self.sample_point(rng)?;
        let angle = rng.random::<f64>() * 2.0 * PI;
        Ok(self.unit_state(point, angle))
    }

    /// Area-uniform base point.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ChartPoint> {
        let (lx, ly) = self.torus_periods("sample_unit_tangent")?;
        if !self.factor_bound.is_finite() || self.factor_bound <= 0.0 {
            return Err(Error::Config("rejection bound for the conformal factor is not finite".into()));
        }
        loop {
            let p = ChartPoint::new(rng.random::<f64>() * lx, rng.random::<f64>() * ly);
            if self.lambda_is_zero() {
                return Ok(p);
            }
            let accept = (2.0 * self.lambda_value(p)).exp() / self.factor_bound;
            if rng.random::<f64>() < accept {
                return Ok(p);
            }
        }
    }

    /// The g-unit vector at `p` making euclidean angle `angle` with the u-axis.
    pub fn unit_state(&self, point: ChartPoint, angle: f64) -> UnitTangentState {
        let scale = (-self.lambda_value(point)).exp();
        UnitTangentState::new(point, TangentVector::from_angle(angle) * scale)
    }

    fn torus_periods(&self, op: &'static str) -> Result<(f64, f64)> {
        if self.kind.is_torus() {
            Ok(self.periods)
        } else {
            Err(Error::Unsupported { op, kind: self.kind })
        }
    }
}

pub fn rotate90(w: TangentVector) -> TangentVector {
    TangentVector::new(-w.dv, w.du)
}

/// `Γ^k_{ij} = δ_{ik} λ_j + δ_{jk} λ_i − δ_{ij} λ_k` for `g = e^{2λ}·δ`.
pub fn christoffel_from_gradient(g: [f64; 2]) -> Christoffel {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut out = [[[0.0; 2]; 2]; 2];
    for (k, gk) in out.iter_mut().enumerate() {
        for (i, gki) in gk.iter_mut().enumerate() {
            for (j, v) in gki.iter_mut().enumerate() {
                *v = d(i, k) * g[j] + d(j, k) * g[i] - d(i, j) * g[k];
            }
        }
    }
    out
}

fn check_periods(lx: f64, ly: f64) -> Result<()> {
    if lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("torus periods must be positive, got Lx={lx}, Ly={ly}")))
    }
}

fn wrap_coord(x: f64, l: f64) -> f64 {
    if (0.0..l).contains(&x) {
        return x;
    }
    let r = x.rem_euclid(l);
    // rem_euclid can round up to exactly l for tiny negative inputs
    if r >= l {
        0.0
    } else {
        r
    }
}

fn wrap_half(d: f64, l: f64) -> f64 {
    if d > -0.5 * l && d <= 0.5 * l {
        return d;
    }
    let r = d - l * (d / l).round();
    if r <= -0.5 * l {
        r + l
    } else if r > 0.5 * l {
        r - l
    } else {
        r
    }
}

/// Midpoint-rule area and a rejection bound for `e^{2λ}`.
///
/// The bound adds the largest sampled gradient (with 50% slack) times half a
/// cell diagonal to the grid maximum of λ, so it dominates between nodes.
fn grid_area_and_bound(lambda: &ScalarField, lx: f64, ly: f64) -> (f64, f64) {
    let n = AREA_GRID;
    let (du, dv) = (lx / n as f64, ly / n as f64);
    let mut sum = 0.0;
    let mut max_lambda = f64::NEG_INFINITY;
    let mut max_grad: f64 = 0.0;
    for i in 0..n {
        let u = (i as f64 + 0.5) * du;
        for j in 0..n {
            let v = (j as f64 + 0.5) * dv;
            let l = lambda.value(u, v);
            sum += (2.0 * l).exp();
            max_lambda = max_lambda.max(l);
            let g = lambda.grad(u, v);
            max_grad = max_grad.max(g[0].hypot(g[1]));
        }
    }
    let half_diag = 0.5 * du.hypot(dv);
    let bound = (2.0 * (max_lambda + 1.5 * max_grad * half_diag)).exp();
    (sum * du * dv, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_flat() -> SurfaceModel {
        SurfaceModel::flat_torus(1.0, 1.0).unwrap()
    }

    fn wavy() -> SurfaceModel {
        SurfaceModel::conformal_torus(
            1.0,
            1.0,
            ScalarField::parse("0.1*sin(2*pi*u)*cos(2*pi*v)").unwrap(),
        )
        .unwrap()
    }

    fn const_lambda(c: f64) -> SurfaceModel {
        SurfaceModel::conformal_torus(1.0, 1.0, ScalarField::constant(c)).unwrap()
    }

    #[test]
    fn conformal_factor_examples() {
        assert_eq!(unit_flat().conformal_factor(ChartPoint::new(0.3, 0.7)).unwrap(), 1.0);
        let h = SurfaceModel::hyperbolic_plane();
        assert_abs_diff_eq!(h.conformal_factor(ChartPoint::new(0.0, 2.0)).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(
            const_lambda(2f64.ln()).conformal_factor(ChartPoint::new(0.1, 0.2)).unwrap(),
            4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn half_plane_rejects_lower_points() {
        let h = SurfaceModel::hyperbolic_plane();
        assert!(matches!(h.conformal_factor(ChartPoint::new(0.0, 0.0)), Err(Error::Domain(_))));
        assert!(matches!(h.christoffel(ChartPoint::new(0.0, -1.0)), Err(Error::Domain(_))));
        assert!(h.rotate90(ChartPoint::new(0.0, -1.0), TangentVector::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn christoffel_examples() {
        let zero = [[[0.0; 2]; 2]; 2];
        assert_eq!(unit_flat().christoffel(ChartPoint::new(0.2, 0.4)).unwrap(), zero);
        assert_eq!(const_lambda(0.7).christoffel(ChartPoint::new(0.2, 0.4)).unwrap(), zero);

        let g = SurfaceModel::hyperbolic_plane().christoffel(ChartPoint::new(0.0, 1.0)).unwrap();
        // indices: [k][i][j], 0 = u, 1 = v
        assert_eq!(g[0][0][1], -1.0);
        assert_eq!(g[0][1][0], -1.0);
        assert_eq!(g[1][0][0], 1.0);
        assert_eq!(g[1][1][1], -1.0);
        assert_eq!(g[0][0][0], 0.0);
        assert_eq!(g[0][1][1], 0.0);
        assert_eq!(g[1][0][1], 0.0);
        assert_eq!(g[1][1][0], 0.0);
    }

    #[test]
    fn rotate90_examples() {
        let w = TangentVector::new(1.0, 0.0);
        let p = ChartPoint::new(0.0, 2.0);
        assert_eq!(unit_flat().rotate90(p, w).unwrap(), TangentVector::new(0.0, 1.0));
        let h = SurfaceModel::hyperbolic_plane();
        let r = h.rotate90(p, w).unwrap();
        assert_eq!(r, TangentVector::new(0.0, 1.0));
        assert_abs_diff_eq!(h.norm(p, w).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(h.norm(p, r).unwrap(), 0.5, epsilon = 1e-15);
        let w = TangentVector::new(0.3, -1.7);
        assert_eq!(h.rotate90(p, h.rotate90(p, w).unwrap()).unwrap(), -w);
    }

    #[test]
    fn wrap_examples() {
        let t = unit_flat();
        assert_eq!(t.wrap(ChartPoint::new(1.25, -0.5)).unwrap(), ChartPoint::new(0.25, 0.5));
        assert_eq!(t.wrap(ChartPoint::new(0.0, 0.999)).unwrap(), ChartPoint::new(0.0, 0.999));
        let t23 = SurfaceModel::flat_torus(2.0, 3.0).unwrap();
        assert_eq!(t23.wrap(ChartPoint::new(-0.5, 3.5)).unwrap(), ChartPoint::new(1.5, 0.5));
        let w = t.wrap(ChartPoint::new(-1e-18, 0.0)).unwrap();
        assert!(w.u >= 0.0 && w.u < 1.0);
        assert!(matches!(
            SurfaceModel::hyperbolic_plane().wrap(ChartPoint::new(0.0, 1.0)),
            Err(Error::Unsupported { .. })
        ));
    }

    #[test]
    fn displacement_examples() {
        let t = unit_flat();
        let d = t.displacement(ChartPoint::new(0.1, 0.1), ChartPoint::new(0.9, 0.1)).unwrap();
        assert_abs_diff_eq!(d.du, -0.2, epsilon = 1e-15);
        assert_eq!(d.dv, 0.0);
        let p = ChartPoint::new(0.3, 0.8);
        assert_eq!(t.displacement(p, p).unwrap(), TangentVector::default());
        let d = t.displacement(ChartPoint::new(0.0, 0.0), ChartPoint::new(0.5, 0.5)).unwrap();
        assert_eq!(d, TangentVector::new(0.5, 0.5));
        assert!(SurfaceModel::hyperbolic_plane()
            .displacement(ChartPoint::new(0.0, 1.0), ChartPoint::new(0.0, 2.0))
            .is_err());
    }

    #[test]
    fn area_examples() {
        assert_eq!(unit_flat().area().unwrap(), 1.0);
        assert_eq!(SurfaceModel::flat_torus(2.0, 3.0).unwrap().area().unwrap(), 6.0);
        assert_abs_diff_eq!(const_lambda(2f64.ln()).area().unwrap(), 4.0, epsilon = 1e-12);
        assert!(SurfaceModel::hyperbolic_plane().area().is_err());
    }

    #[test]
    fn area_quadrature_matches_bessel_series() {
        // ∫∫ exp(0.2 sin(2πu) cos(2πv)) du dv = ∫_0^1 I0(0.2 cos 2πv) dv, I0 by its series
        let i0 = |x: f64| {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..30 {
                term *= (x / 2.0) * (x / 2.0) / (k as f64 * k as f64);
                sum += term;
            }
            sum
        };
        let n = 4000;
        let want: f64 = (0..n)
            .map(|j| i0(0.2 * (2.0 * PI * (j as f64 + 0.5) / n as f64).cos()))
            .sum::<f64>()
            / n as f64;
        assert_abs_diff_eq!(wavy().area().unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn sampled_states_are_unit_speed_and_seeded() {
        for s in [unit_flat(), wavy()] {
            let mut rng = substream(7, 0, 0);
            for _ in 0..1000 {
                let th = s.sample_unit_tangent(&mut rng).unwrap();
                assert_abs_diff_eq!(s.norm(th.point, th.velocity).unwrap(), 1.0, epsilon = 1e-12);
            }
            let a: Vec<_> = (0..50)
                .map(|i| s.sample_unit_tangent(&mut substream(3, 1, i)).unwrap())
                .collect();
            let b: Vec<_> = (0..50)
                .map(|i| s.sample_unit_tangent(&mut substream(3, 1, i)).unwrap())
                .collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn flat_sampling_mean_is_centered() {
        let t = SurfaceModel::flat_torus(2.0, 1.0).unwrap();
        let n = 100_000;
        let mut rng = substream(11, 0, 0);
        let mean = (0..n)
            .map(|_| t.sample_unit_tangent(&mut rng).unwrap().point.u)
            .sum::<f64>()
            / n as f64;
        let sigma = 2.0 / 12f64.sqrt();
        assert!((mean - 1.0).abs() <= 4.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn hyperbolic_sampling_is_unsupported() {
        let mut rng = substream(0, 0, 0);
        assert!(SurfaceModel::hyperbolic_plane().sample_unit_tangent(&mut rng).is_err());
    }

    #[test]
    fn bump_sampling_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let s = SurfaceModel::conformal_torus(
            1.0,
            1.0,
            ScalarField::parse("0.6*exp(-20*((u-0.5)*(u-0.5) + (v-0.4)*(v-0.4)))").unwrap(),
        )
        .unwrap();
        let bins = 10;
        let area = s.area().unwrap();
        // expected bin masses by a fine midpoint rule inside each bin
        let sub = 40;
        let mut expected = vec![0.0; bins * bins];
        for bi in 0..bins {
            for bj in 0..bins {
                let mut acc = 0.0;
                for i in 0..sub {
                    for j in 0..sub {
                        let u = (bi as f64 + (i as f64 + 0.5) / sub as f64) / bins as f64;
                        let v = (bj as f64 + (j as f64 + 0.5) / sub as f64) / bins as f64;
                        acc += s.conformal_factor(ChartPoint::new(u, v)).unwrap();
                    }
                }
                expected[bi * bins + bj] = acc / (sub * sub * bins * bins) as f64 / area;
            }
        }
        let n = 200_000;
        let mut counts = vec![0usize; bins * bins];
        let mut rng = substream(5, 0, 0);
        for _ in 0..n {
            let p = s.sample_unit_tangent(&mut rng).unwrap().point;
            let bi = ((p.u * bins as f64) as usize).min(bins - 1);
            let bj = ((p.v * bins as f64) as usize).min(bins - 1);
            counts[bi * bins + bj] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let critical = ChiSquared::new((bins * bins - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 = {chi2}, critical = {critical}");
    }

    fn any_surface() -> impl Strategy<Value = (SurfaceModel, ChartPoint)> {
        prop_oneof![
            (0.0..1.0f64, 0.0..1.0f64).prop_map(|(u, v)| (unit_flat(), ChartPoint::new(u, v))),
            (-3.0..3.0f64, 0.05..5.0f64)
                .prop_map(|(u, v)| (SurfaceModel::hyperbolic_plane(), ChartPoint::new(u, v))),
            (0.0..1.0f64, 0.0..1.0f64).prop_map(|(u, v)| (wavy(), ChartPoint::new(u, v))),
        ]
    }

    /// `g_{ij}` at a point, for the Koszul-formula oracle.
    fn metric(s: &SurfaceModel, p: ChartPoint) -> f64 {
        s.conformal_factor(p).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rotation_is_isometric_and_positively_oriented(
            (s, p) in any_surface(), du in -5.0..5.0f64, dv in -5.0..5.0f64
        ) {
            let w = TangentVector::new(du, dv);
            let r = s.rotate90(p, w).unwrap();
            let nw = s.norm(p, w).unwrap();
            prop_assert!((s.norm(p, r).unwrap() - nw).abs() <= 1e-12 * nw.max(1.0));
            let a = s.area_form(p, w, r).unwrap();
            prop_assert!((a - nw * nw).abs() <= 1e-12 * (nw * nw).max(1.0));
        }

        #[test]
        fn christoffel_matches_koszul_finite_differences((s, p) in any_surface()) {
            // Γ^k_ij = ½ g^{kk} (∂_i g_jk + ∂_j g_ik − ∂_k g_ij) with g_ij = f δ_ij
            let eps = 1e-6;
            let f = metric(&s, p);
            let df = [
                (metric(&s, ChartPoint::new(p.u + eps, p.v)) - metric(&s, ChartPoint::new(p.u - eps, p.v))) / (2.0 * eps),
                (metric(&s, ChartPoint::new(p.u, p.v + eps)) - metric(&s, ChartPoint::new(p.u, p.v - eps))) / (2.0 * eps),
            ];
            let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
            let g = s.christoffel(p).unwrap();
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let koszul = 0.5 / f * (df[i] * d(j, k) + df[j] * d(i, k) - df[k] * d(i, j));
                        prop_assert!((g[k][i][j] - koszul).abs() < 1e-6 * (1.0 + koszul.abs()));
                        prop_assert_eq!(g[k][i][j], g[k][j][i]);
                    }
                }
            }
        }

        #[test]
        fn wrap_is_idempotent_and_displacement_period_invariant(
            u in -10.0..10.0f64, v in -10.0..10.0f64,
            qu in -10.0..10.0f64, qv in -10.0..10.0f64,
            k1 in -3i32..3, k2 in -3i32..3,
        ) {
            let t = SurfaceModel::flat_torus(2.0, 3.0).unwrap();
            let w = t.wrap(ChartPoint::new(u, v)).unwrap();
            prop_assert_eq!(t.wrap(w).unwrap(), w);
            prop_assert!(w.u >= 0.0 && w.u < 2.0 && w.v >= 0.0 && w.v < 3.0);
            let p = ChartPoint::new(u, v);
            let q = ChartPoint::new(qu, qv);
            let q2 = ChartPoint::new(qu + 2.0 * k1 as f64, qv + 3.0 * k2 as f64);
            let a = t.displacement(p, q).unwrap();
            let b = t.displacement(p, q2).unwrap();
            prop_assert!((a.du - b.du).abs() < 1e-12 && (a.dv - b.dv).abs() < 1e-12);
        }
    }
}
