//! Polynomial omnidirectional fisheye model.
//!
//! A pixel is mapped back to a viewing ray by undoing an affine stretch and
//! lifting the normalized-plane point `(x, y)` to `(x, y, f(ρ))`, where
//! `ρ = ‖(x, y)‖` and `f` is the distortion polynomial. The camera frame has
//! `z` along the optical axis, `x` right and `y` down. Coefficient `a₁` is
//! fixed to zero and `a₀ > 0` makes the distortion center look down `+z`.
//!
//! Forward projection inverts the monotonic incidence-angle-to-radius map
//! with a bracketed Newton iteration.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius tolerance of the forward-projection root solve.
pub const RADIUS_TOL: f64 = 1e-12;
/// Iteration cap of the forward-projection root solve.
pub const MAX_SOLVE_ITERS: usize = 50;
/// Number of radius samples used for the monotonicity check and the
/// initial-guess table.
pub const MONOTONIC_SAMPLES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint {
    pub x: f64,
    pub y: f64,
}

/// Unit-norm viewing direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray3(Vector3<f64>);

impl Ray3 {
    /// Normalizes `v`. Returns `None` for zero or non-finite input.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n > 0.0 && n.is_finite() {
            Some(Self(v / n))
        } else {
            None
        }
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_vector(self) -> Vector3<f64> {
        self.0
    }
}

/// Affine map from the normalized plane to pixels:
/// `u = c·x + d·y + cx`, `v = e·x + y + cy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Affine {
    pub fn centered(cx: f64, cy: f64) -> Self {
        Self {
            c: 1.0,
            d: 0.0,
            e: 0.0,
            cx,
            cy,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.c - self.d * self.e
    }

    pub fn linear(&self) -> Matrix2<f64> {
        Matrix2::new(self.c, self.d, self.e, 1.0)
    }

    pub fn apply(&self, m: NormalizedPoint) -> PixelPoint {
        PixelPoint {
            u: self.c * m.x + self.d * m.y + self.cx,
            v: self.e * m.x + m.y + self.cy,
        }
    }

    pub fn invert(&self, p: PixelPoint) -> NormalizedPoint {
        let du = p.u - self.cx;
        let dv = p.v - self.cy;
        let det = self.determinant();
        NormalizedPoint {
            x: (du - self.d * dv) / det,
            y: (self.c * dv - self.e * du) / det,
        }
    }
}

/// Evaluates `f(ρ)` and `f'(ρ)` by Horner's rule.
pub(crate) fn poly_eval(poly: &[f64], rho: f64) -> (f64, f64) {
    let mut f = 0.0;
    let mut df = 0.0;
    for &a in poly.iter().rev() {
        df = df * rho + f;
        f = f * rho + a;
    }
    (f, df)
}

/// Incidence angle of the lifted ray at normalized radius `rho`.
pub(crate) fn incidence_angle(poly: &[f64], rho: f64) -> f64 {
    rho.atan2(poly_eval(poly, rho).0)
}

/// Solves `θ(ρ) = theta` for `ρ` inside `[lo, hi]`, which must bracket the
/// root. The residual `ρ·cos θ − f(ρ)·sin θ` has the sign of `θ(ρ) − θ`.
pub(crate) fn solve_radius(poly: &[f64], theta: f64, mut lo: f64, mut hi: f64, guess: f64) -> Result<f64> {
    let (st, ct) = theta.sin_cos();
    let g = |rho: f64| {
        let (f, df) = poly_eval(poly, rho);
        (rho * ct - f * st, ct - df * st)
    };
    let mut rho = guess.clamp(lo, hi);
    for _ in 0..MAX_SOLVE_ITERS {
        let (val, slope) = g(rho);
        if val == 0.0 {
            return Ok(rho);
        }
        if val < 0.0 {
            lo = rho;
        } else {
            hi = rho;
        }
        let newton = rho - val / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - rho).abs();
        rho = next;
        if step <= RADIUS_TOL || hi - lo <= RADIUS_TOL {
            return Ok(rho);
        }
    }
    Err(Error::RootSolve { angle_rad: theta })
}

/// Finds the smallest radius with incidence angle `theta`, scanning outward
/// from `start` to bracket it.
pub(crate) fn radius_for_angle(poly: &[f64], theta: f64, start: f64) -> Result<f64> {
    let mut hi = start.max(1e-6);
    while incidence_angle(poly, hi) < theta {
        hi *= 2.0;
        if !(hi < 1e12) {
            return Err(Error::RootSolve { angle_rad: theta });
        }
    }
    // First crossing on a uniform scan, so a non-monotonic tail cannot be hit.
    let steps = MONOTONIC_SAMPLES;
    let mut lo = 0.0;
    for k in 1..=steps {
        let r = hi * k as f64 / steps as f64;
        if incidence_angle(poly, r) >= theta {
            hi = r;
            break;
        }
        lo = r;
    }
    solve_radius(poly, theta, lo, hi, 0.5 * (lo + hi))
}

/// Incidence angles sampled uniformly in radius over `[0, max_radius]`,
/// where `max_radius` is the first radius reaching `max_angle`. Building it
/// checks strict monotonicity of the angle-radius map on those samples.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AngleTable {
    poly: Vec<f64>,
    max_radius: f64,
    angles: Vec<f64>,
}

impl AngleTable {
    pub(crate) fn build(poly: &[f64], max_angle: f64, start: f64) -> Result<Self> {
        let max_radius = radius_for_angle(poly, max_angle, start)?;
        let mut angles = Vec::with_capacity(MONOTONIC_SAMPLES + 1);
        for k in 0..=MONOTONIC_SAMPLES {
            let r = max_radius * k as f64 / MONOTONIC_SAMPLES as f64;
            let a = incidence_angle(poly, r);
            if angles.last().is_some_and(|&prev| a <= prev) {
                return Err(Error::InvalidIntrinsics(format!(
                    "angle-radius map is not strictly monotonic near radius {r}"
                )));
            }
            angles.push(a);
        }
        Ok(Self {
            poly: poly.to_vec(),
            max_radius,
            angles,
        })
    }

    pub(crate) fn poly(&self) -> &[f64] {
        &self.poly
    }

    pub(crate) fn max_radius(&self) -> f64 {
        self.max_radius
    }

    /// Radius for an angle within the table's range.
    pub(crate) fn radius(&self, theta: f64) -> Result<f64> {
        if theta <= 0.0 {
            return Ok(0.0);
        }
        if theta > self.angles[MONOTONIC_SAMPLES] {
            return Err(Error::RootSolve { angle_rad: theta });
        }
        let k = self.angles.partition_point(|&a| a < theta).clamp(1, MONOTONIC_SAMPLES);
        let step = self.max_radius / MONOTONIC_SAMPLES as f64;
        let lo = step * (k - 1) as f64;
        let hi = if k == MONOTONIC_SAMPLES { self.max_radius } else { step * k as f64 };
        let (a0, a1) = (self.angles[k - 1], self.angles[k]);
        let guess = lo + (hi - lo) * ((theta - a0) / (a1 - a0)).clamp(0.0, 1.0);
        solve_radius(&self.poly, theta, lo, hi, guess)
    }
}

/// Serializable intrinsics record, validated into [`FisheyeIntrinsics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsRecord {
    pub poly: Vec<f64>,
    pub affine: Affine,
    pub image_size: [u32; 2],
    pub fov_deg: f64,
}

/// Validated fisheye intrinsics with a cached FOV radius and a table of
/// incidence angles used to seed the radius solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FisheyeIntrinsics {
    affine: Affine,
    width: u32,
    height: u32,
    fov_deg: f64,
    half_fov: f64,
    table: AngleTable,
}

impl FisheyeIntrinsics {
    pub fn new(poly: Vec<f64>, affine: Affine, image_size: (u32, u32), fov_deg: f64) -> Result<Self> {
        if poly.is_empty() || poly.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidIntrinsics("polynomial must be non-empty and finite".into()));
        }
        if poly.len() > 1 && poly[1] != 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "linear coefficient a1 must be 0, got {}",
                poly[1]
            )));
        }
        if poly[0] <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "constant coefficient a0 must be positive, got {}",
                poly[0]
            )));
        }
        if !(fov_deg > 0.0 && fov_deg < 360.0) {
            return Err(Error::InvalidIntrinsics(format!("fov_deg {fov_deg} outside (0, 360)")));
        }
        let det = affine.determinant();
        if !(det.is_finite() && det != 0.0)
            || ![affine.c, affine.d, affine.e, affine.cx, affine.cy]
                .iter()
                .all(|v| v.is_finite())
        {
            return Err(Error::InvalidIntrinsics("affine map is singular or non-finite".into()));
        }
        if image_size.0 < 2 || image_size.1 < 2 {
            return Err(Error::InvalidIntrinsics("image must be at least 2x2".into()));
        }

        let half_fov = fov_deg.to_radians() / 2.0;
        let table = AngleTable::build(&poly, half_fov, poly[0]).map_err(|e| match e {
            Error::RootSolve { .. } => {
                Error::InvalidIntrinsics(format!("polynomial never reaches half-FOV of {fov_deg} deg"))
            }
            other => other,
        })?;
        Ok(Self {
            affine,
            width: image_size.0,
            height: image_size.1,
            fov_deg,
            half_fov,
            table,
        })
    }

    pub fn from_record(rec: &IntrinsicsRecord) -> Result<Self> {
        Self::new(
            rec.poly.clone(),
            rec.affine,
            (rec.image_size[0], rec.image_size[1]),
            rec.fov_deg,
        )
    }

    pub fn to_record(&self) -> IntrinsicsRecord {
        IntrinsicsRecord {
            poly: self.table.poly().to_vec(),
            affine: self.affine,
            image_size: [self.width, self.height],
            fov_deg: self.fov_deg,
        }
    }

    pub fn poly(&self) -> &[f64] {
        self.table.poly()
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn fov_deg(&self) -> f64 {
        self.fov_deg
    }

    pub fn half_fov(&self) -> f64 {
        self.half_fov
    }

    /// Normalized-plane radius at which the incidence angle reaches half the FOV.
    pub fn fov_radius(&self) -> f64 {
        self.table.max_radius()
    }

    pub fn in_bounds(&self, p: PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= (self.width - 1) as f64 && p.v <= (self.height - 1) as f64
    }

    /// True when the pixel lies inside the FOV circle.
    pub fn pixel_in_fov(&self, p: PixelPoint) -> bool {
        let m = self.affine.invert(p);
        m.x.hypot(m.y) <= self.fov_radius()
    }

    /// Projects a camera-frame point to the normalized plane. The flag is
    /// false beyond half-FOV, in which case the point is clamped to the FOV
    /// circle along its azimuth.
    pub fn project_normalized(&self, x: &Vector3<f64>) -> Result<(NormalizedPoint, bool)> {
        if !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()) {
            return Err(Error::NonFinite("projected point"));
        }
        let s = x.x.hypot(x.y);
        if s == 0.0 && x.z == 0.0 {
            return Err(Error::InvalidArgument("cannot project the camera center".into()));
        }
        let theta = s.atan2(x.z);
        let (rho, inside) = if theta > self.half_fov {
            (self.fov_radius(), false)
        } else {
            (self.table.radius(theta)?, true)
        };
        let m = if s > 0.0 {
            NormalizedPoint {
                x: rho * x.x / s,
                y: rho * x.y / s,
            }
        } else {
            NormalizedPoint { x: 0.0, y: 0.0 }
        };
        Ok((m, inside))
    }

    /// Projects a camera-frame point to pixels; `valid` requires the point to
    /// be within half-FOV and the pixel to lie inside the image.
    pub fn project(&self, x: &Vector3<f64>) -> Result<(PixelPoint, bool)> {
        let (m, inside) = self.project_normalized(x)?;
        let p = self.affine.apply(m);
        Ok((p, inside && self.in_bounds(p)))
    }

    /// Lifts a pixel to a unit ray; `valid` is false outside the FOV circle.
    pub fn unproject(&self, p: PixelPoint) -> (Ray3, bool) {
        if !(p.u.is_finite() && p.v.is_finite()) {
            return (Ray3(Vector3::z()), false);
        }
        let m = self.affine.invert(p);
        let rho = m.x.hypot(m.y);
        let f = poly_eval(self.poly(), rho).0;
        match Ray3::new(Vector3::new(m.x, m.y, f)) {
            Some(r) => (r, rho <= self.fov_radius()),
            None => (Ray3(Vector3::z()), false),
        }
    }
}

/// Pixel projection of a camera-frame point together with its Jacobians with
/// respect to the point, the free polynomial coefficients (`a₀, a₂, a₃, …`),
/// and the affine parameters `(c, d, e, cx, cy)`.
pub(crate) struct ProjectionJacobian {
    pub pixel: Vector2<f64>,
    pub d_point: Matrix2x3<f64>,
    pub d_poly: Vec<Vector2<f64>>,
    pub d_affine: [Vector2<f64>; 5],
}

/// Projection with derivatives for coefficients that are being optimized.
/// The table must cover the point's incidence angle.
pub(crate) fn project_with_jacobian(table: &AngleTable, affine: &Affine, x: &Vector3<f64>) -> Result<ProjectionJacobian> {
    let poly = table.poly();
    let s = x.x.hypot(x.y);
    let theta = s.atan2(x.z);
    let rho = table.radius(theta)?;
    let (f, df) = poly_eval(poly, rho);

    // Implicit function G(ρ; X, a) = ρ·Z − f(ρ)·s = 0.
    let g_rho = x.z - df * s;
    let mut dm_dx = nalgebra::Matrix2x3::zeros();
    let mut dm_dpoly = Vec::with_capacity(poly.len().saturating_sub(1));
    let m;
    if s > 1e-12 * x.norm() {
        let u = Vector2::new(x.x / s, x.y / s);
        m = u * rho;
        // dρ/dX through Z and s.
        let drho_dz = -rho / g_rho;
        let drho_ds = f / g_rho;
        let ds_dxy = u;
        let mut drho = Vector3::new(drho_ds * ds_dxy.x, drho_ds * ds_dxy.y, drho_dz);
        if !drho.iter().all(|v| v.is_finite()) {
            drho = Vector3::zeros();
        }
        // m = ρ·u, du/d(X,Y) = (I − u uᵀ)/s.
        let du = (Matrix2::identity() - u * u.transpose()) / s;
        for r in 0..2 {
            for c in 0..3 {
                let mut v = u[r] * drho[c];
                if c < 2 {
                    v += rho * du[(r, c)];
                }
                dm_dx[(r, c)] = v;
            }
        }
        for j in 0..poly.len() {
            if j == 1 {
                continue;
            }
            let drho_da = rho.powi(j as i32) * s / g_rho;
            dm_dpoly.push(u * drho_da);
        }
    } else {
        // On the axis: m ≈ (a₀ / Z)·(X, Y).
        m = Vector2::zeros();
        let k = poly[0] / x.z;
        dm_dx[(0, 0)] = k;
        dm_dx[(1, 1)] = k;
        for j in 0..poly.len() {
            if j != 1 {
                dm_dpoly.push(Vector2::zeros());
            }
        }
    }

    let lin = affine.linear();
    let pixel = lin * m + Vector2::new(affine.cx, affine.cy);
    let d_point = lin * dm_dx;
    let d_poly = dm_dpoly.into_iter().map(|v| lin * v).collect();
    let d_affine = [
        Vector2::new(m.x, 0.0),
        Vector2::new(m.y, 0.0),
        Vector2::new(0.0, m.x),
        Vector2::new(1.0, 0.0),
        Vector2::new(0.0, 1.0),
    ];
    Ok(ProjectionJacobian {
        pixel,
        d_point,
        d_poly,
        d_affine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Equidistant-like lens: truncated series of ρ / tan(ρ / F).
    pub(crate) fn lens(fov_deg: f64) -> FisheyeIntrinsics {
        let f = 370.0;
        let poly = vec![f, 0.0, -1.0 / (3.0 * f), 0.0, -1.0 / (45.0 * f * f * f)];
        FisheyeIntrinsics::new(poly, Affine::centered(800.0, 766.0), (1600, 1532), fov_deg).unwrap()
    }

    fn bisect_radius(poly: &[f64], theta: f64, mut hi: f64) -> f64 {
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if incidence_angle(poly, mid) < theta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn optical_axis_maps_to_center() {
        let cam = lens(220.0);
        let (p, valid) = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(valid);
        assert_eq!((p.u, p.v), (800.0, 766.0));
        let (r, valid) = cam.unproject(PixelPoint::new(800.0, 766.0));
        assert!(valid);
        assert_relative_eq!(*r.as_vector(), Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn beyond_half_fov_is_invalid() {
        let cam = lens(220.0);
        let a = (110.0f64 + 1.0).to_radians();
        let (_, valid) = cam.project(&Vector3::new(a.sin(), 0.0, a.cos())).unwrap();
        assert!(!valid);
        let a = (110.0f64 - 1.0).to_radians();
        let (_, valid) = cam.project(&Vector3::new(a.sin(), 0.0, a.cos())).unwrap();
        assert!(valid);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        let aff = Affine::centered(10.0, 10.0);
        assert!(FisheyeIntrinsics::new(vec![100.0, 0.1], aff, (20, 20), 180.0).is_err());
        assert!(FisheyeIntrinsics::new(vec![100.0, 0.0, -0.005], aff, (20, 20), 360.0).is_err());
        assert!(FisheyeIntrinsics::new(vec![100.0, 0.0, -0.005], aff, (20, 20), 0.0).is_err());
        let singular = Affine {
            c: 1.0,
            d: 1.0,
            e: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        assert!(FisheyeIntrinsics::new(vec![100.0, 0.0, -0.005], singular, (20, 20), 180.0).is_err());
        // f(ρ) = 100 + ρ² never turns the ray past 90°.
        assert!(FisheyeIntrinsics::new(vec![100.0, 0.0, 1.0], aff, (20, 20), 200.0).is_err());
    }

    #[test]
    fn rejects_non_monotonic_angle_map() {
        // θ(ρ) peaks near 136°, dips to 127° and then climbs towards 180°.
        let aff = Affine::centered(10.0, 10.0);
        let poly = vec![1.0, 0.0, -3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, -1.0];
        let ok = FisheyeIntrinsics::new(poly.clone(), aff, (20, 20), 120.0);
        assert!(ok.is_ok(), "{ok:?}");
        let bad = FisheyeIntrinsics::new(poly, aff, (20, 20), 300.0);
        assert!(bad.is_err());
    }

    #[test]
    fn non_finite_projection_is_an_error() {
        let cam = lens(220.0);
        assert!(matches!(
            cam.project(&Vector3::new(f64::NAN, 0.0, 1.0)),
            Err(Error::NonFinite(_))
        ));
        assert!(cam.project(&Vector3::zeros()).is_err());
    }

    #[test]
    fn fov_radius_of_180_is_horizon() {
        let cam = lens(180.0);
        let f = poly_eval(cam.poly(), cam.fov_radius()).0;
        assert!(f.abs() < 1e-9, "f at horizon = {f}");
    }

    #[test]
    fn fov_radius_matches_bisection_and_is_monotonic() {
        let mut prev = 0.0;
        for fov in [60.0, 120.0, 180.0, 200.0, 220.0] {
            let cam = lens(fov);
            let oracle = bisect_radius(cam.poly(), cam.half_fov(), 2000.0);
            assert!((cam.fov_radius() - oracle).abs() < 1e-9);
            assert!(cam.fov_radius() > prev);
            prev = cam.fov_radius();
        }
    }

    #[test]
    fn fov_circle_pixel_has_half_fov_angle() {
        let cam = lens(220.0);
        let r = bisect_radius(cam.poly(), cam.half_fov(), 2000.0);
        let (ray, _) = cam.unproject(PixelPoint::new(800.0 + r, 766.0));
        let angle = ray.as_vector().z.acos();
        assert!((angle - cam.half_fov()).abs() < 1e-6);
    }

    #[test]
    fn affine_round_trip() {
        let aff = Affine {
            c: 1.01,
            d: 0.003,
            e: -0.002,
            cx: 801.5,
            cy: 764.25,
        };
        for &(x, y) in &[(0.0, 0.0), (123.4, -56.7), (-400.0, 310.2)] {
            let p = aff.apply(NormalizedPoint { x, y });
            let m = aff.invert(p);
            assert!((m.x - x).abs() < 1e-12 && (m.y - y).abs() < 1e-12);
        }
    }

    #[test]
    fn project_matches_bisection_oracle() {
        let cam = lens(220.0);
        for k in 1..100 {
            let theta = cam.half_fov() * k as f64 / 100.0;
            let x = Vector3::new(theta.sin(), 0.0, theta.cos());
            let (m, inside) = cam.project_normalized(&x).unwrap();
            assert!(inside);
            let oracle = bisect_radius(cam.poly(), theta, 2000.0);
            assert!((m.x - oracle).abs() < 1e-9, "theta {theta}: {} vs {oracle}", m.x);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cam = lens(220.0);
        let aff = Affine {
            c: 1.01,
            d: 0.01,
            e: -0.02,
            cx: 800.0,
            cy: 766.0,
        };
        let x = Vector3::new(0.8, -0.3, -0.2);
        let proj = |poly: &[f64], x: &Vector3<f64>| {
            let table = AngleTable::build(poly, cam.half_fov(), 100.0).unwrap();
            project_with_jacobian(&table, &aff, x).unwrap()
        };
        let jac = proj(cam.poly(), &x);
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let pp = proj(cam.poly(), &xp);
            let pm = proj(cam.poly(), &xm);
            let fd = (pp.pixel - pm.pixel) / (2.0 * h);
            for r in 0..2 {
                assert_relative_eq!(jac.d_point[(r, c)], fd[r], max_relative = 1e-5, epsilon = 1e-5);
            }
        }
        let poly = cam.poly().to_vec();
        let free: Vec<usize> = (0..poly.len()).filter(|&j| j != 1).collect();
        for (slot, &j) in free.iter().enumerate() {
            let h = if poly[j] == 0.0 { 1e-12 } else { 1e-6 * poly[j].abs() };
            let mut pp = poly.clone();
            let mut pm = poly.clone();
            pp[j] += h;
            pm[j] -= h;
            let a = proj(&pp, &x);
            let b = proj(&pm, &x);
            let fd = (a.pixel - b.pixel) / (2.0 * h);
            for r in 0..2 {
                assert_relative_eq!(jac.d_poly[slot][r], fd[r], max_relative = 1e-4, epsilon = 1e-6);
            }
        }
    }
}
