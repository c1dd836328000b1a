//! Test problems: a manufactured smooth solution, the traveling peakon,
//! and a compactly supported bump with homogeneous data.

use std::f64::consts::PI;

use crate::error::{HdgError, Result};
use crate::fem::{face_project, Basis1D};
use crate::mesh::{BoundaryTag, CartesianMesh, Domain2D, Face, Orientation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Mms,
    Peakon,
    EnergyDecay,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Mms => "mms",
            ScenarioKind::Peakon => "peakon",
            ScenarioKind::EnergyDecay => "energy",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mms" => Ok(ScenarioKind::Mms),
            "peakon" => Ok(ScenarioKind::Peakon),
            "energy" | "energy-decay" | "energy_decay" | "energydecay" => Ok(ScenarioKind::EnergyDecay),
            other => Err(format!("unknown scenario '{other}' (expected mms, peakon or energy)")),
        }
    }
}

/// Boundary data named after the trace they prescribe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Datum {
    /// `u^` on the left, right and bottom boundaries.
    UD,
    /// `q^` on the left boundary.
    QL,
    /// `q^` on the right boundary.
    QR,
    /// `v^` on the right boundary.
    VR,
    /// `v^` on the top boundary.
    VT,
}

/// Pointwise values of the exact fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactFields {
    pub u: f64,
    pub q: f64,
    pub s: f64,
    pub v: f64,
    pub p: f64,
    pub z: f64,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub domain: Domain2D,
    pub kappa: f64,
    /// Peakon speed; unused by the other scenarios.
    pub speed: f64,
    pub t_final: f64,
}

impl Scenario {
    /// `u = e^{-t} sin x sin y` on `(0, 2 pi)^2`.
    pub fn mms() -> Self {
        Self {
            kind: ScenarioKind::Mms,
            domain: Domain2D::square(0.0, 2.0 * PI),
            kappa: -0.5,
            speed: 0.0,
            t_final: 1.0,
        }
    }

    /// `u = c exp(-|x + y - c t|)` on `(-1, 1)^2`.
    pub fn peakon() -> Self {
        Self {
            kind: ScenarioKind::Peakon,
            domain: Domain2D::square(-1.0, 1.0),
            kappa: -0.5,
            speed: 1.0,
            t_final: 1.0,
        }
    }

    /// Squared-cosine bump on `(-1, 1)^2` with homogeneous data.
    pub fn energy_decay() -> Self {
        Self {
            kind: ScenarioKind::EnergyDecay,
            domain: Domain2D::square(-1.0, 1.0),
            kappa: -0.5,
            speed: 0.0,
            t_final: 0.2,
        }
    }

    pub fn from_kind(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::Mms => Self::mms(),
            ScenarioKind::Peakon => Self::peakon(),
            ScenarioKind::EnergyDecay => Self::energy_decay(),
        }
    }

    pub fn has_exact_solution(&self) -> bool {
        self.kind != ScenarioKind::EnergyDecay
    }

    pub fn initial(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            ScenarioKind::EnergyDecay => energy_decay_initial(x, y),
            _ => self.exact_fields(x, y, 0.0).u,
        }
    }

    /// Exact fields; for the bump scenario only `t = 0` is meaningful.
    pub fn exact_fields(&self, x: f64, y: f64, t: f64) -> ExactFields {
        match self.kind {
            ScenarioKind::Mms => mms_fields(x, y, t, self.domain.x_right),
            ScenarioKind::Peakon => {
                let c = self.speed;
                let u_at = |x: f64| c * (-(x + y - c * t).abs()).exp();
                let xi = x + y - c * t;
                let u = u_at(x);
                let q = -xi.signum() * u;
                ExactFields {
                    u,
                    q,
                    s: q,
                    v: u - u_at(self.domain.x_right),
                    p: f64::NAN,
                    z: f64::NAN,
                    r: f64::NAN,
                }
            }
            ScenarioKind::EnergyDecay => {
                let u = energy_decay_initial(x, y);
                let (cx, cy) = ((0.5 * PI * x).cos(), (0.5 * PI * y).cos());
                let q = -PI * cx * (0.5 * PI * x).sin() * cy * cy;
                ExactFields { u, q, s: f64::NAN, v: f64::NAN, p: f64::NAN, z: f64::NAN, r: f64::NAN }
            }
        }
    }

    /// Source of the `r` equation, present only for the manufactured solution.
    pub fn source(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        (self.kind == ScenarioKind::Mms).then(|| mms_source(x, y, t, self.kappa))
    }

    /// Pointwise value of a boundary datum.
    pub fn datum(&self, d: Datum, x: f64, y: f64, t: f64) -> f64 {
        if self.kind == ScenarioKind::EnergyDecay {
            return 0.0;
        }
        let f = self.exact_fields(x, y, t);
        match d {
            Datum::UD => f.u,
            Datum::QL | Datum::QR => f.q,
            Datum::VR | Datum::VT => f.v,
        }
    }

    /// Face L^2 projection of a datum onto `P_k` of a boundary face.
    pub fn boundary_values(
        &self,
        mesh: &CartesianMesh,
        basis: &Basis1D,
        face: &Face,
        d: Datum,
        t: f64,
    ) -> Result<Vec<f64>> {
        let allowed = match d {
            Datum::UD => matches!(face.tag, BoundaryTag::Left | BoundaryTag::Right | BoundaryTag::Bottom),
            Datum::QL => face.tag == BoundaryTag::Left,
            Datum::QR | Datum::VR => face.tag == BoundaryTag::Right,
            Datum::VT => face.tag == BoundaryTag::Top,
        };
        if !allowed {
            return Err(HdgError::MissingBoundaryData(format!(
                "{d:?} is not defined on face {:?} ({:?})",
                face.id, face.tag
            )));
        }
        let id = face.id;
        Ok(match id.orientation {
            Orientation::Vertical => {
                let x = mesh.x_nodes[id.i];
                face_project(basis, mesh.y_nodes[id.j - 1], mesh.y_nodes[id.j], |y| self.datum(d, x, y, t))
            }
            Orientation::Horizontal => {
                let y = mesh.y_nodes[id.j];
                face_project(basis, mesh.x_nodes[id.i - 1], mesh.x_nodes[id.i], |x| self.datum(d, x, y, t))
            }
        })
    }
}

fn mms_fields(x: f64, y: f64, t: f64, x_right: f64) -> ExactFields {
    let e = (-t).exp();
    let (sx, cx, sy, cy) = (x.sin(), x.cos(), y.sin(), y.cos());
    let u = e * sx * sy;
    let q = e * cx * sy;
    let uxx = -u;
    ExactFields {
        u,
        q,
        s: e * sx * cy,
        v: e * cy * (x_right.cos() - cx),
        p: q * q + u * uxx,
        z: q,
        r: u,
    }
}

/// `S_r = -u_t + u_txx - [f(u)_x - (u u_x)_xx + (u_x^2)_x / 2 + d_x^{-1} u_yy]`
/// for `u = e^{-t} sin x sin y`, anchored at `x_R = 2 pi`.
pub fn mms_source(x: f64, y: f64, t: f64, kappa: f64) -> f64 {
    let e = (-t).exp();
    let u = e * x.sin() * y.sin();
    let ux = e * x.cos() * y.sin();
    2.0 * u - 2.0 * kappa * ux - 3.0 * e * e * y.sin().powi(2) * (2.0 * x).sin() + e * y.sin() * (1.0 - x.cos())
}

/// `cos^2(pi x / 2) cos^2(pi y / 2)`: vanishes with its first derivatives on
/// the boundary of `(-1, 1)^2`.
pub fn energy_decay_initial(x: f64, y: f64) -> f64 {
    let (cx, cy) = ((0.5 * PI * x).cos(), (0.5 * PI * y).cos());
    cx * cx * cy * cy
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn second(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
    }

    #[test]
    fn mms_point_values() {
        let s = Scenario::mms();
        let f = s.exact_fields(PI / 2.0, 0.0, 0.0);
        assert!(f.u.abs() < 1e-15 && f.q.abs() < 1e-15);
        // v = cos y (1 - cos x) with the anchor cos(2 pi) = 1
        assert!((f.v - 1.0).abs() < 1e-15);
        assert!(s.exact_fields(2.0 * PI, 0.7, 0.3).v.abs() < 1e-15);
        assert!((s.datum(Datum::VT, PI, 2.0 * PI, 0.0) - 2.0).abs() < 1e-14);
    }

    /// Independent finite-difference check of the source: the strong form
    /// `S = -u_t + u_txx - f(u)_x + (u u_x)_xx - (u_x^2)_x / 2 - v_y`
    /// evaluated from `u` alone.
    #[test]
    fn mms_source_matches_finite_difference_oracle() {
        let kappa = -0.5;
        let u = |x: f64, y: f64, t: f64| (-t).exp() * x.sin() * y.sin();
        let v = |x: f64, y: f64, t: f64| {
            // d_x^{-1} u_y anchored at 2 pi, by Simpson quadrature
            let n = 2000;
            let (a, b) = (2.0 * PI, x);
            let h = (b - a) / n as f64;
            let g = |s: f64| central(|yy| u(s, yy, t), y, 1e-5);
            let mut acc = g(a) + g(b);
            for i in 1..n {
                acc += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        let f = |w: f64| 2.0 * kappa * w + 1.5 * w * w;
        let mut rng = StdRng::seed_from_u64(42);
        let h = 1e-3;
        for _ in 0..20 {
            let (x, y, t): (f64, f64, f64) = (rng.random_range(0.1..6.1), rng.random_range(0.1..6.1), rng.random_range(0.0..1.0));
            let ut = central(|tt| u(x, y, tt), t, h);
            let utxx = central(|tt| second(|xx| u(xx, y, tt), x, h), t, h);
            let fx = central(|xx| f(u(xx, y, t)), x, h);
            let uux = |xx: f64| u(xx, y, t) * central(|s| u(s, y, t), xx, h);
            let uux_xx = second(uux, x, h);
            let ux2_x = central(|xx| central(|s| u(s, y, t), xx, h).powi(2), x, h);
            let vy = central(|yy| v(x, yy, t), y, 1e-4);
            let oracle = -ut + utxx - fx + uux_xx - 0.5 * ux2_x - vy;
            let s = mms_source(x, y, t, kappa);
            assert!((s - oracle).abs() < 2e-4, "({x},{y},{t}): {s} vs {oracle}");
        }
    }

    #[test]
    fn mms_source_kappa_dependence() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let (x, y, t): (f64, f64, f64) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..2.0));
            let d = mms_source(x, y, t, -0.5) - mms_source(x, y, t, 0.0);
            assert!((d - (-t).exp() * x.cos() * y.sin()).abs() < 1e-14);
        }
        assert!(mms_source(1.0, 2.0, 60.0, -0.5).abs() < 1e-25);
    }

    #[test]
    fn mms_fields_are_consistent() {
        let s = Scenario::mms();
        let mut rng = StdRng::seed_from_u64(2);
        let h = 1e-5;
        for _ in 0..100 {
            let (x, y, t): (f64, f64, f64) = (rng.random_range(0.0..6.2), rng.random_range(0.0..6.2), rng.random_range(0.0..1.0));
            let f = s.exact_fields(x, y, t);
            let vx = central(|xx| s.exact_fields(xx, y, t).v, x, h);
            assert!((vx - f.s).abs() < 1e-9);
            let px = central(|xx| s.exact_fields(xx, y, t).u * s.exact_fields(xx, y, t).q, x, h);
            assert!((px - f.p).abs() < 1e-9);
            let rt = central(|tt| s.exact_fields(x, y, tt).u, t, h);
            assert!((rt + f.r).abs() < 1e-9);
            let zx = central(|xx| s.exact_fields(xx, y, t).r, x, h);
            assert!((zx - f.z).abs() < 1e-9);
        }
    }

    #[test]
    fn peakon_identities() {
        let s = Scenario::peakon();
        let f = s.exact_fields(0.2, -0.2, 0.0);
        assert!((f.u - 1.0).abs() < 1e-15);
        let left = s.exact_fields(0.2 - 1e-9, -0.2, 0.0).q;
        let right = s.exact_fields(0.2 + 1e-9, -0.2, 0.0).q;
        assert!((left - 1.0).abs() < 1e-8 && (right + 1.0).abs() < 1e-8);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let (x, y, t): (f64, f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
            if (x + y - t).abs() < 1e-3 {
                continue;
            }
            let h = 1e-6;
            let vx = central(|xx| s.exact_fields(xx, y, t).v, x, h);
            let uy = central(|yy| s.exact_fields(x, yy, t).u, y, h);
            assert!((vx - uy).abs() < 1e-8);
            assert!(s.exact_fields(1.0, y, t).v.abs() < 1e-15);
        }
    }

    #[test]
    fn bump_vanishes_on_boundary() {
        let s = Scenario::energy_decay();
        for i in 0..=20 {
            let y = -1.0 + 0.1 * i as f64;
            for x in [-1.0, 1.0] {
                let f = s.exact_fields(x, y, 0.0);
                assert!(f.u.abs() < 1e-14 && f.q.abs() < 1e-14);
                let f = s.exact_fields(y, x, 0.0);
                assert!(f.u.abs() < 1e-14);
            }
        }
        assert!(s.initial(0.0, 0.0) == 1.0);
    }

    #[test]
    fn boundary_values_respect_face_tags() {
        let s = Scenario::mms();
        let mesh = CartesianMesh::uniform(s.domain, 2, 2).unwrap();
        let basis = Basis1D::new(2);
        let bottom = mesh.face(crate::mesh::FaceId::horizontal(1, 0)).unwrap();
        let ud = s.boundary_values(&mesh, &basis, &bottom, Datum::UD, 0.3).unwrap();
        assert!(ud.iter().all(|c| c.abs() < 1e-15));
        assert!(s.boundary_values(&mesh, &basis, &bottom, Datum::VT, 0.3).is_err());
        let right = mesh.face(crate::mesh::FaceId::vertical(2, 1)).unwrap();
        let vr = s.boundary_values(&mesh, &basis, &right, Datum::VR, 0.3).unwrap();
        assert!(vr.iter().all(|c| c.abs() < 1e-15));
        let left = mesh.face(crate::mesh::FaceId::vertical(0, 1)).unwrap();
        assert!(s.boundary_values(&mesh, &basis, &left, Datum::QR, 0.0).is_err());
        let p = Scenario::peakon();
        let pm = CartesianMesh::uniform(p.domain, 4, 4).unwrap();
        let pr = pm.face(crate::mesh::FaceId::vertical(4, 2)).unwrap();
        assert!(p.boundary_values(&pm, &basis, &pr, Datum::VR, 0.5).unwrap().iter().all(|c| c.abs() < 1e-15));
    }
}
