//! Orthonormal Legendre bases, Gauss quadrature and the projection operators
//! onto `P_k` (1D, faces) and `Q_k = P_k x P_k` (elements).
//!
//! Coefficients are always taken in the orthonormal basis of the reference
//! interval `[-1, 1]`, so on a physical interval of half-width `J` the mass
//! matrix is `J * I` and on a cell it is `Jx * Jy * I`.

use crate::error::{HdgError, Result};
use crate::mesh::{Cell, Side};

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Quadrature1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature1D {
    /// `n`-point Gauss-Legendre rule, exact for degree `2n - 1`.
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one point");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = -((4 * i + 3) as f64 * std::f64::consts::PI / (4 * n + 2) as f64).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = x;
            weights[i] = w;
            nodes[n - 1 - i] = -x;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// The rule used everywhere for degree-`k` spaces: `2(k + 1)` points.
    pub fn for_degree(k: usize) -> Self {
        Self::gauss_legendre(2 * (k + 1))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
    }
}

/// Classical Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    for m in 1..n {
        let mf = m as f64;
        let p2 = ((2.0 * mf + 1.0) * x * p1 - mf * p0) / (mf + 1.0);
        // P'_{m+1} = P'_{m-1} + (2m + 1) P_m
        let d2 = d0 + (2.0 * mf + 1.0) * p1;
        p0 = p1;
        p1 = p2;
        d0 = d1;
        d1 = d2;
    }
    (p1, d1)
}

/// `L^2(-1, 1)`-orthonormal Legendre function `sqrt((2m+1)/2) P_m` and derivative.
pub fn orthonormal_legendre(m: usize, x: f64) -> (f64, f64) {
    let (p, d) = legendre_with_derivative(m, x);
    let s = ((2 * m + 1) as f64 / 2.0).sqrt();
    (s * p, s * d)
}

/// Evaluate a 1D expansion in the orthonormal basis at reference point `xi`.
pub fn eval_1d(coeffs: &[f64], xi: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(m, c)| c * orthonormal_legendre(m, xi).0)
        .sum()
}

/// Degree-`k` orthonormal basis tabulated at the quadrature nodes and endpoints.
#[derive(Clone, Debug)]
pub struct Basis1D {
    pub degree: usize,
    pub quad: Quadrature1D,
    /// `values[m][q]`
    pub values: Vec<Vec<f64>>,
    /// `derivatives[m][q]`, with respect to the reference coordinate.
    pub derivatives: Vec<Vec<f64>>,
    /// Values at `xi = -1`.
    pub at_left: Vec<f64>,
    /// Values at `xi = +1`.
    pub at_right: Vec<f64>,
}

impl Basis1D {
    pub fn new(degree: usize) -> Self {
        Self::with_quadrature(degree, Quadrature1D::for_degree(degree))
    }

    pub fn with_quadrature(degree: usize, quad: Quadrature1D) -> Self {
        let table = |f: &dyn Fn(f64) -> f64| quad.nodes.iter().map(|&x| f(x)).collect::<Vec<_>>();
        let values = (0..=degree).map(|m| table(&|x| orthonormal_legendre(m, x).0)).collect();
        let derivatives = (0..=degree).map(|m| table(&|x| orthonormal_legendre(m, x).1)).collect();
        let at_left = (0..=degree).map(|m| orthonormal_legendre(m, -1.0).0).collect();
        let at_right = (0..=degree).map(|m| orthonormal_legendre(m, 1.0).0).collect();
        Self {
            degree,
            quad,
            values,
            derivatives,
            at_left,
            at_right,
        }
    }

    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    pub fn nq(&self) -> usize {
        self.quad.len()
    }

    /// Values of the expansion at the quadrature nodes.
    pub fn eval_at_nodes(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.nq())
            .map(|q| coeffs.iter().zip(&self.values).map(|(c, row)| c * row[q]).sum())
            .collect()
    }

    /// L^2 projection of reference-node samples onto the basis.
    pub fn project_samples(&self, samples: &[f64]) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.quad.weights)
                    .zip(samples)
                    .map(|((v, w), s)| v * w * s)
                    .sum()
            })
            .collect()
    }

    /// Rows of the 1D projection operator acting on samples taken at the
    /// quadrature nodes followed by one endpoint sample. For the plain L^2
    /// projection the endpoint column is zero.
    fn operator_rows(&self, kind: Projection1D) -> Vec<Vec<f64>> {
        let n = self.dim();
        let nq = self.nq();
        let moment_row = |m: usize| {
            let mut row: Vec<f64> = (0..nq).map(|q| self.quad.weights[q] * self.values[m][q]).collect();
            row.push(0.0);
            row
        };
        let mut rows: Vec<Vec<f64>> = (0..n).map(moment_row).collect();
        let ends = match kind {
            Projection1D::L2 => return rows,
            Projection1D::Plus => &self.at_left,
            Projection1D::Minus => &self.at_right,
        };
        // Top coefficient fixed by endpoint interpolation.
        let k = n - 1;
        let mut last = vec![0.0; nq + 1];
        last[nq] = 1.0;
        for m in 0..k {
            for (l, r) in last.iter_mut().zip(&rows[m]) {
                *l -= ends[m] * r;
            }
        }
        for l in last.iter_mut() {
            *l /= ends[k];
        }
        rows[k] = last;
        rows
    }
}

/// Kinds of 1D projection onto `P_k(I)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection1D {
    /// Standard L^2 projection.
    L2,
    /// Moments against `P_{k-1}` plus interpolation at the left endpoint.
    Plus,
    /// Moments against `P_{k-1}` plus interpolation at the right endpoint.
    Minus,
}

/// Kinds of element projection onto `Q_k(K)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorProjection {
    /// `P_x (x) P_y`
    L2,
    /// `P_x^- (x) P_y^-`
    PiMinus,
    /// `P_x^+ (x) P_y^+`
    PiPlus,
}

impl TensorProjection {
    fn one_dimensional(self) -> Projection1D {
        match self {
            TensorProjection::L2 => Projection1D::L2,
            TensorProjection::PiMinus => Projection1D::Minus,
            TensorProjection::PiPlus => Projection1D::Plus,
        }
    }
}

/// L^2 projection of `f` onto `P_k(a, b)`.
pub fn l2_project_1d(basis: &Basis1D, a: f64, b: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let samples: Vec<f64> = basis.quad.nodes.iter().map(|&x| f(mid + half * x)).collect();
    basis.project_samples(&samples)
}

/// One-sided projection `P^+` (matches `f(a)`) or `P^-` (matches `f(b)`).
pub fn project_onesided(
    basis: &Basis1D,
    a: f64,
    b: f64,
    side: Projection1D,
    f: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    if basis.degree == 0 {
        return Err(HdgError::InvalidArgument(
            "one-sided projection needs k >= 1".into(),
        ));
    }
    let end = match side {
        Projection1D::Plus => a,
        Projection1D::Minus => b,
        Projection1D::L2 => return Ok(l2_project_1d(basis, a, b, f)),
    };
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut samples: Vec<f64> = basis.quad.nodes.iter().map(|&x| f(mid + half * x)).collect();
    samples.push(f(end));
    Ok(basis
        .operator_rows(side)
        .iter()
        .map(|row| row.iter().zip(&samples).map(|(r, s)| r * s).sum())
        .collect())
}

/// L^2 projection onto `P_k` of a face, parameterized by its end coordinates.
pub fn face_project(basis: &Basis1D, a: f64, b: f64, g: impl Fn(f64) -> f64) -> Vec<f64> {
    l2_project_1d(basis, a, b, g)
}

/// Tensor-product basis of `Q_k` with tables at the element quadrature points.
///
/// Basis index `a = ix * (k + 1) + iy`; quadrature point index
/// `q = qx * nq + qy`; face quadrature points follow the face's own
/// coordinate (`y` on vertical faces, `x` on horizontal faces).
#[derive(Clone, Debug)]
pub struct TensorBasis {
    pub basis: Basis1D,
    /// `phi[q * nb + a]`
    pub phi: Vec<f64>,
    /// Reference-coordinate derivatives, same layout as `phi`.
    pub dphi_xi: Vec<f64>,
    pub dphi_eta: Vec<f64>,
    /// Reference weights `w_qx * w_qy`.
    pub weights: Vec<f64>,
    /// Traces of the basis on each side: `face_phi[side][qf * nb + a]`.
    pub face_phi: [Vec<f64>; 4],
}

impl TensorBasis {
    pub fn new(degree: usize) -> Self {
        Self::from_basis(Basis1D::new(degree))
    }

    pub fn from_basis(basis: Basis1D) -> Self {
        let n1 = basis.dim();
        let nb = n1 * n1;
        let nq = basis.nq();
        let mut phi = vec![0.0; nq * nq * nb];
        let mut dphi_xi = vec![0.0; nq * nq * nb];
        let mut dphi_eta = vec![0.0; nq * nq * nb];
        let mut weights = vec![0.0; nq * nq];
        for qx in 0..nq {
            for qy in 0..nq {
                let q = qx * nq + qy;
                weights[q] = basis.quad.weights[qx] * basis.quad.weights[qy];
                for ix in 0..n1 {
                    for iy in 0..n1 {
                        let a = ix * n1 + iy;
                        phi[q * nb + a] = basis.values[ix][qx] * basis.values[iy][qy];
                        dphi_xi[q * nb + a] = basis.derivatives[ix][qx] * basis.values[iy][qy];
                        dphi_eta[q * nb + a] = basis.values[ix][qx] * basis.derivatives[iy][qy];
                    }
                }
            }
        }
        let face_table = |side: Side| {
            let mut t = vec![0.0; nq * nb];
            for qf in 0..nq {
                for ix in 0..n1 {
                    for iy in 0..n1 {
                        let v = match side {
                            Side::Left => basis.at_left[ix] * basis.values[iy][qf],
                            Side::Right => basis.at_right[ix] * basis.values[iy][qf],
                            Side::Bottom => basis.values[ix][qf] * basis.at_left[iy],
                            Side::Top => basis.values[ix][qf] * basis.at_right[iy],
                        };
                        t[qf * nb + ix * n1 + iy] = v;
                    }
                }
            }
            t
        };
        let face_phi = Side::ALL.map(face_table);
        Self {
            basis,
            phi,
            dphi_xi,
            dphi_eta,
            weights,
            face_phi,
        }
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    /// Number of basis functions, `(k + 1)^2`.
    pub fn nb(&self) -> usize {
        self.basis.dim() * self.basis.dim()
    }

    /// Number of face basis functions, `k + 1`.
    pub fn nf(&self) -> usize {
        self.basis.dim()
    }

    pub fn nq(&self) -> usize {
        self.basis.nq()
    }

    /// Number of volume quadrature points.
    pub fn nq2(&self) -> usize {
        self.nq() * self.nq()
    }

    /// Physical coordinates of volume quadrature point `q`.
    pub fn point(&self, cell: &Cell, q: usize) -> (f64, f64) {
        let nq = self.nq();
        let nodes = &self.basis.quad.nodes;
        (cell.map_x(nodes[q / nq]), cell.map_y(nodes[q % nq]))
    }

    /// Physical coordinates of face quadrature point `qf` on `side`.
    pub fn face_point(&self, cell: &Cell, side: Side, qf: usize) -> (f64, f64) {
        let t = self.basis.quad.nodes[qf];
        match side {
            Side::Left => (cell.x0, cell.map_y(t)),
            Side::Right => (cell.x1, cell.map_y(t)),
            Side::Bottom => (cell.map_x(t), cell.y0),
            Side::Top => (cell.map_x(t), cell.y1),
        }
    }

    /// Field values at all volume quadrature points.
    pub fn values_at_quadrature(&self, coeffs: &[f64]) -> Vec<f64> {
        table_times(&self.phi, coeffs, self.nb())
    }

    /// Physical gradient at all volume quadrature points.
    pub fn gradient_at_quadrature(&self, cell: &Cell, coeffs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (jx, jy) = cell.half_widths();
        let mut dx = table_times(&self.dphi_xi, coeffs, self.nb());
        let mut dy = table_times(&self.dphi_eta, coeffs, self.nb());
        dx.iter_mut().for_each(|v| *v /= jx);
        dy.iter_mut().for_each(|v| *v /= jy);
        (dx, dy)
    }

    /// Restriction of an element field to a side, at the face quadrature nodes.
    pub fn restrict_to_face(&self, coeffs: &[f64], side: Side) -> Vec<f64> {
        table_times(&self.face_phi[side as usize], coeffs, self.nb())
    }

    /// Face coefficients (`k + 1` of them) of the trace of an element field.
    pub fn trace_coefficients(&self, coeffs: &[f64], side: Side) -> Vec<f64> {
        let n1 = self.basis.dim();
        let mut out = vec![0.0; n1];
        for ix in 0..n1 {
            for iy in 0..n1 {
                let c = coeffs[ix * n1 + iy];
                match side {
                    Side::Left => out[iy] += c * self.basis.at_left[ix],
                    Side::Right => out[iy] += c * self.basis.at_right[ix],
                    Side::Bottom => out[ix] += c * self.basis.at_left[iy],
                    Side::Top => out[ix] += c * self.basis.at_right[iy],
                }
            }
        }
        out
    }

    /// Evaluate an element field at arbitrary physical points of the cell.
    pub fn eval(&self, cell: &Cell, coeffs: &[f64], points: &[(f64, f64)]) -> Vec<f64> {
        let n1 = self.basis.dim();
        points
            .iter()
            .map(|&(x, y)| {
                let (xi, eta) = cell.to_reference(x, y);
                let px: Vec<f64> = (0..n1).map(|m| orthonormal_legendre(m, xi).0).collect();
                let py: Vec<f64> = (0..n1).map(|m| orthonormal_legendre(m, eta).0).collect();
                let mut v = 0.0;
                for ix in 0..n1 {
                    for iy in 0..n1 {
                        v += coeffs[ix * n1 + iy] * px[ix] * py[iy];
                    }
                }
                v
            })
            .collect()
    }

    /// Physical gradient of an element field at arbitrary points of the cell.
    pub fn eval_grad(&self, cell: &Cell, coeffs: &[f64], points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let n1 = self.basis.dim();
        let (jx, jy) = cell.half_widths();
        points
            .iter()
            .map(|&(x, y)| {
                let (xi, eta) = cell.to_reference(x, y);
                let px: Vec<(f64, f64)> = (0..n1).map(|m| orthonormal_legendre(m, xi)).collect();
                let py: Vec<(f64, f64)> = (0..n1).map(|m| orthonormal_legendre(m, eta)).collect();
                let (mut gx, mut gy) = (0.0, 0.0);
                for ix in 0..n1 {
                    for iy in 0..n1 {
                        let c = coeffs[ix * n1 + iy];
                        gx += c * px[ix].1 * py[iy].0;
                        gy += c * px[ix].0 * py[iy].1;
                    }
                }
                (gx / jx, gy / jy)
            })
            .collect()
    }

    /// Project `f` onto `Q_k(cell)`.
    pub fn project(&self, cell: &Cell, kind: TensorProjection, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let b = &self.basis;
        let n1 = b.dim();
        let nq = b.nq();
        let kind1 = kind.one_dimensional();
        if kind1 != Projection1D::L2 && b.degree == 0 {
            // Nothing but the endpoint constraint is left; fall back to L2.
            return self.project(cell, TensorProjection::L2, f);
        }
        let rows = b.operator_rows(kind1);
        let end = match kind1 {
            Projection1D::Plus => -1.0,
            _ => 1.0,
        };
        // Samples on the (nq + 1)^2 grid of quadrature nodes plus the endpoint.
        let mut xs: Vec<f64> = b.quad.nodes.iter().map(|&t| cell.map_x(t)).collect();
        let mut ys: Vec<f64> = b.quad.nodes.iter().map(|&t| cell.map_y(t)).collect();
        xs.push(cell.map_x(end));
        ys.push(cell.map_y(end));
        let m = nq + 1;
        let needs_end = kind1 != Projection1D::L2;
        let mut samples = vec![0.0; m * m];
        for (px, &x) in xs.iter().enumerate() {
            for (py, &y) in ys.iter().enumerate() {
                if !needs_end && (px == nq || py == nq) {
                    continue;
                }
                samples[px * m + py] = f(x, y);
            }
        }
        // C = Tx * F * Ty^T
        let mut tmp = vec![0.0; n1 * m];
        for a in 0..n1 {
            for py in 0..m {
                tmp[a * m + py] = (0..m).map(|px| rows[a][px] * samples[px * m + py]).sum();
            }
        }
        let mut coeffs = vec![0.0; n1 * n1];
        for ix in 0..n1 {
            for iy in 0..n1 {
                coeffs[ix * n1 + iy] = (0..m).map(|py| tmp[ix * m + py] * rows[iy][py]).sum();
            }
        }
        coeffs
    }
}

/// `out[q] = sum_a table[q * nb + a] * coeffs[a]`
fn table_times(table: &[f64], coeffs: &[f64], nb: usize) -> Vec<f64> {
    table
        .chunks_exact(nb)
        .map(|row| row.iter().zip(coeffs).map(|(t, c)| t * c).sum())
        .collect()
}

/// Squared L^2 norm of an element field from its coefficients.
pub fn l2_norm_sq(cell: &Cell, coeffs: &[f64]) -> f64 {
    let (jx, jy) = cell.half_widths();
    jx * jy * coeffs.iter().map(|c| c * c).sum::<f64>()
}
