//! Element-local HDG weak forms, numerical traces and their linearization.
//!
//! The unknowns on an element are the seven fields `(u, q, p, s, v, z, r)`
//! of the first-order system
//!
//! ```text
//! q = u_x,  p = (u q)_x,  s = u_y,  v_x = s,  z = r_x,
//! r = (z - p + f(u) + q^2/2)_x + v_y,  u_t + r = 0,
//! ```
//!
//! with `f(u) = 2 kappa u + 3/2 u^2`. Residual rows are grouped by the field
//! that owns the equation: the `u` rows hold the time-discrete equation
//! `((u - u_prev)/dt + r, phi)`, the `q` rows hold `q = u_x`, the `v` rows
//! hold `v_x = s`, and so on.
//!
//! Seven trace blocks enter one element: `u^` on its left, right and bottom
//! sides, `q^` on its left and right sides, `v^` on its right and top sides.
//! On the remaining sides the element's own trace is used (`v^ = v_h` on the
//! left and bottom, `u^ = u_h` on top).

use crate::fem::TensorBasis;
use crate::mesh::{Cell, Side};

pub const NUM_FIELDS: usize = 7;
pub const NUM_SLOTS: usize = 7;
pub const NUM_TRANSMISSION_ROWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    U = 0,
    Q = 1,
    P = 2,
    S = 3,
    V = 4,
    Z = 5,
    R = 6,
}

impl Field {
    pub const ALL: [Field; NUM_FIELDS] = [Field::U, Field::Q, Field::P, Field::S, Field::V, Field::Z, Field::R];

    pub fn name(self) -> &'static str {
        ["u", "q", "p", "s", "v", "z", "r"][self as usize]
    }
}

/// Trace blocks seen by a single element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceSlot {
    ULeft = 0,
    URight = 1,
    UBottom = 2,
    QLeft = 3,
    QRight = 4,
    VRight = 5,
    VTop = 6,
}

impl TraceSlot {
    pub const ALL: [TraceSlot; NUM_SLOTS] = [
        TraceSlot::ULeft,
        TraceSlot::URight,
        TraceSlot::UBottom,
        TraceSlot::QLeft,
        TraceSlot::QRight,
        TraceSlot::VRight,
        TraceSlot::VTop,
    ];
}

/// Rows of the transmission conditions an element contributes to, one
/// block of `k + 1` face moments each.
///
/// * `*UqFlux`: `<(u q)^ n_x, gamma>` on vertical faces
/// * `*GFlux`: `<z^ - p^ + f^ , nu n_x>` on vertical faces
/// * `LeftV`/`RightV`: `<v^ n_x, lambda>` on vertical faces
/// * `BottomU`/`TopU`: `-<u^ n_y, theta>` on horizontal faces
/// * `BottomV`/`TopV`: `<v^ n_y, zeta>` on horizontal faces
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransmissionRow {
    LeftUqFlux = 0,
    LeftGFlux = 1,
    LeftV = 2,
    RightUqFlux = 3,
    RightGFlux = 4,
    RightV = 5,
    BottomU = 6,
    BottomV = 7,
    TopU = 8,
    TopV = 9,
}

impl TransmissionRow {
    pub const ALL: [TransmissionRow; NUM_TRANSMISSION_ROWS] = [
        TransmissionRow::LeftUqFlux,
        TransmissionRow::LeftGFlux,
        TransmissionRow::LeftV,
        TransmissionRow::RightUqFlux,
        TransmissionRow::RightGFlux,
        TransmissionRow::RightV,
        TransmissionRow::BottomU,
        TransmissionRow::BottomV,
        TransmissionRow::TopU,
        TransmissionRow::TopV,
    ];

    pub fn side(self) -> Side {
        use TransmissionRow::*;
        match self {
            LeftUqFlux | LeftGFlux | LeftV => Side::Left,
            RightUqFlux | RightGFlux | RightV => Side::Right,
            BottomU | BottomV => Side::Bottom,
            TopU | TopV => Side::Top,
        }
    }
}

/// The quadratic flux `f(u) = 2 kappa u + 3/2 u^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flux {
    pub kappa: f64,
}

impl Flux {
    pub fn f(&self, u: f64) -> f64 {
        2.0 * self.kappa * u + 1.5 * u * u
    }

    pub fn df(&self, u: f64) -> f64 {
        2.0 * self.kappa + 3.0 * u
    }
}

/// `tilde tau(u_hat, u) = n_x / (u_hat - u)^2 * int_{u_hat}^{u} (f(s) - f(u)) ds`.
///
/// For quadratic `f` the integral is `(u - u_hat)^2 (u - u_hat - f'(u)) / 2`,
/// so the quotient is the polynomial `n_x (u - u_hat - f'(u)) / 2`, valid
/// also in the limit `u_hat = u`.
pub fn compute_tilde_tau(u_hat: f64, u: f64, n_x: f64, kappa: f64) -> f64 {
    let flux = Flux { kappa };
    0.5 * n_x * (u - u_hat - flux.df(u))
}

/// `sup_{s in [u_hat, u]} |f'(s)| / 2 + eps`; `f'` is affine so the sup is
/// attained at an endpoint.
pub fn adaptive_tau_f(u_hat: f64, u: f64, kappa: f64, eps: f64) -> f64 {
    let flux = Flux { kappa };
    0.5 * flux.df(u_hat).abs().max(flux.df(u).abs()) + eps
}

/// Choice of the `f^` stabilization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauF {
    Constant(f64),
    /// `sup |f'|/2 + eps` over the trace interval, evaluated pointwise.
    Adaptive { eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilizationParams {
    pub tau_zpu_plus: f64,
    pub tau_zpu_minus: f64,
    pub tau_zpv_minus: f64,
    pub tau_uqq: f64,
    pub tau_f: TauF,
}

impl Default for StabilizationParams {
    fn default() -> Self {
        Self {
            tau_zpu_plus: -1.0,
            tau_zpu_minus: -1.0,
            tau_zpv_minus: 1.0,
            tau_uqq: -0.25,
            tau_f: TauF::Constant(4.0),
        }
    }
}

impl StabilizationParams {
    /// Value and partial derivatives `(tau, d/du_hat, d/du)`.
    pub fn tau_f(&self, u_hat: f64, u: f64, kappa: f64) -> (f64, f64, f64) {
        match self.tau_f {
            TauF::Constant(t) => (t, 0.0, 0.0),
            TauF::Adaptive { eps } => {
                let flux = Flux { kappa };
                let (a, b) = (flux.df(u_hat), flux.df(u));
                if a.abs() >= b.abs() {
                    (0.5 * a.abs() + eps, 1.5 * a.signum(), 0.0)
                } else {
                    (0.5 * b.abs() + eps, 0.0, 1.5 * b.signum())
                }
            }
        }
    }

    /// Sign conditions on the constant parameters.
    pub fn check_constant_conditions(&self) -> Result<(), String> {
        if self.tau_zpu_plus > 0.0 {
            return Err(format!("tau_zpu_plus = {} must be <= 0", self.tau_zpu_plus));
        }
        if self.tau_zpu_minus > 0.0 {
            return Err(format!("tau_zpu_minus = {} must be <= 0", self.tau_zpu_minus));
        }
        if self.tau_zpv_minus * self.tau_zpv_minus > -2.0 * self.tau_zpu_minus {
            return Err(format!(
                "tau_zpv_minus^2 = {} exceeds -2 tau_zpu_minus = {}",
                self.tau_zpv_minus * self.tau_zpv_minus,
                -2.0 * self.tau_zpu_minus
            ));
        }
        if self.tau_uqq > 0.0 {
            return Err(format!("tau_uqq = {} must be <= 0", self.tau_uqq));
        }
        if let TauF::Adaptive { eps } = self.tau_f {
            if eps <= 0.0 {
                return Err(format!("adaptive tau_f needs eps > 0, got {eps}"));
            }
        }
        Ok(())
    }

    /// Smallest `tau_f - tilde tau` over the given `(u_hat, u, n_x)` samples.
    pub fn min_tau_f_margin(&self, kappa: f64, samples: impl IntoIterator<Item = (f64, f64, f64)>) -> f64 {
        samples
            .into_iter()
            .map(|(uh, u, nx)| self.tau_f(uh, u, kappa).0 - compute_tilde_tau(uh, u, nx, kappa))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Seven field blocks of `(k + 1)^2` coefficients, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementState {
    pub nb: usize,
    pub data: Vec<f64>,
}

impl ElementState {
    pub fn zeros(nb: usize) -> Self {
        Self {
            nb,
            data: vec![0.0; NUM_FIELDS * nb],
        }
    }

    pub fn field(&self, f: Field) -> &[f64] {
        &self.data[f as usize * self.nb..(f as usize + 1) * self.nb]
    }

    pub fn field_mut(&mut self, f: Field) -> &mut [f64] {
        &mut self.data[f as usize * self.nb..(f as usize + 1) * self.nb]
    }
}

/// Trace coefficients seen by one element, plus the previous-step `u^`
/// on its vertical sides (needed for `r^ = -(u^)_t`).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceTraceValues {
    pub nf: usize,
    /// `NUM_SLOTS` blocks of `nf` coefficients, indexed by [`TraceSlot`].
    pub data: Vec<f64>,
    pub u_prev_left: Vec<f64>,
    pub u_prev_right: Vec<f64>,
}

impl FaceTraceValues {
    pub fn zeros(nf: usize) -> Self {
        Self {
            nf,
            data: vec![0.0; NUM_SLOTS * nf],
            u_prev_left: vec![0.0; nf],
            u_prev_right: vec![0.0; nf],
        }
    }

    pub fn slot(&self, s: TraceSlot) -> &[f64] {
        &self.data[s as usize * self.nf..(s as usize + 1) * self.nf]
    }

    pub fn slot_mut(&mut self, s: TraceSlot) -> &mut [f64] {
        &mut self.data[s as usize * self.nf..(s as usize + 1) * self.nf]
    }
}

/// Reference-element operators shared by all cells of a given degree.
#[derive(Clone, Debug)]
pub struct ReferenceOperators {
    pub basis: TensorBasis,
    /// `sx[a * nb + b] = int dphi_a/dxi phi_b` on the reference square.
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    /// `psi[qf * nf + m]`: face basis at face quadrature nodes.
    pub psi: Vec<f64>,
}

impl ReferenceOperators {
    pub fn new(degree: usize) -> Self {
        let basis = TensorBasis::new(degree);
        let nb = basis.nb();
        let nq2 = basis.nq2();
        let mut sx = vec![0.0; nb * nb];
        let mut sy = vec![0.0; nb * nb];
        for q in 0..nq2 {
            let w = basis.weights[q];
            for a in 0..nb {
                let (dx, dy) = (basis.dphi_xi[q * nb + a], basis.dphi_eta[q * nb + a]);
                for b in 0..nb {
                    let p = basis.phi[q * nb + b];
                    sx[a * nb + b] += w * dx * p;
                    sy[a * nb + b] += w * dy * p;
                }
            }
        }
        let nf = basis.nf();
        let nq = basis.nq();
        let mut psi = vec![0.0; nq * nf];
        for qf in 0..nq {
            for m in 0..nf {
                psi[qf * nf + m] = basis.basis.values[m][qf];
            }
        }
        Self { basis, sx, sy, psi }
    }

    pub fn nb(&self) -> usize {
        self.basis.nb()
    }

    pub fn nf(&self) -> usize {
        self.basis.nf()
    }
}

/// Inputs of one element-local evaluation.
#[derive(Clone, Copy)]
pub struct LocalInputs<'a> {
    pub state: &'a ElementState,
    pub traces: &'a FaceTraceValues,
    pub u_prev: &'a [f64],
    /// Source added to the `r` equation, evaluated at `(x, y)` for the new time.
    pub source: Option<&'a (dyn Fn(f64, f64) -> f64 + Sync)>,
}

/// Residuals and (optionally) derivatives produced by one element.
#[derive(Clone, Debug)]
pub struct LocalOutput {
    pub nb: usize,
    pub nf: usize,
    /// `7 nb` element residual rows.
    pub residual: Vec<f64>,
    /// `7 nb x 7 nb`, row-major.
    pub jac_state: Vec<f64>,
    /// `7 nb x 7 nf`, row-major; columns indexed by [`TraceSlot`].
    pub jac_trace: Vec<f64>,
    /// `10 nf` transmission rows indexed by [`TransmissionRow`].
    pub transmission: Vec<f64>,
    /// `10 nf x 7 nb`
    pub trans_jac_state: Vec<f64>,
    /// `10 nf x 7 nf`
    pub trans_jac_trace: Vec<f64>,
}

impl LocalOutput {
    fn new(nb: usize, nf: usize, with_jacobian: bool) -> Self {
        let ne = NUM_FIELDS * nb;
        let nt = NUM_SLOTS * nf;
        let nr = NUM_TRANSMISSION_ROWS * nf;
        let sized = |n: usize| if with_jacobian { vec![0.0; n] } else { Vec::new() };
        Self {
            nb,
            nf,
            residual: vec![0.0; ne],
            jac_state: sized(ne * ne),
            jac_trace: sized(ne * nt),
            transmission: vec![0.0; nr],
            trans_jac_state: sized(nr * ne),
            trans_jac_trace: sized(nr * nt),
        }
    }

    pub fn has_jacobian(&self) -> bool {
        !self.jac_state.is_empty()
    }

    pub fn residual_block(&self, f: Field) -> &[f64] {
        &self.residual[f as usize * self.nb..(f as usize + 1) * self.nb]
    }

    pub fn transmission_block(&self, r: TransmissionRow) -> &[f64] {
        &self.transmission[r as usize * self.nf..(r as usize + 1) * self.nf]
    }
}

/// One element's weak forms at a given time step.
pub struct LocalProblem<'a> {
    pub ops: &'a ReferenceOperators,
    pub cell: Cell,
    pub dt: f64,
    pub flux: Flux,
    pub params: &'a StabilizationParams,
}

/// Values of the element fields and traces at the quadrature nodes of one side.
struct SideValues {
    u: Vec<f64>,
    q: Vec<f64>,
    p: Vec<f64>,
    v: Vec<f64>,
    z: Vec<f64>,
}

impl<'a> LocalProblem<'a> {
    /// Residual only.
    pub fn residual(&self, inputs: &LocalInputs) -> LocalOutput {
        self.evaluate(inputs, false)
    }

    /// Residual together with its exact derivatives.
    pub fn linearize(&self, inputs: &LocalInputs) -> LocalOutput {
        self.evaluate(inputs, true)
    }

    fn evaluate(&self, inputs: &LocalInputs, jac: bool) -> LocalOutput {
        use Field::*;
        let ops = self.ops;
        let tb = &ops.basis;
        let nb = tb.nb();
        let nf = tb.nf();
        let nq = tb.nq();
        let nq2 = tb.nq2();
        let ne = NUM_FIELDS * nb;
        let nt = NUM_SLOTS * nf;
        let (jx, jy) = self.cell.half_widths();
        let area = jx * jy;
        let dt = self.dt;
        let st = inputs.state;
        let tr = inputs.traces;
        let mut out = LocalOutput::new(nb, nf, jac);

        // Mass-type terms (orthonormal basis).
        {
            let res = &mut out.residual;
            for a in 0..nb {
                let row = |f: Field| f as usize * nb + a;
                res[row(U)] += area * ((st.field(U)[a] - inputs.u_prev[a]) / dt + st.field(R)[a]);
                res[row(Q)] += area * st.field(Q)[a];
                res[row(P)] += area * st.field(P)[a];
                res[row(S)] += area * st.field(S)[a];
                res[row(V)] += area * st.field(S)[a];
                res[row(Z)] += area * st.field(Z)[a];
                res[row(R)] += area * st.field(R)[a];
            }
            if jac {
                let js = &mut out.jac_state;
                for a in 0..nb {
                    let mut set = |rf: Field, cf: Field, v: f64| js[(rf as usize * nb + a) * ne + cf as usize * nb + a] += v;
                    set(U, U, area / dt);
                    set(U, R, area);
                    set(Q, Q, area);
                    set(P, P, area);
                    set(S, S, area);
                    set(V, S, area);
                    set(Z, Z, area);
                    set(R, R, area);
                }
            }
        }

        // Linear stiffness terms: (w, d_x phi) = jy * Sx w and (w, d_y phi) = jx * Sy w.
        let linear: [(Field, Field, &[f64], f64); 5] = [
            (Q, U, &ops.sx, jy),
            (S, U, &ops.sy, jx),
            (V, V, &ops.sx, jy),
            (Z, R, &ops.sx, jy),
            (R, V, &ops.sy, jx),
        ];
        for (rf, cf, mat, scale) in linear {
            let w = st.field(cf);
            for a in 0..nb {
                let s: f64 = (0..nb).map(|b| mat[a * nb + b] * w[b]).sum();
                out.residual[rf as usize * nb + a] += scale * s;
            }
            if jac {
                for a in 0..nb {
                    let r = (rf as usize * nb + a) * ne + cf as usize * nb;
                    for b in 0..nb {
                        out.jac_state[r + b] += scale * mat[a * nb + b];
                    }
                }
            }
        }
        // (z - p, d_x phi_r) is linear as well.
        for (cf, sign) in [(Z, 1.0), (P, -1.0)] {
            let w = st.field(cf);
            for a in 0..nb {
                let s: f64 = (0..nb).map(|b| ops.sx[a * nb + b] * w[b]).sum();
                out.residual[R as usize * nb + a] += sign * jy * s;
            }
            if jac {
                for a in 0..nb {
                    let r = (R as usize * nb + a) * ne + cf as usize * nb;
                    for b in 0..nb {
                        out.jac_state[r + b] += sign * jy * ops.sx[a * nb + b];
                    }
                }
            }
        }

        // Nonlinear volume terms, tested against d_x phi:
        //   p rows: (u q, d_x phi),  r rows: (f(u) + q^2/2, d_x phi).
        let uq = tb.values_at_quadrature(st.field(U));
        let qq = tb.values_at_quadrature(st.field(Q));
        let wx: Vec<f64> = tb.weights.iter().map(|w| w * jy).collect(); // area / jx
        {
            let g_p: Vec<f64> = (0..nq2).map(|q| wx[q] * uq[q] * qq[q]).collect();
            let g_r: Vec<f64> = (0..nq2)
                .map(|q| wx[q] * (self.flux.f(uq[q]) + 0.5 * qq[q] * qq[q]))
                .collect();
            for a in 0..nb {
                let (mut sp, mut sr) = (0.0, 0.0);
                for q in 0..nq2 {
                    let d = tb.dphi_xi[q * nb + a];
                    sp += g_p[q] * d;
                    sr += g_r[q] * d;
                }
                out.residual[P as usize * nb + a] += sp;
                out.residual[R as usize * nb + a] += sr;
            }
            if jac {
                let c_pu: Vec<f64> = (0..nq2).map(|q| wx[q] * qq[q]).collect();
                let c_pq: Vec<f64> = (0..nq2).map(|q| wx[q] * uq[q]).collect();
                let c_ru: Vec<f64> = (0..nq2).map(|q| wx[q] * self.flux.df(uq[q])).collect();
                let c_rq = &c_pu;
                let blocks: [(Field, Field, &[f64]); 4] = [(P, U, &c_pu), (P, Q, &c_pq), (R, U, &c_ru), (R, Q, c_rq)];
                for (rf, cf, c) in blocks {
                    weighted_product(
                        &mut out.jac_state,
                        ne,
                        rf as usize * nb,
                        cf as usize * nb,
                        c,
                        &tb.dphi_xi,
                        nb,
                        &tb.phi,
                        nb,
                    );
                }
            }
        }

        // Source term in the r equation.
        if let Some(src) = inputs.source {
            let vals: Vec<f64> = (0..nq2)
                .map(|q| {
                    let (x, y) = tb.point(&self.cell, q);
                    area * tb.weights[q] * src(x, y)
                })
                .collect();
            for a in 0..nb {
                let s: f64 = (0..nq2).map(|q| vals[q] * tb.phi[q * nb + a]).sum();
                out.residual[R as usize * nb + a] -= s;
            }
        }

        // Face terms.
        for side in Side::ALL {
            let (nx, ny) = side.normal();
            let phi_s = &tb.face_phi[side as usize];
            let jf = if nx != 0.0 { jy } else { jx };
            let wf: Vec<f64> = tb.basis.quad.weights.iter().map(|w| w * jf).collect();
            let sv = SideValues {
                u: tb.restrict_to_face(st.field(U), side),
                q: tb.restrict_to_face(st.field(Q), side),
                p: tb.restrict_to_face(st.field(P), side),
                v: tb.restrict_to_face(st.field(V), side),
                z: tb.restrict_to_face(st.field(Z), side),
            };
            let trace_vals = |slot: TraceSlot| tb.basis.eval_at_nodes(tr.slot(slot));

            let mut ctx = FaceAccumulator {
                out: &mut out,
                nb,
                nf,
                ne,
                nt,
                phi_s,
                psi: &ops.psi,
                wf: &wf,
                jac,
            };

            match side {
                Side::Left | Side::Right => {
                    let (u_slot, q_slot, u_prev) = if side == Side::Left {
                        (TraceSlot::ULeft, TraceSlot::QLeft, &tr.u_prev_left)
                    } else {
                        (TraceSlot::URight, TraceSlot::QRight, &tr.u_prev_right)
                    };
                    let uh = trace_vals(u_slot);
                    let qh = trace_vals(q_slot);
                    let uh_prev = tb.basis.eval_at_nodes(u_prev);
                    let vh = if side == Side::Right { trace_vals(TraceSlot::VRight) } else { sv.v.clone() };
                    let tau_zpu = if side == Side::Left { self.params.tau_zpu_plus } else { self.params.tau_zpu_minus };
                    let tau_zpv = if side == Side::Right { self.params.tau_zpv_minus } else { 0.0 };
                    let tau_uqq = self.params.tau_uqq;

                    // q rows: -<u^ n_x, phi>
                    let c: Vec<f64> = uh.iter().map(|v| -nx * v).collect();
                    ctx.res_elem(Q, &c);
                    ctx.jac_elem_trace(Q, u_slot, &vec![-nx; nq]);

                    // p rows: -<(u q)^ n_x, phi>
                    let fuq: Vec<f64> = (0..nq)
                        .map(|i| sv.u[i] * 0.5 * (qh[i] + sv.q[i]) + tau_uqq * (qh[i] - sv.q[i]) * nx)
                        .collect();
                    let d_u: Vec<f64> = (0..nq).map(|i| 0.5 * (qh[i] + sv.q[i])).collect();
                    let d_q: Vec<f64> = (0..nq).map(|i| 0.5 * sv.u[i] - tau_uqq * nx).collect();
                    let d_qh: Vec<f64> = (0..nq).map(|i| 0.5 * sv.u[i] + tau_uqq * nx).collect();
                    ctx.res_elem(P, &scaled(&fuq, -nx));
                    ctx.jac_elem_state(P, U, &scaled(&d_u, -nx));
                    ctx.jac_elem_state(P, Q, &scaled(&d_q, -nx));
                    ctx.jac_elem_trace(P, q_slot, &scaled(&d_qh, -nx));

                    // v rows: -<v^ n_x, phi>
                    ctx.res_elem(V, &scaled(&vh, -nx));
                    if side == Side::Right {
                        ctx.jac_elem_trace(V, TraceSlot::VRight, &vec![-nx; nq]);
                    } else {
                        ctx.jac_elem_state(V, V, &vec![-nx; nq]);
                    }

                    // z rows: -<r^ n_x, phi>, r^ = -(u^ - u^_prev)/dt
                    let rh: Vec<f64> = (0..nq).map(|i| -(uh[i] - uh_prev[i]) / dt).collect();
                    ctx.res_elem(Z, &scaled(&rh, -nx));
                    ctx.jac_elem_trace(Z, u_slot, &vec![nx / dt; nq]);

                    // r rows: -<(z^ - p^ + f^ + q^^2/2) n_x, phi>
                    let mut g = vec![0.0; nq];
                    let mut dg_u = vec![0.0; nq];
                    let mut dg_uh = vec![0.0; nq];
                    for i in 0..nq {
                        let jump = uh[i] - sv.u[i];
                        let (tf, dtf_uh, dtf_u) = self.params.tau_f(uh[i], sv.u[i], self.flux.kappa);
                        g[i] = sv.z[i] - sv.p[i] + tau_zpu * jump * nx + self.flux.f(sv.u[i]) - tf * jump * nx;
                        dg_u[i] = -tau_zpu * nx + self.flux.df(sv.u[i]) + tf * nx - dtf_u * jump * nx;
                        dg_uh[i] = tau_zpu * nx - tf * nx - dtf_uh * jump * nx;
                        if side == Side::Right {
                            g[i] += tau_zpv * (vh[i] - sv.v[i]) * nx;
                        }
                    }
                    let full: Vec<f64> = (0..nq).map(|i| g[i] + 0.5 * qh[i] * qh[i]).collect();
                    ctx.res_elem(R, &scaled(&full, -nx));
                    ctx.jac_elem_state(R, Z, &vec![-nx; nq]);
                    ctx.jac_elem_state(R, P, &vec![nx; nq]);
                    ctx.jac_elem_state(R, U, &scaled(&dg_u, -nx));
                    ctx.jac_elem_trace(R, u_slot, &scaled(&dg_uh, -nx));
                    ctx.jac_elem_trace(R, q_slot, &scaled(&qh, -nx));
                    if side == Side::Right {
                        ctx.jac_elem_state(R, V, &vec![tau_zpv * nx * nx; nq]);
                        ctx.jac_elem_trace(R, TraceSlot::VRight, &vec![-tau_zpv * nx * nx; nq]);
                    }

                    // Transmission rows with the element's own n_x.
                    let (row_uq, row_g, row_v) = if side == Side::Left {
                        (TransmissionRow::LeftUqFlux, TransmissionRow::LeftGFlux, TransmissionRow::LeftV)
                    } else {
                        (TransmissionRow::RightUqFlux, TransmissionRow::RightGFlux, TransmissionRow::RightV)
                    };
                    ctx.res_trans(row_uq, &scaled(&fuq, nx));
                    ctx.jac_trans_state(row_uq, U, &scaled(&d_u, nx));
                    ctx.jac_trans_state(row_uq, Q, &scaled(&d_q, nx));
                    ctx.jac_trans_trace(row_uq, q_slot, &scaled(&d_qh, nx));

                    ctx.res_trans(row_g, &scaled(&g, nx));
                    ctx.jac_trans_state(row_g, Z, &vec![nx; nq]);
                    ctx.jac_trans_state(row_g, P, &vec![-nx; nq]);
                    ctx.jac_trans_state(row_g, U, &scaled(&dg_u, nx));
                    ctx.jac_trans_trace(row_g, u_slot, &scaled(&dg_uh, nx));
                    if side == Side::Right {
                        ctx.jac_trans_state(row_g, V, &vec![-tau_zpv * nx * nx; nq]);
                        ctx.jac_trans_trace(row_g, TraceSlot::VRight, &vec![tau_zpv * nx * nx; nq]);
                    }

                    ctx.res_trans(row_v, &scaled(&vh, nx));
                    if side == Side::Right {
                        ctx.jac_trans_trace(row_v, TraceSlot::VRight, &vec![nx; nq]);
                    } else {
                        ctx.jac_trans_state(row_v, V, &vec![nx; nq]);
                    }
                }
                Side::Bottom | Side::Top => {
                    // s rows: -<u^ n_y, phi>; r rows: -<v^ n_y, phi>
                    let (uh, vh) = if side == Side::Bottom {
                        (trace_vals(TraceSlot::UBottom), sv.v.clone())
                    } else {
                        (sv.u.clone(), trace_vals(TraceSlot::VTop))
                    };
                    ctx.res_elem(S, &scaled(&uh, -ny));
                    ctx.res_elem(R, &scaled(&vh, -ny));
                    let (row_u, row_v) = if side == Side::Bottom {
                        ctx.jac_elem_trace(S, TraceSlot::UBottom, &vec![-ny; nq]);
                        ctx.jac_elem_state(R, V, &vec![-ny; nq]);
                        (TransmissionRow::BottomU, TransmissionRow::BottomV)
                    } else {
                        ctx.jac_elem_state(S, U, &vec![-ny; nq]);
                        ctx.jac_elem_trace(R, TraceSlot::VTop, &vec![-ny; nq]);
                        (TransmissionRow::TopU, TransmissionRow::TopV)
                    };
                    // -<u^ n_y, theta> and <v^ n_y, zeta>
                    ctx.res_trans(row_u, &scaled(&uh, -ny));
                    ctx.res_trans(row_v, &scaled(&vh, ny));
                    if side == Side::Bottom {
                        ctx.jac_trans_trace(row_u, TraceSlot::UBottom, &vec![-ny; nq]);
                        ctx.jac_trans_state(row_v, V, &vec![ny; nq]);
                    } else {
                        ctx.jac_trans_state(row_u, U, &vec![-ny; nq]);
                        ctx.jac_trans_trace(row_v, TraceSlot::VTop, &vec![ny; nq]);
                    }
                }
            }
        }
        out
    }
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// `M[r0 + a, c0 + b] += sum_q c[q] test[q, a] trial[q, b]`
#[allow(clippy::too_many_arguments)]
fn weighted_product(
    m: &mut [f64],
    ld: usize,
    r0: usize,
    c0: usize,
    c: &[f64],
    test: &[f64],
    nt: usize,
    trial: &[f64],
    ntr: usize,
) {
    for (q, &cq) in c.iter().enumerate() {
        if cq == 0.0 {
            continue;
        }
        let trow = &trial[q * ntr..(q + 1) * ntr];
        for a in 0..nt {
            let s = cq * test[q * nt + a];
            if s == 0.0 {
                continue;
            }
            let dst = &mut m[(r0 + a) * ld + c0..(r0 + a) * ld + c0 + ntr];
            for (d, t) in dst.iter_mut().zip(trow) {
                *d += s * t;
            }
        }
    }
}

/// Helper that accumulates face integrals of one side into a [`LocalOutput`].
struct FaceAccumulator<'o, 't> {
    out: &'o mut LocalOutput,
    nb: usize,
    nf: usize,
    ne: usize,
    nt: usize,
    phi_s: &'t [f64],
    psi: &'t [f64],
    wf: &'t [f64],
    jac: bool,
}

impl FaceAccumulator<'_, '_> {
    fn weights(&self, c: &[f64]) -> Vec<f64> {
        c.iter().zip(self.wf).map(|(a, b)| a * b).collect()
    }

    fn res_elem(&mut self, rf: Field, vals: &[f64]) {
        let c = self.weights(vals);
        let nb = self.nb;
        for a in 0..nb {
            let s: f64 = c.iter().enumerate().map(|(q, cq)| cq * self.phi_s[q * nb + a]).sum();
            self.out.residual[rf as usize * nb + a] += s;
        }
    }

    fn jac_elem_state(&mut self, rf: Field, cf: Field, d: &[f64]) {
        if !self.jac {
            return;
        }
        let c = self.weights(d);
        let nb = self.nb;
        weighted_product(&mut self.out.jac_state, self.ne, rf as usize * nb, cf as usize * nb, &c, self.phi_s, nb, self.phi_s, nb);
    }

    fn jac_elem_trace(&mut self, rf: Field, slot: TraceSlot, d: &[f64]) {
        if !self.jac {
            return;
        }
        let c = self.weights(d);
        let (nb, nf) = (self.nb, self.nf);
        weighted_product(&mut self.out.jac_trace, self.nt, rf as usize * nb, slot as usize * nf, &c, self.phi_s, nb, self.psi, nf);
    }

    fn res_trans(&mut self, row: TransmissionRow, vals: &[f64]) {
        let c = self.weights(vals);
        let nf = self.nf;
        for m in 0..nf {
            let s: f64 = c.iter().enumerate().map(|(q, cq)| cq * self.psi[q * nf + m]).sum();
            self.out.transmission[row as usize * nf + m] += s;
        }
    }

    fn jac_trans_state(&mut self, row: TransmissionRow, cf: Field, d: &[f64]) {
        if !self.jac {
            return;
        }
        let c = self.weights(d);
        let (nb, nf) = (self.nb, self.nf);
        weighted_product(&mut self.out.trans_jac_state, self.ne, row as usize * nf, cf as usize * nb, &c, self.psi, nf, self.phi_s, nb);
    }

    fn jac_trans_trace(&mut self, row: TransmissionRow, slot: TraceSlot, d: &[f64]) {
        if !self.jac {
            return;
        }
        let c = self.weights(d);
        let nf = self.nf;
        weighted_product(&mut self.out.trans_jac_trace, self.nt, row as usize * nf, slot as usize * nf, &c, self.psi, nf, self.psi, nf);
    }
}
