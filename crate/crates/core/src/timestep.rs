//! Implicit Euler time marching, initialization and energy diagnostics.

use faer::Mat;

use crate::error::{HdgError, Result};
use crate::fem::{Basis1D, Quadrature1D, TensorBasis, TensorProjection};
use crate::forms::{Field, Flux, ReferenceOperators, StabilizationParams};
use crate::mesh::{BoundaryTag, CartesianMesh, ElementId, Side};
use crate::scenarios::{Datum, Scenario, ScenarioKind};
use crate::solver::{
    newton_solve, vertical_trace_samples, DenseLu, NewtonReport, NewtonSettings, Solution, SparseSolver, StepContext,
    TraceFamily, TransmissionNorms,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Record diagnostics every `cadence` steps (the final step is always recorded).
    pub cadence: usize,
}

impl TimeConfig {
    pub fn new(dt: f64, t_final: f64) -> Result<Self> {
        let c = Self { dt, t_final, cadence: 1 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.t_final.is_finite() || self.dt > self.t_final {
            return Err(HdgError::InvalidArgument(format!(
                "need 0 < dt <= T, got dt = {}, T = {}",
                self.dt, self.t_final
            )));
        }
        if self.cadence == 0 {
            return Err(HdgError::InvalidArgument("diagnostics cadence must be >= 1".into()));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        ((self.t_final / self.dt).round() as usize).max(1)
    }

    /// Step size adjusted so that the last step lands on `t_final` exactly.
    pub fn effective_dt(&self) -> f64 {
        self.t_final / self.num_steps() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub norm_u: f64,
    pub norm_q: f64,
    pub newton_iterations: usize,
    pub transmission: TransmissionNorms,
    /// `(err_u, err_q)` against the exact solution, when one exists.
    pub errors: Option<(f64, f64)>,
}

/// Squared broken L^2 norm of one field (orthonormal basis: scaled coefficient sums).
pub fn field_norm_sq(mesh: &CartesianMesh, sol: &Solution, f: Field) -> f64 {
    mesh.elements()
        .map(|e| {
            let c = sol.states[mesh.element_index(e)].field(f);
            mesh.cell(e).area() / 4.0 * c.iter().map(|v| v * v).sum::<f64>()
        })
        .sum()
}

/// `E_h = (|u_h|^2 + |q_h|^2) / 2`.
pub fn energy(mesh: &CartesianMesh, sol: &Solution) -> f64 {
    0.5 * (field_norm_sq(mesh, sol, Field::U) + field_norm_sq(mesh, sol, Field::Q))
}

/// Broken L^2 errors of `u_h` and `q_h` with a Gauss rule two points richer
/// per direction than the one used in the solve.
pub fn compute_errors(mesh: &CartesianMesh, tb: &TensorBasis, sol: &Solution, scenario: &Scenario, t: f64) -> (f64, f64) {
    let k = tb.degree();
    let rich = TensorBasis::from_basis(Basis1D::with_quadrature(k, Quadrature1D::gauss_legendre(tb.nq() + 2)));
    let (mut eu, mut eq) = (0.0, 0.0);
    for e in mesh.elements() {
        let cell = mesh.cell(e);
        let st = &sol.states[mesh.element_index(e)];
        let uh = rich.values_at_quadrature(st.field(Field::U));
        let qh = rich.values_at_quadrature(st.field(Field::Q));
        let jac = cell.area() / 4.0;
        for q in 0..rich.nq2() {
            let (x, y) = rich.point(&cell, q);
            let ex = scenario.exact_fields(x, y, t);
            let w = jac * rich.weights[q];
            eu += w * (uh[q] - ex.u).powi(2);
            eq += w * (qh[q] - ex.q).powi(2);
        }
    }
    (eu.sqrt(), eq.sqrt())
}

/// Writes the face projections of all boundary data at time `t` into the
/// boundary trace blocks.
pub fn apply_boundary_data(mesh: &CartesianMesh, basis: &Basis1D, scenario: &Scenario, sol: &mut Solution, t: f64) -> Result<()> {
    for face in mesh.vertical_faces() {
        let idx = mesh.vertical_index(face.id.i, face.id.j);
        match face.tag {
            BoundaryTag::Left => {
                let ud = scenario.boundary_values(mesh, basis, &face, Datum::UD, t)?;
                let ql = scenario.boundary_values(mesh, basis, &face, Datum::QL, t)?;
                sol.traces.block_mut(TraceFamily::UHatV, idx).copy_from_slice(&ud);
                sol.traces.block_mut(TraceFamily::QHatV, idx).copy_from_slice(&ql);
            }
            BoundaryTag::Right => {
                let ud = scenario.boundary_values(mesh, basis, &face, Datum::UD, t)?;
                let qr = scenario.boundary_values(mesh, basis, &face, Datum::QR, t)?;
                let vr = scenario.boundary_values(mesh, basis, &face, Datum::VR, t)?;
                sol.traces.block_mut(TraceFamily::UHatV, idx).copy_from_slice(&ud);
                sol.traces.block_mut(TraceFamily::QHatV, idx).copy_from_slice(&qr);
                sol.traces.block_mut(TraceFamily::VHatR, idx).copy_from_slice(&vr);
            }
            _ => {}
        }
    }
    for face in mesh.horizontal_faces() {
        let idx = mesh.horizontal_index(face.id.i, face.id.j);
        match face.tag {
            BoundaryTag::Bottom => {
                let ud = scenario.boundary_values(mesh, basis, &face, Datum::UD, t)?;
                sol.traces.block_mut(TraceFamily::UHatB, idx).copy_from_slice(&ud);
            }
            BoundaryTag::Top => {
                let vt = scenario.boundary_values(mesh, basis, &face, Datum::VT, t)?;
                sol.traces.block_mut(TraceFamily::VHatT, idx).copy_from_slice(&vt);
            }
            _ => {}
        }
    }
    Ok(())
}

/// Initial state: `u_h = P u_0`, traces from the adjacent element traces
/// (averaged across interior vertical faces), `q_h` and `s_h` from their
/// local equations, `v_h` by a right-to-left sweep of `v_x = s`, and
/// `p_h = z_h = r_h = 0`.
pub fn initialize(scenario: &Scenario, mesh: &CartesianMesh, ops: &ReferenceOperators) -> Result<Solution> {
    let tb = &ops.basis;
    let (nb, nf) = (ops.nb(), ops.nf());
    let mut sol = Solution::zeros(mesh, nb, nf);
    for e in mesh.elements() {
        let cell = mesh.cell(e);
        let c = tb.project(&cell, TensorProjection::L2, |x, y| scenario.initial(x, y));
        sol.states[mesh.element_index(e)].field_mut(Field::U).copy_from_slice(&c);
    }
    apply_boundary_data(mesh, &tb.basis, scenario, &mut sol, 0.0)?;

    let trace = |sol: &Solution, e: ElementId, f: Field, side: Side| tb.trace_coefficients(sol.states[mesh.element_index(e)].field(f), side);
    let average = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<f64>>();

    // u^ on interior faces.
    for face in mesh.vertical_faces().filter(|f| f.tag == BoundaryTag::Interior) {
        let (l, r) = (face.minus.unwrap(), face.plus.unwrap());
        let avg = average(trace(&sol, l, Field::U, Side::Right), trace(&sol, r, Field::U, Side::Left));
        let idx = mesh.vertical_index(face.id.i, face.id.j);
        sol.traces.block_mut(TraceFamily::UHatV, idx).copy_from_slice(&avg);
    }
    for face in mesh.horizontal_faces().filter(|f| f.tag == BoundaryTag::Interior) {
        let below = trace(&sol, face.minus.unwrap(), Field::U, Side::Top);
        let idx = mesh.horizontal_index(face.id.i, face.id.j);
        sol.traces.block_mut(TraceFamily::UHatB, idx).copy_from_slice(&below);
    }

    // q_h and s_h from their local equations.
    for e in mesh.elements() {
        let idx = mesh.element_index(e);
        let cell = mesh.cell(e);
        let (jx, jy) = cell.half_widths();
        let area = jx * jy;
        let u = sol.states[idx].field(Field::U).to_vec();
        let face_vals = |fam: TraceFamily, face: usize| tb.basis.eval_at_nodes(sol.traces.block(fam, face));
        let ul = face_vals(TraceFamily::UHatV, mesh.vertical_index(e.i - 1, e.j));
        let ur = face_vals(TraceFamily::UHatV, mesh.vertical_index(e.i, e.j));
        let ub = face_vals(TraceFamily::UHatB, mesh.horizontal_index(e.i, e.j - 1));
        let ut = tb.restrict_to_face(&u, Side::Top);
        let mut q = vec![0.0; nb];
        let mut s = vec![0.0; nb];
        for a in 0..nb {
            let sx: f64 = (0..nb).map(|b| ops.sx[a * nb + b] * u[b]).sum();
            let sy: f64 = (0..nb).map(|b| ops.sy[a * nb + b] * u[b]).sum();
            let side_int = |side: Side, vals: &[f64]| -> f64 {
                (0..tb.nq()).map(|i| tb.basis.quad.weights[i] * vals[i] * tb.face_phi[side as usize][i * nb + a]).sum()
            };
            let fx = jy * (side_int(Side::Right, &ur) - side_int(Side::Left, &ul));
            let fy = jx * (side_int(Side::Top, &ut) - side_int(Side::Bottom, &ub));
            q[a] = (fx - jy * sx) / area;
            s[a] = (fy - jx * sy) / area;
        }
        sol.states[idx].field_mut(Field::Q).copy_from_slice(&q);
        sol.states[idx].field_mut(Field::S).copy_from_slice(&s);
    }

    // v_h: (s, phi) + (v, d_x phi) - <v n_x, phi>_L - <v^R, phi>_R = 0, swept from the right.
    let nq = tb.nq();
    let phi_l = &tb.face_phi[Side::Left as usize];
    let phi_r = &tb.face_phi[Side::Right as usize];
    for j in 1..=mesh.ny {
        for i in (1..=mesh.nx).rev() {
            let e = ElementId::new(i, j);
            let idx = mesh.element_index(e);
            let (jx, jy) = mesh.cell(e).half_widths();
            let vr_face = mesh.vertical_index(i, j);
            if i < mesh.nx {
                let right = trace(&sol, ElementId::new(i + 1, j), Field::V, Side::Left);
                sol.traces.block_mut(TraceFamily::VHatR, vr_face).copy_from_slice(&right);
            }
            let vr = tb.basis.eval_at_nodes(sol.traces.block(TraceFamily::VHatR, vr_face));
            let mut a = vec![0.0; nb * nb];
            for r in 0..nb {
                for c in 0..nb {
                    let left: f64 = (0..nq).map(|q| tb.basis.quad.weights[q] * phi_l[q * nb + r] * phi_l[q * nb + c]).sum();
                    a[r * nb + c] = jy * (ops.sx[r * nb + c] + left);
                }
            }
            let s = sol.states[idx].field(Field::S).to_vec();
            let mut rhs = Mat::from_fn(nb, 1, |r, _| {
                let right: f64 = (0..nq).map(|q| tb.basis.quad.weights[q] * vr[q] * phi_r[q * nb + r]).sum();
                jy * right - jx * jy * s[r]
            });
            let lu = DenseLu::factor(nb, &a).ok_or(HdgError::SingularElementBlock { i, j })?;
            lu.solve(&mut rhs);
            let v: Vec<f64> = (0..nb).map(|r| rhs[(r, 0)]).collect();
            sol.states[idx].field_mut(Field::V).copy_from_slice(&v);
        }
    }
    for face in mesh.horizontal_faces().filter(|f| f.tag == BoundaryTag::Interior) {
        let above = trace(&sol, face.plus.unwrap(), Field::V, Side::Bottom);
        let idx = mesh.horizontal_index(face.id.i, face.id.j);
        sol.traces.block_mut(TraceFamily::VHatT, idx).copy_from_slice(&above);
    }
    for face in mesh.vertical_faces().filter(|f| f.tag == BoundaryTag::Interior) {
        let (l, r) = (face.minus.unwrap(), face.plus.unwrap());
        let avg = average(trace(&sol, l, Field::Q, Side::Right), trace(&sol, r, Field::Q, Side::Left));
        let idx = mesh.vertical_index(face.id.i, face.id.j);
        sol.traces.block_mut(TraceFamily::QHatV, idx).copy_from_slice(&avg);
    }
    Ok(sol)
}

/// State of a time-marching run.
pub struct Simulation {
    pub scenario: Scenario,
    pub mesh: CartesianMesh,
    pub ops: ReferenceOperators,
    pub params: StabilizationParams,
    pub settings: NewtonSettings,
    pub solution: Solution,
    pub time: f64,
    pub steps_taken: usize,
    solver: SparseSolver,
}

impl Simulation {
    pub fn new(
        scenario: Scenario,
        mesh: CartesianMesh,
        k: usize,
        params: StabilizationParams,
        settings: NewtonSettings,
    ) -> Result<Self> {
        params.check_constant_conditions().map_err(HdgError::StabilityAssumption)?;
        let ops = ReferenceOperators::new(k);
        let solution = initialize(&scenario, &mesh, &ops)?;
        Ok(Self {
            scenario,
            mesh,
            ops,
            params,
            settings,
            solution,
            time: 0.0,
            steps_taken: 0,
            solver: SparseSolver::new(),
        })
    }

    pub fn flux(&self) -> Flux {
        Flux { kappa: self.scenario.kappa }
    }

    /// One implicit Euler step; boundary data and source are taken at the new time.
    pub fn step(&mut self, dt: f64) -> Result<NewtonReport> {
        let t_new = self.time + dt;
        let mut solver = std::mem::take(&mut self.solver);
        let result = self.solve_step(dt, t_new, &mut solver);
        self.solver = solver;
        match result {
            Ok((next, report)) => {
                self.solution = next;
                self.time = t_new;
                self.steps_taken += 1;
                Ok(report)
            }
            Err(e) => Err(HdgError::StepFailed { time: t_new, source: Box::new(e) }),
        }
    }

    fn solve_step(&self, dt: f64, t_new: f64, solver: &mut SparseSolver) -> Result<(Solution, NewtonReport)> {
        let mut next = self.solution.clone();
        apply_boundary_data(&self.mesh, &self.ops.basis.basis, &self.scenario, &mut next, t_new)?;
        let scenario = self.scenario;
        let src = move |x: f64, y: f64| scenario.source(x, y, t_new).unwrap_or(0.0);
        let ctx = StepContext {
            mesh: &self.mesh,
            ops: &self.ops,
            params: &self.params,
            flux: self.flux(),
            dt,
            previous: &self.solution,
            source: (scenario.kind == ScenarioKind::Mms).then_some(&src as &(dyn Fn(f64, f64) -> f64 + Sync)),
        };
        let report = newton_solve(&ctx, &mut next, &self.settings, solver)?;
        let margin = self.params.min_tau_f_margin(scenario.kappa, vertical_trace_samples(&ctx, &next));
        if !(margin > 0.0) {
            return Err(HdgError::StabilityAssumption(format!("tau_f - tilde tau = {margin:.3e} <= 0")));
        }
        Ok((next, report))
    }

    pub fn record(&self, newton_iterations: usize, transmission: TransmissionNorms) -> DiagnosticsRecord {
        let nu = field_norm_sq(&self.mesh, &self.solution, Field::U);
        let nq = field_norm_sq(&self.mesh, &self.solution, Field::Q);
        DiagnosticsRecord {
            step: self.steps_taken,
            time: self.time,
            energy: 0.5 * (nu + nq),
            norm_u: nu.sqrt(),
            norm_q: nq.sqrt(),
            newton_iterations,
            transmission,
            errors: self
                .scenario
                .has_exact_solution()
                .then(|| compute_errors(&self.mesh, &self.ops.basis, &self.solution, &self.scenario, self.time)),
        }
    }

    /// Marches to `t_final`, recording diagnostics at `t = 0`, every
    /// `cadence` steps and at the final time. `observer` sees every
    /// accepted step.
    pub fn run_with(
        &mut self,
        time: &TimeConfig,
        mut observer: impl FnMut(&Simulation, &NewtonReport),
    ) -> Result<Vec<DiagnosticsRecord>> {
        time.validate()?;
        let n = time.num_steps();
        let dt = time.effective_dt();
        let mut records = vec![self.record(0, TransmissionNorms::default())];
        for step in 1..=n {
            let report = self.step(dt)?;
            if step == n {
                self.time = time.t_final;
            }
            observer(self, &report);
            if step % time.cadence == 0 || step == n {
                records.push(self.record(report.iterations, report.transmission));
            }
        }
        Ok(records)
    }

    pub fn run(&mut self, time: &TimeConfig) -> Result<Vec<DiagnosticsRecord>> {
        self.run_with(time, |_, _| {})
    }
}

/// Convenience wrapper: build, initialize and march one scenario.
pub fn run(
    scenario: Scenario,
    mesh: CartesianMesh,
    k: usize,
    time: &TimeConfig,
    params: StabilizationParams,
    settings: NewtonSettings,
) -> Result<(Vec<DiagnosticsRecord>, Simulation)> {
    let mut sim = Simulation::new(scenario, mesh, k, params, settings)?;
    let records = sim.run(time)?;
    Ok((records, sim))
}
