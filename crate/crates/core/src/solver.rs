//! Global coupling of the element problems through the trace unknowns and
//! the Newton solve of one implicit step.
//!
//! Unknowns are ordered element blocks first (`7 (k+1)^2` each, element
//! index order), followed by the free trace blocks. Trace blocks on the
//! boundary carry prescribed data and are not unknowns.

use faer::linalg::solvers::Solve;
use faer::prelude::*;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuSymbolicParams, NumericLu, SymbolicLu};
use faer::sparse::linalg::SupernodalThreshold;
use faer::{Conj, Par};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use rayon::prelude::*;

use crate::error::{HdgError, Result};
use crate::forms::{
    ElementState, FaceTraceValues, Flux, LocalInputs, LocalOutput, LocalProblem, ReferenceOperators,
    StabilizationParams, TraceSlot, TransmissionRow, NUM_FIELDS, NUM_SLOTS, NUM_TRANSMISSION_ROWS,
};
use crate::mesh::{CartesianMesh, ElementId, Orientation, Side};

/// The five trace families kept as unknowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceFamily {
    /// `u^` on vertical faces.
    UHatV = 0,
    /// `q^` on vertical faces.
    QHatV = 1,
    /// `v^` on vertical faces, taken from the right.
    VHatR = 2,
    /// `u^` on horizontal faces, taken from below.
    UHatB = 3,
    /// `v^` on horizontal faces, taken from above.
    VHatT = 4,
}

impl TraceFamily {
    pub const ALL: [TraceFamily; 5] = [
        TraceFamily::UHatV,
        TraceFamily::QHatV,
        TraceFamily::VHatR,
        TraceFamily::UHatB,
        TraceFamily::VHatT,
    ];

    pub fn orientation(self) -> Orientation {
        match self {
            TraceFamily::UHatV | TraceFamily::QHatV | TraceFamily::VHatR => Orientation::Vertical,
            TraceFamily::UHatB | TraceFamily::VHatT => Orientation::Horizontal,
        }
    }

    pub fn name(self) -> &'static str {
        ["u_hat_V", "q_hat_V", "v_hat_R", "u_hat_B", "v_hat_T"][self as usize]
    }
}

/// Coefficients of every trace family on every face of its orientation.
///
/// Entries that no element reads (`v^R` on the left boundary, `u^B` on
/// the top boundary, `v^T` on the bottom boundary) stay at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub nf: usize,
    pub blocks: [Vec<f64>; 5],
}

impl TraceSet {
    pub fn zeros(mesh: &CartesianMesh, nf: usize) -> Self {
        let nv = mesh.num_vertical_faces() * nf;
        let nh = mesh.num_horizontal_faces() * nf;
        Self {
            nf,
            blocks: [vec![0.0; nv], vec![0.0; nv], vec![0.0; nv], vec![0.0; nh], vec![0.0; nh]],
        }
    }

    pub fn block(&self, fam: TraceFamily, face: usize) -> &[f64] {
        &self.blocks[fam as usize][face * self.nf..(face + 1) * self.nf]
    }

    pub fn block_mut(&mut self, fam: TraceFamily, face: usize) -> &mut [f64] {
        &mut self.blocks[fam as usize][face * self.nf..(face + 1) * self.nf]
    }
}

/// Element states plus traces: the full discrete solution at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub states: Vec<ElementState>,
    pub traces: TraceSet,
}

impl Solution {
    pub fn zeros(mesh: &CartesianMesh, nb: usize, nf: usize) -> Self {
        Self {
            states: vec![ElementState::zeros(nb); mesh.num_elements()],
            traces: TraceSet::zeros(mesh, nf),
        }
    }
}

/// Family and linear face index of the trace block behind an element slot.
pub fn slot_target(mesh: &CartesianMesh, e: ElementId, slot: TraceSlot) -> (TraceFamily, usize) {
    let (i, j) = (e.i, e.j);
    match slot {
        TraceSlot::ULeft => (TraceFamily::UHatV, mesh.vertical_index(i - 1, j)),
        TraceSlot::URight => (TraceFamily::UHatV, mesh.vertical_index(i, j)),
        TraceSlot::QLeft => (TraceFamily::QHatV, mesh.vertical_index(i - 1, j)),
        TraceSlot::QRight => (TraceFamily::QHatV, mesh.vertical_index(i, j)),
        TraceSlot::VRight => (TraceFamily::VHatR, mesh.vertical_index(i, j)),
        TraceSlot::UBottom => (TraceFamily::UHatB, mesh.horizontal_index(i, j - 1)),
        TraceSlot::VTop => (TraceFamily::VHatT, mesh.horizontal_index(i, j)),
    }
}

/// Family and face that own a transmission row contributed by an element.
pub fn row_target(mesh: &CartesianMesh, e: ElementId, row: TransmissionRow) -> (TraceFamily, usize) {
    use TransmissionRow::*;
    let (i, j) = (e.i, e.j);
    match row {
        LeftUqFlux => (TraceFamily::QHatV, mesh.vertical_index(i - 1, j)),
        RightUqFlux => (TraceFamily::QHatV, mesh.vertical_index(i, j)),
        LeftGFlux => (TraceFamily::UHatV, mesh.vertical_index(i - 1, j)),
        RightGFlux => (TraceFamily::UHatV, mesh.vertical_index(i, j)),
        LeftV => (TraceFamily::VHatR, mesh.vertical_index(i - 1, j)),
        RightV => (TraceFamily::VHatR, mesh.vertical_index(i, j)),
        BottomU => (TraceFamily::UHatB, mesh.horizontal_index(i, j - 1)),
        TopU => (TraceFamily::UHatB, mesh.horizontal_index(i, j)),
        BottomV => (TraceFamily::VHatT, mesh.horizontal_index(i, j - 1)),
        TopV => (TraceFamily::VHatT, mesh.horizontal_index(i, j)),
    }
}

/// Numbering of the free unknowns.
#[derive(Clone, Debug)]
pub struct Layout {
    pub nb: usize,
    pub nf: usize,
    pub num_elements: usize,
    /// Offset of each free trace block, relative to the start of the trace part.
    pub trace_offset: [Vec<Option<usize>>; 5],
    pub num_trace_unknowns: usize,
}

impl Layout {
    pub fn new(mesh: &CartesianMesh, nb: usize, nf: usize) -> Self {
        let mut next = 0;
        let mut trace_offset: [Vec<Option<usize>>; 5] = Default::default();
        for fam in TraceFamily::ALL {
            let faces: Vec<bool> = match fam.orientation() {
                Orientation::Vertical => mesh.vertical_faces().map(|f| !f.is_boundary()).collect(),
                Orientation::Horizontal => mesh.horizontal_faces().map(|f| !f.is_boundary()).collect(),
            };
            trace_offset[fam as usize] = faces
                .into_iter()
                .map(|free| {
                    free.then(|| {
                        next += nf;
                        next - nf
                    })
                })
                .collect();
        }
        Self {
            nb,
            nf,
            num_elements: mesh.num_elements(),
            trace_offset,
            num_trace_unknowns: next,
        }
    }

    pub fn element_dofs(&self) -> usize {
        NUM_FIELDS * self.nb
    }

    pub fn num_element_unknowns(&self) -> usize {
        self.num_elements * self.element_dofs()
    }

    pub fn len(&self) -> usize {
        self.num_element_unknowns() + self.num_trace_unknowns
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_free(&self, fam: TraceFamily, face: usize) -> bool {
        self.trace_offset[fam as usize][face].is_some()
    }

    /// Offset of a free trace block within the trace part.
    pub fn trace(&self, fam: TraceFamily, face: usize) -> Option<usize> {
        self.trace_offset[fam as usize][face]
    }

    pub fn element(&self, index: usize) -> usize {
        index * self.element_dofs()
    }

    /// Flattens the free unknowns of a solution.
    pub fn gather(&self, sol: &Solution) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        for s in &sol.states {
            x.extend_from_slice(&s.data);
        }
        x.resize(self.len(), 0.0);
        let ne = self.num_element_unknowns();
        for fam in TraceFamily::ALL {
            for (face, off) in self.trace_offset[fam as usize].iter().enumerate() {
                if let Some(off) = off {
                    x[ne + off..ne + off + self.nf].copy_from_slice(sol.traces.block(fam, face));
                }
            }
        }
        x
    }

    /// Writes free unknowns back; boundary blocks are left untouched.
    pub fn scatter(&self, x: &[f64], sol: &mut Solution) -> Result<()> {
        if x.len() != self.len() {
            return Err(HdgError::LayoutMismatch { expected: self.len(), got: x.len() });
        }
        let ed = self.element_dofs();
        for (e, s) in sol.states.iter_mut().enumerate() {
            s.data.copy_from_slice(&x[e * ed..(e + 1) * ed]);
        }
        let ne = self.num_element_unknowns();
        for fam in TraceFamily::ALL {
            for (face, off) in self.trace_offset[fam as usize].iter().enumerate() {
                if let Some(off) = off {
                    sol.traces.block_mut(fam, face).copy_from_slice(&x[ne + off..ne + off + self.nf]);
                }
            }
        }
        Ok(())
    }
}

/// Everything fixed during one implicit step.
pub struct StepContext<'a> {
    pub mesh: &'a CartesianMesh,
    pub ops: &'a ReferenceOperators,
    pub params: &'a StabilizationParams,
    pub flux: Flux,
    pub dt: f64,
    /// States at the previous time level.
    pub previous: &'a Solution,
    /// Source of the `r` equation at the new time level.
    pub source: Option<&'a (dyn Fn(f64, f64) -> f64 + Sync)>,
}

impl StepContext<'_> {
    /// Gathers the trace values seen by one element.
    pub fn face_traces(&self, sol: &Solution, e: ElementId) -> FaceTraceValues {
        let nf = sol.traces.nf;
        let mut tr = FaceTraceValues::zeros(nf);
        for slot in TraceSlot::ALL {
            let (fam, face) = slot_target(self.mesh, e, slot);
            tr.slot_mut(slot).copy_from_slice(sol.traces.block(fam, face));
        }
        let prev = &self.previous.traces;
        tr.u_prev_left
            .copy_from_slice(prev.block(TraceFamily::UHatV, self.mesh.vertical_index(e.i - 1, e.j)));
        tr.u_prev_right
            .copy_from_slice(prev.block(TraceFamily::UHatV, self.mesh.vertical_index(e.i, e.j)));
        tr
    }

    fn local(&self, sol: &Solution, index: usize, jacobian: bool) -> LocalOutput {
        let e = self.mesh.element_id(index);
        let tr = self.face_traces(sol, e);
        let lp = LocalProblem {
            ops: self.ops,
            cell: self.mesh.cell(e),
            dt: self.dt,
            flux: self.flux,
            params: self.params,
        };
        let inputs = LocalInputs {
            state: &sol.states[index],
            traces: &tr,
            u_prev: self.previous.states[index].field(crate::forms::Field::U),
            source: self.source,
        };
        if jacobian {
            lp.linearize(&inputs)
        } else {
            lp.residual(&inputs)
        }
    }

    /// Element outputs in element order.
    pub fn evaluate(&self, sol: &Solution, jacobian: bool) -> Vec<LocalOutput> {
        (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|idx| self.local(sol, idx, jacobian))
            .collect()
    }
}

/// Infinity norms of the five transmission families over their free rows.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TransmissionNorms {
    /// (i) jump of the `(u q)^` flux on interior vertical faces.
    pub uq_flux: f64,
    /// (ii) jump of `z^ - p^ + f^` on interior vertical faces.
    pub g_flux: f64,
    /// (iii) `u^B` against the trace from below.
    pub u_bottom: f64,
    /// (iv) `v^R` against the trace from the right.
    pub v_right: f64,
    /// (v) `v^T` against the trace from above.
    pub v_top: f64,
}

impl TransmissionNorms {
    pub fn max(&self) -> f64 {
        [self.uq_flux, self.g_flux, self.u_bottom, self.v_right, self.v_top]
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn from_residual(layout: &Layout, residual: &[f64]) -> Self {
        let ne = layout.num_element_unknowns();
        let family_norm = |fam: TraceFamily| {
            layout.trace_offset[fam as usize]
                .iter()
                .flatten()
                .flat_map(|&off| residual[ne + off..ne + off + layout.nf].iter())
                .fold(0.0f64, |m, v| m.max(v.abs()))
        };
        Self {
            uq_flux: family_norm(TraceFamily::QHatV),
            g_flux: family_norm(TraceFamily::UHatV),
            u_bottom: family_norm(TraceFamily::UHatB),
            v_right: family_norm(TraceFamily::VHatR),
            v_top: family_norm(TraceFamily::VHatT),
        }
    }
}

/// Full residual over the free unknowns: element equations, then the
/// transmission conditions, each row block owned by the trace it determines.
pub fn assemble_residual(ctx: &StepContext, layout: &Layout, sol: &Solution) -> Vec<f64> {
    let outs = ctx.evaluate(sol, false);
    residual_from_outputs(ctx.mesh, layout, &outs)
}

fn residual_from_outputs(mesh: &CartesianMesh, layout: &Layout, outs: &[LocalOutput]) -> Vec<f64> {
    let mut res = vec![0.0; layout.len()];
    let ne = layout.num_element_unknowns();
    let nf = layout.nf;
    for (idx, out) in outs.iter().enumerate() {
        let off = layout.element(idx);
        res[off..off + out.residual.len()].copy_from_slice(&out.residual);
        let e = mesh.element_id(idx);
        for row in TransmissionRow::ALL {
            let (fam, face) = row_target(mesh, e, row);
            if let Some(t) = layout.trace(fam, face) {
                for (d, s) in res[ne + t..ne + t + nf].iter_mut().zip(out.transmission_block(row)) {
                    *d += s;
                }
            }
        }
    }
    res
}

/// Transmission residual families at the given solution.
pub fn transmission_residual(ctx: &StepContext, sol: &Solution) -> TransmissionNorms {
    let layout = Layout::new(ctx.mesh, ctx.ops.nb(), ctx.ops.nf());
    let res = assemble_residual(ctx, &layout, sol);
    TransmissionNorms::from_residual(&layout, &res)
}

/// Residual and sparse Jacobian of the coupled system at one iterate.
pub struct GlobalSystem {
    pub residual: Vec<f64>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
    pub n: usize,
}

impl GlobalSystem {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n * self.n];
        for ((r, c), v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            m[r * self.n + c] += v;
        }
        m
    }
}

/// Appends the dense block `src[r0.., c0..]` (leading dimension `ld`) as triplets.
#[allow(clippy::too_many_arguments)]
fn push_block(
    rows: &mut Vec<usize>,
    cols: &mut Vec<usize>,
    vals: &mut Vec<f64>,
    grow: usize,
    gcol: usize,
    src: &[f64],
    ld: usize,
    r0: usize,
    c0: usize,
    nr: usize,
    nc: usize,
) {
    for a in 0..nr {
        for b in 0..nc {
            rows.push(grow + a);
            cols.push(gcol + b);
            vals.push(src[(r0 + a) * ld + c0 + b]);
        }
    }
}

/// Assembles the monolithic Newton system. Entries are pushed in a fixed
/// order independent of their values, so the sparsity pattern is stable.
pub fn assemble_newton_system(ctx: &StepContext, layout: &Layout, sol: &Solution) -> Result<GlobalSystem> {
    check_solution(ctx.mesh, layout, sol)?;
    let outs = ctx.evaluate(sol, true);
    let residual = residual_from_outputs(ctx.mesh, layout, &outs);
    let (nb, nf) = (layout.nb, layout.nf);
    let ed = NUM_FIELDS * nb;
    let nt = NUM_SLOTS * nf;
    let ne = layout.num_element_unknowns();
    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    for (idx, out) in outs.iter().enumerate() {
        let e = ctx.mesh.element_id(idx);
        let eo = layout.element(idx);
        push_block(&mut rows, &mut cols, &mut vals, eo, eo, &out.jac_state, ed, 0, 0, ed, ed);
        let slots: Vec<(TraceSlot, Option<usize>)> = TraceSlot::ALL
            .iter()
            .map(|&s| {
                let (fam, face) = slot_target(ctx.mesh, e, s);
                (s, layout.trace(fam, face))
            })
            .collect();
        for &(s, t) in &slots {
            if let Some(t) = t {
                push_block(&mut rows, &mut cols, &mut vals, eo, ne + t, &out.jac_trace, nt, 0, s as usize * nf, ed, nf);
            }
        }
        for row in TransmissionRow::ALL {
            let (fam, face) = row_target(ctx.mesh, e, row);
            let Some(tr) = layout.trace(fam, face) else { continue };
            let r0 = row as usize * nf;
            push_block(&mut rows, &mut cols, &mut vals, ne + tr, eo, &out.trans_jac_state, ed, r0, 0, nf, ed);
            for &(s, t) in &slots {
                if let Some(t) = t {
                    push_block(&mut rows, &mut cols, &mut vals, ne + tr, ne + t, &out.trans_jac_trace, nt, r0, s as usize * nf, nf, nf);
                }
            }
        }
    }
    Ok(GlobalSystem { residual, rows, cols, values: vals, n: layout.len() })
}

fn check_solution(mesh: &CartesianMesh, layout: &Layout, sol: &Solution) -> Result<()> {
    if sol.states.len() != mesh.num_elements() {
        return Err(HdgError::LayoutMismatch { expected: mesh.num_elements(), got: sol.states.len() });
    }
    let expected = NUM_FIELDS * layout.nb;
    if let Some(bad) = sol.states.iter().find(|s| s.data.len() != expected) {
        return Err(HdgError::LayoutMismatch { expected, got: bad.data.len() });
    }
    let nv = mesh.num_vertical_faces() * layout.nf;
    let nh = mesh.num_horizontal_faces() * layout.nf;
    for fam in TraceFamily::ALL {
        let want = if fam.orientation() == Orientation::Vertical { nv } else { nh };
        let got = sol.traces.blocks[fam as usize].len();
        if got != want {
            return Err(HdgError::MissingBoundaryData(format!(
                "{} has {got} coefficients, expected {want}",
                fam.name()
            )));
        }
    }
    Ok(())
}

/// Sparse LU with the symbolic analysis kept across calls that share a pattern.
#[derive(Default)]
pub struct SparseSolver {
    cached: Option<CachedPattern>,
}

struct CachedPattern {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
    scratch: MemBuffer,
}

impl SparseSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves `A x = b` for `A` given by (row, col, value) entries; duplicates are summed.
    pub fn solve(&mut self, n: usize, rows: &[usize], cols: &[usize], vals: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let fact = |e: &dyn std::fmt::Debug| HdgError::Factorization(format!("{e:?}"));
        let reuse = matches!(&self.cached, Some(c) if c.n == n && c.rows == rows && c.cols == cols);
        if !reuse {
            let idx: Vec<Pair<usize, usize>> = rows.iter().zip(cols).map(|(&row, &col)| Pair { row, col }).collect();
            let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &idx).map_err(|e| fact(&e))?;
            // Trace systems have dense element-sized blocks, which suit the supernodal kernel.
            let params = LuSymbolicParams {
                supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
                ..Default::default()
            };
            let lu = factorize_symbolic_lu(symbolic.as_ref(), params).map_err(|e| fact(&e))?;
            let req = lu
                .factorize_numeric_lu_scratch::<f64>(Par::Seq, Default::default())
                .or(lu.solve_in_place_scratch::<f64>(1, Par::Seq));
            let scratch = MemBuffer::try_new(req).map_err(|e| fact(&e))?;
            self.cached = Some(CachedPattern {
                n,
                rows: rows.to_vec(),
                cols: cols.to_vec(),
                symbolic,
                argsort,
                lu,
                numeric: NumericLu::new(),
                scratch,
            });
        }
        let c = self.cached.as_mut().unwrap();
        let mat = SparseColMat::new_from_argsort(c.symbolic.clone(), &c.argsort, vals).map_err(|e| fact(&e))?;
        let lu = c
            .lu
            .factorize_numeric_lu(
                &mut c.numeric,
                mat.as_ref(),
                Par::Seq,
                MemStack::new(&mut c.scratch),
                Default::default(),
            )
            .map_err(|e| fact(&e))?;
        let mut rhs = Mat::from_fn(n, 1, |i, _| b[i]);
        lu.solve_in_place_with_conj(Conj::No, rhs.as_mut(), Par::Seq, MemStack::new(&mut c.scratch));
        let x: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(HdgError::Factorization("non-finite solution (singular matrix)".into()));
        }
        Ok(x)
    }
}

/// Dense LU of an element block with a pivot-size singularity check.
pub struct DenseLu {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
}

impl DenseLu {
    /// Factorizes the row-major `n x n` matrix `a`; `None` if numerically singular.
    pub fn factor(n: usize, a: &[f64]) -> Option<Self> {
        let m = Mat::from_fn(n, n, |i, j| a[i * n + j]);
        let lu = m.partial_piv_lu();
        let u = lu.U();
        let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || !(min > 1e-14 * max) {
            return None;
        }
        Some(Self { lu })
    }

    /// Solves in place for a column-major block of right-hand sides.
    pub fn solve(&self, rhs: &mut Mat<f64>) {
        self.lu.solve_in_place(rhs.as_mut());
    }
}

/// Linear solve strategy inside Newton.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// Sparse LU of the full coupled system.
    Monolithic,
    /// Element unknowns eliminated; sparse LU on the trace system only.
    #[default]
    Condensed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub mode: SolverMode,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 30,
            max_halvings: 8,
            mode: SolverMode::Condensed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub transmission: TransmissionNorms,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Newton step `delta` solving `J delta = -F` through the monolithic system.
fn monolithic_step(
    ctx: &StepContext,
    layout: &Layout,
    sol: &Solution,
    solver: &mut SparseSolver,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sys = assemble_newton_system(ctx, layout, sol)?;
    let rhs: Vec<f64> = sys.residual.iter().map(|r| -r).collect();
    let delta = solver.solve(sys.n, &sys.rows, &sys.cols, &sys.values, &rhs)?;
    Ok((delta, sys.residual))
}

/// Newton step by static condensation: per element, eliminate the element
/// unknowns with a dense LU of the element block, assemble the Schur
/// complement on the free traces, solve it, and back-substitute.
fn condensed_step(
    ctx: &StepContext,
    layout: &Layout,
    sol: &Solution,
    solver: &mut SparseSolver,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_solution(ctx.mesh, layout, sol)?;
    let mesh = ctx.mesh;
    let outs = ctx.evaluate(sol, true);
    let residual = residual_from_outputs(mesh, layout, &outs);
    let (nb, nf) = (layout.nb, layout.nf);
    let ed = NUM_FIELDS * nb;
    let nt = NUM_SLOTS * nf;
    let ne = layout.num_element_unknowns();
    let ntr = layout.num_trace_unknowns;

    struct Eliminated {
        /// `A^{-1} [A_et | F_e]`, column-major `ed x (nt + 1)`.
        sol: Mat<f64>,
        /// Schur contributions `B_e A^{-1} [A_et | F_e]`, `10 nf x (nt + 1)`.
        schur: Mat<f64>,
    }

    let eliminated: Vec<Result<Eliminated>> = outs
        .par_iter()
        .enumerate()
        .map(|(idx, out)| {
            let lu = DenseLu::factor(ed, &out.jac_state).ok_or_else(|| {
                let e = mesh.element_id(idx);
                HdgError::SingularElementBlock { i: e.i, j: e.j }
            })?;
            let mut rhs = Mat::from_fn(ed, nt + 1, |a, c| {
                if c < nt {
                    out.jac_trace[a * nt + c]
                } else {
                    out.residual[a]
                }
            });
            lu.solve(&mut rhs);
            let nr = NUM_TRANSMISSION_ROWS * nf;
            let b = Mat::from_fn(nr, ed, |r, c| out.trans_jac_state[r * ed + c]);
            let schur = &b * &rhs;
            Ok(Eliminated { sol: rhs, schur })
        })
        .collect();
    let eliminated: Vec<Eliminated> = eliminated.into_iter().collect::<Result<_>>()?;

    // Reduced system: sum_e (C_e - B_e A^{-1} A_et) dl = -(G - sum_e B_e A^{-1} F_e)
    let mut rhs = vec![0.0; ntr];
    for (t, r) in rhs.iter_mut().zip(&residual[ne..]) {
        *t = -r;
    }
    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    for (idx, (out, el)) in outs.iter().zip(&eliminated).enumerate() {
        let e = mesh.element_id(idx);
        let slots: Vec<(TraceSlot, Option<usize>)> = TraceSlot::ALL
            .iter()
            .map(|&s| {
                let (fam, face) = slot_target(mesh, e, s);
                (s, layout.trace(fam, face))
            })
            .collect();
        for row in TransmissionRow::ALL {
            let (fam, face) = row_target(mesh, e, row);
            let Some(tr) = layout.trace(fam, face) else { continue };
            let r0 = row as usize * nf;
            for m in 0..nf {
                rhs[tr + m] += el.schur[(r0 + m, nt)];
            }
            for &(s, t) in &slots {
                let Some(t) = t else { continue };
                let c0 = s as usize * nf;
                for a in 0..nf {
                    for b in 0..nf {
                        rows.push(tr + a);
                        cols.push(t + b);
                        vals.push(out.trans_jac_trace[(r0 + a) * nt + c0 + b] - el.schur[(r0 + a, c0 + b)]);
                    }
                }
            }
        }
    }
    let dl = solver.solve(ntr, &rows, &cols, &vals, &rhs)?;

    // Back-substitution: dx_e = -A^{-1} F_e - A^{-1} A_et dl_e
    let mut delta = vec![0.0; layout.len()];
    delta[ne..].copy_from_slice(&dl);
    for (idx, el) in eliminated.iter().enumerate() {
        let e = mesh.element_id(idx);
        let mut local_dl = vec![0.0; nt];
        for s in TraceSlot::ALL {
            let (fam, face) = slot_target(mesh, e, s);
            if let Some(t) = layout.trace(fam, face) {
                local_dl[s as usize * nf..(s as usize + 1) * nf].copy_from_slice(&dl[t..t + nf]);
            }
        }
        let eo = layout.element(idx);
        for a in 0..ed {
            let mut v = -el.sol[(a, nt)];
            for (c, d) in local_dl.iter().enumerate() {
                if *d != 0.0 {
                    v -= el.sol[(a, c)] * d;
                }
            }
            delta[eo + a] = v;
        }
    }
    Ok((delta, residual))
}

/// Newton iteration for one implicit step, starting from `sol` (whose
/// boundary trace blocks must already hold the data at the new time).
///
/// Converged when `|F|_inf <= tol * max(1, |F_0|_inf)`. A step that
/// increases the residual is halved up to `max_halvings` times.
pub fn newton_solve(
    ctx: &StepContext,
    sol: &mut Solution,
    settings: &NewtonSettings,
    solver: &mut SparseSolver,
) -> Result<NewtonReport> {
    if !(settings.tol > 0.0) {
        return Err(HdgError::InvalidArgument(format!("Newton tolerance must be positive, got {}", settings.tol)));
    }
    let layout = Layout::new(ctx.mesh, ctx.ops.nb(), ctx.ops.nf());
    check_solution(ctx.mesh, &layout, sol)?;
    let mut residual = assemble_residual(ctx, &layout, sol);
    let r0 = inf_norm(&residual);
    let target = settings.tol * r0.max(1.0);
    let mut rnorm = r0;
    let mut iterations = 0;
    while rnorm > target {
        if iterations == settings.max_iter {
            return Err(HdgError::NonConvergence {
                iterations,
                residual: rnorm,
                iterate: layout.gather(sol),
            });
        }
        iterations += 1;
        let (delta, _) = match settings.mode {
            SolverMode::Monolithic => monolithic_step(ctx, &layout, sol, solver)?,
            SolverMode::Condensed => condensed_step(ctx, &layout, sol, solver)?,
        };
        let x0 = layout.gather(sol);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=settings.max_halvings {
            let trial: Vec<f64> = x0.iter().zip(&delta).map(|(x, d)| x + lambda * d).collect();
            layout.scatter(&trial, sol)?;
            let res = assemble_residual(ctx, &layout, sol);
            let n = inf_norm(&res);
            if n.is_finite() && n <= rnorm {
                residual = res;
                rnorm = n;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            layout.scatter(&x0, sol)?;
            return Err(HdgError::NonConvergence {
                iterations,
                residual: rnorm,
                iterate: x0,
            });
        }
    }
    Ok(NewtonReport {
        iterations,
        initial_residual: r0,
        final_residual: rnorm,
        transmission: TransmissionNorms::from_residual(&layout, &residual),
    })
}

/// The `(u^, u, n_x)` triples at the quadrature nodes of every vertical
/// element side; the samples on which the `tau_f` condition is checked.
pub fn vertical_trace_samples(ctx: &StepContext, sol: &Solution) -> Vec<(f64, f64, f64)> {
    let tb = &ctx.ops.basis;
    let mut out = Vec::new();
    for e in ctx.mesh.elements() {
        let idx = ctx.mesh.element_index(e);
        let u = sol.states[idx].field(crate::forms::Field::U);
        for (side, slot) in [(Side::Left, TraceSlot::ULeft), (Side::Right, TraceSlot::URight)] {
            let (fam, face) = slot_target(ctx.mesh, e, slot);
            let uh = tb.basis.eval_at_nodes(sol.traces.block(fam, face));
            let ut = tb.restrict_to_face(u, side);
            let nx = side.normal().0;
            out.extend(uh.into_iter().zip(ut).map(|(a, b)| (a, b, nx)));
        }
    }
    out
}
