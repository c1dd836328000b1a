//! Acceptance gate. Each test prints one `PASS`/`FAIL` line for its
//! criterion (written straight to stderr so it shows without
//! `--nocapture`), followed by indented detail lines.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use chkp_hdg::cli::{run_sampled, RunConfig, Section};
use chkp_hdg::fem::{orthonormal_legendre, Basis1D, Quadrature1D, TensorBasis, TensorProjection};
use chkp_hdg::forms::{Flux, ReferenceOperators, StabilizationParams};
use chkp_hdg::mesh::{CartesianMesh, Cell, Domain2D, Side};
use chkp_hdg::scenarios::{mms_source, Scenario, ScenarioKind};
use chkp_hdg::solver::{assemble_newton_system, assemble_residual, Layout, NewtonSettings, Solution, SolverMode, StepContext};
use chkp_hdg::timestep::{compute_errors, Simulation, TimeConfig};
use rand::{rngs::StdRng, Rng, SeedableRng};

fn report(criterion: usize, title: &str, pass: bool, details: &[String]) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion} [{}] {title}", if pass { "PASS" } else { "FAIL" });
    for d in details {
        let _ = writeln!(err, "    {d}");
    }
}

fn within_factor(value: f64, reference: f64, factor: f64) -> bool {
    value <= factor * reference && value >= reference / factor
}

/// Reference MMS u- and q-errors at T = 1, Δt = 1e-3.
const U_REF: [(usize, &[(usize, f64)]); 3] = [
    (1, &[(2, 1.77), (4, 6.53e-1), (8, 1.54e-1), (16, 3.41e-2), (32, 8.09e-3)]),
    (2, &[(2, 3.76e-1), (4, 1.26e-1), (8, 1.37e-2), (16, 1.64e-3)]),
    (3, &[(2, 2.47e-1), (4, 7.85e-3), (8, 8.74e-4), (16, 5.31e-5)]),
];
const Q_REF_K2: [(usize, f64); 2] = [(8, 2.15e-2), (16, 2.92e-3)];

#[derive(Clone, Debug)]
struct MmsRun {
    k: usize,
    n: usize,
    err_u: f64,
    err_q: f64,
    /// Largest transmission residual over all accepted steps.
    max_transmission: f64,
    steps: usize,
}

fn mms_run(k: usize, n: usize) -> MmsRun {
    let scenario = Scenario::mms();
    let mesh = CartesianMesh::uniform(scenario.domain, n, n).unwrap();
    let mut sim = Simulation::new(scenario, mesh, k, StabilizationParams::default(), NewtonSettings::default()).unwrap();
    let mut max_transmission: f64 = 0.0;
    let time = TimeConfig { dt: 1e-3, t_final: 1.0, cadence: 1000 };
    sim.run_with(&time, |_, r| max_transmission = max_transmission.max(r.transmission.max()))
        .unwrap_or_else(|e| panic!("MMS k={k} N={n}: {e}"));
    let (err_u, err_q) = compute_errors(&sim.mesh, &sim.ops.basis, &sim.solution, &sim.scenario, sim.time);
    MmsRun { k, n, err_u, err_q, max_transmission, steps: sim.steps_taken }
}

/// All MMS runs of criterion 1, computed once and shared with criteria 2 and 8.
fn mms_runs() -> &'static [MmsRun] {
    static RUNS: OnceLock<Vec<MmsRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        U_REF
            .iter()
            .flat_map(|(k, levels)| levels.iter().map(move |&(n, _)| (*k, n)))
            .map(|(k, n)| mms_run(k, n))
            .collect()
    })
}

fn find(runs: &[MmsRun], k: usize, n: usize) -> &MmsRun {
    runs.iter().find(|r| r.k == k && r.n == n).unwrap()
}

#[test]
fn criterion_1_mms_u_errors() {
    let runs = mms_runs();
    let mut details = Vec::new();
    let mut pass = true;
    for (k, levels) in U_REF {
        for &(n, reference) in levels {
            let r = find(runs, k, n);
            let ok = within_factor(r.err_u, reference, 2.0);
            pass &= ok;
            details.push(format!(
                "k={k} N={n:>2}: err_u = {:.3e}, reference {:.3e}, ratio {:.2} {}",
                r.err_u,
                reference,
                r.err_u / reference,
                if ok { "ok" } else { "outside factor 2" }
            ));
        }
    }
    report(1, "MMS u-errors within a factor of 2 of the reference values", pass, &details);
    assert!(pass, "criterion 1 failed:\n{}", details.join("\n"));
}

#[test]
fn criterion_2_mms_q_errors_and_orders() {
    let runs = mms_runs();
    let mut details = Vec::new();
    let mut pass = true;
    for (n, reference) in Q_REF_K2 {
        let r = find(runs, 2, n);
        let ok = within_factor(r.err_q, reference, 2.0);
        pass &= ok;
        details.push(format!("k=2 N={n:>2}: err_q = {:.3e}, reference {reference:.3e}, ratio {:.2}", r.err_q, r.err_q / reference));
    }
    for (k, levels) in U_REF {
        let (coarse, fine) = (levels[levels.len() - 2].0, levels[levels.len() - 1].0);
        let order = (find(runs, k, coarse).err_q / find(runs, k, fine).err_q).log2();
        let ok = order >= k as f64 + 0.7;
        pass &= ok;
        details.push(format!("k={k}: q order between N={coarse} and N={fine} = {order:.2} (need >= {:.1})", k as f64 + 0.7));
    }
    report(2, "MMS q-errors and observed q-orders", pass, &details);
    assert!(pass, "criterion 2 failed:\n{}", details.join("\n"));
}

#[test]
fn criterion_3_energy_stability() {
    let scenario = Scenario::energy_decay();
    let mesh = CartesianMesh::uniform(scenario.domain, 16, 16).unwrap();
    let mut sim = Simulation::new(scenario, mesh, 2, StabilizationParams::default(), NewtonSettings::default()).unwrap();
    let records = sim.run(&TimeConfig { dt: 1e-3, t_final: 0.2, cadence: 1 }).unwrap();
    let worst = records
        .windows(2)
        .map(|w| (w[1].energy - w[0].energy) / w[0].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = sim.steps_taken == 200 && worst <= 1e-12;
    let details = vec![
        format!("steps = {}, E_h(0) = {:.6e}, E_h(T) = {:.6e}", sim.steps_taken, records[0].energy, records.last().unwrap().energy),
        format!("largest relative stepwise increase = {worst:.3e} (allowed 1e-12)"),
    ];
    report(3, "energy nonincreasing with homogeneous data", pass, &details);
    assert!(pass, "{details:?}");
}

#[test]
fn criterion_4_peakon() {
    let times = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let section = Section::Y(0.0);
    let config = |dt: f64| RunConfig { k: 2, n: 32, dt, t_final: 1.0, ..RunConfig::defaults(ScenarioKind::Peakon) };
    let fine = run_sampled(&config(1e-3), &[section], &times, 801, 129).unwrap();
    let coarse = run_sampled(&config(1e-2), &[section], &times, 801, 129).unwrap();
    let peaks = fine.peaks(section);
    let mut details: Vec<String> = peaks
        .iter()
        .map(|p| format!("t = {:.1}: peak {:.4} at x = {:+.4}", p.time, p.peak, p.argmax))
        .collect();
    let amplitude_ok = peaks.len() == times.len() && peaks.iter().all(|p| (p.peak - 1.0).abs() <= 0.05);
    let cell = 2.0 / 32.0;
    let last = peaks.last().unwrap();
    let phase_ok = (last.time - 1.0).abs() < 1e-12 && (last.argmax - 1.0).abs() <= cell;
    let overshoot_ok = coarse.max_overshoot > fine.max_overshoot;
    details.push(format!("(a) amplitude within 5% of c at all sampled times: {amplitude_ok}"));
    details.push(format!("(b) argmax at t = 1 is {:.4}, within one cell ({cell}) of x = 1: {phase_ok}", last.argmax));
    details.push(format!(
        "(c) max overshoot above c: dt=1e-2 {:.4e} vs dt=1e-3 {:.4e}: {overshoot_ok}",
        coarse.max_overshoot, fine.max_overshoot
    ));
    let pass = amplitude_ok && phase_ok && overshoot_ok;
    report(4, "peakon amplitude, phase and time-step oscillation", pass, &details);
    assert!(pass, "{details:?}");
}

#[test]
fn criterion_5_condensed_matches_monolithic() {
    let mut details = Vec::new();
    let mut pass = true;
    for k in [1, 2] {
        let make = |mode| {
            let s = Scenario::mms();
            let mesh = CartesianMesh::uniform(s.domain, 4, 4).unwrap();
            Simulation::new(s, mesh, k, StabilizationParams::default(), NewtonSettings { mode, ..NewtonSettings::default() }).unwrap()
        };
        let (mut a, mut b) = (make(SolverMode::Condensed), make(SolverMode::Monolithic));
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            a.step(1e-3).unwrap();
            b.step(1e-3).unwrap();
            let states = a.solution.states.iter().zip(&b.solution.states).flat_map(|(x, y)| x.data.iter().zip(&y.data));
            let traces = a.solution.traces.blocks.iter().flatten().zip(b.solution.traces.blocks.iter().flatten());
            for (x, y) in states.chain(traces) {
                worst = worst.max((x - y).abs());
            }
        }
        pass &= worst <= 1e-9;
        details.push(format!("k={k}: max coefficient difference over 10 steps = {worst:.3e}"));
    }
    report(5, "condensed and monolithic solves agree to 1e-9", pass, &details);
    assert!(pass, "{details:?}");
}

#[test]
fn criterion_6_jacobian_vector_products() {
    let mut details = Vec::new();
    let mut pass = true;
    let mut rng = StdRng::seed_from_u64(20);
    let params = StabilizationParams::default();
    let src = |x: f64, y: f64| mms_source(x, y, 0.5, -0.5);
    for k in 1..=3 {
        let mesh = CartesianMesh::uniform(Domain2D::new(0.0, 1.2, 0.0, 0.9).unwrap(), 3, 2).unwrap();
        let ops = ReferenceOperators::new(k);
        let layout = Layout::new(&mesh, ops.nb(), ops.nf());
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let mut random = || {
                let mut s = Solution::zeros(&mesh, ops.nb(), ops.nf());
                s.states.iter_mut().flat_map(|st| st.data.iter_mut()).for_each(|v| *v = rng.random_range(-1.0..1.0));
                s.traces.blocks.iter_mut().flatten().for_each(|v| *v = rng.random_range(-1.0..1.0));
                s
            };
            let (prev, sol) = (random(), random());
            let ctx = StepContext {
                mesh: &mesh,
                ops: &ops,
                params: &params,
                flux: Flux { kappa: -0.5 },
                dt: 1e-2,
                previous: &prev,
                source: Some(&src),
            };
            let sys = assemble_newton_system(&ctx, &layout, &sol).unwrap();
            let dir: Vec<f64> = (0..sys.n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut jv = vec![0.0; sys.n];
            for ((&r, &c), &v) in sys.rows.iter().zip(&sys.cols).zip(&sys.values) {
                jv[r] += v * dir[c];
            }
            let x = layout.gather(&sol);
            let eps = 1e-6;
            let eval = |s: f64| {
                let mut t = sol.clone();
                let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * eps * d).collect();
                layout.scatter(&y, &mut t).unwrap();
                assemble_residual(&ctx, &layout, &t)
            };
            let (p, m) = (eval(1.0), eval(-1.0));
            let scale = jv.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let diff = (0..sys.n).map(|i| ((p[i] - m[i]) / (2.0 * eps) - jv[i]).abs()).fold(0.0, f64::max);
            worst = worst.max(diff / scale);
        }
        pass &= worst <= 1e-6;
        details.push(format!("k={k}: worst relative difference over 20 random states = {worst:.3e}"));
    }
    report(6, "analytic vs central-difference Jacobian-vector products", pass, &details);
    assert!(pass, "{details:?}");
}

/// `∫_a^b (Πf - f) L_m` along one edge, for `m < k`, with a rich rule.
fn edge_moments(tb: &TensorBasis, cell: &Cell, coeffs: &[f64], f: &dyn Fn(f64, f64) -> f64, side: Side) -> f64 {
    let rule = Quadrature1D::gauss_legendre(14);
    let k = tb.degree();
    let (a, b) = match side {
        Side::Left | Side::Right => (cell.y0, cell.y1),
        Side::Bottom | Side::Top => (cell.x0, cell.x1),
    };
    let point = |s: f64| match side {
        Side::Left => (cell.x0, s),
        Side::Right => (cell.x1, s),
        Side::Bottom => (s, cell.y0),
        Side::Top => (s, cell.y1),
    };
    (0..k)
        .map(|m| {
            rule.integrate(a, b, |s| {
                let (x, y) = point(s);
                let xi = (2.0 * s - a - b) / (b - a);
                (tb.eval(cell, coeffs, &[(x, y)])[0] - f(x, y)) * orthonormal_legendre(m, xi).0
            })
            .abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_7_projection_properties() {
    let f = |x: f64, y: f64| x.sin() * y.sin();
    let g = |x: f64, y: f64| (0.7 * x).exp() * (1.3 * y).cos() + x * y * y;
    let mut details = Vec::new();
    let mut pass = true;
    let rule = Quadrature1D::gauss_legendre(14);
    for k in 1..=3 {
        // Identities are checked on a basis sharing the oracle's rule, so they
        // hold to round-off rather than to quadrature error.
        let tb = TensorBasis::from_basis(Basis1D::with_quadrature(k, Quadrature1D::gauss_legendre(14)));
        let cell = Cell { x0: 0.2, x1: 0.2 + PI / 2.0, y0: -0.1, y1: -0.1 + PI / 2.0 };
        let mut moment: f64 = 0.0;
        let mut edges: f64 = 0.0;
        let mut corner: f64 = 0.0;
        let mut idem: f64 = 0.0;
        for func in [&f as &dyn Fn(f64, f64) -> f64, &g] {
            // Volume moments of the L2 projection against Q_k.
            let p = tb.project(&cell, TensorProjection::L2, func);
            for a in 0..tb.nb() {
                let m = rule.integrate(cell.x0, cell.x1, |x| {
                    rule.integrate(cell.y0, cell.y1, |y| {
                        let mut e = vec![0.0; tb.nb()];
                        e[a] = 1.0;
                        (tb.eval(&cell, &p, &[(x, y)])[0] - func(x, y)) * tb.eval(&cell, &e, &[(x, y)])[0]
                    })
                });
                moment = moment.max(m.abs());
            }
            // Edge identities against P_{k-1} plus corner interpolation.
            let minus = tb.project(&cell, TensorProjection::PiMinus, func);
            let plus = tb.project(&cell, TensorProjection::PiPlus, func);
            for side in [Side::Right, Side::Top] {
                edges = edges.max(edge_moments(&tb, &cell, &minus, func, side));
            }
            for side in [Side::Left, Side::Bottom] {
                edges = edges.max(edge_moments(&tb, &cell, &plus, func, side));
            }
            corner = corner.max((tb.eval(&cell, &minus, &[(cell.x1, cell.y1)])[0] - func(cell.x1, cell.y1)).abs());
            corner = corner.max((tb.eval(&cell, &plus, &[(cell.x0, cell.y0)])[0] - func(cell.x0, cell.y0)).abs());
            for (kind, once) in [(TensorProjection::L2, &p), (TensorProjection::PiMinus, &minus), (TensorProjection::PiPlus, &plus)] {
                let twice = tb.project(&cell, kind, |x, y| tb.eval(&cell, once, &[(x, y)])[0]);
                idem = idem.max(once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
        }
        let ok = moment < 1e-12 && edges < 1e-12 && corner < 1e-12 && idem < 1e-12;
        pass &= ok;
        details.push(format!(
            "k={k}: volume moment {moment:.1e}, edge moments {edges:.1e}, corner {corner:.1e}, idempotence {idem:.1e}"
        ));

        // Approximation rates of sin x sin y on (0, 2π)^2, default basis.
        let tb = TensorBasis::new(k);
        let errors = |n: usize, kind: TensorProjection| -> (f64, f64) {
            let mesh = CartesianMesh::uniform(Domain2D::square(0.0, 2.0 * PI), n, n).unwrap();
            let (mut vol, mut face) = (0.0, 0.0);
            for e in mesh.elements() {
                let c = mesh.cell(e);
                let p = tb.project(&c, kind, f);
                let err = |x: f64, y: f64| (tb.eval(&c, &p, &[(x, y)])[0] - f(x, y)).powi(2);
                vol += rule.integrate(c.x0, c.x1, |x| rule.integrate(c.y0, c.y1, |y| err(x, y)));
                face += rule.integrate(c.y0, c.y1, |y| err(c.x0, y) + err(c.x1, y));
                face += rule.integrate(c.x0, c.x1, |x| err(x, c.y0) + err(x, c.y1));
            }
            (vol.sqrt(), (mesh.h * face).sqrt())
        };
        for kind in [TensorProjection::L2, TensorProjection::PiMinus, TensorProjection::PiPlus] {
            let e: Vec<(f64, f64)> = [4, 8, 16].iter().map(|&n| errors(n, kind)).collect();
            let vol_order = (e[1].0 / e[2].0).log2().min((e[0].0 / e[1].0).log2());
            let face_order = (e[1].1 / e[2].1).log2().min((e[0].1 / e[1].1).log2());
            let ok = vol_order >= k as f64 + 0.9 && face_order >= k as f64 + 0.4;
            pass &= ok;
            details.push(format!("k={k} {kind:?}: volume order {vol_order:.2}, sqrt(h)-weighted face order {face_order:.2}"));
        }
    }
    report(7, "projection moments, edge identities, idempotence and rates", pass, &details);
    assert!(pass, "{details:?}");
}

#[test]
fn criterion_8_transmission_residuals() {
    let runs = mms_runs();
    let worst = runs.iter().map(|r| r.max_transmission).fold(0.0, f64::max);
    let pass = worst <= 1e-9 && runs.iter().all(|r| r.steps == 1000);
    let details: Vec<String> = runs
        .iter()
        .map(|r| format!("k={} N={:>2}: max over {} steps = {:.2e}", r.k, r.n, r.steps, r.max_transmission))
        .collect();
    report(8, "transmission residual families at convergence <= 1e-9", pass, &details);
    assert!(pass, "{details:?}");
}
