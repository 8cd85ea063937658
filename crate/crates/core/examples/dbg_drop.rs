use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SupportedConeT};
use pdg_core::data::*;
use pdg_core::socp::*;
use pdg_core::transcription::*;
use pdg_core::vehicle::*;

fn main() {
    let p = VehicleParams::default();
    let grid = make_grid(31, 5.0).unwrap();
    let target = landing_target(&p);
    let x0 = build_desk_training_grid().states[16];
    let bc = BoundaryConditions { initial: x0, final_state: target };
    let reference = straight_line_init(&bc, &grid, &p);
    let segments = linearize_discretize(&reference, &grid, &p).unwrap();
    let weights = SubproblemWeights { w_nu: 1e4, w_tr: 10.0, w_trp: 10.0 };
    let program = assemble_subproblem(&segments, &reference, &bc, &weights, &p, TrustRegionMode::Reference, None).unwrap();

    let mut triplets: Vec<(usize, usize, f64)> = program.entries.clone();
    triplets.sort_by_key(|&(r, c, _)| (c, r));
    let mut colptr = vec![0usize; program.num_vars + 1];
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    for &(r, c, v) in &triplets {
        colptr[c + 1] += 1;
        rowval.push(r);
        nzval.push(v);
    }
    for c in 0..program.num_vars {
        colptr[c + 1] += colptr[c];
    }
    let a = CscMatrix::new(program.num_rows(), program.num_vars, colptr, rowval, nzval);
    let pmat = CscMatrix::<f64>::zeros((program.num_vars, program.num_vars));
    let cones: Vec<SupportedConeT<f64>> = program.cones.iter().map(|c| match *c {
        ConeBlock::Zero(n) => SupportedConeT::ZeroConeT(n),
        ConeBlock::Nonneg(n) => SupportedConeT::NonnegativeConeT(n),
        ConeBlock::SecondOrder(n) => SupportedConeT::SecondOrderConeT(n),
    }).collect();
    let settings = DefaultSettingsBuilder::default().verbose(true).max_iter(200)
        .tol_feas(1e-9).tol_gap_abs(1e-9).tol_gap_rel(1e-9).build().unwrap();
    let mut solver = DefaultSolver::new(&pmat, &program.objective, &a, &program.rhs, &cones, settings).unwrap();
    solver.solve();
    println!("status = {:?}", solver.solution.status);
    println!("obj = {} dual = {}", solver.solution.obj_val, solver.solution.obj_val_dual);
    let (eq, cone) = program.kkt_primal_residuals(&solver.solution.x);
    println!("recomputed: eq = {eq:.3e} cone = {cone:.3e} gap = {:.3e}", (solver.solution.obj_val - solver.solution.obj_val_dual).abs());
    // Per-cone breakdown.
    let mut slack = program.rhs.clone();
    for &(r, c, v) in &program.entries {
        slack[r] -= v * solver.solution.x[c];
    }
    let mut row = 0usize;
    for (bi, coneb) in program.cones.iter().enumerate() {
        match *coneb {
            ConeBlock::Zero(n) => { row += n; }
            ConeBlock::Nonneg(n) => {
                for s in &slack[row..row+n] {
                    if -s > 1e-9 { println!("  nonneg block {bi}: viol {:.3e}", -s); }
                }
                row += n;
            }
            ConeBlock::SecondOrder(n) => {
                let head = slack[row];
                let tail: f64 = slack[row+1..row+n].iter().map(|s| s*s).sum::<f64>().sqrt();
                if tail - head > 1e-9 {
                    println!("  soc block {bi} (dim {n}): head {:.4e} tail {:.4e} viol {:.3e} rel {:.3e}", head, tail, tail-head, (tail-head)/head.abs().max(1.0));
                }
                row += n;
            }
        }
    }
}
// (appended) per-cone diagnostics
