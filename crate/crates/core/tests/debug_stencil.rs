use hjb_core::control::ControlGrid;
use hjb_core::experiments::{max_norm_gap, run_early_exercise, SolverKind, SolverParams};
use hjb_core::fd::{EarlyExerciseModel, SpatialGrid, TimeGrid};

#[derive(Clone, Copy, Debug)]
enum GradStencil {
    Central,
    Forward,
    Backward,
}

fn explicit_march(m: &EarlyExerciseModel, sg: &SpatialGrid, tg: &TimeGrid, st: GradStencil) -> Vec<f64> {
    let nodes = sg.nodes();
    let h = sg.h();
    let k = tg.k();
    let q = m.gamma * (1.0 - m.rho_corr * m.rho_corr);
    let mut prev: Vec<f64> = (0..nodes).map(|i| EarlyExerciseModel::payoff(sg.point(i))).collect();
    for _ in 0..tg.steps {
        let mut out = vec![0.0; nodes];
        out[0] = 1.0;
        out[nodes - 1] = 0.0;
        for i in 1..nodes - 1 {
            let y = sg.point(i);
            let a = (m.a)(y);
            let drift = (m.b)(y) - m.rho_corr * m.mu_over_sigma * a;
            let diffusion = 0.5 * a * a * (prev[i + 1] - 2.0 * prev[i] + prev[i - 1]) / (h * h);
            let convection = if drift >= 0.0 {
                drift * (prev[i + 1] - prev[i]) / h
            } else {
                drift * (prev[i] - prev[i - 1]) / h
            };
            let grad = match st {
                GradStencil::Central => (prev[i + 1] - prev[i - 1]) / (2.0 * h),
                GradStencil::Forward => (prev[i + 1] - prev[i]) / h,
                GradStencil::Backward => (prev[i] - prev[i - 1]) / h,
            };
            let v = prev[i] + k * (diffusion + convection - 0.5 * q * a * a * grad * grad);
            out[i] = v.max(EarlyExerciseModel::payoff(y));
        }
        prev = out;
    }
    prev
}

#[test]
fn probe_stencils() {
    let m = EarlyExerciseModel::paper();
    let sg = m.spatial_grid(50);
    let tg = TimeGrid::new(1.0, 50);
    let grid = ControlGrid::uniform(m.control_interval(), 102).unwrap();
    let params = SolverParams::default();
    let pen50 = run_early_exercise(&m, &sg, &tg, &grid, SolverKind::Penalty, &params).unwrap();

    for st in [GradStencil::Central, GradStencil::Forward, GradStencil::Backward] {
        let exp = explicit_march(&m, &sg, &TimeGrid::new(1.0, 2500), st);
        let gap = max_norm_gap(pen50.surface.row(0), &exp);
        println!("stencil {st:?}: gap pen50-vs-explicit(2500) {gap:.4e}");
    }

    // Paper's second row: M=4e4, N=200 explicit vs M=N=200 penalty (3.5e-04).
    let sg200 = m.spatial_grid(200);
    let tg200 = TimeGrid::new(1.0, 200);
    let pen200 = run_early_exercise(&m, &sg200, &tg200, &grid, SolverKind::Penalty, &params).unwrap();
    for st in [GradStencil::Central, GradStencil::Forward] {
        let exp = explicit_march(&m, &sg200, &TimeGrid::new(1.0, 40_000), st);
        let gap = max_norm_gap(pen200.surface.row(0), &exp);
        println!("N=200 stencil {st:?}: gap {gap:.4e}");
    }
    panic!("probe");
}
