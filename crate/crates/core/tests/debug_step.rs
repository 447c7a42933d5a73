use hjb_core::control::ControlGrid;
use hjb_core::experiments::{max_norm_gap, SolverParams};
use hjb_core::fd::{build_investment_step, InvestmentModel, TimeGrid};
use hjb_core::hjb::{policy_iteration, solve_penalised, PenaltyConfig};
use hjb_core::penalty::PenaltyTerm;

#[test]
fn probe_single_step_error() {
    let m = InvestmentModel::paper();
    let mn = 200;
    let sg = m.spatial_grid(mn);
    let tg = TimeGrid::new(1.0, mn);
    let grid = ControlGrid::uniform(m.control_interval(), 1001).unwrap();
    let _params = SolverParams::default();

    // March with POLICY (exact discrete path), and at selected steps compare
    // a single penalty solve against the policy solve from the same prev.
    let mut prev = vec![1.0; sg.nodes()];
    let mut worst_single = 0.0f64;
    let mut acc_gap = 0.0f64;
    let mut pen_prev = prev.clone();
    for j in (0..mn).rev() {
        let p = build_investment_step(&m, &sg, &tg, &grid, &prev).unwrap();
        let pol = policy_iteration(&p, &prev, 1e-10, 100).unwrap();

        let mut cfg = PenaltyConfig::new(1e6, grid.lo(), PenaltyTerm::Max);
        cfg.tol = 1e-12;
        let pen_same = solve_penalised(&p, &cfg, &prev).unwrap();
        let single = max_norm_gap(&pen_same.solution, &pol.solution);
        worst_single = worst_single.max(single);

        // Accumulated penalty march for reference.
        let p2 = build_investment_step(&m, &sg, &tg, &grid, &pen_prev).unwrap();
        let pen_march = solve_penalised(&p2, &cfg, &pen_prev).unwrap();
        acc_gap = max_norm_gap(&pen_march.solution, &pol.solution);
        pen_prev = pen_march.solution;
        prev = pol.solution;
        if j % 50 == 0 {
            println!(
                "step {j}: single-step pen-vs-pol {single:.3e}, accumulated {acc_gap:.3e}"
            );
        }
    }
    println!("worst single-step gap {worst_single:.3e}, final accumulated {acc_gap:.3e}");
    panic!("probe");
}
