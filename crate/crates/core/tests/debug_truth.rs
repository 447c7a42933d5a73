use hjb_core::control::ControlGrid;
use hjb_core::experiments::{run_investment, run_investment_reference, SolverKind, SolverParams};
use hjb_core::fd::{InvestmentModel, TimeGrid};

#[test]
fn probe_truth_decomposition() {
    let m = InvestmentModel::paper();
    let grid = ControlGrid::uniform(m.control_interval(), 1001).unwrap();
    let params = SolverParams::default();

    // Fine-grid policy march as truth.
    let truth_mn = 800;
    let sg_t = m.spatial_grid(truth_mn);
    let tg_t = TimeGrid::new(1.0, truth_mn);
    let truth = run_investment(&m, &sg_t, &tg_t, &grid, SolverKind::Policy, &params)
        .unwrap()
        .surface;

    for mn in [50usize, 100, 200, 400] {
        let sg = m.spatial_grid(mn);
        let tg = TimeGrid::new(1.0, mn);
        let pen = run_investment(&m, &sg, &tg, &grid, SolverKind::Penalty, &params)
            .unwrap()
            .surface;
        let refe = run_investment_reference(&m, &sg, &tg).unwrap();
        let stride = truth_mn / mn;
        let mut err_pen = 0.0f64;
        let mut err_ref = 0.0f64;
        let mut gap = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..=mn {
            let t = truth.at(0, i * stride);
            err_pen = err_pen.max((pen.at(0, i) - t).abs());
            err_ref = err_ref.max((refe.at(0, i) - t).abs());
            gap = gap.max((pen.at(0, i) - refe.at(0, i)).abs());
            scale = scale.max(t.abs());
        }
        println!(
            "M=N={mn}: err_pen {err_pen:.3e} err_ref {err_ref:.3e} gap {gap:.3e} (rel gap {:.3e}, scale {scale:.1})",
            gap / scale
        );
    }
    panic!("probe");
}
