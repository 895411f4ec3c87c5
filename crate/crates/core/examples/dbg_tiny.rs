use eptv_core::oracle::grid_mmse_denoise;
use eptv_core::{run_ep, EdgePartition, EpConfig, ForwardOp, LikelihoodModel, PriorSpec};

fn main() {
    let prior = PriorSpec::Mog2 { omega: 0.20, s1_sq: 3400.0, s2_sq: 11.0 };
    for y in [vec![100.0, 110.0], vec![100.0, 140.0], vec![50.0, 200.0], vec![120.0, 125.0]] {
        let (em, ev) = grid_mmse_denoise(&y, 1, 2, 100.0, &prior, 2001).unwrap();
        let model =
            LikelihoodModel::new(ForwardOp::identity(1, 2), y.clone(), 100.0).unwrap();
        let part = EdgePartition::build(1, 2).unwrap();
        let cfg = EpConfig { max_iter: 200, ..EpConfig::default() };
        let r = run_ep(&model, &part, &prior, &cfg, None).unwrap();
        println!(
            "y={y:?} exact m=[{:.3},{:.3}] v=[{:.2},{:.2}] | ep m=[{:.3},{:.3}] v=[{:.2},{:.2}] conv={} it={}",
            em[0], em[1], ev[0], ev[1], r.mean[0], r.mean[1], r.var[0], r.var[1], r.converged, r.iterations
        );
    }
}
