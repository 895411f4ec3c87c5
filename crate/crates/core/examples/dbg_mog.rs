use eptv_core::io::read_pgm;
use eptv_core::{run_ep, EdgePartition, EpConfig, ForwardOp, LikelihoodModel, PriorSpec};

fn main() {
    let img = read_pgm("/tmp/acc/cam256_noisy.pgm").unwrap();
    let (h, w) = (img.height, img.width);
    let model = LikelihoodModel::new(ForwardOp::identity(h, w), img.data.clone(), 100.0).unwrap();
    let part = EdgePartition::build(h, w).unwrap();
    let prior = PriorSpec::Mog2 { omega: 0.20, s1_sq: 3400.0, s2_sq: 11.0 };
    let cfg = EpConfig { max_iter: 1, tol: 0.0, ..EpConfig::default() };
    let mut state = None;
    for sweep in 1..=20 {
        match run_ep(&model, &part, &prior, &cfg, state.take()) {
            Ok(res) => {
                let mut pmin = f64::MAX;
                let mut pmax = f64::MIN;
                let mut smax = 0.0f64;
                for s in &res.state.sites[1..] {
                    for &p in &s.precision {
                        pmin = pmin.min(p);
                        pmax = pmax.max(p);
                    }
                    for &sh in &s.shift {
                        smax = smax.max(sh.abs());
                    }
                }
                let gvmax = res.var.iter().cloned().fold(f64::MIN, f64::max);
                let gmmax = res.mean.iter().cloned().fold(f64::MIN, |a, b| a.max(b.abs()));
                println!(
                    "sweep {sweep}: prior p in [{pmin:.3e},{pmax:.3e}] |shift|max {smax:.3e} gvar_max {gvmax:.3e} |gmean|max {gmmax:.3e} rep {}",
                    res.history[0].repaired
                );
                state = Some(res.state);
            }
            Err(e) => {
                println!("sweep {sweep}: ERROR {e}");
                break;
            }
        }
    }
}
