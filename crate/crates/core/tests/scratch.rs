use mfgc_core::outer::{continuation, newton_outer, level_spread};
use mfgc_core::scenarios::example2_queue;
use mfgc_core::{ContinuationSchedule, OuterState};

#[test]
#[ignore]
fn probe_queue_full() {
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("mfgc_core=debug"),
    )
    .try_init();
    let sc = example2_queue();
    let mut p = sc.build().unwrap();
    p.hjb_cfg.max_newton = 200;
    p.hjb_cfg.newton_tol = 1e-9;
    let base_cfg = sc.outer_config();
    let mut hard = base_cfg.clone();
    hard.picard_warmup = 30;
    hard.krylov.rel_tol = 1e-4;
    hard.krylov.max_iters = 150;
    hard.max_newton = 150;

    let ramp = ContinuationSchedule::lambda_theta_ramp(&[
        (0.5, 0.5),
        (0.75, 0.8),
        (0.85, 0.9),
        (0.9, 0.925),
    ]);
    let init = OuterState::initial_guess(&p);
    let t0 = std::time::Instant::now();
    let (warm, _base, reps) = match continuation(&p, &ramp, &init, &hard) {
        Ok(x) => x,
        Err(e) => {
            println!("ramp failed: {e}");
            return;
        }
    };
    for r in &reps {
        println!(
            "stage {}: {} newton, avg bicg {:.1}, res {:.2e}",
            r.stage,
            r.newton_iters,
            r.avg_bicgstab(),
            r.final_residual
        );
    }
    println!("ramp done at {:.0}s", t0.elapsed().as_secs_f64());

    // final stage at the target interaction strength
    let (sol, basef, rep) = match newton_outer(&p, &warm, &hard) {
        Ok(x) => x,
        Err(e) => {
            println!("final stage failed: {e}");
            return;
        }
    };
    println!(
        "final: {} newton, bicg {:?}, res {:.2e}, elapsed {:.0}s",
        rep.newton_iters,
        rep.bicg_iters,
        rep.final_residual,
        t0.elapsed().as_secs_f64()
    );

    // cycling toward the stationary regime
    let mid = p.grid.nt / 2;
    let mut prob = p.clone();
    let mut st = sol;
    prob.u_terminal = basef.hjb.u[mid].clone();
    prob.m0 = basef.fp.m[mid].clone();
    for cycle in 0..200 {
        match newton_outer(&prob, &st, &hard) {
            Ok((s, base, rep)) => {
                let variation = level_spread(&base.hjb.u) + level_spread(&base.fp.m);
                println!(
                    "cycle {cycle}: {} newton, avg bicg {:.1}, res {:.2e}, variation {:.3e}, elapsed {:.0}s",
                    rep.newton_iters,
                    rep.avg_bicgstab(),
                    rep.final_residual,
                    variation,
                    t0.elapsed().as_secs_f64()
                );
                if variation < 1e-6 {
                    println!("steady at cycle {cycle}");
                    break;
                }
                prob.u_terminal = base.hjb.u[mid].clone();
                prob.m0 = base.fp.m[mid].clone();
                st = s;
            }
            Err(e) => {
                println!("cycle {cycle}: ERR {e}");
                break;
            }
        }
    }
}
