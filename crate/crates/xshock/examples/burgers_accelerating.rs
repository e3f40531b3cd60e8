//! Accelerating Burgers shock with P-continuation up to degree 3.

use xshock::cases::{
    accelerating_shock_path, case_burgers_accelerating, BURGERS_ACCELERATING_EXIT,
};
use xshock::levelset::HeightFunction;
use xshock::sqp::{solve, SqpConfig};

fn main() {
    let case = case_burgers_accelerating();
    let sol = solve(&case, &SqpConfig::default(), None).expect("solver failure");
    for row in &sol.trace {
        println!(
            "iter {:3}  P={}  |r| = {:10.3e}  |R| = {:10.3e}  alpha = {:7.1e}  gamma = {:8.1e}  ls={:2}  reinit={}",
            row.iter, row.p, row.r_norm, row.big_r_norm, row.alpha, row.gamma, row.ls_trials, row.reinit
        );
    }
    println!(
        "converged: {}  final P = {}  |r| = {:.3e}",
        sol.converged, sol.p, sol.final_r_norm
    );
    // L1 error of the spline against the exact path over the in-domain range
    let n = 100;
    let mut l1 = 0.0;
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64 * BURGERS_ACCELERATING_EXIT;
        l1 += (sol.spline.height(t) - accelerating_shock_path(t)).abs();
    }
    l1 *= BURGERS_ACCELERATING_EXIT / n as f64;
    println!("interface L1 error (in-domain): {l1:.4e}");
}
