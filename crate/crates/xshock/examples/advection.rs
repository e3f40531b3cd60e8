//! Track the curved discontinuity of the space-time advection problem.

use xshock::cases::case_advection;
use xshock::levelset::HeightFunction;
use xshock::sqp::{solve, SqpConfig};

fn main() {
    let case = case_advection();
    let cfg = SqpConfig::default();
    let sol = solve(&case, &cfg, None).expect("solver failure");
    for row in &sol.trace {
        println!(
            "iter {:3}  P={}  |r| = {:10.3e}  |R| = {:10.3e}  alpha = {:7.1e}  gamma = {:8.1e}  ls={}",
            row.iter, row.p, row.r_norm, row.big_r_norm, row.alpha, row.gamma, row.ls_trials
        );
    }
    println!(
        "converged: {}  final |r| = {:.3e}  |R| = {:.3e}",
        sol.converged, sol.final_r_norm, sol.final_big_r_norm
    );
    let s_exact = case.exact_interface.as_ref().unwrap();
    let max_dev = sol
        .spline
        .knots()
        .iter()
        .map(|&t| (sol.spline.height(t) - s_exact(t)).abs())
        .fold(0.0f64, f64::max);
    println!("max interface deviation at knots: {max_dev:.3e}");
}
