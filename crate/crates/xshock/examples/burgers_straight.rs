//! Track the straight Burgers shock starting from a curved interface guess.

use xshock::cases::case_burgers_straight;
use xshock::levelset::HeightFunction;
use xshock::sqp::{solve, SqpConfig};

fn main() {
    let case = case_burgers_straight();
    let sol = solve(&case, &SqpConfig::default(), None).expect("solver failure");
    for row in &sol.trace {
        println!(
            "iter {:3}  |r| = {:10.3e}  |R| = {:10.3e}  alpha = {:7.1e}  gamma = {:8.1e}  ls={}",
            row.iter, row.r_norm, row.big_r_norm, row.alpha, row.gamma, row.ls_trials
        );
    }
    println!(
        "converged: {}  final |r| = {:.3e}",
        sol.converged, sol.final_r_norm
    );
    println!(
        "spline endpoints: ({:.8}, t=0) ({:.8}, t=1); exact (0.25, 0.75)",
        sol.spline.height(0.0),
        sol.spline.height(1.0)
    );
}
