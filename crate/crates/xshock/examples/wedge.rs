//! Mach 2 flow over a 10-degree wedge: track the attached oblique shock.

use xshock::cases::case_wedge;
use xshock::levelset::HeightFunction;
use xshock::sqp::{solve, SqpConfig};

fn main() {
    let case = case_wedge();
    let sol = solve(&case, &SqpConfig::default(), None).expect("solver failure");
    for row in &sol.trace {
        println!(
            "iter {:3}  |r| = {:10.3e}  |R| = {:10.3e}  alpha = {:7.1e}  gamma = {:8.1e}  h_err = {:9.2e}  ls={}",
            row.iter, row.r_norm, row.big_r_norm, row.alpha, row.gamma,
            row.enthalpy_err.unwrap_or(f64::NAN), row.ls_trials
        );
    }
    println!(
        "converged: {}  final |r| = {:.3e}",
        sol.converged, sol.final_r_norm
    );
    // shock angle from the in-domain portion of the spline
    let x_max = case.bounds.x_max;
    let mut y_end = 0.0;
    for i in 0..=1000 {
        let y = i as f64 / 1000.0;
        if sol.spline.height(y) <= x_max {
            y_end = y;
        }
    }
    let angle = (y_end / (sol.spline.height(y_end) - sol.spline.height(0.0)))
        .atan()
        .to_degrees();
    println!("recovered shock angle: {:.4} deg (exact 39.3139)", angle);
    println!("foot: {:.8} (exact 0.5)", sol.spline.height(0.0));
}
