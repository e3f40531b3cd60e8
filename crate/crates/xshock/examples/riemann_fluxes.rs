//! Compare the Euler numerical fluxes on classic Riemann states.

use xshock::physics::{euler_flux, godunov_flux, hllc_flux, riemann_star, slipwall_flux, GAMMA};

fn cons(rho: f64, u: f64, v: f64, p: f64) -> [f64; 4] {
    [
        rho,
        rho * u,
        rho * v,
        p / (GAMMA - 1.0) + 0.5 * rho * (u * u + v * v),
    ]
}

fn main() {
    // Sod shock tube: star-region pressure and velocity
    let (p_star, u_star) = riemann_star(1.0, 0.0, 1.0, 0.125, 0.0, 0.1).unwrap();
    println!("Sod star state: p* = {p_star:.10}, u* = {u_star:.10}");

    // a stationary oblique shock: both solvers return the common flux
    let pre = cons(1.0, 2.0 * GAMMA.sqrt(), 0.0, 1.0);
    let post = cons(
        1.4584256129129014,
        2.0678479565044645,
        0.3646173867346014,
        1.7065786040000334,
    );
    let beta = 0.6861575525967377_f64;
    let n = [beta.sin(), -beta.cos()];
    let g = godunov_flux(&pre, &post, n).unwrap();
    let h = hllc_flux(&pre, &post, n).unwrap();
    println!("\nstationary-shock flux (normal across the shock):");
    let show = |f: [f64; 4]| {
        f.iter()
            .map(|v| format!("{v:+.8e}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    println!("  godunov: {}", show(g));
    println!("  hllc:    {}", show(h));

    // moving contact: HLLC resolves it exactly
    let left = cons(1.0, 0.6, 0.2, 1.0);
    let right = cons(0.4, 0.6, 0.2, 1.0);
    let hc = hllc_flux(&left, &right, [1.0, 0.0]).unwrap();
    println!(
        "\ncontact wave, HLLC mass flux {:+.6e} (upwind density 1.0, u 0.6)",
        hc[0]
    );

    // slip wall against the exact tangential-flow flux
    let nw = [0.6, 0.8];
    let tang = cons(1.1, -0.8 * 1.3, 0.6 * 1.3, 2.0);
    let w = slipwall_flux(&tang, nw);
    let f = euler_flux(&tang);
    let exact = [
        f[0][0] * nw[0] + f[0][1] * nw[1],
        f[1][0] * nw[0] + f[1][1] * nw[1],
        f[2][0] * nw[0] + f[2][1] * nw[1],
        f[3][0] * nw[0] + f[3][1] * nw[1],
    ];
    println!("\nslip wall vs exact flux for tangential flow:");
    println!("  wall:  {}", show(w));
    println!("  exact: {}", show(exact));
}
