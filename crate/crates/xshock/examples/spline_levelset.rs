//! Spline height-function level sets: fitting, DOF access, normals and the
//! plain-text serialization.

use xshock::levelset::{HeightFunction, SplineKind, SplineLevelSet};

fn main() {
    let knots: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    // the advection test problem's shock path
    let s = |t: f64| 0.25 + t * t * t - 1.5 * t * t + 0.5 * t;
    let sp = |t: f64| 3.0 * t * t - 3.0 * t + 0.5;
    let mut spline = SplineLevelSet::fit(SplineKind::Cubic, &knots, s, sp).unwrap();

    println!(
        "phi(x, y) = x - S(y), {} DOFs (value + slope per knot)",
        spline.num_dofs()
    );
    for &t in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        let n = spline.interface_normal(t);
        println!(
            "  t = {t:.2}: S = {:.6}, phi(0.3, t) = {:+.6}, normal = ({:+.4}, {:+.4})",
            spline.height(t),
            spline.eval(0.3, t).unwrap(),
            n[0],
            n[1]
        );
    }

    // the optimizer moves the interface through the DOF vector
    let mut dofs = spline.dofs();
    dofs[5] += 0.02; // value at the middle knot
    spline.set_dofs(&dofs).unwrap();
    println!(
        "\nafter perturbing the middle knot: S(0.5) = {:.6}",
        spline.height(0.5)
    );
    println!(
        "local support: S(0.3) = {:.6} unchanged",
        spline.height(0.3)
    );

    println!("\nserialized form (y x c per knot):\n{}", spline.to_text());
    let back = SplineLevelSet::from_text(&spline.to_text()).unwrap();
    assert_eq!(back, spline);
}
