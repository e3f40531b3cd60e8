//! Registry of the test problems: domains, grids, exact solutions, initial
//! guesses and per-case solver settings.

use crate::levelset::{AnalyticLevelSet, SplineKind};
use crate::mesh::Rect;
use crate::physics::{AdvectionLaw, BurgersLaw, ConservationLaw, EulerBc, EulerLaw, GAMMA};

/// How the initial solution coefficients are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitStrategy {
    /// L2-project the exact solution field (with its true discontinuity).
    ProjectExact,
    /// ProjectExact followed by one Newton step in u on the fixed initial
    /// level set.
    OneNewtonStep,
    /// Project the per-side exact formulas, switching sides at the initial
    /// interface instead of the true one.
    ProjectExactOnInitialLevelSet,
}

type Field = Box<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;

/// Complete description of one shock-tracking problem.
pub struct CaseDefinition {
    pub name: &'static str,
    pub nx: usize,
    pub ny: usize,
    pub bounds: Rect,
    /// Final solution degree; the solver starts at P = 0 and raises.
    pub p_max: usize,
    pub spline_kind: SplineKind,
    pub law: Box<dyn ConservationLaw + Send + Sync>,
    pub phi_b: Option<AnalyticLevelSet>,
    /// Initial interface height function and its derivative.
    pub initial_interface: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub initial_interface_deriv: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub init_strategy: InitStrategy,
    /// Exact solution field (None if unknown).
    pub exact_field: Option<Field>,
    /// Per-side exact formulas for ProjectExactOnInitialLevelSet.
    pub side_fields: Option<(Field, Field)>,
    /// Exact interface height function, for diagnostics.
    pub exact_interface: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    /// Largest y up to which the exact interface lies inside the domain.
    pub exact_interface_y_end: f64,
    /// Free-stream enthalpy reference (Euler cases).
    pub enthalpy_ref: Option<f64>,
    pub agg_threshold: f64,
    pub max_iterations: usize,
    /// Points on the domain boundary where the Dirichlet data jumps.
    pub boundary_data_breaks: Vec<[f64; 2]>,
}

/// Space-time advection of a discontinuity with cubically curved shock path.
pub fn case_advection() -> CaseDefinition {
    let s = |t: f64| 0.25 + t * t * t - 1.5 * t * t + 0.5 * t;
    let exact = move |x: f64, t: f64| if x < s(t) { 1.0 } else { 0.0 };
    CaseDefinition {
        name: "advection",
        nx: 10,
        ny: 10,
        bounds: Rect::new(0.0, 1.0, 0.0, 1.0),
        p_max: 0,
        spline_kind: SplineKind::Cubic,
        law: Box::new(AdvectionLaw {
            speed: Box::new(|t| 3.0 * t * t - 3.0 * t + 0.5),
            dirichlet: Box::new(move |x, t| exact(x, t)),
        }),
        phi_b: None,
        initial_interface: Box::new(|t| 0.7 * t * t * t - t * t + 0.7 * t + 0.1),
        initial_interface_deriv: Box::new(|t| 2.1 * t * t - 2.0 * t + 0.7),
        init_strategy: InitStrategy::ProjectExact,
        exact_field: Some(Box::new(move |x, t, out| out[0] = exact(x, t))),
        side_fields: None,
        exact_interface: Some(Box::new(s)),
        exact_interface_y_end: 1.0,
        enthalpy_ref: None,
        agg_threshold: 0.3,
        max_iterations: 60,
        boundary_data_breaks: vec![[0.25, 0.0]],
    }
}

/// Space-time Burgers with a straight shock of speed 1/2 and a curved initial
/// interface guess.
pub fn case_burgers_straight() -> CaseDefinition {
    let s = |t: f64| 0.25 + 0.5 * t;
    let exact = move |x: f64, t: f64| if x < s(t) { 0.75 } else { 0.25 };
    CaseDefinition {
        name: "burgers-straight",
        nx: 10,
        ny: 10,
        bounds: Rect::new(0.0, 1.0, 0.0, 1.0),
        p_max: 0,
        spline_kind: SplineKind::Linear,
        law: Box::new(BurgersLaw {
            dirichlet: Box::new(move |x, t| exact(x, t)),
        }),
        phi_b: None,
        // curved guess x = -t^2/5 + 3t/5 + 2/5, interpolated by the linear spline
        initial_interface: Box::new(|t| -0.2 * t * t + 0.6 * t + 0.4),
        initial_interface_deriv: Box::new(|t| -0.4 * t + 0.6),
        init_strategy: InitStrategy::OneNewtonStep,
        exact_field: Some(Box::new(move |x, t, out| out[0] = exact(x, t))),
        side_fields: None,
        exact_interface: Some(Box::new(s)),
        exact_interface_y_end: 1.0,
        enthalpy_ref: None,
        agg_threshold: 0.3,
        max_iterations: 30,
        boundary_data_breaks: vec![[0.25, 0.0]],
    }
}

/// The y value where the accelerating-shock path s(t) leaves the domain
/// through x = 1: s(11/16) = 1.
pub const BURGERS_ACCELERATING_EXIT: f64 = 11.0 / 16.0;

/// Shock path of the accelerating-shock Burgers case. Solves the
/// Rankine-Hugoniot ODE s' = (4 + 3(s-1)/(1+3t))/2, s(0) = 0 in closed form.
pub fn accelerating_shock_path(t: f64) -> f64 {
    7.0 / 3.0 * (1.0 - (1.0 + 3.0 * t).sqrt()) + 4.0 * t
}

/// Space-time Burgers with an accelerating shock and non-polynomial solution;
/// solved with P-continuation up to degree 3.
pub fn case_burgers_accelerating() -> CaseDefinition {
    let s = accelerating_shock_path;
    let left = |_x: f64, _t: f64| 4.0;
    let right = |x: f64, t: f64| 3.0 * (x - 1.0) / (1.0 + 3.0 * t);
    let exact = move |x: f64, t: f64| if x < s(t) { left(x, t) } else { right(x, t) };
    CaseDefinition {
        name: "burgers-accelerating",
        nx: 10,
        ny: 10,
        bounds: Rect::new(-0.2, 1.0, 0.0, 1.0),
        p_max: 3,
        spline_kind: SplineKind::Cubic,
        law: Box::new(BurgersLaw {
            dirichlet: Box::new(move |x, t| exact(x, t)),
        }),
        phi_b: None,
        // straight line through the shock foot (0, 0)
        initial_interface: Box::new(|t| 0.85 * t),
        initial_interface_deriv: Box::new(|_| 0.85),
        init_strategy: InitStrategy::ProjectExactOnInitialLevelSet,
        exact_field: Some(Box::new(move |x, t, out| out[0] = exact(x, t))),
        side_fields: Some((
            Box::new(move |x, t, out| out[0] = left(x, t)),
            Box::new(move |x, t, out| out[0] = right(x, t)),
        )),
        exact_interface: Some(Box::new(s)),
        exact_interface_y_end: BURGERS_ACCELERATING_EXIT,
        enthalpy_ref: None,
        agg_threshold: 0.3,
        max_iterations: 150,
        boundary_data_breaks: vec![[0.0, 0.0]],
    }
}

/// Oblique-shock relations for a calorically perfect gas.
#[derive(Clone, Copy, Debug)]
pub struct ObliqueShock {
    /// Shock angle from the upstream flow direction, radians.
    pub beta: f64,
    pub mach_post: f64,
    pub pressure_ratio: f64,
    pub density_ratio: f64,
    /// Post-shock conserved state for upstream (rho, p) = (1, 1) moving in +x.
    pub post_state: [f64; 4],
}

/// Solve the theta-beta-M relation for the weak oblique shock attached to a
/// wedge of half-angle `theta` at upstream Mach `mach`, then evaluate the
/// jump relations.
pub fn oblique_shock(mach: f64, theta: f64) -> ObliqueShock {
    let g = GAMMA;
    let f = |beta: f64| {
        2.0 / beta.tan() * (mach * mach * beta.sin().powi(2) - 1.0)
            / (mach * mach * (g + (2.0 * beta).cos()) + 2.0)
            - theta.tan()
    };
    // weak solution: bracket between the Mach angle and the strong branch
    let mut lo = (1.0 / mach).asin() + 1e-12;
    let mut hi = 65f64.to_radians();
    debug_assert!(f(lo) < 0.0 && f(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    let mn1 = mach * beta.sin();
    let mn1sq = mn1 * mn1;
    let pressure_ratio = 1.0 + 2.0 * g / (g + 1.0) * (mn1sq - 1.0);
    let density_ratio = (g + 1.0) * mn1sq / ((g - 1.0) * mn1sq + 2.0);
    let mn2 = ((1.0 + 0.5 * (g - 1.0) * mn1sq) / (g * mn1sq - 0.5 * (g - 1.0))).sqrt();
    let mach_post = mn2 / (beta - theta).sin();
    let (rho2, p2) = (density_ratio, pressure_ratio);
    let speed2 = mach_post * (g * p2 / rho2).sqrt();
    let (u2, v2) = (speed2 * theta.cos(), speed2 * theta.sin());
    let post_state = [
        rho2,
        rho2 * u2,
        rho2 * v2,
        p2 / (g - 1.0) + 0.5 * rho2 * (u2 * u2 + v2 * v2),
    ];
    ObliqueShock {
        beta,
        mach_post,
        pressure_ratio,
        density_ratio,
        post_state,
    }
}

/// Mach 2 flow over a 10-degree wedge; both the wedge surface and the shock
/// are straight lines through the tip (0.5, 0).
pub fn case_wedge() -> CaseDefinition {
    let mach = 2.0;
    let theta_wedge = 10f64.to_radians();
    let shock = oblique_shock(mach, theta_wedge);
    let u_in = mach * GAMMA.sqrt();
    let free_stream = [1.0, u_in, 0.0, 1.0 / (GAMMA - 1.0) + 0.5 * u_in * u_in];
    let post = shock.post_state;
    let s_exact = move |y: f64| 0.5 + y / shock.beta.tan();
    let exact = move |x: f64, y: f64, out: &mut [f64]| {
        let state = if x < s_exact(y) { free_stream } else { post };
        out[..4].copy_from_slice(&state);
    };
    let init_slope = 1.0 / 32f64.to_radians().tan();
    CaseDefinition {
        name: "wedge",
        nx: 15,
        ny: 10,
        bounds: Rect::new(0.0, 1.5, 0.0, 1.0),
        p_max: 0,
        spline_kind: SplineKind::Linear,
        law: Box::new(EulerLaw {
            bc: [
                EulerBc::SupersonicInlet(free_stream),
                EulerBc::SupersonicOutlet,
                EulerBc::SlipWall,
                EulerBc::SlipWall,
            ],
        }),
        // wedge surface x = 1/2 + y / tan(10 deg); fluid on the phi_b < 0 side
        phi_b: Some(AnalyticLevelSet::line(0.5, 1.0 / theta_wedge.tan())),
        initial_interface: Box::new(move |y| 0.5 + init_slope * y),
        initial_interface_deriv: Box::new(move |_| init_slope),
        init_strategy: InitStrategy::ProjectExact,
        exact_field: Some(Box::new(exact)),
        side_fields: None,
        exact_interface: Some(Box::new(s_exact)),
        exact_interface_y_end: (1.5 - 0.5) * shock.beta.tan(),
        enthalpy_ref: Some(crate::physics::free_stream_enthalpy(mach, 1.0, 1.0)),
        agg_threshold: 0.4,
        max_iterations: 60,
        boundary_data_breaks: Vec::new(),
    }
}

/// Look a case up by its CLI name.
pub fn by_name(name: &str) -> Option<CaseDefinition> {
    match name {
        "advection" => Some(case_advection()),
        "burgers-straight" => Some(case_burgers_straight()),
        "burgers-accelerating" => Some(case_burgers_accelerating()),
        "wedge" => Some(case_wedge()),
        _ => None,
    }
}

pub fn all_names() -> &'static [&'static str] {
    &[
        "advection",
        "burgers-straight",
        "burgers-accelerating",
        "wedge",
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn advection_shock_path_endpoints() {
        let c = case_advection();
        let s = c.exact_interface.as_ref().unwrap();
        assert_relative_eq!(s(0.0), 0.25, epsilon = 1e-15);
        assert_relative_eq!(s(1.0), 0.25, epsilon = 1e-15);
        assert_relative_eq!((c.initial_interface)(0.0), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn burgers_straight_endpoints() {
        let c = case_burgers_straight();
        let s = c.exact_interface.as_ref().unwrap();
        assert_relative_eq!(s(0.0), 0.25, epsilon = 1e-15);
        assert_relative_eq!(s(1.0), 0.75, epsilon = 1e-15);
        assert_relative_eq!((c.initial_interface)(1.0), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn accelerating_path_satisfies_rankine_hugoniot() {
        // s' = (c_left + c_right(s)) / 2 along the path
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let h = 1e-6;
            let sp = (accelerating_shock_path(t + h) - accelerating_shock_path(t - h)) / (2.0 * h);
            let s = accelerating_shock_path(t);
            let rh = 0.5 * (4.0 + 3.0 * (s - 1.0) / (1.0 + 3.0 * t));
            assert_relative_eq!(sp, rh, max_relative = 1e-8);
        }
        assert_relative_eq!(accelerating_shock_path(0.0), 0.0, epsilon = 1e-15);
        // the shock leaves through x = 1 at t = 11/16
        assert_relative_eq!(
            accelerating_shock_path(BURGERS_ACCELERATING_EXIT),
            1.0,
            epsilon = 1e-13
        );
        // frozen value from the closed form
        assert_relative_eq!(
            accelerating_shock_path(0.5),
            0.6440093964702241,
            epsilon = 1e-14
        );
    }

    #[test]
    fn oblique_shock_matches_frozen_oracle() {
        // independently computed with high-precision arithmetic
        let s = oblique_shock(2.0, 10f64.to_radians());
        assert_relative_eq!(s.beta.to_degrees(), 39.313931844818871, epsilon = 1e-9);
        assert_relative_eq!(s.mach_post, 1.6405222290010812, epsilon = 1e-10);
        assert_relative_eq!(s.pressure_ratio, 1.7065786040000334, epsilon = 1e-10);
        assert_relative_eq!(s.density_ratio, 1.4584256129129014, epsilon = 1e-10);
        assert_relative_eq!(
            s.post_state[1],
            1.4584256129129014 * 2.0678479565044645,
            epsilon = 1e-9
        );
        assert_relative_eq!(s.post_state[3], 7.4815027573512451, epsilon = 1e-9);
    }

    #[test]
    fn wedge_case_consistency() {
        let c = case_wedge();
        assert_relative_eq!(c.enthalpy_ref.unwrap(), 6.3, epsilon = 1e-13);
        // the shock and wedge lines both pass through the tip
        let s0 = (c.initial_interface)(0.0);
        assert_relative_eq!(s0, 0.5, epsilon = 1e-15);
        let b = c.phi_b.unwrap();
        assert_relative_eq!(b.eval(0.5, 0.0), 0.0, epsilon = 1e-15);
        // exact post-shock state is admissible and downstream-supersonic
        let exact = c.exact_field.as_ref().unwrap();
        let mut post = [0.0; 4];
        exact(1.4, 0.1, &mut post);
        assert!(crate::physics::admissible(&post));
    }

    #[test]
    fn registry_knows_all_cases() {
        for name in all_names() {
            assert!(by_name(name).is_some());
        }
        assert!(by_name("bow-shock").is_none());
    }
}
