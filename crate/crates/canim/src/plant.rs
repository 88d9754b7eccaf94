//! Two-link flexible-joint manipulator testbed and its tracking
//! controller.
//!
//! The arm is written in cascade form: the link dynamics
//! `H(q) q'' + C(q, q') q' + G(q) = xi1` driven by the motor-side
//! states `xi1' = xi2`, `xi2' = tau + d`, with `G(q) = g(q) + K0 q` and
//! `K0 = J = I` in this parameterization.
//!
//! The controller backsteps through the cascade: a velocity-error
//! surface `s = q' - q_r'` defines the virtual control
//! `xi_r = -Ks s + H q_r'' + C q_r' + G`, and the torque
//!
//! ```text
//! tau = zeta2 - kp1 (xi1 - xi_r) - kp2 (xi2 - zeta1) - d_hat
//! ```
//!
//! needs the first and second total time derivatives `zeta1, zeta2` of
//! `xi_r` along the plant flow. Those are coded analytically below;
//! the model's trigonometric structure keeps every term in closed
//! form, with `q''` and `q'''` substituted from the plant equations
//! (neither depends on the disturbance, which only enters `xi2'`).

use nalgebra::{Matrix2, Vector2, Vector4};
use thiserror::Error;

use crate::matkit::{self, Mat};

/// Link inertia/gravity constants of the benchmark arm.
const H_CONST: Matrix2<f64> = Matrix2::new(2.35, 0.10, 0.10, 0.10);
const H_COS: Matrix2<f64> = Matrix2::new(0.16, 0.08, 0.08, 0.0);
const CORIOLIS_COEFF: f64 = 0.08;
const G1: f64 = 38.47;
const G2: f64 = 1.83;

#[derive(Debug, Error)]
pub enum PlantError {
    /// Inertia matrix numerically singular. Cannot happen for this
    /// model's parameters; kept as a guard for modified constants.
    #[error("inertia matrix is numerically singular (det {0:.3e})")]
    SingularInertia(f64),
    #[error("controller gains invalid: {0}")]
    BadGains(String),
}

/// Full plant state: link positions/velocities and the two motor-side
/// integrator states.
#[derive(Debug, Clone, Copy)]
pub struct PlantState {
    pub q: Vector2<f64>,
    pub q_dot: Vector2<f64>,
    pub xi1: Vector2<f64>,
    pub xi2: Vector2<f64>,
}

impl PlantState {
    pub fn from_slice(z: &[f64]) -> Self {
        PlantState {
            q: Vector2::new(z[0], z[1]),
            q_dot: Vector2::new(z[2], z[3]),
            xi1: Vector2::new(z[4], z[5]),
            xi2: Vector2::new(z[6], z[7]),
        }
    }

    pub fn write_to(&self, z: &mut [f64]) {
        z[0] = self.q[0];
        z[1] = self.q[1];
        z[2] = self.q_dot[0];
        z[3] = self.q_dot[1];
        z[4] = self.xi1[0];
        z[5] = self.xi1[1];
        z[6] = self.xi2[0];
        z[7] = self.xi2[1];
    }
}

/// Time derivative of [`PlantState`].
#[derive(Debug, Clone, Copy)]
pub struct PlantDeriv {
    pub q_dot: Vector2<f64>,
    pub q_ddot: Vector2<f64>,
    pub xi1_dot: Vector2<f64>,
    pub xi2_dot: Vector2<f64>,
}

/// Inertia, Coriolis, and gravity terms at one configuration.
#[derive(Debug, Clone, Copy)]
pub struct ManipTerms {
    pub h: Matrix2<f64>,
    pub c: Matrix2<f64>,
    pub g: Vector2<f64>,
}

/// The bilinear factor of the Coriolis matrix: `C = 0.08 sin(q2) B(v)`.
fn b_of(v: &Vector2<f64>) -> Matrix2<f64> {
    Matrix2::new(-v[1], -(v[0] + v[1]), v[0], 0.0)
}

/// Evaluates `H(q)`, `C(q, q')`, and the gravity vector `g(q)`.
pub fn manipulator_terms(q: &Vector2<f64>, q_dot: &Vector2<f64>) -> ManipTerms {
    let (s2, c2) = q[1].sin_cos();
    let h = H_CONST + H_COS * c2;
    let c = b_of(q_dot) * (CORIOLIS_COEFF * s2);
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    let g = Vector2::new(G1 * c1 + G2 * c12, G2 * c12);
    ManipTerms { h, c, g }
}

/// Total potential+spring force `G(q) = g(q) + q` (unit joint
/// stiffness).
pub fn total_gravity(q: &Vector2<f64>, terms: &ManipTerms) -> Vector2<f64> {
    terms.g + q
}

fn solve_inertia(h: &Matrix2<f64>, rhs: &Vector2<f64>) -> Result<Vector2<f64>, PlantError> {
    let det = h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)];
    if det.abs() <= 1e-12 * h.norm_squared() {
        return Err(PlantError::SingularInertia(det));
    }
    Ok(Vector2::new(
        (h[(1, 1)] * rhs[0] - h[(0, 1)] * rhs[1]) / det,
        (h[(0, 0)] * rhs[1] - h[(1, 0)] * rhs[0]) / det,
    ))
}

/// Plant vector field under torque `tau` and disturbance `d`.
pub fn plant_rhs(
    state: &PlantState,
    tau: &Vector2<f64>,
    d: &Vector2<f64>,
) -> Result<PlantDeriv, PlantError> {
    let terms = manipulator_terms(&state.q, &state.q_dot);
    let rhs = state.xi1 - terms.c * state.q_dot - total_gravity(&state.q, &terms);
    let q_ddot = solve_inertia(&terms.h, &rhs)?;
    Ok(PlantDeriv {
        q_dot: state.q_dot,
        q_ddot,
        xi1_dot: state.xi2,
        xi2_dot: tau + d,
    })
}

/// Reference trajectory and its derivatives up to fourth order.
#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub q_d: Vector2<f64>,
    pub q_d1: Vector2<f64>,
    pub q_d2: Vector2<f64>,
    pub q_d3: Vector2<f64>,
    pub q_d4: Vector2<f64>,
}

/// `q_d(t) = (3 sin(pi t / 100), 4 cos(2 pi t / 100))`.
pub fn reference(t: f64) -> Reference {
    let w1 = std::f64::consts::PI / 100.0;
    let w2 = 2.0 * std::f64::consts::PI / 100.0;
    let (s1, c1) = (w1 * t).sin_cos();
    let (s2, c2) = (w2 * t).sin_cos();
    Reference {
        q_d: Vector2::new(3.0 * s1, 4.0 * c2),
        q_d1: Vector2::new(3.0 * w1 * c1, -4.0 * w2 * s2),
        q_d2: Vector2::new(-3.0 * w1 * w1 * s1, -4.0 * w2 * w2 * c2),
        q_d3: Vector2::new(-3.0 * w1.powi(3) * c1, 4.0 * w2.powi(3) * s2),
        q_d4: Vector2::new(3.0 * w1.powi(4) * s1, 4.0 * w2.powi(4) * c2),
    }
}

/// Tracking-controller gains.
#[derive(Debug, Clone)]
pub struct ControllerGains {
    /// Reference-velocity gain in `q_r' = q_d' - alpha (q - q_d)`.
    pub alpha: f64,
    pub ks: Matrix2<f64>,
    pub kp1: f64,
    pub kp2: f64,
}

impl ControllerGains {
    pub fn new(alpha: f64, ks: Matrix2<f64>, kp1: f64, kp2: f64) -> Result<Self, PlantError> {
        if alpha <= 0.0 {
            return Err(PlantError::BadGains(format!("alpha = {alpha} must be positive")));
        }
        let ks_sym = (ks + ks.transpose()) * 0.5;
        let ks_min = matkit::min_eig_sym(&Mat::from_fn(2, 2, |i, j| ks_sym[(i, j)]))
            .map_err(|e| PlantError::BadGains(e.to_string()))?;
        if ks_min <= 0.0 {
            return Err(PlantError::BadGains(format!(
                "Ks must be positive definite (min eig {ks_min})"
            )));
        }
        // roots of l^2 + kp2 l + kp1 must sit in the open left half
        // plane, which for a monic quadratic means both coefficients
        // positive.
        if kp1 <= 0.0 || kp2 <= 0.0 {
            return Err(PlantError::BadGains(format!(
                "kp1 = {kp1}, kp2 = {kp2} leave the motor error loop unstable"
            )));
        }
        Ok(ControllerGains { alpha, ks, kp1, kp2 })
    }

    /// Benchmark gains: alpha = 1, Ks = I, kp1 = 25, kp2 = 10.
    pub fn benchmark() -> Self {
        ControllerGains::new(1.0, Matrix2::identity(), 25.0, 10.0).unwrap()
    }

    /// Closed-loop matrix of the motor-side error dynamics,
    /// `[[0, I], [-kp1 I, -kp2 I]]`.
    pub fn a_c(&self) -> Mat {
        let mut a = Mat::zeros(4, 4);
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a[(2, 0)] = -self.kp1;
        a[(3, 1)] = -self.kp1;
        a[(2, 2)] = -self.kp2;
        a[(3, 3)] = -self.kp2;
        a
    }
}

/// Everything the torque computation produces; the auxiliary signals
/// are recorded for diagnostics and tests.
#[derive(Debug, Clone, Copy)]
pub struct ControlOutput {
    pub tau: Vector2<f64>,
    /// Velocity-error surface `q' - q_r'`.
    pub s: Vector2<f64>,
    /// Motor-side error `(xi1 - xi_r, xi2 - zeta1)`.
    pub xi_tilde: Vector4<f64>,
    pub xi_r: Vector2<f64>,
    pub zeta1: Vector2<f64>,
    pub zeta2: Vector2<f64>,
}

/// Computes the torque and the backstepping bookkeeping at one state.
///
/// `d_hat_ff` is the feedforward disturbance estimate; pass zero to
/// run the same controller without rejection.
pub fn control_step(
    state: &PlantState,
    t: f64,
    d_hat_ff: &Vector2<f64>,
    gains: &ControllerGains,
) -> Result<ControlOutput, PlantError> {
    let r = reference(t);
    let q = state.q;
    let v = state.q_dot;
    let alpha = gains.alpha;

    let e = q - r.q_d;
    let e_dot = v - r.q_d1;
    let q_r1 = r.q_d1 - e * alpha;
    let q_r2 = r.q_d2 - e_dot * alpha;

    let terms = manipulator_terms(&q, &v);
    let grav = total_gravity(&q, &terms);

    // plant accelerations; the disturbance never enters q'' or q'''.
    let a = solve_inertia(&terms.h, &(state.xi1 - terms.c * v - grav))?;

    let (s2, c2) = q[1].sin_cos();
    let h_dot = -H_COS * (s2 * v[1]);
    let c_dot = (b_of(&v) * (c2 * v[1]) + b_of(&a) * s2) * CORIOLIS_COEFF;
    let s1 = q[0].sin();
    let s12 = (q[0] + q[1]).sin();
    let c12 = (q[0] + q[1]).cos();
    let vsum = v[0] + v[1];
    let g_dot = Vector2::new(-G1 * s1 * v[0] - G2 * s12 * vsum, -G2 * s12 * vsum);
    let grav_dot = g_dot + v;

    let j = solve_inertia(
        &terms.h,
        &(state.xi2 - h_dot * a - c_dot * v - terms.c * a - grav_dot),
    )?;

    let h_ddot = -H_COS * (c2 * v[1] * v[1] + s2 * a[1]);
    let c_ddot = (b_of(&v) * (c2 * a[1] - s2 * v[1] * v[1])
        + b_of(&a) * (2.0 * c2 * v[1])
        + b_of(&j) * s2)
        * CORIOLIS_COEFF;
    let c1 = q[0].cos();
    let asum = a[0] + a[1];
    let g_ddot = Vector2::new(
        -G1 * (c1 * v[0] * v[0] + s1 * a[0]) - G2 * (c12 * vsum * vsum + s12 * asum),
        -G2 * (c12 * vsum * vsum + s12 * asum),
    );
    let grav_ddot = g_ddot + a;

    let q_r3 = r.q_d3 - (a - r.q_d2) * alpha;
    let q_r4 = r.q_d4 - (j - r.q_d3) * alpha;

    let s_vec = v - q_r1;
    let s_dot = a - q_r2;
    let s_ddot = j - q_r3;

    let y0 = terms.h * q_r2 + terms.c * q_r1 + grav;
    let y0_dot = h_dot * q_r2 + terms.h * q_r3 + c_dot * q_r1 + terms.c * q_r2 + grav_dot;
    let y0_ddot = h_ddot * q_r2
        + h_dot * q_r3 * 2.0
        + terms.h * q_r4
        + c_ddot * q_r1
        + c_dot * q_r2 * 2.0
        + terms.c * q_r3
        + grav_ddot;

    let xi_r = -(gains.ks * s_vec) + y0;
    let zeta1 = -(gains.ks * s_dot) + y0_dot;
    let zeta2 = -(gains.ks * s_ddot) + y0_ddot;

    let xi1_err = state.xi1 - xi_r;
    let xi2_err = state.xi2 - zeta1;
    let tau = zeta2 - xi1_err * gains.kp1 - xi2_err * gains.kp2 - d_hat_ff;

    Ok(ControlOutput {
        tau,
        s: s_vec,
        xi_tilde: Vector4::new(xi1_err[0], xi1_err[1], xi2_err[0], xi2_err[1]),
        xi_r,
        zeta1,
        zeta2,
    })
}
