//! Physical parameters and the exact nonlinear dynamics of both beam variants.
//!
//! Generalized coordinates are the beam tilt `theta` (joint O) and the ball
//! rotation `phi`; the ball travel along the beam is `s = r * phi`. On the
//! circular beam the ball's polar position on the arc is `psi = r * phi / R`.

use std::ops::Neg;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Straight,
    Circular,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Straight => "straight",
            Variant::Circular => "circular",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "straight" => Ok(Variant::Straight),
            "circular" => Ok(Variant::Circular),
            other => Err(format!("unknown variant `{other}` (expected straight|circular)")),
        }
    }
}

/// Physical constants of a beam-and-ball plant (SI units).
#[derive(Clone, Debug, PartialEq)]
pub struct PlantParams {
    pub variant: Variant,
    /// Beam with holder, kg.
    pub m1: f64,
    /// Ball, kg.
    pub m2: f64,
    /// Ball radius, m.
    pub r: f64,
    /// Holder length OA, m.
    pub l: f64,
    /// Distance OC1 to the beam's centre of mass, m.
    pub a: f64,
    /// Radius of the circular beam, m. Ignored by the straight variant.
    pub big_r: f64,
    /// Radius of inertia of the beam about O, m.
    pub rho1: f64,
    /// Radius of inertia of the ball about its centre, m.
    pub rho2: f64,
    /// Motor torque per volt, N·m/V.
    pub cu: f64,
    /// Back-EMF torque per unit angular velocity, N·m·s.
    pub cv: f64,
    /// Viscous friction in joint O, N·m·s. Adds to `cv` everywhere.
    pub f: f64,
    /// Voltage limit, V.
    pub u0: f64,
    pub g: f64,
}

impl PlantParams {
    /// Reference straight beam. The inertia radii are sqrt(0.0475) and
    /// sqrt(0.02) m, which print as 0.2179 and 0.1414 m to four digits.
    pub fn straight_reference() -> Self {
        PlantParams {
            variant: Variant::Straight,
            m1: 1.0,
            m2: 0.2,
            r: 0.05,
            l: 0.2,
            a: 0.15,
            big_r: 0.8,
            rho1: 0.0475_f64.sqrt(),
            rho2: 0.02_f64.sqrt(),
            cu: 0.007,
            cv: 0.0001,
            f: 0.0,
            u0: 19.0,
            g: 9.81,
        }
    }

    /// Reference circular beam, R = 0.8 m, rho1 = sqrt(0.07) m.
    pub fn circular_reference() -> Self {
        PlantParams {
            variant: Variant::Circular,
            big_r: 0.8,
            rho1: 0.07_f64.sqrt(),
            ..Self::straight_reference()
        }
    }

    pub fn reference(variant: Variant) -> Self {
        match variant {
            Variant::Straight => Self::straight_reference(),
            Variant::Circular => Self::circular_reference(),
        }
    }

    pub fn with_friction(mut self, f: f64) -> Self {
        self.f = f;
        self
    }

    /// Total velocity-proportional torque coefficient `cv + f`.
    pub fn damping(&self) -> f64 {
        self.cv + self.f
    }

    /// `m1 a + m2 (l - R)`: the lever term whose sign fixes the number of
    /// unstable modes of the circular beam.
    pub fn circular_lever(&self) -> f64 {
        self.m1 * self.a + self.m2 * (self.l - self.big_r)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("r", self.r),
            ("l", self.l),
            ("a", self.a),
            ("rho1", self.rho1),
            ("cu", self.cu),
            ("u0", self.u0),
            ("g", self.g),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        // rho2 = 0 (point-mass ball) and cv = 0 are legitimate limits.
        for (name, v) in [("rho2", self.rho2), ("cv", self.cv), ("f", self.f)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.variant == Variant::Circular && !(self.big_r.is_finite() && self.big_r > 0.0) {
            return Err(Error::param(
                "R",
                format!("must be finite and > 0, got {}", self.big_r),
            ));
        }
        Ok(())
    }
}

/// Generalized coordinates and velocities, ordered `(theta, phi, dtheta, dphi)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct State {
    pub theta: f64,
    pub phi: f64,
    pub dtheta: f64,
    pub dphi: f64,
}

impl State {
    pub const ZERO: State = State {
        theta: 0.0,
        phi: 0.0,
        dtheta: 0.0,
        dphi: 0.0,
    };

    pub fn new(theta: f64, phi: f64, dtheta: f64, dphi: f64) -> Self {
        State {
            theta,
            phi,
            dtheta,
            dphi,
        }
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        State::new(x[0], x[1], x[2], x[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.theta, self.phi, self.dtheta, self.dphi]
    }

    /// Ball travel along the beam, `r * phi`.
    pub fn s(&self, p: &PlantParams) -> f64 {
        p.r * self.phi
    }

    /// Polar angle of the ball on the circular beam, `r * phi / R`.
    pub fn psi(&self, p: &PlantParams) -> f64 {
        p.r * self.phi / p.big_r
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl Neg for State {
    type Output = State;
    fn neg(self) -> State {
        State::new(-self.theta, -self.phi, -self.dtheta, -self.dphi)
    }
}

/// Time derivative of a [`State`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateDeriv {
    pub dtheta: f64,
    pub dphi: f64,
    pub ddtheta: f64,
    pub ddphi: f64,
}

impl StateDeriv {
    pub fn to_array(self) -> [f64; 4] {
        [self.dtheta, self.dphi, self.ddtheta, self.ddphi]
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Neg for StateDeriv {
    type Output = StateDeriv;
    fn neg(self) -> StateDeriv {
        StateDeriv {
            dtheta: -self.dtheta,
            dphi: -self.dphi,
            ddtheta: -self.ddtheta,
            ddphi: -self.ddphi,
        }
    }
}

/// Net torque at joint O: `cu u - (cv + f) dtheta`.
pub fn motor_torque(p: &PlantParams, dtheta: f64, u: f64) -> Result<f64> {
    check_voltage(p, u)?;
    Ok(p.cu * u - p.damping() * dtheta)
}

fn check_voltage(p: &PlantParams, u: f64) -> Result<()> {
    if u.abs() > p.u0 || u.is_nan() {
        return Err(Error::ControlOutOfRange { u, u0: p.u0 });
    }
    Ok(())
}

/// Solves the 2x2 system `m z = rhs` by Gaussian elimination with partial
/// pivoting.
pub(crate) fn solve2(m: [[f64; 2]; 2], rhs: [f64; 2]) -> Option<[f64; 2]> {
    let (mut m, mut rhs) = (m, rhs);
    if m[1][0].abs() > m[0][0].abs() {
        m.swap(0, 1);
        rhs.swap(0, 1);
    }
    let scale = m.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if m[0][0] == 0.0 || scale == 0.0 {
        return None;
    }
    let factor = m[1][0] / m[0][0];
    let pivot2 = m[1][1] - factor * m[0][1];
    if pivot2.abs() <= 1e-14 * scale || !pivot2.is_finite() {
        return None;
    }
    let z1 = (rhs[1] - factor * rhs[0]) / pivot2;
    let z0 = (rhs[0] - m[0][1] * z1) / m[0][0];
    Some([z0, z1])
}

/// Lagrange equations written as `M(q) qdd = rhs(q, qd, u)`.
///
/// The second row is divided by `m2`, as in the usual presentation of the
/// ball equation.
fn equations(p: &PlantParams, x: &State, torque: f64) -> ([[f64; 2]; 2], [f64; 2]) {
    let State {
        theta,
        phi,
        dtheta,
        dphi,
    } = *x;
    let (m1, m2, r, l, a, g) = (p.m1, p.m2, p.r, p.l, p.a, p.g);
    match p.variant {
        Variant::Straight => {
            let m11 = m1 * p.rho1 * p.rho1 + m2 * (r + l).powi(2) + m2 * r * r * phi * phi;
            let m12 = m2 * r * (r + l);
            let m21 = r * (r + l);
            let m22 = r * r + p.rho2 * p.rho2;
            let (st, ct) = theta.sin_cos();
            let rhs1 = torque - 2.0 * m2 * r * r * phi * dphi * dtheta
                + g * (m1 * a + m2 * (r + l)) * st
                + m2 * g * r * phi * ct;
            let rhs2 = r * r * phi * dtheta * dtheta + g * r * st;
            ([[m11, m12], [m21, m22]], [rhs1, rhs2])
        }
        Variant::Circular => {
            let big_r = p.big_r;
            let q = r / big_r;
            let k = 1.0 + q;
            let (sb, cb) = (q * phi).sin_cos();
            let m11 = m1 * p.rho1 * p.rho1
                + m2 * (r * r + l * l + 2.0 * r * l * cb)
                + 2.0 * m2 * big_r * (big_r + r - l) * (1.0 - cb);
            let arm = big_r + r + (l - big_r) * cb;
            let m12 = m2 * r * k * arm;
            let m21 = r * k * arm;
            let m22 = p.rho2 * p.rho2 + r * r * k * k;
            let s_top = (theta + q * phi).sin();
            let rhs1 = torque
                - m2 * r * k * (big_r - l) * (2.0 * dtheta + q * dphi) * dphi * sb
                + g * p.circular_lever() * theta.sin()
                + m2 * g * (big_r + r) * s_top;
            let rhs2 = -r * k * (l - big_r) * dtheta * dtheta * sb + g * r * k * s_top;
            ([[m11, m12], [m21, m22]], [rhs1, rhs2])
        }
    }
}

/// Generalized accelerations `(theta'', phi'')` at `x` under voltage `u`.
pub fn accelerations(p: &PlantParams, x: &State, u: f64) -> Result<[f64; 2]> {
    let torque = motor_torque(p, x.dtheta, u)?;
    let (m, rhs) = equations(p, x, torque);
    solve2(m, rhs).ok_or(Error::Singular("generalized mass"))
}

/// Right-hand side of the nonlinear equations of motion.
pub fn dynamics_rhs(p: &PlantParams, x: &State, u: f64) -> Result<StateDeriv> {
    let [ddtheta, ddphi] = accelerations(p, x, u)?;
    Ok(StateDeriv {
        dtheta: x.dtheta,
        dphi: x.dphi,
        ddtheta,
        ddphi,
    })
}

/// Kinetic and potential energy `(K, Pi)`.
pub fn mechanical_energy(p: &PlantParams, x: &State) -> (f64, f64) {
    let State {
        theta,
        phi,
        dtheta,
        dphi,
    } = *x;
    let (m1, m2, r, l, a, g) = (p.m1, p.m2, p.r, p.l, p.a, p.g);
    match p.variant {
        Variant::Straight => {
            let two_k = m1 * p.rho1 * p.rho1 * dtheta * dtheta
                + m2 * (r * r * phi * phi + (r + l).powi(2)) * dtheta * dtheta
                + 2.0 * m2 * r * (l + r) * dphi * dtheta
                + m2 * (r * r + p.rho2 * p.rho2) * dphi * dphi;
            let pi = m1 * g * a * theta.cos()
                + m2 * g * (-r * phi * theta.sin() + (l + r) * theta.cos());
            (0.5 * two_k, pi)
        }
        Variant::Circular => {
            let big_r = p.big_r;
            let beta = r * phi / big_r;
            let cb = beta.cos();
            let rr = big_r + r;
            let lr = l - big_r;
            let v = r * dphi / big_r;
            let two_k = (m1 * p.rho1 * p.rho1 + m2 * (rr * rr + lr * lr + 2.0 * rr * lr * cb))
                * dtheta
                * dtheta
                + m2 * (rr * rr + (p.rho2 * big_r / r).powi(2)) * v * v
                + 2.0 * m2 * (rr * rr + rr * lr * cb) * dtheta * v;
            let pi = p.circular_lever() * g * theta.cos() + m2 * g * rr * (beta + theta).cos();
            (0.5 * two_k, pi)
        }
    }
}

/// Normal contact force between ball and beam given the current
/// accelerations. Positive while contact holds.
pub fn contact_force_with(p: &PlantParams, x: &State, ddtheta: f64) -> f64 {
    let State {
        theta,
        phi,
        dtheta,
        dphi,
    } = *x;
    let (m2, r, l, g) = (p.m2, p.r, p.l, p.g);
    match p.variant {
        Variant::Straight => {
            m2 * (g * theta.cos()
                - (l + r) * dtheta * dtheta
                - 2.0 * r * dphi * dtheta
                - r * phi * ddtheta)
        }
        Variant::Circular => {
            let big_r = p.big_r;
            let beta = r * phi / big_r;
            let (sb, cb) = beta.sin_cos();
            let spin = dtheta + r * dphi / big_r;
            m2 * (g * (theta + beta).cos() - (big_r + r) * spin * spin
                + (big_r - l) * dtheta * dtheta * cb
                - (big_r - l) * ddtheta * sb)
        }
    }
}

/// Normal contact force at `x` under voltage `u`.
pub fn contact_force(p: &PlantParams, x: &State, u: f64) -> Result<f64> {
    let [ddtheta, _] = accelerations(p, x, u)?;
    Ok(contact_force_with(p, x, ddtheta))
}

/// Static equilibrium of the nonlinear plant under a constant saturated voltage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturationEquilibrium {
    pub state: State,
    pub u: f64,
}

/// The two equilibria reached with `u = +u0` and `u = -u0`, in that order.
///
/// Straight: `theta = 0`, `s = -cu u / (m2 g)`. Circular: the ball sits at
/// the top of the arc (`theta + psi = 0`) and
/// `theta = -arcsin(cu u / (g (m1 a + m2 (l - R))))`.
pub fn saturation_equilibria_nonlinear(p: &PlantParams) -> Result<[SaturationEquilibrium; 2]> {
    let eq = |u: f64| -> Result<SaturationEquilibrium> {
        let state = match p.variant {
            Variant::Straight => {
                let s = -p.cu * u / (p.m2 * p.g);
                State::new(0.0, s / p.r, 0.0, 0.0)
            }
            Variant::Circular => {
                let z = p.cu * u / (p.g * p.circular_lever());
                if !(z.is_finite() && z.abs() <= 1.0) {
                    return Err(Error::NoSaturationEquilibrium(z));
                }
                let theta = -z.asin();
                State::new(theta, -p.big_r / p.r * theta, 0.0, 0.0)
            }
        };
        Ok(SaturationEquilibrium { state, u })
    };
    Ok([eq(p.u0)?, eq(-p.u0)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rounded_straight() -> PlantParams {
        PlantParams {
            rho1: 0.2179,
            rho2: 0.1414,
            ..PlantParams::straight_reference()
        }
    }

    #[test]
    fn motor_torque_examples() {
        let p = rounded_straight();
        assert!((motor_torque(&p, 0.0, 19.0).unwrap() - 0.133).abs() < 1e-15);
        assert_eq!(motor_torque(&p, 0.0, 0.0).unwrap(), 0.0);
        let pf = p.clone().with_friction(0.4);
        assert!((motor_torque(&pf, 1.0, 0.0).unwrap() + 0.4001).abs() < 1e-15);
        assert!(matches!(
            motor_torque(&p, 0.0, 19.5),
            Err(Error::ControlOutOfRange { .. })
        ));
    }

    #[test]
    fn origin_is_an_equilibrium() {
        for p in [PlantParams::straight_reference(), PlantParams::circular_reference()] {
            let d = dynamics_rhs(&p, &State::ZERO, 0.0).unwrap();
            assert_eq!(d.max_abs(), 0.0);
        }
    }

    #[test]
    fn energy_at_rest_and_spin() {
        let p = rounded_straight();
        let (k, pi) = mechanical_energy(&p, &State::ZERO);
        assert_eq!(k, 0.0);
        let expect = p.m1 * p.g * p.a + p.m2 * p.g * (p.l + p.r);
        assert!((pi - expect).abs() < 1e-15);
        let (k, _) = mechanical_energy(&p, &State::new(0.0, 0.0, 1.0, 0.0));
        let expect = p.m1 * p.rho1 * p.rho1 + p.m2 * (p.r + p.l).powi(2);
        assert!((2.0 * k - expect).abs() < 1e-15);
    }

    #[test]
    fn contact_force_at_origin_is_ball_weight() {
        for p in [PlantParams::straight_reference(), PlantParams::circular_reference()] {
            let f = contact_force(&p, &State::ZERO, 0.0).unwrap();
            assert!((f - 1.962).abs() < 1e-12, "{f}");
        }
    }

    #[test]
    fn straight_saturation_equilibria() {
        let p = PlantParams::straight_reference();
        let [plus, minus] = saturation_equilibria_nonlinear(&p).unwrap();
        assert!((minus.state.s(&p) - 0.0678).abs() < 1e-4);
        assert_eq!(minus.u, -p.u0);
        assert_eq!(plus.state, -minus.state);
        for eq in [plus, minus] {
            let d = dynamics_rhs(&p, &eq.state, eq.u).unwrap();
            assert!(d.max_abs() < 1e-12);
        }
    }

    #[test]
    fn circular_saturation_equilibria() {
        let p = PlantParams::circular_reference();
        let [plus, minus] = saturation_equilibria_nonlinear(&p).unwrap();
        assert!((plus.state.theta + 0.469).abs() < 1e-3);
        assert!((minus.state.theta - 0.469).abs() < 1e-3);
        assert!((minus.state.s(&p) + 0.375).abs() < 1e-3);
        for eq in [plus, minus] {
            let d = dynamics_rhs(&p, &eq.state, eq.u).unwrap();
            assert!(d.max_abs() < 1e-10, "{d:?}");
        }
    }

    #[test]
    fn circular_no_equilibrium_for_huge_voltage() {
        let p = PlantParams {
            u0: 1e3,
            ..PlantParams::circular_reference()
        };
        assert!(matches!(
            saturation_equilibria_nonlinear(&p),
            Err(Error::NoSaturationEquilibrium(_))
        ));
    }

    #[test]
    fn solve2_pivots() {
        let z = solve2([[1e-20, 1.0], [1.0, 1.0]], [1.0, 2.0]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
        assert!(solve2([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]).is_none());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut p = PlantParams::straight_reference();
        p.m1 = -1.0;
        assert!(p.validate().is_err());
        let mut p = PlantParams::circular_reference();
        p.big_r = 0.0;
        assert!(p.validate().is_err());
        let mut p = PlantParams::straight_reference();
        p.f = -0.1;
        assert!(p.validate().is_err());
        assert!(PlantParams::circular_reference().validate().is_ok());
    }
}
