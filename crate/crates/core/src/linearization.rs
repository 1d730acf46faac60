//! Linear model about the upright equilibrium.
//!
//! Both variants linearize to `D q'' - E q = (cu u - (cv + f) theta', 0)`,
//! which in state form is `x' = A x + b u` with `x = (theta, phi, theta', phi')`.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::plant::{PlantParams, State, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub d: Matrix2<f64>,
    pub e: Matrix2<f64>,
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
}

/// Mass and stiffness matrices `(D, E)` of the linearized equations.
pub fn build_de(p: &PlantParams) -> (Matrix2<f64>, Matrix2<f64>) {
    let (m1, m2, r, l, a, g) = (p.m1, p.m2, p.r, p.l, p.a, p.g);
    let j1 = m1 * p.rho1 * p.rho1 + m2 * (r + l).powi(2);
    let lever = m1 * a + m2 * (r + l);
    match p.variant {
        Variant::Straight => {
            let d = Matrix2::new(j1, m2 * r * (r + l), r * (r + l), r * r + p.rho2 * p.rho2);
            let e = g * Matrix2::new(lever, m2 * r, r, 0.0);
            (d, e)
        }
        Variant::Circular => {
            let q = r / p.big_r;
            let rk = r * (1.0 + q);
            let d = Matrix2::new(
                j1,
                m2 * rk * (r + l),
                rk * (r + l),
                p.rho2 * p.rho2 + rk * rk,
            );
            let e = g * Matrix2::new(lever, m2 * rk, rk, rk * q);
            (d, e)
        }
    }
}

pub fn build_state_space(p: &PlantParams) -> Result<LinearModel> {
    let (d, e) = build_de(p);
    if !(d.determinant() > 0.0) {
        return Err(Error::Singular("mass (D)"));
    }
    let d_inv = d.try_inverse().ok_or(Error::Singular("mass (D)"))?;
    let stiffness = d_inv * e;
    let damping = d_inv * Matrix2::new(-p.damping(), 0.0, 0.0, 0.0);
    let input = d_inv * Vector2::new(p.cu, 0.0);

    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<2, 2>(0, 2).copy_from(&Matrix2::identity());
    a.fixed_view_mut::<2, 2>(2, 0).copy_from(&stiffness);
    a.fixed_view_mut::<2, 2>(2, 2).copy_from(&damping);
    let b = Vector4::new(0.0, 0.0, input[0], input[1]);
    Ok(LinearModel { d, e, a, b })
}

impl LinearModel {
    pub fn rhs(&self, x: &Vector4<f64>, u: f64) -> Vector4<f64> {
        self.a * x + self.b * u
    }

    /// Equilibrium of the linear model under a constant voltage, `-A^-1 b u`.
    pub fn equilibrium(&self, u: f64) -> Result<Vector4<f64>> {
        let lu = self.a.lu();
        lu.solve(&(-self.b * u)).ok_or(Error::Singular("state (A)"))
    }
}

pub fn to_vector(x: &State) -> Vector4<f64> {
    Vector4::from(x.to_array())
}

pub fn from_vector(v: &Vector4<f64>) -> State {
    State::new(v[0], v[1], v[2], v[3])
}

/// Closed-form linear saturation equilibrium for `u`, used to cross-check
/// [`LinearModel::equilibrium`].
pub fn linear_saturation_equilibrium(p: &PlantParams, u: f64) -> State {
    match p.variant {
        Variant::Straight => State::new(0.0, -p.cu * u / (p.m2 * p.g * p.r), 0.0, 0.0),
        Variant::Circular => {
            let theta = -p.cu * u / (p.g * p.circular_lever());
            State::new(theta, -p.big_r / p.r * theta, 0.0, 0.0)
        }
    }
}
