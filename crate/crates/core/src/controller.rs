//! Saturated modal feedback.
//!
//! One unstable mode: `u = sat(gamma * y1)` with `lambda1 + d1 gamma < 0`.
//! Two unstable modes: `u = sat(gamma (k1 y1 + k2 y2))` where
//! `k1 = -d2 / lambda2`, `k2 = d1 / lambda1` puts the switching line through
//! both corner points of the controllability domain, and
//! `sign(gamma) = sign(d1 d2 (lambda1 - lambda2))`.

use nalgebra::{RowVector4, Vector4};

use crate::analysis::{ModalData, UnstableMode};
use crate::error::{Error, Result};
use crate::linearization::to_vector;
use crate::plant::State;

/// Anything that maps a plant state to a motor voltage.
pub trait ControlLaw: Sync {
    fn voltage(&self, x: &State) -> f64;
}

/// `u = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct OpenLoop;

impl ControlLaw for OpenLoop {
    fn voltage(&self, _x: &State) -> f64 {
        0.0
    }
}

/// Constant voltage, e.g. to hold a saturation equilibrium.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl ControlLaw for Constant {
    fn voltage(&self, _x: &State) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Single,
    Dual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SatController {
    pub mode: Mode,
    pub modes: Vec<UnstableMode>,
    /// `(k1, k2)` for the dual law.
    pub k: Option<(f64, f64)>,
    pub gamma: f64,
    pub u0: f64,
}

pub fn clamp(v: f64, u0: f64) -> f64 {
    if v >= u0 {
        u0
    } else if v <= -u0 {
        -u0
    } else {
        v
    }
}

/// Dual-law gains `(k1, k2)`.
pub fn dual_gains(lambdas: [f64; 2], ds: [f64; 2]) -> (f64, f64) {
    (-ds[1] / lambdas[1], ds[0] / lambdas[0])
}

pub fn make_single(md: &ModalData, gamma: f64, u0: f64) -> Result<SatController> {
    if md.modes.len() != 1 {
        return Err(Error::UnstableModeCount {
            expected: 1,
            found: md.modes.len(),
        });
    }
    let m = &md.modes[0];
    let closed = m.lambda + m.d * gamma;
    if !(closed < 0.0) {
        return Err(Error::PoleCondition {
            gamma,
            value: closed,
        });
    }
    Ok(SatController {
        mode: Mode::Single,
        modes: md.modes.clone(),
        k: None,
        gamma,
        u0,
    })
}

pub fn make_dual(md: &ModalData, gamma: f64, u0: f64) -> Result<SatController> {
    if md.modes.len() != 2 {
        return Err(Error::UnstableModeCount {
            expected: 2,
            found: md.modes.len(),
        });
    }
    let (m1, m2) = (&md.modes[0], &md.modes[1]);
    if m1.lambda == m2.lambda {
        return Err(Error::RepeatedEigenvalue(m1.lambda));
    }
    let required = (m1.d * m2.d * (m1.lambda - m2.lambda)).signum();
    if gamma == 0.0 || gamma.signum() != required {
        return Err(Error::GammaSign { gamma, required });
    }
    let k = dual_gains([m1.lambda, m2.lambda], [m1.d, m2.d]);
    Ok(SatController {
        mode: Mode::Dual,
        modes: md.modes.clone(),
        k: Some(k),
        gamma,
        u0,
    })
}

/// Picks the single or dual law from the number of unstable modes.
pub fn make_auto(md: &ModalData, gamma: f64, u0: f64) -> Result<SatController> {
    match md.modes.len() {
        1 => make_single(md, gamma, u0),
        2 => make_dual(md, gamma, u0),
        n => Err(Error::UnstableModeCount {
            expected: 2,
            found: n,
        }),
    }
}

impl SatController {
    /// Unsaturated feedback `gamma * sigma(y)` as a function of the modal
    /// coordinates of the unstable modes.
    pub fn linear_in_modes(&self, y: &[f64]) -> f64 {
        match (self.mode, self.k) {
            (Mode::Dual, Some((k1, k2))) => self.gamma * (k1 * y[0] + k2 * y[1]),
            _ => self.gamma * y[0],
        }
    }

    /// Saturated output from modal coordinates.
    pub fn output_from_modes(&self, y: &[f64]) -> f64 {
        clamp(self.linear_in_modes(y), self.u0)
    }

    pub fn modal_coordinates(&self, x: &Vector4<f64>) -> Vec<f64> {
        self.modes.iter().map(|m| m.project(x)).collect()
    }

    pub fn control_output(&self, x: &Vector4<f64>) -> f64 {
        match (self.mode, self.k) {
            (Mode::Dual, Some((k1, k2))) => {
                let y1 = self.modes[0].project(x);
                let y2 = self.modes[1].project(x);
                clamp(self.gamma * (k1 * y1 + k2 * y2), self.u0)
            }
            _ => clamp(self.gamma * self.modes[0].project(x), self.u0),
        }
    }

    /// Row `r` with `gamma * sigma(y(x)) = r x`.
    pub fn feedback_row(&self) -> RowVector4<f64> {
        match (self.mode, self.k) {
            (Mode::Dual, Some((k1, k2))) => {
                (self.modes[0].w * k1 + self.modes[1].w * k2) * self.gamma
            }
            _ => self.modes[0].w * self.gamma,
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    pub fn ds(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.d).collect()
    }
}

impl ControlLaw for SatController {
    fn voltage(&self, x: &State) -> f64 {
        self.control_output(&to_vector(x))
    }
}
