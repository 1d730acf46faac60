//! Fixed-step RK4 integration of the open- and closed-loop plant with
//! outcome detection and trace recording.

use crate::controller::ControlLaw;
use crate::error::{Error, Result};
use crate::linearization::{build_state_space, to_vector, LinearModel};
use crate::plant::{self, PlantParams, State, StateDeriv};

#[derive(Clone, Debug, PartialEq)]
pub struct SimSettings {
    /// Integration step, s.
    pub h: f64,
    /// Horizon, s.
    pub t_max: f64,
    /// `max |x_i|` below which the state counts as settled.
    pub eps_conv: f64,
    /// How long the state must stay settled, s.
    pub hold: f64,
    /// Keep every n-th step in the trace (first and last rows always kept).
    pub record_every: usize,
    /// Divergence when `|theta|` exceeds this, rad.
    pub max_angle: f64,
    /// Divergence when any state component exceeds this in magnitude.
    pub max_norm: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            h: 1e-4,
            t_max: 60.0,
            eps_conv: 1e-4,
            hold: 1.0,
            record_every: 100,
            max_angle: std::f64::consts::FRAC_PI_2,
            max_norm: 1e3,
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Settings(msg));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be > 0, got {}", self.h));
        }
        if !(self.t_max > self.h && self.t_max.is_finite()) {
            return bad(format!("t_max must exceed h, got {}", self.t_max));
        }
        if !(self.hold >= 0.0 && self.hold.is_finite()) {
            return bad(format!("hold must be >= 0, got {}", self.hold));
        }
        if !(self.eps_conv > 0.0) {
            return bad(format!("eps_conv must be > 0, got {}", self.eps_conv));
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        if !(self.max_angle > 0.0 && self.max_norm > 0.0) {
            return bad("divergence bounds must be positive".into());
        }
        Ok(())
    }
}

/// Classical four-stage Runge-Kutta step.
pub fn rk4_step<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t: f64,
    x: &[f64; N],
    h: f64,
) -> [f64; N] {
    let k1 = f(t, x);
    rk4_step_from(f, t, x, &k1, h)
}

/// RK4 step with the first stage `k1 = f(t, x)` already evaluated.
pub fn rk4_step_from<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t: f64,
    x: &[f64; N],
    k1: &[f64; N],
    h: f64,
) -> [f64; N] {
    let axpy = |k: &[f64; N], s: f64| -> [f64; N] { std::array::from_fn(|i| x[i] + s * k[i]) };
    let k2 = f(t + 0.5 * h, &axpy(k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &axpy(&k2, 0.5 * h));
    let k4 = f(t + h, &axpy(&k3, h));
    std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    Diverged,
    ContactLost,
    TimedOut,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::Diverged => "diverged",
            Outcome::ContactLost => "contact-lost",
            Outcome::TimedOut => "timed-out",
        }
    }
}

/// Per-step outcome predicate.
#[derive(Clone, Debug)]
pub struct OutcomeDetector {
    settings: SimSettings,
    settled_since: Option<f64>,
}

impl OutcomeDetector {
    pub fn new(settings: &SimSettings) -> Self {
        OutcomeDetector {
            settings: settings.clone(),
            settled_since: None,
        }
    }

    /// Feeds the state at time `t` (and the contact force, if tracked).
    pub fn update(&mut self, t: f64, x: &State, force: Option<f64>) -> Option<Outcome> {
        let s = &self.settings;
        if !x.is_finite() || x.theta.abs() > s.max_angle || x.max_abs() > s.max_norm {
            return Some(Outcome::Diverged);
        }
        if matches!(force, Some(f) if !(f > 0.0)) {
            return Some(Outcome::ContactLost);
        }
        if x.max_abs() < s.eps_conv {
            let since = *self.settled_since.get_or_insert(t);
            if t - since >= s.hold - 1e-12 {
                return Some(Outcome::Converged);
            }
        } else {
            self.settled_since = None;
        }
        if t >= s.t_max - 1e-12 {
            return Some(Outcome::TimedOut);
        }
        None
    }
}

/// Locates a sign change of `f` on `[lo, hi]` given `f(lo) > 0 >= f(hi)`.
/// Returns the right end of the final bracket, so `f` there is `<= 0`.
pub fn bisect_sign_change(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Nonlinear,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub state: State,
    pub s: f64,
    pub u: f64,
    pub force: f64,
    pub kinetic: f64,
    pub potential: f64,
}

impl TraceRow {
    pub fn energy(&self) -> f64 {
        self.kinetic + self.potential
    }
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub outcome: Outcome,
    pub final_state: State,
    pub t_end: f64,
    /// Smallest contact force over every step, not just recorded rows.
    pub min_force: f64,
    pub max_abs_u: f64,
    pub diagnostic: Option<String>,
}

struct ClosedLoop<'a> {
    p: &'a PlantParams,
    linear: Option<LinearModel>,
    law: &'a dyn ControlLaw,
}

impl ClosedLoop<'_> {
    fn eval(&self, x: &State) -> Result<(StateDeriv, f64)> {
        let u = self.law.voltage(x);
        let d = match &self.linear {
            None => plant::dynamics_rhs(self.p, x, u)?,
            Some(lm) => {
                if u.abs() > self.p.u0 || u.is_nan() {
                    return Err(Error::ControlOutOfRange { u, u0: self.p.u0 });
                }
                let v = lm.rhs(&to_vector(x), u);
                StateDeriv {
                    dtheta: v[0],
                    dphi: v[1],
                    ddtheta: v[2],
                    ddphi: v[3],
                }
            }
        };
        Ok((d, u))
    }

    /// RK4 step returning NaN on any evaluation failure; the first failure
    /// message is kept in `err`.
    fn step(&self, x: &State, k1: &StateDeriv, h: f64, err: &mut Option<String>) -> State {
        let f = |_t: f64, y: &[f64; 4]| -> [f64; 4] {
            match self.eval(&State::from_array(*y)) {
                Ok((d, _)) => d.to_array(),
                Err(e) => {
                    err.get_or_insert_with(|| e.to_string());
                    [f64::NAN; 4]
                }
            }
        };
        State::from_array(rk4_step_from(f, 0.0, &x.to_array(), &k1.to_array(), h))
    }

    fn row(&self, t: f64, x: &State, d: &StateDeriv, u: f64) -> TraceRow {
        let (kinetic, potential) = plant::mechanical_energy(self.p, x);
        TraceRow {
            t,
            state: *x,
            s: x.s(self.p),
            u,
            force: plant::contact_force_with(self.p, x, d.ddtheta),
            kinetic,
            potential,
        }
    }
}

/// Integrates the plant (nonlinear or linearized) under `law` from `x0` until
/// the first outcome event.
pub fn integrate_closed_loop(
    p: &PlantParams,
    kind: ModelKind,
    law: &dyn ControlLaw,
    x0: State,
    s: &SimSettings,
) -> Result<Trace> {
    s.validate()?;
    let linear = match kind {
        ModelKind::Nonlinear => None,
        ModelKind::Linear => Some(build_state_space(p)?),
    };
    let sys = ClosedLoop { p, linear, law };
    let mut detector = OutcomeDetector::new(s);
    let mut rows = Vec::new();
    let mut min_force = f64::INFINITY;
    let mut max_abs_u: f64 = 0.0;

    let finish = |rows: Vec<TraceRow>, outcome, x: State, t, min_force, max_abs_u, diagnostic| {
        Ok(Trace {
            rows,
            outcome,
            final_state: x,
            t_end: t,
            min_force,
            max_abs_u,
            diagnostic,
        })
    };

    let (mut d, mut u) = match sys.eval(&x0) {
        Ok(v) => v,
        Err(e) => {
            return finish(rows, Outcome::Diverged, x0, 0.0, min_force, 0.0, Some(e.to_string()))
        }
    };
    let first = sys.row(0.0, &x0, &d, u);
    min_force = min_force.min(first.force);
    max_abs_u = max_abs_u.max(u.abs());
    rows.push(first);
    if let Some(outcome) = detector.update(0.0, &x0, Some(first.force)) {
        return finish(rows, outcome, x0, 0.0, min_force, max_abs_u, None);
    }

    let mut x = x0;
    let mut n: u64 = 0;
    loop {
        n += 1;
        let t = n as f64 * s.h;
        let mut err = None;
        let next = sys.step(&x, &d, s.h, &mut err);
        let evaluated = if next.is_finite() {
            sys.eval(&next)
        } else {
            Err(Error::Settings(err.clone().unwrap_or_else(|| "non-finite state".into())))
        };
        let (d_next, u_next) = match evaluated {
            Ok(v) => v,
            Err(e) => {
                let msg = err.unwrap_or_else(|| e.to_string());
                return finish(rows, Outcome::Diverged, next, t, min_force, max_abs_u, Some(msg));
            }
        };
        let row = sys.row(t, &next, &d_next, u_next);

        if !(row.force > 0.0) && next.is_finite() {
            // Refine the contact-loss instant inside this step.
            let t_prev = t - s.h;
            let force_at = |tau: f64| -> f64 {
                let mut e = None;
                let y = sys.step(&x, &d, tau, &mut e);
                match sys.eval(&y) {
                    Ok((dy, _)) => plant::contact_force_with(p, &y, dy.ddtheta),
                    Err(_) => f64::NAN,
                }
            };
            let tau = bisect_sign_change(force_at, 0.0, s.h, 1e-9);
            let mut e = None;
            let y = sys.step(&x, &d, tau, &mut e);
            let last = match sys.eval(&y) {
                Ok((dy, uy)) => sys.row(t_prev + tau, &y, &dy, uy),
                Err(_) => row,
            };
            min_force = min_force.min(last.force);
            rows.push(last);
            return finish(
                rows,
                Outcome::ContactLost,
                last.state,
                last.t,
                min_force,
                max_abs_u.max(last.u.abs()),
                None,
            );
        }

        min_force = min_force.min(row.force);
        max_abs_u = max_abs_u.max(u_next.abs());
        x = next;
        d = d_next;
        u = u_next;

        if let Some(outcome) = detector.update(t, &x, Some(row.force)) {
            rows.push(row);
            return finish(rows, outcome, x, t, min_force, max_abs_u, None);
        }
        if n % s.record_every as u64 == 0 {
            rows.push(row);
        }
        let _ = u;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{Constant, OpenLoop};
    use crate::plant::saturation_equilibria_nonlinear;

    #[test]
    fn rk4_zero_field_is_identity() {
        let x = [1.0, -2.0, 3.0];
        assert_eq!(rk4_step(|_, _| [0.0; 3], 0.0, &x, 0.1), x);
    }

    #[test]
    fn rk4_exponential_local_error() {
        let y = rk4_step(|_, x: &[f64; 1]| [x[0]], 0.0, &[1.0], 0.01);
        let err = (y[0] - 0.01_f64.exp()).abs();
        assert!(err < 8.4e-11);
        // Leading local error term on y' = y is h^5/120.
        let lead = 0.01_f64.powi(5) / 120.0;
        assert!((err / lead - 1.0).abs() < 0.02, "{err}");
    }

    #[test]
    fn rk4_harmonic_oscillator_energy() {
        let h = 1e-4;
        let steps = (2.0 * std::f64::consts::PI / h).round() as usize;
        let mut x = [1.0, 0.0];
        for i in 0..steps {
            x = rk4_step(|_, y: &[f64; 2]| [y[1], -y[0]], i as f64 * h, &x, h);
        }
        let energy = 0.5 * (x[0] * x[0] + x[1] * x[1]);
        assert!((energy - 0.5).abs() < 1e-8);
    }

    #[test]
    fn detector_converges_after_hold() {
        let s = SimSettings {
            hold: 0.5,
            ..SimSettings::default()
        };
        let mut det = OutcomeDetector::new(&s);
        let mut t = 0.0;
        let mut out = None;
        while out.is_none() {
            out = det.update(t, &State::ZERO, Some(1.0));
            t += 0.01;
        }
        assert_eq!(out, Some(Outcome::Converged));
        assert!((t - 0.01 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn detector_divergence_and_contact() {
        let s = SimSettings::default();
        let mut det = OutcomeDetector::new(&s);
        let mut out = None;
        let mut theta = 0.1;
        while out.is_none() {
            out = det.update(0.0, &State::new(theta, 0.0, 0.0, 0.0), Some(1.0));
            theta *= 1.1;
        }
        assert_eq!(out, Some(Outcome::Diverged));
        let mut det = OutcomeDetector::new(&s);
        assert_eq!(
            det.update(0.0, &State::new(0.1, 0.0, 0.0, 0.0), Some(-0.5)),
            Some(Outcome::ContactLost)
        );
    }

    #[test]
    fn bisection_finds_force_zero() {
        let t = bisect_sign_change(|t| 1.0 - t, 0.0, 3.0, 1e-9);
        assert!((t - 1.0).abs() <= 1e-9 && 1.0 - t <= 0.0);
    }

    #[test]
    fn zero_initial_state_stays_put() {
        let p = PlantParams::straight_reference();
        let s = SimSettings {
            t_max: 2.0,
            ..SimSettings::default()
        };
        let tr = integrate_closed_loop(&p, ModelKind::Nonlinear, &OpenLoop, State::ZERO, &s).unwrap();
        assert_eq!(tr.outcome, Outcome::Converged);
        assert!(tr.rows.iter().all(|r| r.state == State::ZERO && r.u == 0.0));
        assert!(tr.rows.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn saturation_equilibrium_is_a_fixed_point() {
        for p in [PlantParams::straight_reference(), PlantParams::circular_reference()] {
            let [eq, _] = saturation_equilibria_nonlinear(&p).unwrap();
            let s = SimSettings {
                t_max: 0.5,
                ..SimSettings::default()
            };
            let tr =
                integrate_closed_loop(&p, ModelKind::Nonlinear, &Constant(eq.u), eq.state, &s).unwrap();
            assert_eq!(tr.outcome, Outcome::TimedOut);
            let drift = State::from_array(std::array::from_fn(|i| {
                tr.final_state.to_array()[i] - eq.state.to_array()[i]
            }));
            assert!(drift.max_abs() < 1e-9, "{drift:?}");
        }
    }

    #[test]
    fn settings_validation() {
        let bad = SimSettings {
            h: 0.0,
            ..SimSettings::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimSettings {
            t_max: 1e-5,
            ..SimSettings::default()
        };
        assert!(bad.validate().is_err());
    }
}
