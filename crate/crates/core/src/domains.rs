//! Controllability domains, basins of attraction and bisection searches for
//! the largest stabilizable initial condition along a ray.

use nalgebra::{Matrix2, Matrix4, Vector4};
use rayon::prelude::*;

use crate::analysis::ModalData;
use crate::controller::{make_auto, ControlLaw, Mode, SatController};
use crate::error::{Error, Result};
use crate::linearization::{from_vector, LinearModel};
use crate::plant::{PlantParams, State};
use crate::simulate::{integrate_closed_loop, rk4_step, ModelKind, Outcome, SimSettings};

/// Half-width of the one-dimensional domain `|y1| < |d1| u0 / lambda1`.
pub fn scalar_q_bound(lambda1: f64, d1: f64, u0: f64) -> Result<f64> {
    if !(lambda1 > 0.0) {
        return Err(Error::NonPositiveEigenvalue(lambda1));
    }
    if d1 == 0.0 {
        return Err(Error::Uncontrollable(d1));
    }
    Ok(d1.abs() * u0 / lambda1)
}

/// Ball offset held by a saturated motor on the straight beam, `cu u0 / (m2 g)`.
pub fn straight_s_bound(p: &PlantParams) -> f64 {
    p.cu * p.u0 / (p.m2 * p.g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarBoundary {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
    pub corners: [[f64; 2]; 2],
}

impl PlanarBoundary {
    /// Shoelace area of the closed polygon.
    pub fn area(&self) -> f64 {
        let n = self.points.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let [x0, y0] = self.points[i];
                let [x1, y1] = self.points[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        0.5 * twice.abs()
    }

    /// Even-odd point-in-polygon test; points within `slack` of an edge count
    /// as inside.
    pub fn contains(&self, q: [f64; 2], slack: f64) -> bool {
        let n = self.points.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            if segment_distance(q, a, b) <= slack {
                return true;
            }
            if (a[1] > q[1]) != (b[1] > q[1]) {
                let x = a[0] + (q[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if q[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Largest distance from `-p` to the polyline over all vertices `p`.
    pub fn symmetry_error(&self) -> f64 {
        let n = self.points.len();
        self.points
            .iter()
            .map(|&[x, y]| {
                (0..n)
                    .map(|i| segment_distance([-x, -y], self.points[i], self.points[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> [f64; 2] {
        self.points.iter().fold([0.0, 0.0], |m, p| {
            [m[0].max(p[0].abs()), m[1].max(p[1].abs())]
        })
    }
}

fn segment_distance(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (q[0] - a[0] - t * dx).hypot(q[1] - a[1] - t * dy)
}

/// Boundary of the planar controllability domain of
/// `y_i' = lambda_i y_i + d_i u`, `|u| <= u0`.
///
/// The plus branch runs from `c = (d1 u0/lambda1, d2 u0/lambda2)` to `-c`;
/// the minus branch is its mirror image.
pub fn planar_q_boundary(lams: [f64; 2], ds: [f64; 2], u0: f64, n_points: usize) -> Result<PlanarBoundary> {
    for (&l, &d) in lams.iter().zip(&ds) {
        scalar_q_bound(l, d, u0)?;
    }
    let n = n_points.max(8);
    let c = [ds[0] * u0 / lams[0], ds[1] * u0 / lams[1]];
    let tail = 1e-6;
    let tau_end = (0..2)
        .map(|i| (2.0 * c[i].abs() / tail).ln().max(0.0) / lams[i])
        .fold(0.0, f64::max);
    let tau_start = 1e-4 / lams[0].max(lams[1]);
    let ratio = (tau_end / tau_start).powf(1.0 / (n - 2) as f64);

    let point = |tau: f64| -> [f64; 2] {
        std::array::from_fn(|i| c[i] * (2.0 * (-lams[i] * tau).exp() - 1.0))
    };
    let mut plus = Vec::with_capacity(n + 1);
    plus.push(c);
    let mut tau = tau_start;
    for _ in 0..n - 1 {
        plus.push(point(tau));
        tau *= ratio;
    }
    plus.push([-c[0], -c[1]]);

    let mut points = plus.clone();
    points.extend(plus[1..plus.len() - 1].iter().map(|&[a, b]| [-a, -b]));
    Ok(PlanarBoundary {
        points,
        closed: true,
        corners: [[-c[0], -c[1]], c],
    })
}

/// Settings for the backward-time limit-cycle search.
#[derive(Clone, Debug, PartialEq)]
pub struct BasinSettings {
    /// Distance of the starting point from the origin.
    pub eps: f64,
    /// Integration step; `None` picks one from the closed-loop time scales.
    pub h: Option<f64>,
    /// Relative change between successive section crossings that counts as
    /// converged.
    pub rel_tol: f64,
    pub max_crossings: usize,
    pub max_time: f64,
    /// Minimum spacing of recorded cycle points, relative to the corner
    /// distance from the origin.
    pub spacing: f64,
}

impl Default for BasinSettings {
    fn default() -> Self {
        BasinSettings {
            eps: 1e-6,
            h: None,
            rel_tol: 1e-6,
            max_crossings: 10_000,
            max_time: 1e5,
            spacing: 1e-3,
        }
    }
}

/// Closed-loop linearization of the planar modal system in the unsaturated band.
fn planar_closed_loop(c: &SatController) -> Matrix2<f64> {
    let (l, d) = (c.lambdas(), c.ds());
    let (k1, k2) = c.k.unwrap_or((1.0, 0.0));
    Matrix2::new(
        l[0] + c.gamma * d[0] * k1,
        c.gamma * d[0] * k2,
        c.gamma * d[1] * k1,
        l[1] + c.gamma * d[1] * k2,
    )
}

/// Limit cycle of the time-reversed planar modal loop
/// `y_i' = -lambda_i y_i - d_i sat(gamma sigma(y))`, which bounds the basin
/// of the dual-mode law.
pub fn basin_boundary_backward(c: &SatController, s: &BasinSettings) -> Result<PlanarBoundary> {
    if c.mode != Mode::Dual {
        return Err(Error::UnstableModeCount {
            expected: 2,
            found: c.modes.len(),
        });
    }
    let (k1, k2) = c.k.expect("dual law has gains");
    let (l, d) = (c.lambdas(), c.ds());
    let forward = planar_closed_loop(c);
    let eig = forward.complex_eigenvalues();
    if eig.iter().any(|z| !(z.re < 0.0)) {
        return Err(Error::NoCycle(format!(
            "closed loop not stable at the origin (eigenvalues {}, {})",
            eig[0], eig[1]
        )));
    }

    // Start along the reversed system's fastest growing direction, which is
    // the forward loop's most negative real eigenvalue.
    let dir = if eig.iter().all(|z| z.im == 0.0) {
        let fast = eig[0].re.min(eig[1].re);
        let m = forward - Matrix2::identity() * fast;
        // Null vector of a singular 2x2 matrix.
        let v = if m.row(0).norm() >= m.row(1).norm() {
            [-m[(0, 1)], m[(0, 0)]]
        } else {
            [-m[(1, 1)], m[(1, 0)]]
        };
        let n = v[0].hypot(v[1]);
        if n > 0.0 {
            [v[0] / n, v[1] / n]
        } else {
            [1.0, 0.0]
        }
    } else {
        [1.0, 0.0]
    };

    let fastest = eig.iter().map(|z| z.norm()).fold(0.0, f64::max).max(l[0]).max(l[1]);
    let h = s.h.unwrap_or((0.05 / fastest).min(1e-3));
    let u0 = c.u0;
    let gamma = c.gamma;
    let sigma = |y: &[f64; 2]| k1 * y[0] + k2 * y[1];
    let rhs = |_t: f64, y: &[f64; 2]| -> [f64; 2] {
        let u = crate::controller::clamp(gamma * sigma(y), u0);
        [-l[0] * y[0] - d[0] * u, -l[1] * y[1] - d[1] * u]
    };

    let corners = [
        [-d[0] * u0 / l[0], -d[1] * u0 / l[1]],
        [d[0] * u0 / l[0], d[1] * u0 / l[1]],
    ];
    let min_gap = s.spacing * corners[1][0].hypot(corners[1][1]);

    let mut y = [s.eps * dir[0], s.eps * dir[1]];
    let mut t = 0.0;
    let mut last_cross: Option<[f64; 2]> = None;
    let mut crossings = 0usize;
    let mut recording: Option<Vec<[f64; 2]>> = None;

    while t < s.max_time {
        let next = rk4_step(rhs, t, &y, h);
        t += h;
        if !(next[0].is_finite() && next[1].is_finite()) {
            return Err(Error::NoCycle("backward trajectory became non-finite".into()));
        }
        if let Some(path) = recording.as_mut() {
            let last = path[path.len() - 1];
            if (next[0] - last[0]).hypot(next[1] - last[1]) >= min_gap {
                path.push(next);
            }
        }
        let (s0, s1) = (sigma(&y), sigma(&next));
        // Upward crossings of the switching line only.
        if s0 < 0.0 && s1 >= 0.0 {
            let a = s0 / (s0 - s1);
            let q = [y[0] + a * (next[0] - y[0]), y[1] + a * (next[1] - y[1])];
            crossings += 1;
            if let Some(points) = recording.take() {
                // The closing crossing coincides with the first point.
                return Ok(PlanarBoundary {
                    points,
                    closed: true,
                    corners,
                });
            }
            if let Some(p) = last_cross {
                let change = (q[0] - p[0]).hypot(q[1] - p[1]);
                if change <= s.rel_tol * q[0].hypot(q[1]) {
                    recording = Some(vec![q]);
                }
            }
            last_cross = Some(q);
            if crossings > s.max_crossings {
                break;
            }
        }
        y = next;
    }
    Err(Error::NoCycle(format!(
        "no converged cycle after {crossings} crossings (t = {t:.1})"
    )))
}

/// One-parameter family of initial conditions.
#[derive(Clone, Debug, PartialEq)]
pub enum Ray {
    /// `theta(0) = v`, rest zero.
    Theta,
    /// `phi(0) = v`, rest zero.
    Phi,
    /// `s(0) = r phi(0) = v`, rest zero.
    BallOffset,
    /// `theta(0) = v`, `s(0) = -R v`, velocities zero.
    BeamAligned,
    /// `x(0) = v * dir`.
    Direction(Vector4<f64>),
}

impl Ray {
    pub fn state(&self, p: &PlantParams, v: f64) -> State {
        match self {
            Ray::Theta => State::new(v, 0.0, 0.0, 0.0),
            Ray::Phi => State::new(0.0, v, 0.0, 0.0),
            Ray::BallOffset => State::new(0.0, v / p.r, 0.0, 0.0),
            Ray::BeamAligned => State::new(v, -p.big_r * v / p.r, 0.0, 0.0),
            Ray::Direction(dir) => from_vector(&(dir * v)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpec {
    pub ray: Ray,
    /// Known stabilizable value.
    pub lo: f64,
    /// Known non-stabilizable value.
    pub hi: f64,
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchResult {
    /// Largest value seen to converge.
    pub lo: f64,
    /// Smallest value seen to fail.
    pub hi: f64,
    pub simulations: usize,
}

pub fn converges(
    p: &PlantParams,
    kind: ModelKind,
    law: &dyn ControlLaw,
    x0: State,
    settings: &SimSettings,
) -> Result<bool> {
    Ok(integrate_closed_loop(p, kind, law, x0, settings)?.outcome == Outcome::Converged)
}

/// Bisection for the largest stabilizable value along a ray.
pub fn max_stabilizable_ic(
    p: &PlantParams,
    kind: ModelKind,
    law: &dyn ControlLaw,
    spec: &SearchSpec,
    settings: &SimSettings,
) -> Result<SearchResult> {
    let (mut lo, mut hi) = (spec.lo, spec.hi);
    let ok = |v: f64| converges(p, kind, law, spec.ray.state(p, v), settings);
    let bracket_err = |detail: &str| Error::Bracket {
        lo,
        hi,
        detail: detail.to_string(),
    };
    if !(spec.tol > 0.0) {
        return Err(bracket_err("tolerance must be positive"));
    }
    if !ok(lo)? {
        return Err(bracket_err("lower end does not converge"));
    }
    if ok(hi)? {
        return Err(bracket_err("upper end converges"));
    }
    let mut simulations = 2;
    while (hi - lo).abs() > spec.tol {
        let mid = 0.5 * (lo + hi);
        simulations += 1;
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SearchResult { lo, hi, simulations })
}

/// Thread pool for sweeps, capped by `BEAMBALL_THREADS` when set.
pub fn sweep_pool() -> rayon::ThreadPool {
    let cap = std::env::var("BEAMBALL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cap {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// Runs [`max_stabilizable_ic`] once per gain, concurrently. The settings
/// may depend on the gain since the slowest closed-loop pole can.
pub fn gamma_sweep(
    p: &PlantParams,
    kind: ModelKind,
    md: &ModalData,
    gammas: &[f64],
    spec: &SearchSpec,
    settings_for: impl Fn(f64) -> SimSettings + Sync,
) -> Vec<Result<SearchResult>> {
    sweep_pool().install(|| {
        gammas
            .par_iter()
            .map(|&g| {
                let c = make_auto(md, g, p.u0)?;
                max_stabilizable_ic(p, kind, &c, spec, &settings_for(g))
            })
            .collect()
    })
}

/// Slowest decay rate `min(-Re z)` over the eigenvalues of the unsaturated
/// closed loop `A + b r`.
pub fn closed_loop_decay_rate(lm: &LinearModel, c: &SatController) -> f64 {
    let m = lm.a + lm.b * c.feedback_row();
    m.complex_eigenvalues()
        .iter()
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min)
}

/// Horizon long enough for the slowest closed-loop mode to decay by about
/// `e^-15`, capped at `cap`.
pub fn suggested_horizon(lm: &LinearModel, c: &SatController, cap: f64) -> f64 {
    let rate = closed_loop_decay_rate(lm, c);
    if rate > 0.0 {
        (15.0 / rate).min(cap)
    } else {
        cap
    }
}

/// Right eigenvector `v` of `A` for a real eigenvalue, scaled so `w v = 1`
/// for the matching left vector `w`.
pub fn mode_direction(lm: &LinearModel, md: &ModalData, index: usize) -> Result<Vector4<f64>> {
    let m = md.modes.get(index).ok_or(Error::UnstableModeCount {
        expected: index + 1,
        found: md.modes.len(),
    })?;
    let shifted: Matrix4<f64> = lm.a - Matrix4::identity() * m.lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Eigen("SVD failed".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let v: Vector4<f64> = v_t.row(k).transpose();
    let scale = m.project(&v);
    if scale.abs() < 1e-14 {
        return Err(Error::Eigen("left and right eigenvectors orthogonal".into()));
    }
    Ok(v / scale)
}
