//! Command-line front end: `analyze`, `simulate`, `domain`, `basin`, `search`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::analysis::{
    characteristic_coefficients, classify_spectrum, controllability_indicator, kalman_rank,
    modal_decomposition, spectrum, ModalData, StabilityClass,
};
use crate::config::{parse_config, RunConfig};
use crate::controller::{make_auto, make_dual, ControlLaw, OpenLoop, SatController};
use crate::domains::{
    basin_boundary_backward, max_stabilizable_ic, suggested_horizon, planar_q_boundary, scalar_q_bound, BasinSettings,
    PlanarBoundary, Ray, SearchSpec,
};
use crate::error::Error;
use crate::linearization::{build_state_space, LinearModel};
use crate::plant::{saturation_equilibria_nonlinear, PlantParams, Variant};
use crate::simulate::{integrate_closed_loop, ModelKind, Trace};

pub const TRACE_HEADER: &str = "t,theta,phi,dtheta,dphi,s,u,F,K,P,E";
pub const BOUNDARY_HEADER: &str = "y1,y2";

/// Upper limit for automatically extended search horizons, s.
const HORIZON_CAP: f64 = 5000.0;

#[derive(Parser, Debug)]
#[command(name = "beamball", version, about = "Beam-and-ball saturated feedback toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
    /// Run configuration (key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the feedback multiplier.
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Use the linearized plant.
    #[arg(long, global = true)]
    linear: bool,
    /// Plant variant; selects reference data when no config is given.
    #[arg(long, global = true)]
    variant: Option<Variant>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Print linear model, spectrum, controllability and saturation equilibria.
    Analyze,
    /// Write a closed-loop (or open-loop) trace as CSV.
    Simulate,
    /// Write the controllability domain boundary as CSV.
    Domain,
    /// Write the basin-of-attraction cycle as CSV.
    Basin,
    /// Bisect for the largest stabilizable initial value along a ray.
    Search,
}

/// Failure carrying its exit status.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. }
            | Error::InvalidParam { .. }
            | Error::Settings(_)
            | Error::GammaSign { .. }
            | Error::PoleCondition { .. } => 2,
            Error::Io(_) => 1,
            _ => 3,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn config_failure(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        msg: msg.into(),
    }
}

/// `%.{digits}g`-style formatting.
pub fn fmt_g(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let p = digits.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{:.*}", (p as i32 - 1 - exp) as usize, x))
    }
}

pub fn trace_csv(tr: &Trace) -> String {
    let mut s = String::with_capacity(64 * (tr.rows.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in &tr.rows {
        let x = &r.state;
        let vals = [
            r.t, x.theta, x.phi, x.dtheta, x.dphi, r.s, r.u, r.force, r.kinetic, r.potential,
            r.energy(),
        ];
        let line: Vec<String> = vals.iter().map(|&v| fmt_g(v, 12)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn boundary_csv(points: &[[f64; 2]]) -> String {
    let mut s = String::from(BOUNDARY_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&format!("{},{}\n", fmt_g(p[0], 12), fmt_g(p[1], 12)));
    }
    s
}

fn load(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_failure(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => RunConfig::reference(cli.variant.unwrap_or(Variant::Straight)),
    };
    if let (Some(v), Some(_)) = (cli.variant, &cli.config) {
        cfg.plant.variant = v;
        cfg.plant.validate()?;
    }
    if let Some(g) = cli.gamma {
        if !g.is_finite() {
            return Err(config_failure("--gamma must be finite"));
        }
        cfg.gamma = Some(g);
    }
    if cli.linear {
        cfg.model = ModelKind::Linear;
    }
    Ok(cfg)
}

fn modal(p: &PlantParams) -> Result<(LinearModel, ModalData), Failure> {
    let lm = build_state_space(p)?;
    let md = modal_decomposition(&lm, &spectrum(p)?)?;
    Ok((lm, md))
}

fn controller(cfg: &RunConfig, md: &ModalData) -> Result<SatController, Failure> {
    let g = cfg
        .gamma
        .ok_or_else(|| config_failure("no gamma given ([controller] gamma or --gamma)"))?;
    Ok(make_auto(md, g, cfg.plant.u0)?)
}

fn emit(out_path: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    let res = match out_path {
        Some(path) => std::fs::write(path, text.as_bytes()),
        None => stdout.write_all(text.as_bytes()),
    };
    res.map_err(|e| Failure {
        code: 1,
        msg: format!("write failed: {e}"),
    })
}

fn analyze(cfg: &RunConfig) -> Result<String, Failure> {
    let p = &cfg.plant;
    let lm = build_state_space(p)?;
    let mut o = String::new();
    let mat = |m: &nalgebra::Matrix2<f64>| {
        format!(
            "[[{}, {}], [{}, {}]]",
            fmt_g(m[(0, 0)], 8),
            fmt_g(m[(0, 1)], 8),
            fmt_g(m[(1, 0)], 8),
            fmt_g(m[(1, 1)], 8)
        )
    };
    o += &format!("variant = {}\n", p.variant.name());
    o += &format!("D = {}\nE = {}\n", mat(&lm.d), mat(&lm.e));
    let coeffs = characteristic_coefficients(p);
    let cs: Vec<String> = coeffs.iter().map(|&c| fmt_g(c, 8)).collect();
    o += &format!("characteristic (a0..a4) = {}\n", cs.join(", "));
    let spec = spectrum(p)?;
    for (i, z) in spec.roots.iter().enumerate() {
        if z.im == 0.0 {
            o += &format!("lambda{} = {:.6}\n", i + 1, z.re);
        } else {
            o += &format!("lambda{} = {:.6e} {:+.6}i\n", i + 1, z.re, z.im);
        }
    }
    let class = match classify_spectrum(&spec) {
        StabilityClass::OneUnstable => "one unstable mode",
        StabilityClass::TwoUnstable => "two unstable modes",
        StabilityClass::Other => "other",
    };
    o += &format!("class = {class}\n");
    o += &format!(
        "controllability indicator = {}\nkalman rank = {}\n",
        fmt_g(controllability_indicator(p), 8),
        kalman_rank(&lm)
    );
    match saturation_equilibria_nonlinear(p) {
        Ok(eqs) => {
            for eq in eqs {
                let x = eq.state;
                o += &format!(
                    "saturation equilibrium u = {}: theta = {:.6} phi = {:.6} s = {:.6}\n",
                    fmt_g(eq.u, 6),
                    x.theta,
                    x.phi,
                    x.s(p)
                );
            }
        }
        Err(e) => o += &format!("saturation equilibrium: {e}\n"),
    }
    match modal_decomposition(&lm, &spec) {
        Ok(md) => {
            for (i, m) in md.modes.iter().enumerate() {
                let w: Vec<String> = m.w.iter().map(|&v| fmt_g(v, 8)).collect();
                o += &format!(
                    "mode {}: lambda = {:.6} d = {} w = [{}] |y{}| bound = {}\n",
                    i + 1,
                    m.lambda,
                    fmt_g(m.d, 6),
                    w.join(", "),
                    i + 1,
                    fmt_g(scalar_q_bound(m.lambda, m.d, p.u0)?, 8)
                );
            }
        }
        Err(e) => o += &format!("modal decomposition: {e}\n"),
    }
    Ok(o)
}

fn domain(cfg: &RunConfig) -> Result<(String, String), Failure> {
    let (_, md) = modal(&cfg.plant)?;
    let u0 = cfg.plant.u0;
    match md.modes.as_slice() {
        [m] => {
            let b = scalar_q_bound(m.lambda, m.d, u0)?;
            let csv = boundary_csv(&[[-b, 0.0], [b, 0.0]]);
            Ok((csv, format!("Q: |y1| < {}\n", fmt_g(b, 12))))
        }
        [m1, m2] => {
            let q = planar_q_boundary([m1.lambda, m2.lambda], [m1.d, m2.d], u0, 400)?;
            let note = boundary_note("Q", &q);
            Ok((boundary_csv(&q.points), note))
        }
        other => Err(Error::UnstableModeCount {
            expected: 2,
            found: other.len(),
        }
        .into()),
    }
}

fn boundary_note(name: &str, b: &PlanarBoundary) -> String {
    format!(
        "{name}: {} points, area {}, corners ({}, {}) and ({}, {})\n",
        b.points.len(),
        fmt_g(b.area(), 8),
        fmt_g(b.corners[0][0], 8),
        fmt_g(b.corners[0][1], 8),
        fmt_g(b.corners[1][0], 8),
        fmt_g(b.corners[1][1], 8),
    )
}

fn default_search(p: &PlantParams) -> SearchSpec {
    match p.variant {
        Variant::Straight => SearchSpec {
            ray: Ray::Theta,
            lo: 0.0,
            hi: 0.2,
            tol: 1e-4,
        },
        Variant::Circular => SearchSpec {
            ray: Ray::BeamAligned,
            lo: 0.0,
            hi: 0.5,
            tol: 1e-4,
        },
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load(cli)?;
    let p = &cfg.plant;
    let note = |stdout: &mut dyn Write, text: &str| -> Result<(), Failure> {
        // Summaries go to stdout only when the data went to a file.
        if cli.out.is_some() {
            emit(&None, text, stdout)
        } else {
            eprint!("{text}");
            Ok(())
        }
    };
    match cli.cmd {
        Command::Analyze => emit(&cli.out, &analyze(&cfg)?, stdout),
        Command::Simulate => {
            let law: Box<dyn ControlLaw> = match cfg.gamma {
                None => Box::new(OpenLoop),
                Some(_) => {
                    let (lm, md) = modal(p)?;
                    let c = controller(&cfg, &md)?;
                    let want = suggested_horizon(&lm, &c, HORIZON_CAP);
                    if cfg.sim.t_max < want {
                        eprintln!(
                            "note: slowest closed-loop mode needs about {} s; t_max = {}",
                            fmt_g(want, 4),
                            fmt_g(cfg.sim.t_max, 6)
                        );
                    }
                    Box::new(c)
                }
            };
            let tr = integrate_closed_loop(p, cfg.model, law.as_ref(), cfg.x0, &cfg.sim)?;
            emit(&cli.out, &trace_csv(&tr), stdout)?;
            let mut text = format!(
                "outcome = {} at t = {}, min F = {}\n",
                tr.outcome.name(),
                fmt_g(tr.t_end, 8),
                fmt_g(tr.min_force, 8)
            );
            if let Some(d) = &tr.diagnostic {
                text += &format!("diagnostic: {d}\n");
            }
            note(stdout, &text)
        }
        Command::Domain => {
            let (csv, text) = domain(&cfg)?;
            emit(&cli.out, &csv, stdout)?;
            note(stdout, &text)
        }
        Command::Basin => {
            let (_, md) = modal(p)?;
            let g = cfg
                .gamma
                .ok_or_else(|| config_failure("no gamma given ([controller] gamma or --gamma)"))?;
            let c = make_dual(&md, g, p.u0)?;
            let b = basin_boundary_backward(&c, &BasinSettings::default())?;
            emit(&cli.out, &boundary_csv(&b.points), stdout)?;
            note(stdout, &boundary_note("B", &b))
        }
        Command::Search => {
            let (lm, md) = modal(p)?;
            let c = controller(&cfg, &md)?;
            let spec = cfg.search.clone().unwrap_or_else(|| default_search(p));
            // Near the boundary the slow closed-loop mode dominates, so the
            // configured horizon is only a floor.
            let mut sim = cfg.sim.clone();
            sim.t_max = sim.t_max.max(suggested_horizon(&lm, &c, HORIZON_CAP));
            let r = max_stabilizable_ic(p, cfg.model, &c, &spec, &sim)?;
            let mut text = format!(
                "bound = {} (bracket {} .. {}, {} simulations, horizon {} s)\n",
                fmt_g(r.lo, 8),
                fmt_g(r.lo, 8),
                fmt_g(r.hi, 8),
                r.simulations,
                fmt_g(sim.t_max, 6)
            );
            if !matches!(spec.ray, Ray::BallOffset) {
                text += &format!("bound_deg = {}\n", fmt_g(r.lo.to_degrees(), 8));
            }
            if matches!(spec.ray, Ray::BeamAligned) {
                text += &format!("s = {}\n", fmt_g(-p.big_r * r.lo, 8));
            }
            emit(&cli.out, &text, stdout)
        }
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                2
            } else {
                let _ = stdout.write_all(text.as_bytes());
                0
            };
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.msg);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format_matches_c() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1e-5, "1e-05"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (1.0 / 3.0, "0.333333333333"),
            (0.0001, "0.0001"),
            (9.99999999999e-5, "9.99999999999e-05"),
            (9.999999999999e-5, "0.0001"),
            (-19.0, "-19"),
        ];
        for (x, s) in cases {
            assert_eq!(fmt_g(x, 12), s, "{x}");
        }
    }

    #[test]
    fn rounding_carries_into_exponent() {
        assert_eq!(fmt_g(9.9999999999999, 12), "10");
        assert_eq!(fmt_g(0.99999999999999, 12), "1");
    }

    #[test]
    fn bad_flag_exits_two() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["beamball", "analyze", "--bogus"], &mut o, &mut e), 2);
        assert_eq!(run(["beamball", "analyze", "--variant", "oval"], &mut o, &mut e), 2);
    }

    #[test]
    fn analyze_reference_straight() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["beamball", "analyze"], &mut o, &mut e), 0);
        let text = String::from_utf8(o).unwrap();
        assert!(text.contains("lambda1 = 5.720"), "{text}");
    }
}
