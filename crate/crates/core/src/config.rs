//! `key = value` run configuration with `[plant]`, `[controller]`, `[sim]`
//! and `[search]` sections.
//!
//! Angle keys also accept a `_deg` spelling. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::domains::{Ray, SearchSpec};
use crate::error::{Error, Result};
use crate::plant::{PlantParams, State, Variant};
use crate::simulate::{ModelKind, SimSettings};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub plant: PlantParams,
    /// Feedback multiplier; `None` runs open loop.
    pub gamma: Option<f64>,
    pub sim: SimSettings,
    pub x0: State,
    pub model: ModelKind,
    pub search: Option<SearchSpec>,
}

impl RunConfig {
    /// Reference plant with default settings and no controller.
    pub fn reference(variant: Variant) -> Self {
        RunConfig {
            plant: PlantParams::reference(variant),
            gamma: None,
            sim: SimSettings::default(),
            x0: State::ZERO,
            model: ModelKind::Nonlinear,
            search: None,
        }
    }
}

const SECTIONS: [&str; 4] = ["plant", "controller", "sim", "search"];

const PLANT_KEYS: [&str; 14] = [
    "variant", "m1", "m2", "r", "l", "a", "R", "rho1", "rho2", "cu", "cv", "f", "u0", "g",
];
const CONTROLLER_KEYS: [&str; 1] = ["gamma"];
const SIM_KEYS: [&str; 17] = [
    "h", "t_max", "eps_conv", "hold", "record_every", "max_angle", "max_angle_deg", "max_norm",
    "model", "theta0", "theta0_deg", "phi0", "phi0_deg", "dtheta0", "dphi0", "dtheta0_deg",
    "dphi0_deg",
];
const SEARCH_KEYS: [&str; 6] = ["ray", "lo", "lo_deg", "hi", "hi_deg", "tol"];

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

struct Sections {
    map: BTreeMap<&'static str, Section>,
    last_line: usize,
}

impl Sections {
    fn get(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.map.get(sec).and_then(|s| s.entries.get(key))
    }

    fn anchor(&self, sec: &str) -> usize {
        self.map.get(sec).map(|s| s.line).unwrap_or(self.last_line)
    }

    fn float(&self, sec: &str, key: &str) -> Result<Option<(f64, usize)>> {
        match self.get(sec, key) {
            None => Ok(None),
            Some(e) => {
                let v: f64 = e.value.parse().map_err(|_| {
                    Error::config(e.line, format!("{key}: `{}` is not a number", e.value))
                })?;
                if !v.is_finite() {
                    return Err(Error::config(e.line, format!("{key}: must be finite")));
                }
                Ok(Some((v, e.line)))
            }
        }
    }

    fn required(&self, sec: &str, key: &str) -> Result<(f64, usize)> {
        self.float(sec, key)?.ok_or_else(|| {
            Error::config(self.anchor(sec), format!("[{sec}] missing required key `{key}`"))
        })
    }

    /// Reads `key` in radians or `key_deg` in degrees.
    fn angle(&self, sec: &str, key: &str) -> Result<Option<(f64, usize)>> {
        let deg_key = format!("{key}_deg");
        match (self.float(sec, key)?, self.float(sec, &deg_key)?) {
            (Some(_), Some((_, line))) => Err(Error::config(
                line,
                format!("both `{key}` and `{deg_key}` given"),
            )),
            (Some(v), None) => Ok(Some(v)),
            (None, Some((d, line))) => Ok(Some((d.to_radians(), line))),
            (None, None) => Ok(None),
        }
    }
}

fn split(text: &str) -> Result<Sections> {
    let mut map: BTreeMap<&'static str, Section> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim();
            let sec = SECTIONS
                .iter()
                .find(|&&s| s == name)
                .ok_or_else(|| Error::config(line, format!("unknown section [{name}]")))?;
            if map.contains_key(sec) {
                return Err(Error::config(line, format!("duplicate section [{name}]")));
            }
            map.insert(sec, Section { line, ..Section::default() });
            current = Some(sec);
            continue;
        }
        let sec = current.ok_or_else(|| Error::config(line, "key outside of any section"))?;
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("expected `key = value`, got `{body}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let allowed: &[&str] = match sec {
            "plant" => &PLANT_KEYS,
            "controller" => &CONTROLLER_KEYS,
            "sim" => &SIM_KEYS,
            _ => &SEARCH_KEYS,
        };
        if !allowed.contains(&key) {
            return Err(Error::config(line, format!("unknown key `{key}` in [{sec}]")));
        }
        let section = map.get_mut(sec).expect("section inserted");
        if section.entries.contains_key(key) {
            return Err(Error::config(line, format!("duplicate key `{key}`")));
        }
        section.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(Sections { map, last_line })
}

fn parse_plant(s: &Sections) -> Result<PlantParams> {
    let variant_entry = s.get("plant", "variant").ok_or_else(|| {
        Error::config(s.anchor("plant"), "[plant] missing required key `variant`")
    })?;
    let variant: Variant = variant_entry
        .value
        .parse()
        .map_err(|e: String| Error::config(variant_entry.line, e))?;
    let req = |k| s.required("plant", k).map(|v| v.0);
    let big_r = match variant {
        Variant::Circular => req("R")?,
        Variant::Straight => s.float("plant", "R")?.map(|v| v.0).unwrap_or(0.0),
    };
    let p = PlantParams {
        variant,
        m1: req("m1")?,
        m2: req("m2")?,
        r: req("r")?,
        l: req("l")?,
        a: req("a")?,
        big_r,
        rho1: req("rho1")?,
        rho2: req("rho2")?,
        cu: req("cu")?,
        cv: req("cv")?,
        f: s.float("plant", "f")?.map(|v| v.0).unwrap_or(0.0),
        u0: req("u0")?,
        g: s.float("plant", "g")?.map(|v| v.0).unwrap_or(9.81),
    };
    p.validate().map_err(|e| match e {
        Error::InvalidParam { name, reason } => {
            let line = s.get("plant", name).map(|e| e.line).unwrap_or(s.anchor("plant"));
            Error::config(line, format!("{name}: {reason}"))
        }
        other => other,
    })?;
    Ok(p)
}

fn parse_sim(s: &Sections) -> Result<(SimSettings, State, ModelKind)> {
    let mut sim = SimSettings::default();
    let positive = |key: &str, v: Option<(f64, usize)>, allow_zero: bool| -> Result<Option<f64>> {
        match v {
            Some((x, line)) if x < 0.0 || (x == 0.0 && !allow_zero) => Err(Error::config(
                line,
                format!("{key}: must be {}, got {x}", if allow_zero { ">= 0" } else { "> 0" }),
            )),
            other => Ok(other.map(|v| v.0)),
        }
    };
    if let Some(v) = positive("h", s.float("sim", "h")?, false)? {
        sim.h = v;
    }
    if let Some(v) = positive("t_max", s.float("sim", "t_max")?, false)? {
        sim.t_max = v;
    }
    if let Some(v) = positive("eps_conv", s.float("sim", "eps_conv")?, false)? {
        sim.eps_conv = v;
    }
    if let Some(v) = positive("hold", s.float("sim", "hold")?, true)? {
        sim.hold = v;
    }
    if let Some(v) = positive("max_angle", s.angle("sim", "max_angle")?, false)? {
        sim.max_angle = v;
    }
    if let Some(v) = positive("max_norm", s.float("sim", "max_norm")?, false)? {
        sim.max_norm = v;
    }
    if let Some(e) = s.get("sim", "record_every") {
        sim.record_every = match e.value.parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                return Err(Error::config(
                    e.line,
                    format!("record_every: expected a positive integer, got `{}`", e.value),
                ))
            }
        };
    }
    if let Err(err) = sim.validate() {
        let line = s.get("sim", "t_max").or(s.get("sim", "h")).map(|e| e.line);
        return Err(Error::config(line.unwrap_or(s.anchor("sim")), err.to_string()));
    }

    let coord = |k| -> Result<f64> { Ok(s.angle("sim", k)?.map(|v| v.0).unwrap_or(0.0)) };
    let x0 = State::new(coord("theta0")?, coord("phi0")?, coord("dtheta0")?, coord("dphi0")?);

    let model = match s.get("sim", "model") {
        None => ModelKind::Nonlinear,
        Some(e) => match e.value.as_str() {
            "nonlinear" => ModelKind::Nonlinear,
            "linear" => ModelKind::Linear,
            other => {
                return Err(Error::config(
                    e.line,
                    format!("model: expected nonlinear|linear, got `{other}`"),
                ))
            }
        },
    };
    Ok((sim, x0, model))
}

fn ray_name(r: &Ray) -> &'static str {
    match r {
        Ray::Theta => "theta",
        Ray::Phi => "phi",
        Ray::BallOffset => "s",
        Ray::BeamAligned => "beam_aligned",
        Ray::Direction(_) => "direction",
    }
}

fn parse_search(s: &Sections) -> Result<Option<SearchSpec>> {
    if !s.map.contains_key("search") {
        return Ok(None);
    }
    let e = s.get("search", "ray").ok_or_else(|| {
        Error::config(s.anchor("search"), "[search] missing required key `ray`")
    })?;
    let ray = match e.value.as_str() {
        "theta" => Ray::Theta,
        "phi" => Ray::Phi,
        "s" => Ray::BallOffset,
        "beam_aligned" => Ray::BeamAligned,
        other => {
            return Err(Error::config(
                e.line,
                format!("ray: expected theta|phi|s|beam_aligned, got `{other}`"),
            ))
        }
    };
    let angular = !matches!(ray, Ray::BallOffset);
    let bound = |k: &str| -> Result<(f64, usize)> {
        let v = if angular {
            s.angle("search", k)?
        } else {
            if let Some(e) = s.get("search", &format!("{k}_deg")) {
                return Err(Error::config(e.line, format!("{k}_deg: the s ray is a distance")));
            }
            s.float("search", k)?
        };
        v.ok_or_else(|| Error::config(s.anchor("search"), format!("[search] missing required key `{k}`")))
    };
    let (lo, _) = bound("lo")?;
    let (hi, hi_line) = bound("hi")?;
    if lo == hi {
        return Err(Error::config(hi_line, "hi must differ from lo"));
    }
    let tol = match s.float("search", "tol")? {
        None => 1e-4,
        Some((t, _)) if t > 0.0 => t,
        Some((t, line)) => return Err(Error::config(line, format!("tol: must be > 0, got {t}"))),
    };
    Ok(Some(SearchSpec { ray, lo, hi, tol }))
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let s = split(text)?;
    let plant = parse_plant(&s)?;
    let gamma = s.float("controller", "gamma")?.map(|v| v.0);
    let (sim, x0, model) = parse_sim(&s)?;
    let search = parse_search(&s)?;
    Ok(RunConfig {
        plant,
        gamma,
        sim,
        x0,
        model,
        search,
    })
}

/// Canonical text form; `parse_config(&format_config(c)) == c`.
pub fn format_config(c: &RunConfig) -> String {
    let p = &c.plant;
    let mut out = String::from("[plant]\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    let f = |v: f64| format!("{v:?}");

    kv("variant", p.variant.name().to_string());
    for (k, v) in [
        ("m1", p.m1),
        ("m2", p.m2),
        ("r", p.r),
        ("l", p.l),
        ("a", p.a),
        ("R", p.big_r),
        ("rho1", p.rho1),
        ("rho2", p.rho2),
        ("cu", p.cu),
        ("cv", p.cv),
        ("f", p.f),
        ("u0", p.u0),
        ("g", p.g),
    ] {
        kv(k, f(v));
    }
    out.push_str("\n[controller]\n");
    if let Some(g) = c.gamma {
        let _ = writeln!(out, "gamma = {}", f(g));
    }
    let s = &c.sim;
    out.push_str("\n[sim]\n");
    for (k, v) in [
        ("h", s.h),
        ("t_max", s.t_max),
        ("eps_conv", s.eps_conv),
        ("hold", s.hold),
        ("max_angle", s.max_angle),
        ("max_norm", s.max_norm),
    ] {
        let _ = writeln!(out, "{k} = {}", f(v));
    }
    let _ = writeln!(out, "record_every = {}", s.record_every);
    let model = match c.model {
        ModelKind::Nonlinear => "nonlinear",
        ModelKind::Linear => "linear",
    };
    let _ = writeln!(out, "model = {model}");
    let x = &c.x0;
    for (k, v) in [
        ("theta0", x.theta),
        ("phi0", x.phi),
        ("dtheta0", x.dtheta),
        ("dphi0", x.dphi),
    ] {
        let _ = writeln!(out, "{k} = {}", f(v));
    }
    if let Some(sp) = &c.search {
        let _ = writeln!(
            out,
            "\n[search]\nray = {}\nlo = {}\nhi = {}\ntol = {}",
            ray_name(&sp.ray),
            f(sp.lo),
            f(sp.hi),
            f(sp.tol)
        );
    }
    out
}
