//! Flat text description of an arm and its solver settings.
//!
//! One `key: value` pair per line. `#` starts a comment, blank lines are
//! ignored, keys are case-sensitive and may appear once, except `frozen`.
//!
//! ```text
//! num_links: 16                 # required, >= 1
//! link_length: 1.0              # default 1
//! damping: 0.1                  # DLS factor k, default 0.1
//! dt: 1.0                       # default 1
//! position_tolerance: 1.6e-3    # default 1e-4 * num_links * link_length
//! orientation_tolerance: 1e-3   # radians, default 1e-3
//! max_iterations: 2000
//! stall_window: 50
//! stall_epsilon: 1e-12
//! step_clamp: 0.5
//! seed: 7                       # default 0
//! H: 1,-1,-1,1,0,0,0,0,-1,1,1,0,0,0,-1,1
//! frozen: 2 0.1 -0.2            # link phi theta, link numbers start at 1
//! ```
//!
//! Without an `H` line the arm starts in state 0 of the halving controller
//! (one head at the base, plus a head after every damaged link). Links
//! listed under `frozen` are damaged; with an `H` line they must be exactly
//! the `-1` entries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid_arg, KinematicsError, Result};
use crate::ik::SolverSettings;
use crate::kinematics::{modes_from_codes, ArmLayout, FrozenAngles, LinkMode};
use crate::meta::ControllerState;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmConfigFile {
    pub num_links: usize,
    pub link_length: f64,
    pub settings: SolverSettings,
    /// Explicit mode vector, if given.
    pub modes: Option<Vec<LinkMode>>,
    /// Zero-based link index to frozen angles.
    pub frozen: BTreeMap<usize, FrozenAngles>,
    pub seed: u64,
}

const KEYS: [&str; 13] = [
    "num_links",
    "link_length",
    "damping",
    "dt",
    "position_tolerance",
    "orientation_tolerance",
    "max_iterations",
    "stall_window",
    "stall_epsilon",
    "step_clamp",
    "seed",
    "H",
    "frozen",
];

fn at_line(line: usize, msg: impl std::fmt::Display) -> KinematicsError {
    invalid_arg(format!("config line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| at_line(line, format!("cannot parse {key} value '{value}'")))
}

impl ArmConfigFile {
    /// Default settings for an undamaged arm in state 0.
    pub fn new(num_links: usize, link_length: f64) -> Self {
        Self {
            num_links,
            link_length,
            settings: SolverSettings::for_arm(num_links, link_length),
            modes: None,
            frozen: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid_arg(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut frozen_lines = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once(':')
                .ok_or_else(|| at_line(line, "expected 'key: value'"))?;
            let key = key.trim();
            let value = value.trim();
            let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
                return Err(at_line(line, format!("unknown key '{key}'")));
            };
            if known == "frozen" {
                frozen_lines.push((line, value));
            } else if values.insert(known, (line, value)).is_some() {
                return Err(at_line(line, format!("duplicate key '{key}'")));
            }
        }

        let (line, raw) = values
            .get("num_links")
            .copied()
            .ok_or_else(|| invalid_arg("config: num_links is required"))?;
        let num_links: usize = parse_num(line, "num_links", raw)?;
        if num_links == 0 {
            return Err(at_line(line, "num_links must be at least 1"));
        }
        let link_length = match values.get("link_length") {
            Some(&(line, raw)) => parse_num(line, "link_length", raw)?,
            None => 1.0,
        };
        let mut cfg = Self::new(num_links, link_length);

        let float = |key: &str, slot: &mut f64| -> Result<()> {
            if let Some(&(line, raw)) = values.get(key) {
                *slot = parse_num(line, key, raw)?;
            }
            Ok(())
        };
        let s = &mut cfg.settings;
        float("damping", &mut s.damping)?;
        float("dt", &mut s.dt)?;
        float("position_tolerance", &mut s.position_tolerance)?;
        float("orientation_tolerance", &mut s.orientation_tolerance)?;
        float("stall_epsilon", &mut s.stall_epsilon)?;
        float("step_clamp", &mut s.step_clamp)?;
        if let Some(&(line, raw)) = values.get("max_iterations") {
            s.max_iterations = parse_num(line, "max_iterations", raw)?;
        }
        if let Some(&(line, raw)) = values.get("stall_window") {
            s.stall_window = parse_num(line, "stall_window", raw)?;
        }
        if let Some(&(line, raw)) = values.get("seed") {
            cfg.seed = parse_num(line, "seed", raw)?;
        }

        for (line, value) in frozen_lines {
            let fields: Vec<&str> = value.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(at_line(line, "frozen needs 'link phi theta'"));
            }
            let link: usize = parse_num(line, "frozen link", fields[0])?;
            if link == 0 || link > num_links {
                return Err(at_line(
                    line,
                    format!("frozen link {link} outside 1..={num_links}"),
                ));
            }
            let phi: f64 = parse_num(line, "frozen phi", fields[1])?;
            let theta: f64 = parse_num(line, "frozen theta", fields[2])?;
            if cfg
                .frozen
                .insert(link - 1, FrozenAngles::new(phi, theta))
                .is_some()
            {
                return Err(at_line(line, format!("link {link} frozen twice")));
            }
        }

        if let Some(&(line, raw)) = values.get("H") {
            let codes = raw
                .split(',')
                .map(|c| parse_num::<i64>(line, "H", c.trim()))
                .collect::<Result<Vec<_>>>()?;
            if codes.len() != num_links {
                return Err(at_line(
                    line,
                    format!("H has {} entries, num_links is {num_links}", codes.len()),
                ));
            }
            cfg.modes = Some(modes_from_codes(&codes)?);
        }

        cfg.settings.validate()?;
        cfg.layout()?;
        Ok(cfg)
    }

    /// Controller state matching the configured structure.
    pub fn controller_state(&self) -> Result<ControllerState> {
        match &self.modes {
            Some(_) => Ok(ControllerState::from_layout(&self.layout()?)),
            None => ControllerState::with_damage(self.num_links, self.frozen.clone()),
        }
    }

    pub fn layout(&self) -> Result<ArmLayout> {
        match &self.modes {
            Some(modes) => ArmLayout::new(self.link_length, modes.clone(), self.frozen.clone()),
            None => self.controller_state()?.layout(self.link_length),
        }
    }

    /// Serializes back to the text format; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let s = &self.settings;
        let mut out = String::new();
        let _ = writeln!(out, "num_links: {}", self.num_links);
        let _ = writeln!(out, "link_length: {:?}", self.link_length);
        let _ = writeln!(out, "damping: {:?}", s.damping);
        let _ = writeln!(out, "dt: {:?}", s.dt);
        let _ = writeln!(out, "position_tolerance: {:?}", s.position_tolerance);
        let _ = writeln!(out, "orientation_tolerance: {:?}", s.orientation_tolerance);
        let _ = writeln!(out, "max_iterations: {}", s.max_iterations);
        let _ = writeln!(out, "stall_window: {}", s.stall_window);
        let _ = writeln!(out, "stall_epsilon: {:?}", s.stall_epsilon);
        let _ = writeln!(out, "step_clamp: {:?}", s.step_clamp);
        let _ = writeln!(out, "seed: {}", self.seed);
        if let Some(modes) = &self.modes {
            let codes: Vec<String> = modes.iter().map(|m| m.code().to_string()).collect();
            let _ = writeln!(out, "H: {}", codes.join(","));
        }
        for (link, a) in &self.frozen {
            let _ = writeln!(out, "frozen: {} {:?} {:?}", link + 1, a.phi, a.theta);
        }
        out
    }
}
