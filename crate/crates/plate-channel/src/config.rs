//! Flat key=value run configuration.
//!
//! One setting per line, `#` starts a comment, whitespace around `=` is
//! free. Unknown and duplicate keys are hard errors with the offending
//! line number — a silently ignored typo in `gamma2` would only show up
//! as a wrong convergence rate much later.

use std::path::Path;

use crate::assembly::{Params, UStar};
use crate::error::{Error, Result};
use crate::stepper::{NewtonControls, Scheme, StepControls};

/// Interface forcing selected by the `load` key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadKind {
    None,
    /// g(t, x) = amp · t · sin(2πx) while t ≤ cutoff, then off.
    Pulse,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub nx: usize,
    pub ny: usize,
    pub tau: f64,
    pub t_end: f64,
    pub params: Params,
    pub scheme: Scheme,
    pub ustar: UStar,
    pub contact_floor: f64,
    pub newton: NewtonControls,
    pub load: LoadKind,
    pub load_amp: f64,
    pub load_cutoff: f64,
    /// Write a VTK snapshot every this many steps (0 = never).
    pub snap_every: usize,
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<SimConfig> {
        let mut nx = None;
        let mut ny = None;
        let mut tau = None;
        let mut t_end = None;
        let mut params = Params {
            rho_f: 1.0,
            rho_s: 1.0,
            mu: 0.1,
            gamma1: 0.1,
            gamma2: 0.1,
            gamma3: 0.0,
        };
        let mut scheme = Scheme::SemiImplicit;
        let mut ustar = UStar::TwoNewMinusOld;
        let mut contact_floor = 0.01;
        let mut newton = NewtonControls::default();
        let mut load = LoadKind::None;
        let mut load_amp = 200.0;
        let mut load_cutoff = 0.2;
        let mut snap_every = 0usize;
        let mut seen: Vec<String> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Config(format!("line {lineno}: {msg} in `{raw}`"));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(bad("duplicate key"));
            }
            seen.push(key.to_string());

            let fnum = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| bad(&format!("`{v}` is not a number")))
            };
            let unum = |v: &str| -> Result<usize> {
                v.parse::<usize>()
                    .map_err(|_| bad(&format!("`{v}` is not a nonnegative integer")))
            };

            match key {
                "nx" => nx = Some(unum(value)?),
                "ny" => ny = Some(unum(value)?),
                "tau" => tau = Some(fnum(value)?),
                "t_end" => t_end = Some(fnum(value)?),
                "rho_f" => params.rho_f = fnum(value)?,
                "rho_s" => params.rho_s = fnum(value)?,
                "mu" => params.mu = fnum(value)?,
                "gamma1" => params.gamma1 = fnum(value)?,
                "gamma2" => params.gamma2 = fnum(value)?,
                "gamma3" => params.gamma3 = fnum(value)?,
                "scheme" => {
                    scheme = match value {
                        "semi" => Scheme::SemiImplicit,
                        "full" => Scheme::FullyImplicit,
                        _ => return Err(bad("scheme must be `semi` or `full`")),
                    }
                }
                "ustar" => {
                    ustar = match value {
                        "appendix" => UStar::TwoNewMinusOld,
                        "scheme_r" => UStar::TwoOldMinusNew,
                        _ => return Err(bad("ustar must be `appendix` or `scheme_r`")),
                    }
                }
                "contact_floor" => contact_floor = fnum(value)?,
                "newton_abs" => newton.abs_tol = fnum(value)?,
                "newton_rel" => newton.rel_tol = fnum(value)?,
                "newton_max" => newton.max_iter = unum(value)?,
                "load" => {
                    load = match value {
                        "none" => LoadKind::None,
                        "pulse" => LoadKind::Pulse,
                        _ => return Err(bad("load must be `none` or `pulse`")),
                    }
                }
                "load_amp" => load_amp = fnum(value)?,
                "load_cutoff" => load_cutoff = fnum(value)?,
                "snap_every" => snap_every = unum(value)?,
                _ => return Err(bad("unknown key")),
            }
        }

        fn miss(k: &str) -> Error {
            Error::Config(format!("missing required key `{k}`"))
        }
        let cfg = SimConfig {
            nx: nx.ok_or_else(|| miss("nx"))?,
            ny: ny.ok_or_else(|| miss("ny"))?,
            tau: tau.ok_or_else(|| miss("tau"))?,
            t_end: t_end.ok_or_else(|| miss("t_end"))?,
            params,
            scheme,
            ustar,
            contact_floor,
            newton,
            load,
            load_amp,
            load_cutoff,
            snap_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        SimConfig::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 1 {
            return Err(Error::Config(format!(
                "mesh must be at least 3x1, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.tau > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::Config("tau and t_end must be positive".into()));
        }
        self.params.validate()?;
        if !(self.contact_floor > 0.0 && self.contact_floor < 1.0) {
            return Err(Error::Config("contact_floor must lie in (0, 1)".into()));
        }
        if self.load == LoadKind::Pulse && !(self.load_cutoff > 0.0) {
            return Err(Error::Config("load_cutoff must be positive for a pulse".into()));
        }
        Ok(())
    }

    pub fn controls(&self) -> StepControls {
        StepControls {
            tau: self.tau,
            t_end: self.t_end,
            scheme: self.scheme,
            ustar: self.ustar,
            contact_floor: self.contact_floor,
            newton: self.newton,
        }
    }

    /// The forcing as a closure, if any.
    pub fn load_fn(&self) -> Option<Box<dyn Fn(f64, f64) -> f64 + Sync>> {
        match self.load {
            LoadKind::None => None,
            LoadKind::Pulse => {
                let amp = self.load_amp;
                let cutoff = self.load_cutoff;
                Some(Box::new(move |t: f64, x: f64| {
                    if t <= cutoff {
                        amp * t * (2.0 * std::f64::consts::PI * x).sin()
                    } else {
                        0.0
                    }
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "
# channel with a pressure pulse
nx = 16
ny = 8
tau = 2.5e-3
t_end = 1.0
mu = 0.1
scheme = semi
ustar = scheme_r
load = pulse
load_amp = 200
load_cutoff = 0.2
";

    #[test]
    fn parses_a_full_configuration() {
        let c = SimConfig::parse(GOOD).unwrap();
        assert_eq!((c.nx, c.ny), (16, 8));
        assert_eq!(c.ustar, UStar::TwoOldMinusNew);
        assert_eq!(c.scheme, Scheme::SemiImplicit);
        assert_eq!(c.load, LoadKind::Pulse);
        assert_eq!(c.params.gamma1, 0.1);
        let g = c.load_fn().unwrap();
        assert!(g(0.1, 0.5) > 0.0);
        assert_eq!(g(0.3, 0.5), 0.0);
    }

    #[test]
    fn rejects_unknown_key_with_line_number() {
        let err = SimConfig::parse("nx = 8\nny = 4\ntau = 1e-3\nt_end = 1\ngamma9 = 2\n");
        match err {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("line 5"), "message was: {msg}");
                assert!(msg.contains("unknown key"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_numbers() {
        assert!(matches!(
            SimConfig::parse("nx = 8\nnx = 9\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            SimConfig::parse("nx = eight\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            SimConfig::parse("nx = 8\nny = 4\ntau = 1e-3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn comments_and_spacing_are_free() {
        let c = SimConfig::parse("nx=8 # tight\n  ny   =   4\ntau = 1e-3\nt_end = 0.1\n").unwrap();
        assert_eq!((c.nx, c.ny), (8, 4));
    }
}
