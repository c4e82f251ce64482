//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key below is
//! optional; command-line flags win over the file, and the file wins over the
//! subcommand defaults.
//!
//! | key | meaning |
//! |-----|---------|
//! | `b`, `A`, `xstar` | equation parameter, lefton amplitude and centre |
//! | `length`, `n` | periodic cell length and sample count |
//! | `dt`, `T`, `stride` | time step, final time, steps between snapshots |
//! | `window` | half-width of the weighted window (modulation, coercivity) |
//! | `seed` | seed for randomized verification fields |
//! | `form` | `momentum`, `velocity` or `linearized` |
//! | `initial` | `lefton`, `perturbed`, `gaussian` or `peakon` |
//! | `delta`, `centre`, `shape` | bump size, position and `sech`/`gauss` shape |
//! | `amplitude`, `width` | Gaussian or peakon amplitude, Gaussian width |
//! | `dealias`, `guard`, `svg` | booleans |
//! | `input` | stored trajectory for `modulate` |

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bfamily_core::evolution::{BumpShape, Form, InitialCondition, SimConfig};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub b: Option<f64>,
    pub amplitude: Option<f64>,
    pub x_star: Option<f64>,
    pub length: Option<f64>,
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub stride: Option<usize>,
    pub window: Option<f64>,
    pub seed: Option<u64>,
    pub form: Option<Form>,
    pub initial: Option<String>,
    pub delta: Option<f64>,
    pub centre: Option<f64>,
    pub shape: Option<BumpShape>,
    pub data_amplitude: Option<f64>,
    pub width: Option<f64>,
    pub dealias: Option<bool>,
    pub guard: Option<bool>,
    pub svg: Option<bool>,
    pub input: Option<PathBuf>,
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| UsageError(format!("`{key}` expects a number, got `{v}`")).into())
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(UsageError(format!("`{key}` expects true or false, got `{v}`")).into()),
    }
}

pub fn parse_form(v: &str) -> Result<Form> {
    Ok(match v {
        "momentum" => Form::Momentum,
        "velocity" => Form::Velocity,
        "linearized" => Form::Linearized,
        _ => bail!(UsageError(format!("unknown form `{v}`"))),
    })
}

fn parse_shape(v: &str) -> Result<BumpShape> {
    Ok(match v {
        "sech" => BumpShape::Sech,
        "gauss" => BumpShape::Gauss,
        _ => bail!(UsageError(format!("unknown bump shape `{v}`"))),
    })
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(UsageError(format!("line {}: expected `key = value`", lineno + 1)));
            };
            let (key, v) = (key.trim(), value.trim());
            s.set(key, v).with_context(|| format!("line {}", lineno + 1))?;
        }
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "b" => self.b = Some(number(key, v)?),
            "A" => self.amplitude = Some(number(key, v)?),
            "xstar" => self.x_star = Some(number(key, v)?),
            "length" => self.length = Some(number(key, v)?),
            "n" => self.n = Some(number(key, v)?),
            "dt" => self.dt = Some(number(key, v)?),
            "T" => self.t_final = Some(number(key, v)?),
            "stride" => self.stride = Some(number(key, v)?),
            "window" => self.window = Some(number(key, v)?),
            "seed" => self.seed = Some(number(key, v)?),
            "form" => self.form = Some(parse_form(v)?),
            "initial" => match v {
                "lefton" | "perturbed" | "gaussian" | "peakon" => self.initial = Some(v.to_string()),
                _ => bail!(UsageError(format!("unknown initial condition `{v}`"))),
            },
            "delta" => self.delta = Some(number(key, v)?),
            "centre" => self.centre = Some(number(key, v)?),
            "shape" => self.shape = Some(parse_shape(v)?),
            "amplitude" => self.data_amplitude = Some(number(key, v)?),
            "width" => self.width = Some(number(key, v)?),
            "dealias" => self.dealias = Some(boolean(key, v)?),
            "guard" => self.guard = Some(boolean(key, v)?),
            "svg" => self.svg = Some(boolean(key, v)?),
            "input" => self.input = Some(PathBuf::from(v)),
            _ => bail!(UsageError(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Fills every unset field of `self` from `base`.
    pub fn or(self, base: Settings) -> Settings {
        Settings {
            b: self.b.or(base.b),
            amplitude: self.amplitude.or(base.amplitude),
            x_star: self.x_star.or(base.x_star),
            length: self.length.or(base.length),
            n: self.n.or(base.n),
            dt: self.dt.or(base.dt),
            t_final: self.t_final.or(base.t_final),
            stride: self.stride.or(base.stride),
            window: self.window.or(base.window),
            seed: self.seed.or(base.seed),
            form: self.form.or(base.form),
            initial: self.initial.or(base.initial),
            delta: self.delta.or(base.delta),
            centre: self.centre.or(base.centre),
            shape: self.shape.or(base.shape),
            data_amplitude: self.data_amplitude.or(base.data_amplitude),
            width: self.width.or(base.width),
            dealias: self.dealias.or(base.dealias),
            guard: self.guard.or(base.guard),
            svg: self.svg.or(base.svg),
            input: self.input.or(base.input),
        }
    }

    /// Overrides the fields of `c` that are set here.
    pub fn apply(&self, c: &mut SimConfig) -> Result<()> {
        macro_rules! put {
            ($field:ident => $target:expr) => {
                if let Some(v) = self.$field {
                    $target = v;
                }
            };
        }
        put!(b => c.b);
        put!(amplitude => c.amplitude);
        put!(x_star => c.x_star);
        put!(length => c.grid.length);
        put!(n => c.grid.count);
        put!(dt => c.dt);
        put!(t_final => c.t_final);
        put!(stride => c.stride);
        put!(form => c.form);
        put!(dealias => c.dealias);
        put!(guard => c.positivity_guard);
        c.initial = self.initial_condition(&c.initial)?;
        c.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(())
    }

    fn initial_condition(&self, current: &InitialCondition) -> Result<InitialCondition> {
        let kind = match (&self.initial, current) {
            (Some(k), _) => k.as_str(),
            (None, InitialCondition::Lefton) if self.delta.is_some() => "perturbed",
            (None, InitialCondition::Lefton) => "lefton",
            (None, InitialCondition::LeftonPerturbed { .. }) => "perturbed",
            (None, InitialCondition::Gaussian { .. }) => "gaussian",
            (None, InitialCondition::Peakon { .. }) => "peakon",
            (None, InitialCondition::Samples { .. }) => return Ok(current.clone()),
        };
        Ok(match kind {
            "lefton" => InitialCondition::Lefton,
            "perturbed" => {
                let (d0, c0, s0) = match current {
                    InitialCondition::LeftonPerturbed { delta, centre, shape } => (*delta, *centre, *shape),
                    _ => (1e-2, 2.0, BumpShape::Gauss),
                };
                InitialCondition::LeftonPerturbed {
                    delta: self.delta.unwrap_or(d0),
                    centre: self.centre.unwrap_or(c0),
                    shape: self.shape.unwrap_or(s0),
                }
            }
            "gaussian" => {
                let (a0, w0) = match current {
                    InitialCondition::Gaussian { amplitude, width } => (*amplitude, *width),
                    _ => (1.0, 5.0),
                };
                InitialCondition::Gaussian {
                    amplitude: self.data_amplitude.unwrap_or(a0),
                    width: self.width.unwrap_or(w0),
                }
            }
            _ => {
                let (c0, x0) = match current {
                    InitialCondition::Peakon { c, x0 } => (*c, *x0),
                    _ => (1.0, 0.0),
                };
                InitialCondition::Peakon { c: self.data_amplitude.unwrap_or(c0), x0: self.centre.unwrap_or(x0) }
            }
        })
    }
}
