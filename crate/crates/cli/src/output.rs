use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bfamily_core::evolution::{Form, SimConfig};
use bfamily_core::{Field, GridSpec};
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// A float rendered with 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Compact JSON with every float written like [`num`].
struct Sig17;

impl serde_json::ser::Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(v))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub dt: f64,
    pub t_final: f64,
    pub stride: usize,
    pub form: Form,
    pub dealias: bool,
    pub integrator: String,
}

impl Scheme {
    pub fn of(c: &SimConfig) -> Self {
        Scheme {
            dt: c.dt,
            t_final: c.t_final,
            stride: c.stride,
            form: c.form,
            dealias: c.dealias,
            integrator: "rk4, pseudospectral".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub seed: u64,
    pub version: String,
    pub grid: Option<GridSpec>,
    pub scheme: Vec<Scheme>,
    pub passed: bool,
    /// Paths relative to `output_dir`, including the manifest itself.
    pub files: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

/// Sidecar describing a raw little-endian `f64` snapshot dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpSidecar {
    pub data: String,
    pub encoding: String,
    pub snapshots: usize,
    pub samples: usize,
    pub variable: String,
    pub times: Vec<f64>,
    pub config: SimConfig,
}

impl DumpSidecar {
    pub fn sidecar_path(data: &Path) -> PathBuf {
        data.with_extension("json")
    }
}

/// Collects the files written for one command.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    svg: bool,
}

impl Outputs {
    pub fn create(dir: &Path, svg: bool) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| UsageError(format!("cannot create output directory {}: {e}", dir.display())))?;
        let probe = dir.join(".write-test");
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| UsageError(format!("output directory {} is not writable: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new(), svg })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &to_json(value)?)
    }

    /// Writes numeric columns of equal length; boolean columns go in as 0/1.
    pub fn csv(&mut self, name: &str, columns: &[(&str, Column<'_>)]) -> Result<()> {
        let rows = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
        let mut s = columns.iter().map(|(h, _)| *h).collect::<Vec<_>>().join(",");
        s.push('\n');
        for r in 0..rows {
            let cells: Vec<String> = columns.iter().map(|(_, c)| c.cell(r)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        self.write(name, s.as_bytes())
    }

    pub fn dump(&mut self, name: &str, states: &[Field], times: &[f64], config: &SimConfig) -> Result<()> {
        let samples = states.first().map_or(0, |f| f.len());
        let mut bytes = Vec::with_capacity(states.len() * samples * 8);
        for v in states.iter().flat_map(|f| f.iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.write(name, &bytes)?;
        let sidecar = DumpSidecar {
            data: name.to_string(),
            encoding: "f64-le, row-major (snapshot, sample)".into(),
            snapshots: states.len(),
            samples,
            variable: match config.form {
                Form::Momentum => "m",
                Form::Velocity => "u",
                Form::Linearized => "v",
            }
            .into(),
            times: times.to_vec(),
            config: config.clone(),
        };
        let side = DumpSidecar::sidecar_path(Path::new(name));
        self.json(&side.to_string_lossy(), &sidecar)
    }

    /// Line plot, written only when plots were requested.
    pub fn svg(&mut self, name: &str, title: &str, x: &[f64], series: &[(&str, &[f64])]) -> Result<()> {
        if !self.svg {
            return Ok(());
        }
        let doc = plot(title, x, series);
        self.write(name, doc.as_bytes())
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        self.files.push(MANIFEST.to_string());
        manifest.files = self.files.clone();
        let bytes = to_json(&manifest)?;
        let path = self.dir.join(MANIFEST);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

pub enum Column<'a> {
    F(&'a [f64]),
    B(&'a [bool]),
}

impl Column<'_> {
    fn len(&self) -> usize {
        match self {
            Column::F(v) => v.len(),
            Column::B(v) => v.len(),
        }
    }

    fn cell(&self, r: usize) -> String {
        match self {
            Column::F(v) => v.get(r).map(|x| num(*x)).unwrap_or_default(),
            Column::B(v) => v.get(r).map(|b| u8::from(*b).to_string()).unwrap_or_default(),
        }
    }
}

pub fn read_dump(path: &Path) -> Result<(DumpSidecar, Vec<Field>)> {
    let side_path = DumpSidecar::sidecar_path(path);
    let text = fs::read_to_string(&side_path)
        .map_err(|e| UsageError(format!("cannot read sidecar {}: {e}", side_path.display())))?;
    let side: DumpSidecar = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("malformed sidecar {}: {e}", side_path.display())))?;
    let bytes = fs::read(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() != side.snapshots * side.samples * 8 {
        return Err(UsageError(format!(
            "{} holds {} bytes, the sidecar describes {} x {} doubles",
            path.display(),
            bytes.len(),
            side.snapshots,
            side.samples
        ))
        .into());
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight bytes")))
        .collect();
    let states = values.chunks(side.samples.max(1)).map(|c| Field::new(c.to_vec())).collect();
    Ok((side, states))
}

fn plot(title: &str, x: &[f64], series: &[(&str, &[f64])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 40.0;
    let finite = |v: &&f64| v.is_finite();
    let (x0, x1) = bounds(x.iter().filter(finite));
    let (y0, y1) = bounds(series.iter().flat_map(|(_, s)| s.iter()).filter(finite));
    let sx = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (k, (label, ys)) in series.iter().enumerate() {
        let pts: Vec<String> = x
            .iter()
            .zip(ys.iter())
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b)))
            .collect();
        let colour = colours[k % colours.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{colour}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * (k as f64 + 1.0),
            escape(label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">x: [{x0:.4}, {x1:.4}]  y: [{y0:.4e}, {y1:.4e}]</text>"#,
        H - 12.0
    );
    s.push_str("</svg>\n");
    s
}

fn bounds<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
