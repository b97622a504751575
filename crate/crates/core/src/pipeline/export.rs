//! Writes a run to disk: `metrics.csv`, `report.json`, `timings.json` and
//! one binary PGM heatmap per method per test frame.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::experiment::{RunOutput, RunReport};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "NA".to_string(),
    }
}

pub fn write_metrics_csv(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "t", "PA", "PU", "PAvPU"])?;
    for m in &report.methods {
        for e in &m.sweep.entries {
            w.write_record([
                m.method.name().to_string(),
                e.t.to_string(),
                cell(e.scores.pa),
                cell(e.scores.pu),
                cell(e.scores.pavpu),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Values in `[0, 1]` quantized to `round(v * 255)`.
pub fn quantize(map: &Array2<f64>) -> Array2<u8> {
    map.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub fn write_pgm(map: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = map.dim();
    let mut out = Vec::with_capacity(h * w + 20);
    write!(out, "P5\n{w} {h}\n255\n")?;
    out.extend(quantize(map).iter());
    fs::write(path, out)?;
    Ok(())
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while bytes.get(*pos).is_some_and(u8::is_ascii_whitespace) {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedPgm(format!("expected a number at byte {start}")))
}

/// Reads an 8-bit P5 image as `height x width` grey levels.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let bytes = fs::read(path)?;
    if !bytes.starts_with(b"P5") {
        return Err(Error::MalformedPgm("missing P5 signature".into()));
    }
    let mut pos = 2;
    let width = pgm_token(&bytes, &mut pos)?;
    let height = pgm_token(&bytes, &mut pos)?;
    let maxval = pgm_token(&bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::MalformedPgm(format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedPgm("missing separator after header".into()));
    }
    let pixels = &bytes[pos + 1..];
    if pixels.len() != width * height {
        return Err(Error::MalformedPgm(format!(
            "expected {} pixel bytes, found {}",
            width * height,
            pixels.len()
        )));
    }
    Ok(Array2::from_shape_vec((height, width), pixels.to_vec()).expect("length checked"))
}

pub fn heatmap_path(out_dir: &Path, method: &str, frame: usize) -> PathBuf {
    out_dir.join(format!("{method}_frame{frame:03}.pgm"))
}

/// Writes every artifact of `output` into `out_dir`, creating it if needed.
pub fn export(output: &RunOutput, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    write_metrics_csv(&output.report, dir.join(METRICS_FILE))?;
    fs::write(dir.join(REPORT_FILE), output.report.to_json()?)?;
    fs::write(
        dir.join(TIMINGS_FILE),
        serde_json::to_string_pretty(&output.timings)?,
    )?;
    for (method, maps) in &output.test_maps {
        for (i, map) in maps.iter().enumerate() {
            write_pgm(map, heatmap_path(dir, method.name(), i))?;
        }
    }
    Ok(())
}
