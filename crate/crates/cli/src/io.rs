//! Sensor CSV ingestion, image files and run directories.

use crate::error::{CliError, CliResult};
use serde::Deserialize;
use std::fs;
use std::path::{Path, PathBuf};
use vskd_core::encoding::{RgbRaster, SensorWindow};

pub const CSV_HEADER: [&str; 5] = ["timestamp", "ax", "ay", "az", "label"];

#[derive(Debug, Deserialize)]
struct Row {
    timestamp: f64,
    ax: f64,
    ay: f64,
    az: f64,
    label: usize,
}

/// Reads `path` and cuts it into non-overlapping windows of `window` rows; a
/// trailing partial window is dropped.
pub fn read_sensor_csv(path: &Path, window: usize) -> CliResult<Vec<SensorWindow>> {
    let file = fs::File::open(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    parse_sensor_csv(file, window)
}

pub fn parse_sensor_csv<R: std::io::Read>(reader: R, window: usize) -> CliResult<Vec<SensorWindow>> {
    if window < 2 {
        return Err(CliError::input("window must be at least 2 samples"));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::input(format!("line 1: {e}")))?.clone();
    if header.is_empty() {
        return Err(CliError::input("input CSV is empty"));
    }
    if header.iter().ne(CSV_HEADER) {
        return Err(CliError::input(format!("line 1: expected header '{}'", CSV_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::input(format!("line {line}: {e}"))
        })?;
        rows.push(row);
    }
    let mut windows = Vec::new();
    for (i, chunk) in rows.chunks_exact(window).enumerate() {
        let label = chunk[0].label;
        if chunk.iter().any(|r| r.label != label) {
            return Err(CliError::input(format!("window {i}: rows carry different labels")));
        }
        let w = SensorWindow::new(
            chunk.iter().map(|r| r.ax).collect(),
            chunk.iter().map(|r| r.ay).collect(),
            chunk.iter().map(|r| r.az).collect(),
            chunk.iter().map(|r| r.timestamp).collect(),
            label,
        )
        .map_err(|e| CliError::input(format!("window {i}: {e}")))?;
        windows.push(w);
    }
    if windows.is_empty() {
        return Err(CliError::input(format!("input has {} data rows, fewer than one window of {window}", rows.len())));
    }
    Ok(windows)
}

pub fn write_png(path: &Path, raster: &RgbRaster) -> CliResult<()> {
    let side = raster.side as u32;
    let img = image::RgbImage::from_raw(side, side, raster.pixels.clone())
        .ok_or_else(|| CliError::artifact("raster size does not match its side"))?;
    img.save(path).map_err(|e| CliError::artifact(format!("cannot write {}: {e}", path.display())))
}

pub fn read_png(path: &Path) -> CliResult<RgbRaster> {
    let img = image::open(path).map_err(|e| CliError::artifact(format!("cannot read {}: {e}", path.display())))?;
    let img = img.to_rgb8();
    if img.width() != img.height() {
        return Err(CliError::artifact(format!("{} is not square", path.display())));
    }
    Ok(RgbRaster { side: img.width() as usize, pixels: img.into_raw() })
}

/// Creates `<out>/<command>-<UTC timestamp>`, suffixed if that name is taken.
pub fn create_run_dir(out: &Path, command: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(out).map_err(|e| CliError::artifact(format!("cannot create {}: {e}", out.display())))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{command}-{stamp}");
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::artifact(format!("cannot create {}: {e}", dir.display()))),
        }
    }
    unreachable!("unbounded suffix search")
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::artifact(format!("cannot write {}: {e}", path.display())))
}
