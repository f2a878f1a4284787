//! Point-cloud file formats: CSV with an `x,y,z,intensity` header, and raw
//! little-endian `f32` quadruplets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CsvRow {
    x: f64,
    y: f64,
    z: f64,
    intensity: f64,
}

pub fn read_cloud_csv(path: impl AsRef<Path>, scene_id: u64) -> Result<PointCloud> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?;
    if headers.iter().map(str::trim).ne(["x", "y", "z", "intensity"]) {
        return Err(Error::format(
            "header",
            format!("expected `x,y,z,intensity`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let points = reader
        .deserialize::<CsvRow>()
        .map(|r| r.map(|r| Point::new(r.x, r.y, r.z, r.intensity)).map_err(csv_err))
        .collect::<Result<Vec<_>>>()?;
    PointCloud::new(points, scene_id)
}

pub fn write_cloud_csv(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in cloud.points() {
        writer
            .serialize(CsvRow {
                x: p.x,
                y: p.y,
                z: p.z,
                intensity: p.intensity,
            })
            .map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_cloud_bin(path: impl AsRef<Path>, scene_id: u64) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::format(
            "length",
            format!("{} bytes is not a multiple of 16", bytes.len()),
        ));
    }
    let points = bytes
        .chunks_exact(16)
        .map(|q| {
            let f = |i: usize| f32::from_le_bytes(q[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
            Point::new(f(0), f(1), f(2), f(3))
        })
        .collect();
    PointCloud::new(points, scene_id)
}

pub fn write_cloud_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads `.csv` files as CSV and anything else as the binary format.
pub fn read_cloud(path: impl AsRef<Path>, scene_id: u64) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_cloud_csv(path, scene_id),
        _ => read_cloud_bin(path, scene_id),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        PointCloud::new(
            vec![Point::new(1.5, -2.25, 0.5, 0.25), Point::new(40.0, 3.0, 1.0, 1.0)],
            3,
        )
        .unwrap()
    }

    #[test]
    fn csv_and_bin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("c.csv");
        write_cloud_csv(&sample(), &csv_path).unwrap();
        assert_eq!(read_cloud(&csv_path, 3).unwrap(), sample());

        // values chosen to be exact in f32
        let bin_path = dir.path().join("c.bin");
        write_cloud_bin(&sample(), &bin_path).unwrap();
        assert_eq!(read_cloud(&bin_path, 3).unwrap(), sample());
    }

    #[test]
    fn bin_length_must_be_multiple_of_16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        fs::write(&p, [0u8; 17]).unwrap();
        assert!(matches!(read_cloud_bin(&p, 0), Err(Error::Format { field: "length", .. })));
    }

    #[test]
    fn csv_header_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b,c,d\n1,2,3,0\n").unwrap();
        assert!(matches!(read_cloud_csv(&p, 0), Err(Error::Format { field: "header", .. })));
    }
}
