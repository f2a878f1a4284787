mod common;

use rayserde::sector::{build_template, read_template, write_template, SectorConfig, SectorTemplate};
use rayserde::voxel::Cell;

use common::{polar, theta_bucket, unit_grid};

#[test]
fn every_cell_matches_independent_polar_math() {
    let dims = [4, 16, 16];
    let spec = unit_grid(dims);
    let t = build_template(&spec, &SectorConfig::for_grid(&spec, 60.0).unwrap()).unwrap();
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let cell = Cell::new(z, y, x);
                let (sector, theta, radius) = polar(cell, spec.center, 60.0);
                let (s, key) = t.lookup(cell);
                assert_eq!(s, sector, "{cell:?}");
                assert_eq!(key.layer_rank(), (dims[0] - 1 - z) as u64);
                assert_eq!(key.theta_q(), theta_bucket(theta), "{cell:?}");
                assert_eq!(key.radius_q(), (radius * 16.0).floor() as u64);
            }
        }
    }
}

#[test]
fn off_center_ego_is_respected() {
    let spec = unit_grid([2, 8, 8]).with_center([0.0, 0.0]).unwrap();
    let t = build_template(&spec, &SectorConfig::for_grid(&spec, 90.0).unwrap()).unwrap();
    // everything lies in the first quadrant of an ego at the corner
    assert!(t.sector_ids().iter().all(|&s| s == 0 || s == 1));
    assert_eq!(t.lookup(Cell::new(0, 0, 5)).0, 0);
    assert_eq!(t.lookup(Cell::new(0, 5, 0)).0, 1);
}

#[test]
fn file_round_trip_and_corruption() {
    let spec = unit_grid([3, 12, 10]);
    let t = build_template(&spec, &SectorConfig::for_grid(&spec, 45.0).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.rayt");
    write_template(&t, &path).unwrap();
    assert_eq!(read_template(&path).unwrap(), t);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(SectorTemplate::from_bytes(&bytes).is_err());
    bytes.truncate(10);
    assert!(SectorTemplate::from_bytes(&bytes).is_err());
}
