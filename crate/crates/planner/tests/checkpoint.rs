use std::fs;
use std::path::PathBuf;

use sensorgrade_core::raster::{rasterize, RasterConfig};
use sensorgrade_core::world::{generate_scene, ExpertParams, WorldSpec};
use sensorgrade_planner::checkpoint::{from_bytes, to_bytes, MAGIC};
use sensorgrade_planner::nn::ArchSpec;
use sensorgrade_planner::{load_model, load_model_for, save_model, PlannerError, PlannerModel};

fn raster() -> RasterConfig {
    RasterConfig {
        size_px: 32,
        resolution: 2.0,
        history_frames: 3,
    }
}

fn golden_input() -> sensorgrade_core::raster::Raster {
    let scene = generate_scene(&WorldSpec::default(), &ExpertParams::default(), 4242).unwrap();
    rasterize(&scene, 100, &raster()).unwrap()
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = PlannerModel::standard(&raster(), 9).unwrap();
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, model);
    let input = golden_input();
    assert_eq!(loaded.forward(&input).unwrap(), model.forward(&input).unwrap());
    assert_eq!(load_model_for(&path, &raster()).unwrap(), model);
}

#[test]
fn every_truncation_is_rejected() {
    let model = PlannerModel::standard(&raster(), 9).unwrap();
    let bytes = to_bytes(&model);
    assert_eq!(&bytes[..8], MAGIC);
    let cuts: Vec<usize> = (0..200).chain((200..bytes.len()).step_by(97)).chain([bytes.len() - 1]).collect();
    for cut in cuts {
        assert!(from_bytes(&bytes[..cut]).is_err(), "accepted {cut} of {} bytes", bytes.len());
    }
    let mut extended = bytes.clone();
    extended.push(0);
    assert!(from_bytes(&extended).is_err());
}

#[test]
fn corrupt_files_are_rejected() {
    let model = PlannerModel::standard(&raster(), 9).unwrap();
    let bytes = to_bytes(&model);
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(from_bytes(&bad_magic), Err(PlannerError::Checkpoint(_))));
    let mut bad_version = bytes.clone();
    bad_version[8] = 99;
    assert!(matches!(from_bytes(&bad_version), Err(PlannerError::Checkpoint(_))));
    let mut nan = bytes.clone();
    let first_param = 8 + 4 + 64 + 8;
    nan[first_param..first_param + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(from_bytes(&nan), Err(PlannerError::NonFinite(_))));
    let missing = PathBuf::from("/nonexistent/model.ckpt");
    assert!(matches!(load_model(&missing), Err(PlannerError::Io { .. })));
}

#[test]
fn fingerprint_mismatch_is_explicit() {
    let model = PlannerModel::standard(&raster(), 9).unwrap();
    let mut bytes = to_bytes(&model);
    // Replace the stored fingerprint with that of another architecture.
    let other = ArchSpec::standard(&RasterConfig {
        size_px: 64,
        ..raster()
    })
    .fingerprint();
    bytes[12..76].copy_from_slice(other.as_bytes());
    match from_bytes(&bytes) {
        Err(PlannerError::Incompatible { expected, found }) => {
            assert_eq!(expected, model.fingerprint());
            assert_eq!(found, other);
        }
        other => panic!("expected incompatibility, got {other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_model(&model, &path).unwrap();
    let wider = RasterConfig {
        size_px: 64,
        ..raster()
    };
    assert!(matches!(load_model_for(&path, &wider), Err(PlannerError::Incompatible { .. })));
}

#[test]
fn golden_forward_output() {
    let model = PlannerModel::standard(&raster(), 2024).unwrap();
    let out = model.forward(&golden_input()).unwrap().to_flat();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_forward.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, serde_json::to_string_pretty(&out).unwrap()).unwrap();
    }
    let golden: Vec<f64> = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(golden.len(), out.len());
    for (g, o) in golden.iter().zip(&out) {
        assert!((g - o).abs() <= 1e-5 * g.abs().max(1.0), "{g} vs {o}");
    }
}
