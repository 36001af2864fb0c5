//! Model persistence: bitwise synthesis round-trips and failure modes.

mod common;

use std::fs;

use agemorph::field::{exp_field, warp};
use agemorph::filter::gaussian_smooth_scalar;
use agemorph::grid::GridSpec;
use agemorph::io::{load_model, save_model, IoError};
use agemorph::model::{build_model, synthesize, AgeSeries};
use agemorph::registration::RegistrationParams;
use agemorph::validation::{random_smooth_field, shepp_logan};
use tempfile::tempdir;

fn tiny_model() -> agemorph::model::AgingModel {
    let g = GridSpec::planar(48, 48).unwrap();
    let base = gaussian_smooth_scalar(&shepp_logan(&g).unwrap(), 1.5);
    let w = random_smooth_field(&g, 0.7, 9.0, 55);
    let step = exp_field(&w).unwrap();
    let t1 = warp(&base, &step).unwrap();
    let t2 = warp(&t1, &step).unwrap();
    let series = AgeSeries::new(vec![base, t1, t2], vec![40.0, 50.0, 60.0]).unwrap();
    let params = RegistrationParams {
        iterations_per_level: vec![20, 15, 10],
        ..Default::default()
    };
    build_model(&series, &params, 2, 0.5).unwrap()
}

#[test]
fn saved_model_synthesizes_bitwise_identically() {
    let model = tiny_model();
    let dir = tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let loaded = load_model(dir.path()).unwrap();
    for age in [model.reference_age, 40.0, 60.0, 35.0, 66.0] {
        let a = synthesize(&model, age).unwrap();
        let b = synthesize(&loaded, age).unwrap();
        assert_eq!(a.data, b.data, "synthesis differs at age {age}");
    }
    assert_eq!(model.gamma, loaded.gamma);
    assert_eq!(model.ages, loaded.ages);
}

#[test]
fn missing_component_is_named() {
    let model = tiny_model();
    let dir = tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    fs::remove_file(dir.path().join("forward_field.mhd")).unwrap();
    match load_model(dir.path()) {
        Err(IoError::MissingComponent { path }) => {
            assert!(path.to_string_lossy().contains("forward_field.mhd"));
        }
        other => panic!("expected missing component, got {other:?}"),
    }
}

#[test]
fn bumped_manifest_version_is_rejected() {
    let model = tiny_model();
    let dir = tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let manifest = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    assert_ne!(text, bumped);
    fs::write(&manifest, bumped).unwrap();
    match load_model(dir.path()) {
        Err(IoError::UnsupportedVersion { found, supported }) => {
            assert_eq!(found, 2);
            assert_eq!(supported, 1);
        }
        other => panic!("expected version error, got {other:?}"),
    }
}

#[test]
fn model_directory_rejects_grid_mismatch() {
    let model = tiny_model();
    let dir = tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    // overwrite the backward field with one on a different grid
    let other = agemorph::grid::VelocityField::zeros(GridSpec::planar(24, 24).unwrap());
    agemorph::io::write_vector_volume(&other, &dir.path().join("backward_field.mhd")).unwrap();
    assert!(matches!(
        load_model(dir.path()),
        Err(IoError::InvalidData { .. })
    ));
}
