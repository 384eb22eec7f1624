//! Scene and manifest files.
//!
//! A scene file is a single JSON document:
//! `{schema_version: 1, scene_id, dt_s, map, frames[], provenance}` with
//! lengths in meters and angles in radians. Floats are written with full
//! round-trip precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::scene::{DatasetManifest, Frame, Provenance, Scene, SemanticMap};
use crate::SceneError;

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct SceneDocRef<'a> {
    schema_version: u32,
    scene_id: &'a str,
    dt_s: f64,
    map: &'a SemanticMap,
    frames: &'a [Frame],
    provenance: &'a Provenance,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    schema_version: u32,
    scene_id: String,
    dt_s: f64,
    map: SemanticMap,
    frames: Vec<Frame>,
    provenance: Provenance,
}

pub fn scene_to_string(scene: &Scene) -> String {
    let doc = SceneDocRef {
        schema_version: SCENE_SCHEMA_VERSION,
        scene_id: &scene.scene_id,
        dt_s: scene.dt_s,
        map: &scene.map,
        frames: &scene.frames,
        provenance: &scene.provenance,
    };
    serde_json::to_string(&doc).expect("scene serialization is infallible")
}

pub fn scene_from_str(text: &str, origin: &Path) -> Result<Scene, SceneError> {
    let doc: SceneDoc = parse_json(text, origin)?;
    if doc.schema_version != SCENE_SCHEMA_VERSION {
        return Err(SceneError::Schema {
            found: doc.schema_version,
            expected: SCENE_SCHEMA_VERSION,
        });
    }
    let scene = Scene {
        scene_id: doc.scene_id,
        dt_s: doc.dt_s,
        frames: doc.frames,
        map: doc.map,
        provenance: doc.provenance,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), SceneError> {
    write_atomic(path, scene_to_string(scene).as_bytes())
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::io(path, e))?;
    scene_from_str(&text, path)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), SceneError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialization is infallible");
    write_atomic(path, text.as_bytes())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::io(path, e))?;
    let m: DatasetManifest = parse_json(&text, path)?;
    m.validate()?;
    Ok(m)
}

/// Loads every scene of a manifest. Relative scene paths resolve against the
/// manifest's directory.
pub fn load_manifest_scenes(manifest: &DatasetManifest, base: &Path) -> Result<Vec<Scene>, SceneError> {
    manifest
        .scene_paths
        .iter()
        .map(|p| load_scene(&base.join(p)))
        .collect()
}

/// Parses JSON, reporting the field path and line/column on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T, SceneError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        SceneError::Parse {
            path: origin.display().to_string(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| SceneError::Parse {
        path: origin.display().to_string(),
        line: e.line(),
        column: e.column(),
        field: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

/// Writes through a sibling temp file so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SceneError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| SceneError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(|e| SceneError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| SceneError::io(&tmp, e))?;
    f.sync_all().map_err(|e| SceneError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SceneError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fixtures::simple_scene;

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let mut s = simple_scene(12);
        s.frames[3].agents[0].bbox.center.x = 0.1 + 0.2;
        save_scene(&s, &p).unwrap();
        assert_eq!(load_scene(&p).unwrap(), s);
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let text = scene_to_string(&simple_scene(5));
        let cut = &text[..text.len() / 2];
        match scene_from_str(cut, Path::new("cut.json")) {
            Err(SceneError::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_field_type_names_field() {
        let text = scene_to_string(&simple_scene(2)).replacen("\"dt_s\":0.1", "\"dt_s\":\"x\"", 1);
        match scene_from_str(&text, Path::new("bad.json")) {
            Err(SceneError::Parse { field, .. }) => assert_eq!(field, "dt_s"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn index_gap_in_file_is_validation_error() {
        let mut s = simple_scene(6);
        s.frames.remove(2);
        let text = scene_to_string(&s);
        match scene_from_str(&text, Path::new("gap.json")) {
            Err(SceneError::Invariant { invariant, .. }) => assert_eq!(invariant, "frames contiguous"),
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn schema_version_checked() {
        let text = scene_to_string(&simple_scene(2)).replacen("\"schema_version\":1", "\"schema_version\":2", 1);
        assert!(matches!(
            scene_from_str(&text, Path::new("v2.json")),
            Err(SceneError::Schema { found: 2, .. })
        ));
    }
}
