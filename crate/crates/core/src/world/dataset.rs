use std::path::{Path, PathBuf};

use crate::io::{save_manifest, save_scene};
use crate::scene::{DatasetManifest, Quality, Scene};
use crate::seeding::{derive_seed, tag};
use crate::world::{build_map, simulate_scene, ExpertParams, WorldSpec};
use crate::WorldError;

/// Seed of scene `index` in a dataset drawn with `base_seed`.
pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(base_seed, &[tag::SCENE, index as u64])
}

/// One scene on its own procedural map.
pub fn generate_scene(spec: &WorldSpec, expert: &ExpertParams, seed: u64) -> Result<Scene, WorldError> {
    let map_spec = WorldSpec {
        seed: derive_seed(seed, &[tag::MAP]),
        ..spec.clone()
    };
    let map = build_map(&map_spec)?;
    Ok(simulate_scene(&map, spec, expert, seed)?.scene)
}

pub fn generate_scenes(
    spec: &WorldSpec,
    expert: &ExpertParams,
    n: usize,
    base_seed: u64,
) -> Result<Vec<Scene>, WorldError> {
    (0..n).map(|i| generate_scene(spec, expert, scene_seed(base_seed, i))).collect()
}

/// Writes scenes under `dir/scenes/` and a manifest at `dir/manifest.json`;
/// manifest paths are relative to `dir`.
pub fn write_dataset(scenes: &[Scene], dir: &Path, quality: Quality, seed: u64) -> Result<DatasetManifest, WorldError> {
    let mut paths = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let rel = PathBuf::from("scenes").join(format!("{}.json", scene.scene_id));
        save_scene(scene, &dir.join(&rel))?;
        paths.push(rel);
    }
    let manifest = DatasetManifest::new(paths, quality, seed);
    save_manifest(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}
