//! Checkpoint files.
//!
//! Layout: 8 magic bytes, schema version (u32 LE), 64-byte hex architecture
//! fingerprint, parameter count (u64 LE), the parameters as little-endian
//! f32 in layer order, trailer length (u64 LE), then a JSON trailer with the
//! architecture, raster layout and provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sensorgrade_core::raster::RasterConfig;

use crate::model::{check_arch, ModelProvenance, PlannerModel};
use crate::nn::{ArchSpec, Network};
use crate::PlannerError;

pub const MAGIC: &[u8; 8] = b"SGPLNR\r\n";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Trailer {
    arch: ArchSpec,
    raster: RasterConfig,
    provenance: ModelProvenance,
}

pub fn to_bytes(model: &PlannerModel) -> Vec<u8> {
    let trailer = serde_json::to_vec(&Trailer {
        arch: model.net.arch.clone(),
        raster: model.raster.clone(),
        provenance: model.provenance.clone(),
    })
    .expect("trailer serialization is infallible");
    let mut out = Vec::with_capacity(96 + 4 * model.net.params.len() + trailer.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(model.fingerprint().as_bytes());
    out.extend_from_slice(&(model.net.params.len() as u64).to_le_bytes());
    for p in &model.net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&(trailer.len() as u64).to_le_bytes());
    out.extend_from_slice(&trailer);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], PlannerError> {
        if self.bytes.len() - self.pos < n {
            return Err(PlannerError::Checkpoint(format!("file truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, PlannerError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<PlannerModel, PlannerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(PlannerError::Checkpoint("not a planner checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "schema version")?.try_into().unwrap());
    if version != CHECKPOINT_SCHEMA_VERSION {
        return Err(PlannerError::Checkpoint(format!(
            "unsupported checkpoint schema version {version} (expected {CHECKPOINT_SCHEMA_VERSION})"
        )));
    }
    let fingerprint = String::from_utf8(r.take(64, "fingerprint")?.to_vec())
        .map_err(|_| PlannerError::Checkpoint("fingerprint is not text".into()))?;
    let count = r.u64("parameter count")? as usize;
    if count > (bytes.len() - r.pos) / 4 {
        return Err(PlannerError::Checkpoint("file truncated while reading parameters".into()));
    }
    let params: Vec<f32> = r
        .take(4 * count, "parameters")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let trailer_len = r.u64("trailer length")? as usize;
    let trailer_bytes = r.take(trailer_len, "metadata trailer")?;
    if r.pos != bytes.len() {
        return Err(PlannerError::Checkpoint("trailing bytes after metadata".into()));
    }
    let trailer: Trailer = serde_json::from_slice(trailer_bytes)
        .map_err(|e| PlannerError::Checkpoint(format!("metadata trailer: {e}")))?;
    let expected = trailer.arch.fingerprint();
    if expected != fingerprint {
        return Err(PlannerError::Incompatible {
            expected,
            found: fingerprint,
        });
    }
    if count != trailer.arch.param_count() {
        return Err(PlannerError::Checkpoint(format!(
            "parameter count {count} does not match architecture ({})",
            trailer.arch.param_count()
        )));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(PlannerError::NonFinite("checkpoint parameters".into()));
    }
    check_arch(&trailer.raster, &trailer.arch)?;
    Ok(PlannerModel {
        raster: trailer.raster,
        net: Network {
            arch: trailer.arch,
            params,
        },
        provenance: trailer.provenance,
    })
}

pub fn save_model(model: &PlannerModel, path: &Path) -> Result<(), PlannerError> {
    sensorgrade_core::io::write_atomic(path, &to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PlannerModel, PlannerError> {
    let bytes = fs::read(path).map_err(|e| PlannerError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and checks that it reads rasters laid out as `raster`.
pub fn load_model_for(path: &Path, raster: &RasterConfig) -> Result<PlannerModel, PlannerError> {
    let model = load_model(path)?;
    let expected = ArchSpec::standard(raster).fingerprint();
    if model.fingerprint() != expected || &model.raster != raster {
        return Err(PlannerError::Incompatible {
            expected,
            found: model.fingerprint(),
        });
    }
    Ok(model)
}
