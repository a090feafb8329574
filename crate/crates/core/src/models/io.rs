//! Weight serialization.
//!
//! File layout: magic bytes `SEPADV1\0`, an 8-byte little-endian length, a
//! UTF-8 JSON header (architecture, sources, optional STFT config, seed
//! provenance, tensor manifest), then raw little-endian `f32` blobs in
//! manifest order. Weights are kept at `f32` precision in memory, so the
//! round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::models::{
    ArchitectureId, ConvLayer, ConvTimeWeights, MaskFreqWeights, ModelKind, Provenance,
    SeparationModel, CONV_CHANNELS, HIDDEN, KERNEL,
};

const MAGIC: &[u8; 8] = b"SEPADV1\0";

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: ArchitectureId,
    num_sources: usize,
    source_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stft: Option<StftConfig>,
    provenance: Provenance,
    manifest: Vec<TensorInfo>,
}

/// Tensor (name, shape) list an architecture must provide, in file order.
fn expected_manifest(
    arch: ArchitectureId,
    num_sources: usize,
    bins: usize,
) -> Vec<(String, Vec<usize>)> {
    match arch {
        ArchitectureId::MaskFreq => vec![
            ("enc_w".into(), vec![HIDDEN, bins]),
            ("enc_b".into(), vec![HIDDEN]),
            ("mask_w".into(), vec![num_sources * bins, HIDDEN]),
            ("mask_b".into(), vec![num_sources * bins]),
        ],
        ArchitectureId::ConvTime => {
            let chans = [
                (CONV_CHANNELS, 1usize),
                (CONV_CHANNELS, CONV_CHANNELS),
                (num_sources, CONV_CHANNELS),
            ];
            let mut out = Vec::new();
            for (li, (o, i)) in chans.into_iter().enumerate() {
                out.push((format!("conv{li}_w"), vec![o, i, KERNEL]));
                out.push((format!("conv{li}_b"), vec![o]));
            }
            out
        }
    }
}

fn flatten(kind: &ModelKind) -> Vec<Vec<f64>> {
    match kind {
        ModelKind::MaskFreq(w) => vec![
            w.enc_w.iter().copied().collect(),
            w.enc_b.to_vec(),
            w.mask_w.iter().copied().collect(),
            w.mask_b.to_vec(),
        ],
        ModelKind::ConvTime(w) => {
            let mut out = Vec::new();
            for layer in &w.layers {
                out.push(layer.w.iter().copied().collect());
                out.push(layer.b.to_vec());
            }
            out
        }
    }
}

impl SeparationModel {
    /// Write the model to a weight file.
    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let manifest = expected_manifest(
            self.architecture(),
            self.num_sources(),
            self.stft_config().bins(),
        );
        let header = Header {
            architecture: self.architecture(),
            num_sources: self.num_sources(),
            source_names: self.source_names().to_vec(),
            stft: match self.architecture() {
                ArchitectureId::MaskFreq => Some(*self.stft_config()),
                ArchitectureId::ConvTime => None,
            },
            provenance: self.provenance().clone(),
            manifest: manifest
                .iter()
                .map(|(name, shape)| TensorInfo {
                    name: name.clone(),
                    shape: shape.clone(),
                    dtype: "f32".into(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::format(format!("header encode: {e}")))?;

        let mut w = BufWriter::new(File::create(path.as_ref())?);
        w.write_all(MAGIC)?;
        w.write_all(&(header_json.len() as u64).to_le_bytes())?;
        w.write_all(&header_json)?;
        for blob in flatten(&self.kind) {
            for v in blob {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load a model from a weight file, validating the manifest against the
    /// architecture definition and the payload length against the manifest.
    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path.as_ref())?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("weight file too short for magic"))?;
        if &magic != MAGIC {
            return Err(Error::format("bad magic bytes (not a weight file)"));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)
            .map_err(|_| Error::format("weight file truncated in header length"))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        r.read_exact(&mut header_json)
            .map_err(|_| Error::format("weight file truncated in header"))?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| Error::format(format!("header decode: {e}")))?;

        let stft_cfg = match header.architecture {
            ArchitectureId::MaskFreq => header
                .stft
                .ok_or_else(|| Error::format("mask_freq weight file missing stft config"))?,
            ArchitectureId::ConvTime => header.stft.unwrap_or_default(),
        };
        stft_cfg.validate()?;
        if header.num_sources == 0 {
            return Err(Error::format("header declares zero sources"));
        }
        if header.source_names.len() != header.num_sources {
            return Err(Error::format("source name count mismatch in header"));
        }

        let expected = expected_manifest(header.architecture, header.num_sources, stft_cfg.bins());
        if header.manifest.len() != expected.len() {
            return Err(Error::format(format!(
                "manifest has {} tensors, architecture {} defines {}",
                header.manifest.len(),
                header.architecture,
                expected.len()
            )));
        }
        for (info, (name, shape)) in header.manifest.iter().zip(expected.iter()) {
            if &info.name != name {
                return Err(Error::format(format!(
                    "manifest tensor '{}' where '{}' was expected",
                    info.name, name
                )));
            }
            if &info.shape != shape {
                return Err(Error::format(format!(
                    "tensor '{}' has shape {:?}, architecture defines {:?}",
                    info.name, info.shape, shape
                )));
            }
            if info.dtype != "f32" {
                return Err(Error::format(format!(
                    "tensor '{}' has dtype '{}', only f32 is supported",
                    info.name, info.dtype
                )));
            }
        }

        let total: usize = expected
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != total * 4 {
            return Err(Error::format(format!(
                "payload is {} bytes, manifest requires {}",
                payload.len(),
                total * 4
            )));
        }

        let mut offset = 0usize;
        let mut read_tensor = |count: usize| -> Vec<f64> {
            let out = payload[offset..offset + count * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            offset += count * 4;
            out
        };

        let kind = match header.architecture {
            ArchitectureId::MaskFreq => {
                let bins = stft_cfg.bins();
                let s = header.num_sources;
                let enc_w =
                    Array2::from_shape_vec((HIDDEN, bins), read_tensor(HIDDEN * bins)).unwrap();
                let enc_b = Array1::from_vec(read_tensor(HIDDEN));
                let mask_w =
                    Array2::from_shape_vec((s * bins, HIDDEN), read_tensor(s * bins * HIDDEN))
                        .unwrap();
                let mask_b = Array1::from_vec(read_tensor(s * bins));
                ModelKind::MaskFreq(MaskFreqWeights {
                    enc_w,
                    enc_b,
                    mask_w,
                    mask_b,
                })
            }
            ArchitectureId::ConvTime => {
                let chans = [
                    (CONV_CHANNELS, 1usize, true),
                    (CONV_CHANNELS, CONV_CHANNELS, true),
                    (header.num_sources, CONV_CHANNELS, false),
                ];
                let mut layers = Vec::new();
                for (o, i, tanh) in chans {
                    let w =
                        Array3::from_shape_vec((o, i, KERNEL), read_tensor(o * i * KERNEL))
                            .unwrap();
                    let b = Array1::from_vec(read_tensor(o));
                    layers.push(ConvLayer { w, b, tanh });
                }
                ModelKind::ConvTime(ConvTimeWeights { layers })
            }
        };

        Ok(SeparationModel {
            kind,
            num_sources: header.num_sources,
            source_names: header.source_names,
            stft_cfg,
            provenance: header.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::random_clip;

    #[test]
    fn save_load_round_trip_identical_forward() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [ArchitectureId::MaskFreq, ArchitectureId::ConvTime] {
            let path = dir.path().join(format!("{arch}.sepadv"));
            let model = SeparationModel::init(arch, 2, 21).unwrap();
            model.save_weights(&path).unwrap();
            let loaded = SeparationModel::load_weights(&path).unwrap();
            assert!(model.same_weights(&loaded));

            let probe = random_clip(1, 1500, 77);
            let a = model.forward(&probe).unwrap();
            let b = loaded.forward(&probe).unwrap();
            for (c1, c2) in a.iter().zip(b.iter()) {
                assert_eq!(c1.samples(), c2.samples(), "{arch} outputs differ");
            }

            // save again: byte-identical file
            let path2 = dir.path().join(format!("{arch}-2.sepadv"));
            loaded.save_weights(&path2).unwrap();
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&path2).unwrap()
            );
        }
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.sepadv");
        let model = SeparationModel::init(ArchitectureId::ConvTime, 2, 1).unwrap();
        model.save_weights(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match SeparationModel::load_weights(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("payload")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_manifest_shape_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sepadv");
        let model = SeparationModel::init(ArchitectureId::MaskFreq, 2, 1).unwrap();
        model.save_weights(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[16..16 + header_len]).unwrap();
        let mangled = json.replacen("[64,", "[63,", 1);
        assert_ne!(json, mangled, "test setup: shape not found in header");
        let mut out = Vec::new();
        out.extend_from_slice(&bytes[..8]);
        out.extend_from_slice(&(mangled.len() as u64).to_le_bytes());
        out.extend_from_slice(mangled.as_bytes());
        out.extend_from_slice(&bytes[16 + header_len..]);
        std::fs::write(&path, out).unwrap();
        match SeparationModel::load_weights(&path) {
            Err(Error::Format(msg)) => {
                assert!(msg.contains("enc_w"), "error should name the tensor: {msg}")
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not.sepadv");
        std::fs::write(&path, b"NOTRIGHT........").unwrap();
        assert!(matches!(
            SeparationModel::load_weights(&path),
            Err(Error::Format(_))
        ));
    }
}
