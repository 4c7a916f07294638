//! On-disk spectrogram cache.
//!
//! Layout under a dataset's cache directory:
//!
//! ```text
//! <cache_dir>/<config_hash>/manifest.tsv
//! <cache_dir>/<config_hash>/<clip>-<digest>_<index>.spec
//! ```
//!
//! Each `.spec` file is `FSPG`, a u32 version, the 8-byte config hash, u32
//! mel bins, u32 frames, then row-major little-endian `f32` values.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::DatasetIndex;
use super::segment::segment_samples;
use super::spectrogram::{SpectrogramConfig, SpectrogramExtractor};
use super::wav::{read_wav_mono, resample_linear};
use crate::error::{Error, Result};
use crate::types::{subclip_id, Spectrogram};

const MAGIC: &[u8; 4] = b"FSPG";
const VERSION: u32 = 1;
const MANIFEST_MAGIC: &str = "#fsaudio-cache v1";
const ENTRY_HEADER: &str = "subclip_id\tparent_id\tclass\tfile\tconfig_hash";
const ERRORS_MARKER: &str = "#errors";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub subclip_id: String,
    pub parent_id: String,
    pub class: String,
    pub file: String,
    pub config_hash: String,
}

impl CacheEntry {
    /// Sub-clip index, recovered from the `parent#index` id.
    pub fn index(&self) -> usize {
        self.subclip_id
            .rsplit_once('#')
            .and_then(|(_, i)| i.parse().ok())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheError {
    pub clip_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub dataset_id: String,
    pub config: SpectrogramConfig,
    pub config_hash: String,
    /// Directory holding the manifest and the `.spec` files.
    #[serde(skip)]
    pub root: PathBuf,
    pub entries: Vec<CacheEntry>,
    pub errors: Vec<CacheError>,
    /// Files written / reused by the run that produced this value.
    #[serde(skip)]
    pub written: usize,
    #[serde(skip)]
    pub skipped: usize,
}

impl CacheManifest {
    pub fn manifest_path(root: &Path) -> PathBuf {
        root.join("manifest.tsv")
    }

    pub fn entry_path(&self, entry: &CacheEntry) -> PathBuf {
        self.root.join(&entry.file)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MANIFEST_MAGIC}");
        let _ = writeln!(out, "#dataset_id\t{}", self.dataset_id);
        let _ = writeln!(out, "#config_hash\t{}", self.config_hash);
        let _ = writeln!(
            out,
            "#config\t{}",
            serde_json::to_string(&self.config).expect("config serialises")
        );
        let _ = writeln!(out, "{ENTRY_HEADER}");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.subclip_id, e.parent_id, e.class, e.file, e.config_hash
            );
        }
        let _ = writeln!(out, "{ERRORS_MARKER}");
        let _ = writeln!(out, "clip_id\tmessage");
        for e in &self.errors {
            let _ = writeln!(out, "{}\t{}", e.clip_id, e.message.replace(['\t', '\n'], " "));
        }
        out
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let bad = |m: &str| Error::CorruptCache {
            path: Self::manifest_path(root),
            message: m.to_string(),
        };
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(bad("missing manifest header"));
        }
        let mut meta = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(&format!("#{key}\t"))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}` header")))
        };
        let dataset_id = meta("dataset_id")?;
        let config_hash = meta("config_hash")?;
        let config: SpectrogramConfig = serde_json::from_str(&meta("config")?)?;
        if lines.next() != Some(ENTRY_HEADER) {
            return Err(bad("missing column header"));
        }
        let mut entries = Vec::new();
        let mut errors = Vec::new();
        let mut in_errors = false;
        for line in lines {
            if line == ERRORS_MARKER {
                in_errors = true;
                continue;
            }
            if line.is_empty() || (in_errors && line == "clip_id\tmessage") {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if in_errors {
                errors.push(CacheError {
                    clip_id: f[0].to_string(),
                    message: f.get(1).unwrap_or(&"").to_string(),
                });
            } else {
                if f.len() != 5 {
                    return Err(bad(&format!("malformed entry `{line}`")));
                }
                entries.push(CacheEntry {
                    subclip_id: f[0].into(),
                    parent_id: f[1].into(),
                    class: f[2].into(),
                    file: f[3].into(),
                    config_hash: f[4].into(),
                });
            }
        }
        Ok(CacheManifest {
            dataset_id,
            config,
            config_hash,
            root: root.to_path_buf(),
            entries,
            errors,
            written: 0,
            skipped: 0,
        })
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = Self::manifest_path(root);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, root)
    }

    /// Locates the cache for `config` under a dataset cache directory.
    pub fn open(cache_dir: &Path, config: &SpectrogramConfig) -> Result<Self> {
        Self::load(&cache_dir.join(config.config_hash()))
    }
}

fn file_name(clip_id: &str, index: usize) -> String {
    let safe: String = clip_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') {
                c
            } else {
                '_'
            }
        })
        .take(64)
        .collect();
    let digest = hex::encode(&Sha256::digest(clip_id.as_bytes())[..4]);
    format!("{safe}-{digest}_{index}.spec")
}

fn hash_bytes(config_hash: &str) -> [u8; 8] {
    let mut out = [0u8; 8];
    if let Ok(raw) = hex::decode(config_hash) {
        for (o, b) in out.iter_mut().zip(raw) {
            *o = b;
        }
    }
    out
}

pub fn encode_spectrogram(spec: &Spectrogram, config_hash: &str) -> Vec<u8> {
    let (mels, frames) = spec.shape();
    let mut buf = Vec::with_capacity(24 + 4 * mels * frames);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&hash_bytes(config_hash));
    buf.extend_from_slice(&(mels as u32).to_le_bytes());
    buf.extend_from_slice(&(frames as u32).to_le_bytes());
    for v in spec.0.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_spectrogram(bytes: &[u8], expected_hash: Option<&str>) -> std::result::Result<Spectrogram, String> {
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(format!("unsupported version {}", u32_at(4)));
    }
    if let Some(h) = expected_hash {
        if bytes[8..16] != hash_bytes(h) {
            return Err("config hash mismatch".into());
        }
    }
    let (mels, frames) = (u32_at(16) as usize, u32_at(20) as usize);
    let body = &bytes[24..];
    if body.len() != 4 * mels * frames {
        return Err("truncated data".into());
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Spectrogram(
        Array2::from_shape_vec((mels, frames), values).map_err(|e| e.to_string())?,
    ))
}

pub fn read_spectrogram(path: &Path, expected_hash: Option<&str>) -> Result<Spectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_spectrogram(&bytes, expected_hash).map_err(|message| Error::CorruptCache {
        path: path.to_path_buf(),
        message,
    })
}

/// Writes via a sibling temp file and a rename so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("spec.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct ClipOutcome {
    entries: Vec<CacheEntry>,
    written: usize,
    skipped: usize,
    error: Option<CacheError>,
}

/// Segments every clip, converts each sub-clip and writes it to the cache.
/// Existing files for the same config are reused; unreadable audio is
/// recorded in the manifest's error section rather than aborting the run.
pub fn materialize_cache(index: &DatasetIndex, config: &SpectrogramConfig, cache_dir: &Path) -> Result<CacheManifest> {
    let extractor = SpectrogramExtractor::new(config)?;
    let hash = config.config_hash();
    let root = cache_dir.join(&hash);
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;

    let process = |clip: &crate::types::AudioClip| -> Result<ClipOutcome> {
        let (samples, rate) = read_wav_mono(Path::new(&clip.source_path))?;
        let samples = resample_linear(&samples, rate, config.sample_rate_hz);
        let segments = segment_samples(&samples, config.sample_rate_hz, config.clip_length_s)?;
        let mut out = ClipOutcome {
            entries: Vec::with_capacity(segments.len()),
            written: 0,
            skipped: 0,
            error: None,
        };
        for (i, seg) in segments.iter().enumerate() {
            let file = file_name(&clip.clip_id, i);
            let path = root.join(&file);
            if path.exists() {
                out.skipped += 1;
            } else {
                let spec = extractor.compute(seg, config.sample_rate_hz)?;
                write_atomic(&path, &encode_spectrogram(&spec, &hash))?;
                out.written += 1;
            }
            out.entries.push(CacheEntry {
                subclip_id: subclip_id(&clip.clip_id, i),
                parent_id: clip.clip_id.clone(),
                class: clip.class_label.clone(),
                file,
                config_hash: hash.clone(),
            });
        }
        Ok(out)
    };

    let outcomes: Vec<ClipOutcome> = index
        .clips
        .par_iter()
        .map(|clip| {
            process(clip).unwrap_or_else(|e| ClipOutcome {
                entries: Vec::new(),
                written: 0,
                skipped: 0,
                error: Some(CacheError {
                    clip_id: clip.clip_id.clone(),
                    message: e.to_string(),
                }),
            })
        })
        .collect();

    let mut manifest = CacheManifest {
        dataset_id: index.dataset_id.clone(),
        config: config.clone(),
        config_hash: hash,
        root: root.clone(),
        entries: Vec::new(),
        errors: Vec::new(),
        written: 0,
        skipped: 0,
    };
    for o in outcomes {
        manifest.entries.extend(o.entries);
        manifest.written += o.written;
        manifest.skipped += o.skipped;
        manifest.errors.extend(o.error);
    }
    let path = CacheManifest::manifest_path(&root);
    let text = manifest.render();
    let unchanged = std::fs::read_to_string(&path).map(|t| t == text).unwrap_or(false);
    if !unchanged {
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(manifest)
}
