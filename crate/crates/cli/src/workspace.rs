//! On-disk layout. Every relative path is taken from the workspace root.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fsaudio_core::pipeline::cache::CacheManifest;
use fsaudio_core::pipeline::manifest::ingest_manifest_file;
use fsaudio_core::pipeline::spectrogram::SpectrogramConfig;
use fsaudio_core::splits::load_split;
use fsaudio_core::store::SpectrogramStore;
use fsaudio_core::{ClassSplit, Partition};

use crate::failure::invalid;

pub const CACHE_ENV: &str = "FSAUDIO_CACHE";

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub cache: PathBuf,
}

impl Workspace {
    /// The cache root comes from the flag, then the environment, then `<root>/cache`.
    pub fn new(root: PathBuf, cache: Option<PathBuf>) -> Self {
        let cache = cache
            .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("cache"));
        let cache = if cache.is_relative() { root.join(cache) } else { cache };
        Workspace { root, cache }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.root.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn data_dir(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn dataset_cache(&self, dataset: &str) -> PathBuf {
        self.cache.join(dataset)
    }

    /// The pruned clip manifest written by `prepare`.
    pub fn prepared_index(&self, dataset: &str) -> PathBuf {
        self.dataset_cache(dataset).join("clips.csv")
    }

    pub fn split_path(&self, dataset: &str) -> PathBuf {
        self.root.join("splits").join(format!("{dataset}.split"))
    }

    pub fn prepared_classes(&self, dataset: &str) -> Result<BTreeSet<String>> {
        let path = self.prepared_index(dataset);
        if !path.exists() {
            return Err(invalid(format!(
                "dataset `{dataset}` is not prepared ({} missing); run `fsaudio prepare` first",
                path.display()
            )));
        }
        let index = ingest_manifest_file(dataset, &path)?;
        Ok(index.class_inventory.keys().cloned().collect())
    }

    pub fn split(&self, dataset: &str) -> Result<ClassSplit> {
        let path = self.split_path(dataset);
        if !path.exists() {
            return Err(invalid(format!(
                "no split for `{dataset}` ({} missing); run `fsaudio split` first",
                path.display()
            )));
        }
        let classes = self.prepared_classes(dataset)?;
        load_split(&path, Some(&classes)).map_err(|e| invalid(format!("split for `{dataset}`: {e}")))
    }

    /// Classes of one partition; `all` needs no split file.
    pub fn partition_classes(&self, dataset: &str, partition: Partition) -> Result<BTreeSet<String>> {
        match partition {
            Partition::All => self.prepared_classes(dataset),
            p => Ok(self.split(dataset)?.partition(p)),
        }
    }

    pub fn cache_manifest(&self, dataset: &str, config: &SpectrogramConfig) -> Result<CacheManifest> {
        let dir = self.dataset_cache(dataset);
        CacheManifest::open(&dir, config).map_err(|e| {
            invalid(format!(
                "no cache for `{dataset}` under {} with these spectrogram settings ({e}); run `fsaudio prepare`",
                dir.display()
            ))
        })
    }

    /// Loads the listed classes of each dataset into one store.
    pub fn load_store(
        &self,
        wanted: &[(String, BTreeSet<String>)],
        manifests: &[CacheManifest],
    ) -> Result<SpectrogramStore> {
        let mut store = SpectrogramStore::new();
        for ((dataset, classes), manifest) in wanted.iter().zip(manifests) {
            store
                .load_cache(manifest, Some(classes))
                .with_context(|| format!("loading cache of `{dataset}`"))?;
        }
        Ok(store)
    }
}

/// Writes `bytes` to `path` through a temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("part");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}
