use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::audio::{StemSet, StemType};
use crate::error::{Error, Result};
use crate::wav;

/// One song directory: `<root>/<song_id>/<stem>.wav`.
#[derive(Debug, Clone, PartialEq)]
pub struct SongEntry {
    pub id: String,
    pub dir: PathBuf,
    pub stems: BTreeMap<StemType, PathBuf>,
}

impl SongEntry {
    pub fn load(&self, session_rate: u32, resample: bool) -> Result<StemSet> {
        let mut stems = BTreeMap::new();
        for (&k, p) in &self.stems {
            stems.insert(k, wav::load_for_session(p, session_rate, resample)?);
        }
        StemSet::new(self.id.clone(), stems)
    }
}

/// Songs of a dataset that contain every requested stem, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub stem_types: Vec<StemType>,
    pub songs: Vec<SongEntry>,
}

impl Dataset {
    /// Scans `root`. Songs missing a requested stem file are skipped with a warning.
    pub fn scan(root: &Path, stem_types: &[StemType]) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Dataset(format!(
                "dataset root {} is not a directory",
                root.display()
            )));
        }
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut songs = Vec::new();
        for dir in dirs {
            let id = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut stems = BTreeMap::new();
            let mut missing = Vec::new();
            for &k in stem_types {
                let p = dir.join(format!("{}.wav", k.as_str()));
                if p.is_file() {
                    stems.insert(k, p);
                } else {
                    missing.push(k.as_str());
                }
            }
            if !missing.is_empty() {
                log::warn!("skipping song {id}: missing {}", missing.join(", "));
                continue;
            }
            songs.push(SongEntry { id, dir, stems });
        }
        if songs.is_empty() {
            return Err(Error::Dataset(format!(
                "no usable songs under {}",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            stem_types: stem_types.to_vec(),
            songs,
        })
    }

    /// SHA-256 over every stem file's relative path and size.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        for song in &self.songs {
            for p in song.stems.values() {
                let rel = p.strip_prefix(&self.root).unwrap_or(p);
                let size = fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
                h.update(rel.to_string_lossy().as_bytes());
                h.update([0u8]);
                h.update(size.to_le_bytes());
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}
