//! On-disk corpora: feature files, summary files, the JSON manifest, and a
//! seeded synthetic corpus generator.
//!
//! Feature files (`.vstf`) hold the magic bytes `VSTF`, then `version = 1`,
//! `n_frames` and `dim` as little-endian `u32`, then `n_frames * dim`
//! little-endian `f32` values, frame-major. Summary files are plain text with
//! one sorted zero-based frame index per line.
//!
//! The manifest is JSON; paths are relative to the manifest's directory:
//!
//! ```text
//! {
//!   "format": "sumtransfer-corpus",
//!   "version": 1,
//!   "feature_norm": true,
//!   "videos": [
//!     {"id": "v000", "features": "features/v000.vstf", "n_frames": 40, "dim": 32,
//!      "category": "cat0", "boundaries": [5, 10, ...],
//!      "summaries": ["summaries/v000_0.txt"]}
//!   ]
//! }
//! ```
//!
//! `category` and `boundaries` are optional. The first summary is the
//! training target; all of them are used as references for evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dpp::SubsetSelection;
use crate::error::{Error, Result};
use crate::segments::Segmentation;
use crate::similarity::{FeatureSequence, UNIT_NORM_TOL};
use crate::transfer::Exemplar;

pub const FEATURE_MAGIC: &[u8; 4] = b"VSTF";
pub const FEATURE_VERSION: u32 = 1;
pub const MANIFEST_FORMAT: &str = "sumtransfer-corpus";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Environment variable overriding the default data directory.
pub const DATA_DIR_VAR: &str = "SUMTRANSFER_DATA";
/// Largest norm deviation repaired by renormalization when `feature_norm` is set.
pub const RENORM_TOL: f64 = 1e-3;

/// `$SUMTRANSFER_DATA`, or `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Raw contents of a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub n_frames: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * seq.as_slice().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    for &v in seq.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<FeatureFile, String> {
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err("not a VSTF feature file".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(format!("unsupported feature file version {version}"));
    }
    let n_frames = word(8) as usize;
    let dim = word(12) as usize;
    let expected = n_frames
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(16))
        .ok_or("feature file header overflows")?;
    if bytes.len() != expected {
        return Err(format!(
            "feature file is {} bytes, header implies {expected}",
            bytes.len()
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(FeatureFile {
        n_frames,
        dim,
        values,
    })
}

/// Converts stored values to a unit-norm sequence: kept as-is within the
/// unit-norm tolerance, renormalized within [`RENORM_TOL`] when allowed,
/// rejected otherwise.
fn to_sequence(file: FeatureFile, renormalize: bool) -> std::result::Result<FeatureSequence, String> {
    let FeatureFile {
        n_frames,
        dim,
        values,
    } = file;
    let data: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(format!("non-finite feature value in frame {}", i / dim.max(1)));
    }
    let mut needs_renorm = false;
    for (i, row) in data.chunks_exact(dim.max(1)).enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dev = (norm - 1.0).abs();
        if dev > UNIT_NORM_TOL {
            if renormalize && dev <= RENORM_TOL {
                needs_renorm = true;
            } else {
                return Err(format!("frame {i} has norm {norm}, expected a unit vector"));
            }
        }
    }
    let seq = if needs_renorm {
        FeatureSequence::normalized(data, n_frames, dim)
    } else {
        FeatureSequence::new(data, n_frames, dim)
    };
    seq.map_err(|e| e.to_string())
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    std::fs::write(path, encode_features(seq)).map_err(|e| Error::io(path, e))
}

/// Reads a feature file, requiring unit-norm frames (see [`load_corpus`] for
/// the renormalizing variant).
pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
        .and_then(|f| to_sequence(f, false))
        .map_err(|m| Error::InvalidArgument(format!("{}: {m}", path.display())))
}

pub fn encode_summary(sel: &SubsetSelection) -> String {
    let mut s = String::new();
    for i in sel.indices() {
        writeln!(s, "{i}").expect("write to string");
    }
    s
}

pub fn decode_summary(text: &str, n_frames: usize) -> std::result::Result<SubsetSelection, String> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let i: usize = line
            .parse()
            .map_err(|_| format!("line {}: {line:?} is not a frame index", ln + 1))?;
        if i >= n_frames {
            return Err(format!(
                "line {}: frame index {i} out of range for {n_frames} frames",
                ln + 1
            ));
        }
        if out.last().is_some_and(|&p| p >= i) {
            return Err(format!("line {}: indices must be sorted and distinct", ln + 1));
        }
        out.push(i);
    }
    SubsetSelection::new(out, n_frames).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestVideo {
    pub id: String,
    pub features: String,
    pub n_frames: usize,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<usize>>,
    pub summaries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub feature_norm: bool,
    pub videos: Vec<ManifestVideo>,
}

/// One annotated video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureSequence,
    pub category: Option<String>,
    pub segments: Option<Segmentation>,
    /// Frame-level user summaries; the first is the training target.
    pub summaries: Vec<SubsetSelection>,
}

impl VideoRecord {
    pub fn exemplar(&self) -> Result<Exemplar> {
        let target = self
            .summaries
            .first()
            .ok_or_else(|| Error::video(&self.id, "video has no summaries"))?;
        Exemplar::new(
            self.id.clone(),
            self.features.clone(),
            target.clone(),
            self.category.clone(),
            self.segments.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub videos: Vec<VideoRecord>,
    pub feature_norm: bool,
    /// Hex sha256 of the manifest bytes it was loaded from (or written as).
    pub manifest_sha256: String,
}

impl Corpus {
    /// Training exemplars, in manifest order.
    pub fn exemplars(&self) -> Result<Vec<Exemplar>> {
        self.videos.iter().map(VideoRecord::exemplar).collect()
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").expect("write to string");
            s
        })
}

fn manifest_err(id: &str, message: impl Into<String>) -> Error {
    Error::video(id, message)
}

fn load_video(base: &Path, v: &ManifestVideo, renormalize: bool) -> Result<VideoRecord> {
    let fpath = base.join(&v.features);
    let bytes = std::fs::read(&fpath)
        .map_err(|e| manifest_err(&v.id, format!("{}: {e}", fpath.display())))?;
    let file = decode_features(&bytes)
        .map_err(|m| manifest_err(&v.id, format!("{}: {m}", fpath.display())))?;
    if file.n_frames != v.n_frames || file.dim != v.dim {
        return Err(manifest_err(
            &v.id,
            format!(
                "manifest declares {}x{}, feature file holds {}x{}",
                v.n_frames, v.dim, file.n_frames, file.dim
            ),
        ));
    }
    let features = to_sequence(file, renormalize).map_err(|m| manifest_err(&v.id, m))?;
    let segments = v
        .boundaries
        .as_ref()
        .map(|b| Segmentation::new(b.clone(), v.n_frames))
        .transpose()
        .map_err(|e| manifest_err(&v.id, e.to_string()))?;
    if v.summaries.is_empty() {
        return Err(manifest_err(&v.id, "no summary files listed"));
    }
    let summaries = v
        .summaries
        .iter()
        .map(|s| {
            let p = base.join(s);
            let text = std::fs::read_to_string(&p)
                .map_err(|e| manifest_err(&v.id, format!("{}: {e}", p.display())))?;
            decode_summary(&text, v.n_frames)
                .map_err(|m| manifest_err(&v.id, format!("{}: {m}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    if summaries[0].is_empty() {
        return Err(manifest_err(&v.id, "training summary is empty"));
    }
    Ok(VideoRecord {
        id: v.id.clone(),
        features,
        category: v.category.clone(),
        segments,
        summaries,
    })
}

/// Loads and validates every video of a manifest, in manifest order.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let bytes = std::fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: CorpusManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Manifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Manifest(format!(
            "format is {:?}, expected {MANIFEST_FORMAT:?}",
            manifest.format
        )));
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    if manifest.videos.is_empty() {
        return Err(Error::Manifest("manifest lists no videos".into()));
    }
    for (i, v) in manifest.videos.iter().enumerate() {
        if manifest.videos[..i].iter().any(|w| w.id == v.id) {
            return Err(manifest_err(&v.id, "duplicate video id"));
        }
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let videos = manifest
        .videos
        .par_iter()
        .map(|v| load_video(base, v, manifest.feature_norm))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        videos,
        feature_norm: manifest.feature_norm,
        manifest_sha256: sha256_hex(&bytes),
    })
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(manifest_err(id, "ids may only contain ASCII letters, digits, '_', '-' and '.'"))
    }
}

/// Manifest for `videos` using the canonical file layout.
pub fn manifest_for(videos: &[VideoRecord], feature_norm: bool) -> CorpusManifest {
    CorpusManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        feature_norm,
        videos: videos
            .iter()
            .map(|v| ManifestVideo {
                id: v.id.clone(),
                features: format!("features/{}.vstf", v.id),
                n_frames: v.features.len(),
                dim: v.features.dim(),
                category: v.category.clone(),
                boundaries: v.segments.as_ref().map(|s| s.ends().to_vec()),
                summaries: (0..v.summaries.len())
                    .map(|k| format!("summaries/{}_{k}.txt", v.id))
                    .collect(),
            })
            .collect(),
    }
}

/// Writes `videos` under `dir` (manifest, `features/`, `summaries/`) and
/// returns the manifest path and its sha256.
pub fn save_corpus(dir: &Path, videos: &[VideoRecord], feature_norm: bool) -> Result<(PathBuf, String)> {
    for (i, v) in videos.iter().enumerate() {
        check_id(&v.id)?;
        if videos[..i].iter().any(|w| w.id == v.id) {
            return Err(manifest_err(&v.id, "duplicate video id"));
        }
        v.exemplar()?;
        if let Some(bad) = v.summaries.iter().find(|s| s.ground_size() != v.features.len()) {
            return Err(manifest_err(
                &v.id,
                format!("summary over {} frames, video has {}", bad.ground_size(), v.features.len()),
            ));
        }
    }
    let manifest = manifest_for(videos, feature_norm);
    for sub in ["features", "summaries"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (v, m) in videos.iter().zip(&manifest.videos) {
        write_features(&dir.join(&m.features), &v.features)?;
        for (s, name) in v.summaries.iter().zip(&m.summaries) {
            let p = dir.join(name);
            std::fs::write(&p, encode_summary(s)).map_err(|e| Error::io(&p, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok((path, sha256_hex(text.as_bytes())))
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub n_frames: usize,
    pub dim: usize,
    pub n_categories: usize,
    pub keyframes_per_video: usize,
    /// Standard deviation of the noise vector's norm (per coordinate `noise_level / √dim`).
    pub noise_level: f64,
    pub seed: u64,
    /// Length of the uniform segments written as boundaries.
    pub segment_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 10,
            n_frames: 40,
            dim: 32,
            n_categories: 2,
            keyframes_per_video: 5,
            noise_level: 0.05,
            seed: 0,
            segment_len: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_videos == 0 || self.n_categories == 0 || self.keyframes_per_video == 0 {
            return bad("n_videos, n_categories and keyframes_per_video must be >= 1".into());
        }
        if self.keyframes_per_video >= self.n_frames {
            return bad(format!(
                "keyframes_per_video ({}) must be below n_frames ({})",
                self.keyframes_per_video, self.n_frames
            ));
        }
        if self.dim < self.keyframes_per_video {
            return bad(format!(
                "dim ({}) must be at least keyframes_per_video ({})",
                self.dim, self.keyframes_per_video
            ));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return bad(format!("noise_level must be finite and >= 0, got {}", self.noise_level));
        }
        if self.segment_len == 0 {
            return bad("segment_len must be >= 1".into());
        }
        Ok(())
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `count` unit vectors; the first `min(count, dim)` are orthonormal.
fn directions(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian_vector(rng, dim);
        if out.len() < dim {
            for u in &out {
                let p: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, a)| *x -= p * a);
            }
            // retry on an (improbable) near-dependent draw
            if v.iter().map(|x| x * x).sum::<f64>() < 1e-12 {
                continue;
            }
        }
        normalize(&mut v);
        out.push(v);
    }
    out
}

/// Generates a corpus in memory.
///
/// Videos are assigned to categories round-robin. Each category has
/// `keyframes_per_video` orthonormal event directions and a small pool of
/// filler directions; every video shows each event once, in order, at random
/// positions (its ground-truth summary) and filler elsewhere. Values are
/// rounded to `f32` so the result equals what [`load_corpus`] reads back.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<VideoRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.keyframes_per_video;
    let pool = (cfg.dim - k).clamp(1, 4);
    let categories: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..cfg.n_categories)
        .map(|_| {
            let mut dirs = directions(&mut rng, k + pool, cfg.dim);
            let filler = dirs.split_off(k);
            (dirs, filler)
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_level / (cfg.dim as f64).sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut videos = Vec::with_capacity(cfg.n_videos);
    for i in 0..cfg.n_videos {
        let c = i % cfg.n_categories;
        let (events, filler) = &categories[c];
        let mut positions = sample(&mut rng, cfg.n_frames, k).into_vec();
        positions.sort_unstable();
        let mut data = Vec::with_capacity(cfg.n_frames * cfg.dim);
        let mut next_event = 0;
        for f in 0..cfg.n_frames {
            let base = if positions.get(next_event) == Some(&f) {
                next_event += 1;
                &events[next_event - 1]
            } else {
                &filler[rng.random_range(0..filler.len())]
            };
            let mut v: Vec<f64> = base.clone();
            if cfg.noise_level > 0.0 {
                v.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
                normalize(&mut v);
            }
            data.extend(v.iter().map(|&x| x as f32 as f64));
        }
        let features = FeatureSequence::new(data, cfg.n_frames, cfg.dim)?;
        let summary = SubsetSelection::new(positions, cfg.n_frames)?;
        videos.push(VideoRecord {
            id: format!("v{i:03}"),
            features,
            category: Some(format!("cat{c}")),
            segments: Some(Segmentation::uniform(cfg.n_frames, cfg.segment_len)?),
            summaries: vec![summary],
        });
    }
    Ok(videos)
}

/// Generates a synthetic corpus and writes it under `dir`.
pub fn write_synthetic(dir: &Path, cfg: &SynthConfig) -> Result<(PathBuf, String)> {
    save_corpus(dir, &gen_synthetic(cfg)?, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_videos: 4,
            n_frames: 12,
            dim: 8,
            keyframes_per_video: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn feature_codec_round_trip() {
        let seq = FeatureSequence::from_rows_normalized(&[vec![3.0, 4.0], vec![1.0, 0.0]]).unwrap();
        let bytes = encode_features(&seq);
        assert_eq!(&bytes[..4], b"VSTF");
        assert_eq!(bytes.len(), 16 + 16);
        let f = decode_features(&bytes).unwrap();
        assert_eq!((f.n_frames, f.dim), (2, 2));
        assert_eq!(f.values, vec![0.6f32, 0.8, 1.0, 0.0]);
        let again = to_sequence(f, false).unwrap();
        assert_eq!(encode_features(&again), bytes);
        assert!(decode_features(&bytes[..20]).is_err());
        assert!(decode_features(b"XXXX0000000000000000").is_err());
    }

    #[test]
    fn norm_tolerances() {
        let file = |x: f32| FeatureFile {
            n_frames: 1,
            dim: 1,
            values: vec![x],
        };
        assert!(to_sequence(file(1.0005), false).is_err());
        let s = to_sequence(file(1.0005), true).unwrap();
        assert_eq!(s.frame(0), &[1.0]);
        assert!(to_sequence(file(1.01), true).is_err());
        assert!(to_sequence(file(f32::NAN), true).is_err());
    }

    #[test]
    fn summary_codec() {
        let s = SubsetSelection::new(vec![0, 3, 7], 8).unwrap();
        assert_eq!(encode_summary(&s), "0\n3\n7\n");
        assert_eq!(decode_summary("0\n3\n7\n", 8).unwrap(), s);
        assert!(decode_summary("8\n", 8).is_err());
        assert!(decode_summary("3\n1\n", 8).is_err());
        assert!(decode_summary("x\n", 8).is_err());
    }

    #[test]
    fn synthetic_structure() {
        let cfg = SynthConfig {
            noise_level: 0.0,
            ..small()
        };
        let videos = gen_synthetic(&cfg).unwrap();
        assert_eq!(videos.len(), 4);
        assert_eq!(videos[1].category.as_deref(), Some("cat1"));
        assert_eq!(videos[2].category.as_deref(), Some("cat0"));
        let (a, b) = (&videos[0], &videos[2]);
        let ya = a.summaries[0].indices();
        let yb = b.summaries[0].indices();
        assert_eq!(ya.len(), 3);
        for k in 0..3 {
            let d: f64 = a
                .features
                .frame(ya[k])
                .iter()
                .zip(b.features.frame(yb[k]))
                .map(|(x, y)| x * y)
                .sum();
            assert!((d - 1.0).abs() < 1e-6);
        }
        assert_eq!(gen_synthetic(&cfg).unwrap(), videos);
    }

    #[test]
    fn invalid_synth_config() {
        for cfg in [
            SynthConfig { keyframes_per_video: 12, ..small() },
            SynthConfig { dim: 2, ..small() },
            SynthConfig { noise_level: -1.0, ..small() },
            SynthConfig { n_videos: 0, ..small() },
        ] {
            assert!(gen_synthetic(&cfg).is_err());
        }
    }
}
