//! Frame-directory datasets: manifest parsing, user-disjoint splits,
//! attribute protocols, and windowing of videos into fixed-length samples.
//!
//! Manifest CSV header: `video_id,user_id,label,attrs,frame_dir`. `attrs` is a
//! `;`-joined list of `key=value` pairs. Frame files inside `frame_dir`
//! (relative to the manifest) sorted by name define temporal order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineLabel {
    Bonafide,
    #[serde(alias = "print-attack")]
    Print,
    #[serde(alias = "display-attack")]
    Display,
}

impl FineLabel {
    pub fn is_bonafide(self) -> bool {
        self == FineLabel::Bonafide
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FineLabel::Bonafide => "bonafide",
            FineLabel::Print => "print",
            FineLabel::Display => "display",
        }
    }
}

impl std::fmt::Display for FineLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FineLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bonafide" | "bona-fide" | "live" | "real" => Ok(FineLabel::Bonafide),
            "print" | "print-attack" => Ok(FineLabel::Print),
            "display" | "display-attack" | "replay" => Ok(FineLabel::Display),
            other => Err(Error::InvalidParam(format!(
                "unsupported label {other:?} (expected bonafide, print or display)"
            ))),
        }
    }
}

/// Anything that belongs to a user and carries session attributes.
pub trait Subject {
    fn user_id(&self) -> &str;
    fn attrs(&self) -> &BTreeMap<String, String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub user_id: String,
    pub label: FineLabel,
    pub attrs: BTreeMap<String, String>,
    pub frame_paths: Vec<PathBuf>,
}

impl Subject for VideoRecord {
    fn user_id(&self) -> &str {
        &self.user_id
    }

    fn attrs(&self) -> &BTreeMap<String, String> {
        &self.attrs
    }
}

impl Subject for crate::features::Provenance {
    fn user_id(&self) -> &str {
        &self.user_id
    }

    fn attrs(&self) -> &BTreeMap<String, String> {
        &self.attrs
    }
}

pub const MANIFEST_HEADER: [&str; 5] = ["video_id", "user_id", "label", "attrs", "frame_dir"];

pub fn parse_attrs(s: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for pair in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| format!("attribute {pair:?} is not key=value"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(format!("attribute {pair:?} has an empty key"));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(format!("attribute {k:?} repeated"));
        }
    }
    Ok(out)
}

pub fn format_attrs(attrs: &BTreeMap<String, String>) -> String {
    attrs
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn is_frame_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Image files of a frame directory in lexicographic order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_frame_file(&path) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let err = |line: u64, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(err(1, format!("header must be {}", MANIFEST_HEADER.join(","))));
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let video_id = field(0);
        let user_id = field(1);
        if video_id.is_empty() || user_id.is_empty() {
            return Err(err(line, "empty video_id or user_id".into()));
        }
        let label: FineLabel = field(2).parse().map_err(|e: Error| err(line, e.to_string()))?;
        let attrs = parse_attrs(&field(3)).map_err(|m| err(line, m))?;
        let dir = base.join(field(4));
        if !dir.is_dir() {
            return Err(err(line, format!("frame directory {} not found", dir.display())));
        }
        let frame_paths = list_frames(&dir)?;
        if frame_paths.is_empty() {
            return Err(err(line, format!("frame directory {} has no frames", dir.display())));
        }
        if !seen.insert(video_id.clone()) {
            return Err(err(line, format!("duplicate video_id {video_id:?}")));
        }
        records.push(VideoRecord {
            video_id,
            user_id,
            label,
            attrs,
            frame_paths,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Training,
    Validation,
    Testing,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Training, SplitName::Validation, SplitName::Testing];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Training => "training",
            SplitName::Validation => "validation",
            SplitName::Testing => "testing",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "training" | "train" => Ok(SplitName::Training),
            "validation" | "val" | "dev" => Ok(SplitName::Validation),
            "testing" | "test" => Ok(SplitName::Testing),
            other => Err(Error::InvalidParam(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub name: SplitName,
    pub users: BTreeSet<String>,
}

impl SplitSpec {
    pub fn contains(&self, user: &str) -> bool {
        self.users.contains(user)
    }
}

/// Attribute equality lists: every listed key must be present with one of the
/// allowed values. An empty predicate accepts everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttrPredicate(pub BTreeMap<String, Vec<String>>);

impl AttrPredicate {
    pub fn matches(&self, attrs: &BTreeMap<String, String>) -> bool {
        self.0
            .iter()
            .all(|(k, allowed)| attrs.get(k).is_some_and(|v| allowed.iter().any(|a| a == v)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolFilter {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub training: AttrPredicate,
    #[serde(default)]
    pub validation: AttrPredicate,
    #[serde(default)]
    pub testing: AttrPredicate,
}

impl ProtocolFilter {
    /// The always-true protocol.
    pub fn full() -> Self {
        Self {
            name: "full".into(),
            ..Default::default()
        }
    }

    pub fn predicate(&self, split: SplitName) -> &AttrPredicate {
        match split {
            SplitName::Training => &self.training,
            SplitName::Validation => &self.validation,
            SplitName::Testing => &self.testing,
        }
    }
}

/// Items whose user belongs to `split` and whose attributes satisfy the
/// protocol predicate for that split.
pub fn apply_protocol<'a, T: Subject>(
    items: &'a [T],
    protocol: &ProtocolFilter,
    split: &SplitSpec,
) -> Vec<&'a T> {
    let pred = protocol.predicate(split.name);
    let out: Vec<&T> = items
        .iter()
        .filter(|r| split.contains(r.user_id()) && pred.matches(r.attrs()))
        .collect();
    if out.is_empty() {
        warn!(
            "protocol {:?} selected nothing for split {}",
            protocol.name,
            split.name.as_str()
        );
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitUsers {
    #[serde(default)]
    pub training: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
    #[serde(default)]
    pub testing: Vec<String>,
}

/// Declarative dataset description, stored as TOML next to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub manifest: PathBuf,
    pub splits: SplitUsers,
    #[serde(default)]
    pub protocols: BTreeMap<String, ProtocolFilter>,
}

impl DatasetConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: DatasetConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.manifest.is_relative() {
            cfg.manifest = path.parent().unwrap_or_else(|| Path::new(".")).join(&cfg.manifest);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Split user sets must be pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let sets: Vec<(SplitName, BTreeSet<&String>)> = SplitName::ALL
            .iter()
            .map(|&s| (s, self.users(s).iter().collect()))
            .collect();
        for (i, (a, ua)) in sets.iter().enumerate() {
            for (b, ub) in &sets[i + 1..] {
                if let Some(u) = ua.intersection(ub).next() {
                    return Err(Error::Config(format!(
                        "dataset {}: user {u} is in both {} and {}",
                        self.name,
                        a.as_str(),
                        b.as_str()
                    )));
                }
            }
        }
        for (name, p) in &self.protocols {
            if !p.name.is_empty() && &p.name != name {
                return Err(Error::Config(format!(
                    "protocol table {name:?} declares name {:?}",
                    p.name
                )));
            }
        }
        Ok(())
    }

    fn users(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Training => &self.splits.training,
            SplitName::Validation => &self.splits.validation,
            SplitName::Testing => &self.splits.testing,
        }
    }

    pub fn split(&self, name: SplitName) -> SplitSpec {
        SplitSpec {
            name,
            users: self.users(name).iter().cloned().collect(),
        }
    }

    /// Every user named in any split.
    pub fn all_users(&self) -> BTreeSet<String> {
        SplitName::ALL
            .iter()
            .flat_map(|&s| self.users(s).iter().cloned())
            .collect()
    }

    /// Named protocol; `full` (or an empty name) is always available.
    pub fn protocol(&self, name: &str) -> Result<ProtocolFilter> {
        if let Some(p) = self.protocols.get(name) {
            let mut p = p.clone();
            p.name = name.to_string();
            return Ok(p);
        }
        if name.is_empty() || name == "full" {
            return Ok(ProtocolFilter::full());
        }
        Err(Error::Config(format!(
            "dataset {} has no protocol {name:?}",
            self.name
        )))
    }
}

/// Half-open range of frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub start: usize,
    pub end: usize,
}

/// Windows `[k*stride, k*stride + n)` that fit entirely inside the video.
pub fn windows(frame_count: usize, n: usize, stride: usize) -> Result<Vec<FrameWindow>> {
    if n == 0 || stride == 0 {
        return Err(Error::InvalidParam(format!(
            "window length and stride must be >= 1 (n={n}, stride={stride})"
        )));
    }
    Ok((0..)
        .map(|k| k * stride)
        .take_while(|&start| start + n <= frame_count)
        .map(|start| FrameWindow {
            start,
            end: start + n,
        })
        .collect())
}

pub fn window_video(video: &VideoRecord, n: usize, stride: usize) -> Result<Vec<FrameWindow>> {
    let out = windows(video.frame_paths.len(), n, stride)?;
    if out.is_empty() {
        warn!(
            "video {} has {} frames, fewer than the window length {n}",
            video.video_id,
            video.frame_paths.len()
        );
    }
    Ok(out)
}
