//! Corpus management on disk: real-patch ingestion grouped by style, the
//! `manifest.jsonl` index, persisted synthetic samples and pair sampling.

pub mod io;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{BinaryMask, RgbImage, SoftMask};
use crate::synth::{
    synthesize_patch, Magnification, Provenance, RealPatch, SynthSample, SynthesisParams,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Real,
    Initial,
    Refined,
}

/// One line of `manifest.jsonl`. Paths are relative to the manifest root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub kind: SampleKind,
    pub style_id: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnification: Option<Magnification>,
    /// Where a real patch came from (its path at ingestion).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl SampleRecord {
    fn files(&self) -> impl Iterator<Item = (&'static str, &PathBuf)> {
        [
            ("image", Some(&self.image)),
            ("mask", self.mask.as_ref()),
            ("soft_mask", self.soft_mask.as_ref()),
        ]
        .into_iter()
        .filter_map(|(what, p)| p.map(|p| (what, p)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub id: String,
    pub path: PathBuf,
    pub magnification: Option<Magnification>,
    pub source_id: Option<String>,
}

/// Real patches sharing one style key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleGroup {
    pub style_id: String,
    pub patches: Vec<PatchRecord>,
}

impl StyleGroup {
    /// Pairing needs two distinct patches.
    pub fn is_valid(&self) -> bool {
        self.patches.len() >= 2
    }
}

/// Ordered, id-unique sample index rooted at a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    root: PathBuf,
    records: Vec<SampleRecord>,
    ids: HashSet<String>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn path_of(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Add a record after checking its id is new and its files exist.
    pub fn push(&mut self, record: SampleRecord) -> Result<()> {
        if self.ids.contains(&record.id) {
            return Err(Error::Manifest(format!("duplicate id {}", record.id)));
        }
        self.check_files(&record)?;
        self.ids.insert(record.id.clone());
        self.records.push(record);
        Ok(())
    }

    fn check_files(&self, r: &SampleRecord) -> Result<()> {
        for (what, p) in r.files() {
            let full = self.root.join(p);
            if !full.is_file() {
                return Err(Error::MissingFile {
                    id: r.id.clone(),
                    what,
                    path: full,
                });
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Write `root/manifest.jsonl` atomically.
    pub fn save(&self) -> Result<()> {
        io::write_atomic(&self.root.join(MANIFEST_FILE), self.to_jsonl()?.as_bytes())
    }

    /// Read `root/manifest.jsonl`, validating ids and file references.
    pub fn load(root: impl Into<PathBuf>) -> Result<Self> {
        let mut m = Self::new(root);
        let text = fs::read_to_string(m.root.join(MANIFEST_FILE))?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: SampleRecord = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", n + 1)))?;
            m.push(r)?;
        }
        Ok(m)
    }

    /// Load when a manifest exists, otherwise start an empty one.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if root.join(MANIFEST_FILE).is_file() {
            Self::load(root)
        } else {
            Ok(Self::new(root))
        }
    }

    /// Real-patch groups keyed by style, in style order.
    pub fn style_groups(&self) -> Vec<StyleGroup> {
        let mut groups: BTreeMap<&str, Vec<PatchRecord>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.kind == SampleKind::Real) {
            groups.entry(&r.style_id).or_default().push(PatchRecord {
                id: r.id.clone(),
                path: r.image.clone(),
                magnification: r.magnification,
                source_id: r.source_id.clone(),
            });
        }
        groups
            .into_iter()
            .map(|(s, patches)| StyleGroup {
                style_id: s.to_string(),
                patches,
            })
            .collect()
    }

    /// Decode the real patches of the given groups.
    pub fn load_real(&self, groups: &[StyleGroup]) -> Result<Vec<RealPatch>> {
        let mut out = Vec::new();
        for g in groups {
            for p in &g.patches {
                out.push(RealPatch::new(
                    &p.id,
                    &g.style_id,
                    io::read_rgb(&self.root.join(&p.path))?,
                ));
            }
        }
        Ok(out)
    }
}

/// How ingestion decides a file's style.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingRule {
    /// Name of the directory that directly contains the file.
    #[default]
    ParentDir,
    /// `style_id` field of a `<file stem>.json` next to the image.
    Sidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IngestWarning {
    Unreadable { path: PathBuf, reason: String },
    SmallGroup { style_id: String, patches: usize },
}

#[derive(Debug, Clone)]
pub struct Ingest {
    pub manifest: Manifest,
    /// Groups with at least two patches.
    pub groups: Vec<StyleGroup>,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Deserialize)]
struct Sidecar {
    style_id: String,
    #[serde(default)]
    magnification: Option<Magnification>,
}

fn image_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            image_files(&p, out)?;
        } else if p
            .extension()
            .and_then(|x| x.to_str())
            .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        {
            out.push(p);
        }
    }
    Ok(())
}

fn rel_id(rel: &Path) -> String {
    rel.with_extension("")
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Index the real patches under `dir`. Every image is decoded once so
/// unreadable files are skipped and reported rather than failing later.
pub fn ingest(
    dir: &Path,
    rule: GroupingRule,
    magnification: Option<Magnification>,
) -> Result<Ingest> {
    let mut files = Vec::new();
    image_files(dir, &mut files)?;
    let mut manifest = Manifest::new(dir);
    let mut warnings = Vec::new();
    for path in files {
        let rel = path.strip_prefix(dir).unwrap_or(&path).to_path_buf();
        let (style, mag) = match rule {
            GroupingRule::ParentDir => {
                let parent = rel
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|s| s.to_string_lossy().into_owned());
                (parent, magnification)
            }
            GroupingRule::Sidecar => match fs::read_to_string(path.with_extension("json"))
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<Sidecar>(&t).map_err(|e| e.to_string()))
            {
                Ok(s) => (Some(s.style_id), s.magnification.or(magnification)),
                Err(reason) => {
                    warnings.push(IngestWarning::Unreadable {
                        path: path.clone(),
                        reason: format!("sidecar: {reason}"),
                    });
                    continue;
                }
            },
        };
        let Some(style_id) = style else {
            warnings.push(IngestWarning::Unreadable {
                path: path.clone(),
                reason: "no style directory".into(),
            });
            continue;
        };
        if let Err(e) = io::read_rgb(&path) {
            warnings.push(IngestWarning::Unreadable {
                path: path.clone(),
                reason: e.to_string(),
            });
            continue;
        }
        manifest.push(SampleRecord {
            id: rel_id(&rel),
            kind: SampleKind::Real,
            style_id,
            image: rel.clone(),
            mask: None,
            soft_mask: None,
            params_hash: None,
            seed: None,
            magnification: mag,
            source_id: Some(rel.to_string_lossy().into_owned()),
            provenance: None,
        })?;
    }
    let mut groups = Vec::new();
    for g in manifest.style_groups() {
        if g.is_valid() {
            groups.push(g);
        } else {
            warnings.push(IngestWarning::SmallGroup {
                style_id: g.style_id.clone(),
                patches: g.patches.len(),
            });
        }
    }
    Ok(Ingest {
        manifest,
        groups,
        warnings,
    })
}

/// Two distinct items drawn uniformly without replacement, as `(S′, S)`.
pub fn sample_pair<'a, T, R: Rng + ?Sized>(items: &'a [T], rng: &mut R) -> Result<(&'a T, &'a T)> {
    if items.len() < 2 {
        return Err(Error::Invalid(format!(
            "pairing needs at least two patches, got {}",
            items.len()
        )));
    }
    let picked = index::sample(rng, items.len(), 2);
    Ok((&items[picked.index(0)], &items[picked.index(1)]))
}

/// A synthetic sample as read back from disk (8-bit quantized).
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub record: SampleRecord,
    pub image: RgbImage,
    pub gt_mask: BinaryMask,
    pub soft_mask: SoftMask,
}

/// Directory of persisted synthetic samples with its manifest. One writer
/// at a time; every write lands the files before the manifest line.
#[derive(Debug)]
pub struct SampleStore {
    manifest: Manifest,
}

impl SampleStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            manifest: Manifest::open(root)?,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        self.manifest.root()
    }

    pub fn write_sample(
        &mut self,
        id: &str,
        kind: SampleKind,
        sample: &SynthSample,
    ) -> Result<SampleRecord> {
        if self.manifest.ids.contains(id) {
            return Err(Error::Manifest(format!("duplicate id {id}")));
        }
        let record = SampleRecord {
            id: id.to_string(),
            kind,
            style_id: sample.style_id.clone(),
            image: PathBuf::from("images").join(format!("{id}.png")),
            mask: Some(PathBuf::from("masks").join(format!("{id}.png"))),
            soft_mask: Some(PathBuf::from("soft_masks").join(format!("{id}.png"))),
            params_hash: Some(sample.params_used.params_hash()),
            seed: Some(sample.params_used.rng_seed),
            magnification: Some(sample.params_used.magnification),
            source_id: None,
            provenance: Some(sample.provenance.clone()),
        };
        let root = self.manifest.root.clone();
        io::write_rgb_png(&root.join(&record.image), &sample.image)?;
        io::write_gray_png(
            &root.join(record.mask.as_ref().unwrap()),
            &sample.gt_mask.to_raster(),
        )?;
        io::write_gray_png(
            &root.join(record.soft_mask.as_ref().unwrap()),
            sample.soft_mask.raster(),
        )?;
        self.manifest.push(record.clone())?;
        if let Err(e) = self.append_line(&record) {
            self.manifest.records.pop();
            self.manifest.ids.remove(id);
            return Err(e);
        }
        Ok(record)
    }

    fn append_line(&self, record: &SampleRecord) -> Result<()> {
        use std::io::Write;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root().join(MANIFEST_FILE))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn read_sample(&self, id: &str) -> Result<StoredSample> {
        let record = self
            .manifest
            .get(id)
            .ok_or_else(|| Error::Manifest(format!("unknown sample {id}")))?
            .clone();
        let root = self.root();
        let need = |what: &'static str, p: &Option<PathBuf>| -> Result<PathBuf> {
            let rel = p.as_ref().ok_or_else(|| Error::MissingFile {
                id: id.to_string(),
                what,
                path: PathBuf::new(),
            })?;
            let full = root.join(rel);
            if !full.is_file() {
                return Err(Error::MissingFile {
                    id: id.to_string(),
                    what,
                    path: full,
                });
            }
            Ok(full)
        };
        let image_path = need("image", &Some(record.image.clone()))?;
        let mask_path = need("mask", &record.mask)?;
        let soft_path = need("soft_mask", &record.soft_mask)?;
        Ok(StoredSample {
            image: io::read_rgb(&image_path)?,
            gt_mask: io::read_binary_mask(&mask_path)?,
            soft_mask: io::read_soft_mask(&soft_path)?,
            record,
        })
    }
}

/// `count` initial samples. Sample `i` is seeded with `base_seed + i`: that
/// seed picks the style group and the background/texture pair and drives
/// the synthesis, so any sample can be regenerated on its own.
pub fn generate_samples(
    real: &[RealPatch],
    params: &SynthesisParams,
    count: usize,
    base_seed: u64,
    style: Option<&str>,
) -> Result<Vec<SynthSample>> {
    let mut groups: BTreeMap<&str, Vec<&RealPatch>> = BTreeMap::new();
    for p in real {
        if style.is_none_or(|s| s == p.style_id) {
            groups.entry(&p.style_id).or_default().push(p);
        }
    }
    groups.retain(|_, g| g.len() >= 2);
    let groups: Vec<_> = groups.into_values().collect();
    if groups.is_empty() {
        return Err(match style {
            Some(s) => Error::GroupTooSmall(s.to_string()),
            None => Error::EmptyCorpus,
        });
    }
    (0..count)
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a3f_1e00_0000);
            let group = &groups[rng.random_range(0..groups.len())];
            let (bg, tex) = sample_pair(group, &mut rng)?;
            synthesize_patch(bg, tex, &params.with_seed(seed))
        })
        .collect()
}
