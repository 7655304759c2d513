//! Labelled datasets forged from original images: every original is run
//! through each requested operation, centre-cropped, and assigned with all
//! its processed versions to one split.

mod synth;

pub use synth::{synth_image, SynthConfig};

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imageops::{apply, rotation_crop_is_clean, sample_operation, scaled_len, GrayImage, OperationKind, OperationSpec};
use crate::model::{images_to_tensor, InputScale};
use crate::ndtensor::Tensor;

/// Draws allowed per image before giving up on finding crop-compatible parameters.
const MAX_RESAMPLE: usize = 1000;

const TAG_SPLIT: u64 = 0x5b17;
const TAG_OPERATION: u64 = 0x0b5e;
const TAG_EPOCH: u64 = 0xe90c;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a path of integers below `base`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// A dataset class: the untouched original or one operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Orig,
    Op(OperationKind),
}

impl Class {
    /// Confusion-matrix order.
    pub const TABLE_ORDER: [Class; 12] = [
        Class::Orig,
        Class::Op(OperationKind::GC),
        Class::Op(OperationKind::HE),
        Class::Op(OperationKind::UM),
        Class::Op(OperationKind::MeanF),
        Class::Op(OperationKind::GF),
        Class::Op(OperationKind::MedF),
        Class::Op(OperationKind::WF),
        Class::Op(OperationKind::Sca),
        Class::Op(OperationKind::Rot),
        Class::Op(OperationKind::JPEG),
        Class::Op(OperationKind::JP2),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Class::Orig => "Orig",
            Class::Op(k) => k.name(),
        }
    }

    /// Position in [`Class::TABLE_ORDER`].
    pub fn code(self) -> u64 {
        Class::TABLE_ORDER.iter().position(|&c| c == self).expect("listed") as u64
    }

    pub fn operation(self) -> Option<OperationKind> {
        match self {
            Class::Orig => None,
            Class::Op(k) => Some(k),
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("orig") {
            Ok(Class::Orig)
        } else {
            s.parse().map(Class::Op)
        }
    }
}

impl Serialize for Class {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Class {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sorts classes into confusion-matrix order.
pub fn table_order(classes: &[Class]) -> Vec<Class> {
    let mut v = classes.to_vec();
    v.sort_by_key(|c| c.code());
    v
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Original {
    pub id: String,
    pub image: GrayImage,
}

/// `count` synthetic originals named `syn-000000`, `syn-000001`, ...
pub fn synth_corpus(config: &SynthConfig, count: usize) -> Result<Vec<Original>> {
    config.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            Ok(Original {
                id: format!("syn-{i:06}"),
                image: synth_image(config, i as u64)?,
            })
        })
        .collect()
}

/// Reads every `.pgm` file in `dir`, sorted by file name. Images must be
/// square and at least `min_size` on a side.
pub fn load_corpus(dir: &Path, min_size: usize) -> Result<Vec<Original>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        log::warn!("no .pgm files in {}", dir.display());
    }
    paths
        .iter()
        .map(|path| {
            let image = GrayImage::load_pgm(path)?;
            let (w, h) = (image.width(), image.height());
            if w != h || w < min_size {
                return Err(Error::Format {
                    path: path.clone(),
                    msg: format!("{w}x{h} image; need a square of side >= {min_size}"),
                });
            }
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(Original { id, image })
        })
        .collect()
}

/// The centred `c`×`c` window; offsets are `floor((dim − c)/2)`.
pub fn center_crop(img: &GrayImage, c: usize) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    if c == 0 || c > w || c > h {
        return Err(Error::invalid("center_crop", format!("cannot crop {c}x{c} from {w}x{h}")));
    }
    let (ox, oy) = ((w - c) / 2, (h - c) / 2);
    Ok(GrayImage::from_fn(c, c, |x, y| img.get(ox + x, oy + y)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.65,
            validation: 0.10,
            test: 0.25,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "split ratios",
                format!("{parts:?} must be in [0, 1] and sum to 1"),
            ));
        }
        Ok(())
    }

    /// Number of originals in train and validation; test takes the rest.
    pub fn counts(&self, n: usize) -> (usize, usize) {
        let train = (n as f64 * self.train).round() as usize;
        let validation = ((n as f64 * self.validation).round() as usize).min(n - train);
        (train, validation)
    }
}

/// Split of each original, from a seeded permutation of the indices.
pub fn assign_splits(n: usize, ratios: &SplitRatios, seed: u64) -> Result<Vec<Split>> {
    ratios.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_SPLIT])));
    let (train, validation) = ratios.counts(n);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < train {
            splits[i] = Split::Train;
        } else if rank < train + validation {
            splits[i] = Split::Validation;
        }
    }
    Ok(splits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledItem {
    pub image_id: String,
    /// Index of the source image among the originals.
    pub original: usize,
    /// Index into the owning set's `classes`.
    pub label: usize,
    pub operation: Option<OperationSpec>,
    pub seed: u64,
    pub image: GrayImage,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LabeledSet {
    pub classes: Vec<Class>,
    pub items: Vec<LabeledItem>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }

    pub fn original_ids(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.image_id.as_str()).collect()
    }
}

/// One line of the dataset manifest:
/// `{"image_id", "split", "class", "params", "crop", "seed"}`, with `params`
/// absent for originals and parameter-free operations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEntry", into = "RawEntry")]
pub struct ManifestEntry {
    pub image_id: String,
    pub split: Split,
    pub class: Class,
    pub operation: Option<OperationSpec>,
    pub crop: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    image_id: String,
    split: Split,
    class: Class,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<serde_json::Value>,
    crop: usize,
    seed: u64,
}

impl From<ManifestEntry> for RawEntry {
    fn from(e: ManifestEntry) -> Self {
        let params = e.operation.and_then(|op| match serde_json::to_value(op) {
            Ok(serde_json::Value::Object(mut m)) => m.remove("params"),
            _ => None,
        });
        RawEntry {
            image_id: e.image_id,
            split: e.split,
            class: e.class,
            params,
            crop: e.crop,
            seed: e.seed,
        }
    }
}

impl TryFrom<RawEntry> for ManifestEntry {
    type Error = String;

    fn try_from(r: RawEntry) -> std::result::Result<Self, String> {
        let operation = match r.class.operation() {
            None => None,
            Some(kind) => {
                let mut obj = serde_json::Map::new();
                obj.insert("kind".into(), kind.name().into());
                if let Some(p) = r.params {
                    obj.insert("params".into(), p);
                }
                Some(serde_json::from_value(obj.into()).map_err(|e| format!("{kind} params: {e}"))?)
            }
        };
        Ok(ManifestEntry {
            image_id: r.image_id,
            split: r.split,
            class: r.class,
            operation,
            crop: r.crop,
            seed: r.seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub crop: usize,
    pub train: LabeledSet,
    pub validation: LabeledSet,
    pub test: LabeledSet,
}

impl Splits {
    pub fn get(&self, split: Split) -> &LabeledSet {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut LabeledSet {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }

    pub fn classes(&self) -> &[Class] {
        &self.train.classes
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut out = Vec::new();
        for split in Split::ALL {
            let set = self.get(split);
            out.extend(set.items.iter().map(|item| ManifestEntry {
                image_id: item.image_id.clone(),
                split,
                class: set.classes[item.label],
                operation: item.operation.clone(),
                crop: self.crop,
                seed: item.seed,
            }));
        }
        out
    }

    pub fn manifest_jsonl(&self) -> String {
        self.manifest()
            .iter()
            .map(|e| serde_json::to_string(e).expect("manifest entries serialise") + "\n")
            .collect()
    }

    /// SHA-256 over the manifest lines and the pixels of every item, hex encoded.
    pub fn manifest_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest_jsonl().as_bytes());
        for split in Split::ALL {
            for item in &self.get(split).items {
                h.update(item.image.pixels());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `<root>/<split>/<class>/<id>.pgm`, `manifest.jsonl` and `classes.json`.
    pub fn save(&self, root: &Path) -> Result<()> {
        for split in Split::ALL {
            let set = self.get(split);
            for class in &set.classes {
                let dir = root.join(split.name()).join(class.name());
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            for item in &set.items {
                let path = root
                    .join(split.name())
                    .join(set.classes[item.label].name())
                    .join(format!("{}.pgm", item.image_id));
                item.image.save_pgm(&path)?;
            }
        }
        let manifest = root.join("manifest.jsonl");
        fs::write(&manifest, self.manifest_jsonl()).map_err(|e| Error::io(&manifest, e))?;
        let classes = root.join("classes.json");
        fs::write(&classes, serde_json::to_vec(self.classes())?).map_err(|e| Error::io(&classes, e))?;
        Ok(())
    }

    /// Reads a dataset written by [`Splits::save`].
    pub fn load(root: &Path) -> Result<Splits> {
        let classes_path = root.join("classes.json");
        let bytes = fs::read(&classes_path).map_err(|e| Error::io(&classes_path, e))?;
        let classes: Vec<Class> = serde_json::from_slice(&bytes)?;
        let manifest_path = root.join("manifest.jsonl");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let empty = LabeledSet {
            classes: classes.clone(),
            items: Vec::new(),
        };
        let mut splits = Splits {
            crop: 0,
            train: empty.clone(),
            validation: empty.clone(),
            test: empty,
        };
        let mut originals: Vec<String> = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Format {
                path: manifest_path.clone(),
                msg: format!("line {}: {e}", n + 1),
            })?;
            let label = classes.iter().position(|&c| c == entry.class).ok_or_else(|| Error::Format {
                path: manifest_path.clone(),
                msg: format!("line {}: class {} not in classes.json", n + 1, entry.class),
            })?;
            let path = root
                .join(entry.split.name())
                .join(entry.class.name())
                .join(format!("{}.pgm", entry.image_id));
            let image = GrayImage::load_pgm(&path)?;
            let original = match originals.iter().position(|id| *id == entry.image_id) {
                Some(i) => i,
                None => {
                    originals.push(entry.image_id.clone());
                    originals.len() - 1
                }
            };
            splits.crop = entry.crop;
            splits.get_mut(entry.split).items.push(LabeledItem {
                image_id: entry.image_id,
                original,
                label,
                operation: entry.operation,
                seed: entry.seed,
                image,
            });
        }
        Ok(splits)
    }
}

/// Whether the operation output can still be cropped to `crop` without
/// reaching padding or running out of pixels.
pub fn crop_feasible(spec: &OperationSpec, width: usize, height: usize, crop: usize) -> bool {
    match *spec {
        OperationSpec::Sca { factor } => scaled_len(width, factor) >= crop && scaled_len(height, factor) >= crop,
        OperationSpec::Rot { degrees } => rotation_crop_is_clean(width, height, degrees, crop),
        _ => width >= crop && height >= crop,
    }
}

/// Draws a parameterisation of `kind` whose output survives a `crop` centre crop.
pub fn sample_feasible(kind: OperationKind, width: usize, height: usize, crop: usize, seed: u64) -> Result<OperationSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..MAX_RESAMPLE {
        let spec = sample_operation(kind, &mut rng);
        if crop_feasible(&spec, width, height, crop) {
            return Ok(spec);
        }
        log::debug!("re-sampling {kind} (attempt {}): {spec:?} cannot be cropped to {crop}", attempt + 1);
    }
    Err(Error::invalid(
        "build_dataset",
        format!("no {kind} parameters out of {MAX_RESAMPLE} draws allow a {crop}x{crop} crop of a {width}x{height} image"),
    ))
}

/// Forges every class for every original and splits by original identity.
pub fn build_dataset(
    originals: &[Original],
    classes: &[Class],
    crop: usize,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<Splits> {
    build_dataset_with(originals, classes, crop, ratios, seed, &[])
}

/// [`build_dataset`] with some operations pinned to fixed parameters
/// instead of sampled ones.
pub fn build_dataset_with(
    originals: &[Original],
    classes: &[Class],
    crop: usize,
    ratios: &SplitRatios,
    seed: u64,
    fixed: &[OperationSpec],
) -> Result<Splits> {
    if originals.is_empty() {
        return Err(Error::invalid("build_dataset", "no original images"));
    }
    if classes.len() < 2 {
        return Err(Error::invalid("build_dataset", "need at least two classes"));
    }
    if classes.iter().collect::<BTreeSet<_>>().len() != classes.len() {
        return Err(Error::invalid("build_dataset", format!("duplicate classes in {classes:?}")));
    }
    let split_of = assign_splits(originals.len(), ratios, seed)?;

    let forged: Vec<Vec<LabeledItem>> = originals
        .par_iter()
        .enumerate()
        .map(|(i, orig)| {
            let (w, h) = (orig.image.width(), orig.image.height());
            classes
                .iter()
                .enumerate()
                .map(|(label, &class)| {
                    let op_seed = derive_seed(seed, &[TAG_OPERATION, i as u64, class.code()]);
                    let (operation, image) = match class.operation() {
                        None => (None, center_crop(&orig.image, crop)?),
                        Some(kind) => {
                            let spec = match fixed.iter().find(|f| f.kind() == kind) {
                                Some(f) if crop_feasible(f, w, h, crop) => f.clone(),
                                Some(f) => {
                                    return Err(Error::invalid(
                                        "build_dataset",
                                        format!("fixed {f:?} cannot be cropped to {crop} from {w}x{h}"),
                                    ))
                                }
                                None => sample_feasible(kind, w, h, crop, op_seed)?,
                            };
                            let processed = apply(&orig.image, &spec)?;
                            (Some(spec), center_crop(&processed, crop)?)
                        }
                    };
                    Ok(LabeledItem {
                        image_id: orig.id.clone(),
                        original: i,
                        label,
                        operation,
                        seed: op_seed,
                        image,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let empty = LabeledSet {
        classes: classes.to_vec(),
        items: Vec::new(),
    };
    let mut splits = Splits {
        crop,
        train: empty.clone(),
        validation: empty.clone(),
        test: empty,
    };
    for (items, &split) in forged.into_iter().zip(&split_of) {
        splits.get_mut(split).items.extend(items);
    }
    Ok(splits)
}

/// Seeded permutation of `0..len` for one epoch.
pub fn epoch_order(len: usize, epoch_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, &[TAG_EPOCH])));
    order
}

/// Mini-batches of a labelled set as `(N×1×c×c tensor, labels)`.
pub struct Batches<'a> {
    set: &'a LabeledSet,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    scale: InputScale,
}

impl Iterator for Batches<'_> {
    type Item = Result<(Tensor, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let images: Vec<&GrayImage> = idx.iter().map(|&i| &self.set.items[i].image).collect();
        let labels = idx.iter().map(|&i| self.set.items[i].label).collect();
        Some(images_to_tensor(&images, self.scale).map(|t| (t, labels)))
    }
}

/// Shuffled batches for one epoch; the last batch may be short.
pub fn batches(set: &LabeledSet, batch_size: usize, epoch_seed: u64, scale: InputScale) -> Result<Batches<'_>> {
    batches_in_order(set, batch_size, epoch_order(set.len(), epoch_seed), scale)
}

/// Batches in stored order, for evaluation.
pub fn sequential_batches(set: &LabeledSet, batch_size: usize, scale: InputScale) -> Result<Batches<'_>> {
    batches_in_order(set, batch_size, (0..set.len()).collect(), scale)
}

fn batches_in_order(set: &LabeledSet, batch_size: usize, order: Vec<usize>, scale: InputScale) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::invalid("batches", "batch size must be >= 1"));
    }
    Ok(Batches {
        set,
        order,
        batch_size,
        pos: 0,
        scale,
    })
}
