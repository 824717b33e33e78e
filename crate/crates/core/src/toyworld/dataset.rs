use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::image::{render_sample, ToyImage, MAX_CLASSES};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub per_class_count: usize,
    pub image_size: usize,
    pub shots: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            per_class_count: 40,
            image_size: 16,
            shots: 16,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 4 || !self.num_classes.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "num_classes must be even and >= 4, got {}",
                self.num_classes
            )));
        }
        if self.num_classes > MAX_CLASSES {
            return Err(Error::Config(format!(
                "num_classes {} exceeds the {MAX_CLASSES} available template/hue combinations",
                self.num_classes
            )));
        }
        if self.per_class_count < 24 {
            return Err(Error::Config(format!(
                "per_class_count must be >= 24, got {}",
                self.per_class_count
            )));
        }
        if self.shots == 0 || self.shots + 2 > self.per_class_count {
            return Err(Error::Config(format!(
                "shots must leave at least one validation and one test image, got {} of {}",
                self.shots, self.per_class_count
            )));
        }
        if self.image_size < 4 {
            return Err(Error::Config("image_size must be >= 4".into()));
        }
        Ok(())
    }

    pub fn val_count(&self) -> usize {
        (self.per_class_count - self.shots) / 2
    }

    pub fn test_count(&self) -> usize {
        self.per_class_count - self.shots - self.val_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Base,
    New,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassImages {
    pub train: Vec<ToyImage>,
    pub val: Vec<ToyImage>,
    pub test: Vec<ToyImage>,
}

impl ClassImages {
    pub fn partition(&self, p: Partition) -> &[ToyImage] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

/// Images grouped by class. The first half of the classes form the base
/// split, the rest the new split.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    config: DatasetConfig,
    classes: Vec<ClassImages>,
}

impl ToyDataset {
    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn image_size(&self) -> usize {
        self.config.image_size
    }

    pub fn num_base(&self) -> usize {
        self.num_classes().div_ceil(2)
    }

    pub fn classes_of(&self, split: Split) -> Range<usize> {
        match split {
            Split::Base => 0..self.num_base(),
            Split::New => self.num_base()..self.num_classes(),
        }
    }

    pub fn split_of(&self, class_id: usize) -> Split {
        if class_id < self.num_base() {
            Split::Base
        } else {
            Split::New
        }
    }

    pub fn class(&self, class_id: usize) -> &ClassImages {
        &self.classes[class_id]
    }

    pub fn images(&self, class_id: usize, p: Partition) -> &[ToyImage] {
        self.classes[class_id].partition(p)
    }
}

/// Renders the dataset. Class `k` uses its own derived random stream, so
/// each class is independent of `num_classes`.
pub fn generate_dataset(config: &DatasetConfig) -> Result<ToyDataset> {
    config.validate()?;
    let mut classes = Vec::with_capacity(config.num_classes);
    for k in 0..config.num_classes {
        let mut rng = seed::rng(config.seed, Stream::Dataset, k as u64);
        let mut images = (0..config.per_class_count)
            .map(|_| render_sample(k, config.image_size, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let test = images.split_off(config.shots + config.val_count());
        let val = images.split_off(config.shots);
        classes.push(ClassImages {
            train: images,
            val,
            test,
        });
    }
    Ok(ToyDataset {
        config: config.clone(),
        classes,
    })
}

pub const DATASET_MAGIC: &[u8; 7] = b"AAPLDS1";

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

/// Writes the dataset in the flat binary layout (all integers and floats
/// little-endian):
///
/// ```text
/// magic       7 bytes  "AAPLDS1"
/// K, H, W     3 x u32
/// train, val, test counts per class   3 x u32
/// seed        u64
/// records     K * (train + val + test) times:
///               class_id u32, H*W*3 f64 pixels (row-major, channel-last)
/// ```
///
/// Records are ordered by class, then partition (train, val, test).
pub fn write_dataset<W: Write>(ds: &ToyDataset, w: &mut W) -> Result<()> {
    let c = &ds.config;
    w.write_all(DATASET_MAGIC)?;
    for v in [
        c.num_classes,
        c.image_size,
        c.image_size,
        c.shots,
        c.val_count(),
        c.test_count(),
    ] {
        put_u32(w, v)?;
    }
    w.write_all(&c.seed.to_le_bytes())?;
    for class in &ds.classes {
        for p in [Partition::Train, Partition::Val, Partition::Test] {
            for img in class.partition(p) {
                put_u32(w, img.class_id)?;
                for v in img.pixels() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<ToyDataset> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let k = get_u32(r)?;
    let (h, w) = (get_u32(r)?, get_u32(r)?);
    if h != w {
        return Err(Error::Format(format!("non-square images {h}x{w}")));
    }
    let (train, val, test) = (get_u32(r)?, get_u32(r)?, get_u32(r)?);
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed)?;
    let config = DatasetConfig {
        num_classes: k,
        per_class_count: train + val + test,
        image_size: h,
        shots: train,
        seed: u64::from_le_bytes(seed),
    };
    if val != config.val_count() || test != config.test_count() {
        return Err(Error::Format("partition counts inconsistent with layout".into()));
    }
    let mut classes = Vec::with_capacity(k);
    let mut buf = [0u8; 8];
    for expected in 0..k {
        let mut parts: [Vec<ToyImage>; 3] = Default::default();
        for (slot, count) in parts.iter_mut().zip([train, val, test]) {
            for _ in 0..count {
                let class_id = get_u32(r)?;
                if class_id != expected {
                    return Err(Error::Format(format!(
                        "record for class {class_id} found in block of class {expected}"
                    )));
                }
                let mut pixels = Vec::with_capacity(h * w * 3);
                for _ in 0..h * w * 3 {
                    r.read_exact(&mut buf)?;
                    pixels.push(f64::from_le_bytes(buf));
                }
                slot.push(ToyImage::new(h, pixels, class_id)?);
            }
        }
        let [train, val, test] = parts;
        classes.push(ClassImages { train, val, test });
    }
    Ok(ToyDataset { config, classes })
}
