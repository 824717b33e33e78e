//! Synthetic image world: rendered class templates, the augmentation
//! family, frozen stand-in encoders and episode sampling.

mod augment;
mod dataset;
mod descriptors;
mod encoders;
mod episode;
mod image;

pub use augment::{apply_augmentation, AugmentationType, NUM_AUGMENTATIONS};
pub use dataset::{
    generate_dataset, read_dataset, write_dataset, ClassImages, DatasetConfig, Partition, Split,
    ToyDataset, DATASET_MAGIC,
};
pub use descriptors::{image_descriptors, NUM_DESCRIPTORS};
pub use encoders::{EncoderConfig, FrozenEncoders};
pub use episode::{sample_episode, sample_episode_with_anchor, Episode, ImageRef};
pub use image::{
    class_appearance, hsv_to_rgb, render, render_sample, rgb_to_hsv, Template, ToyImage,
    MAX_CLASSES,
};
