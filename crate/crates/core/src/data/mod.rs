//! Synthetic datasets and negative-data plumbing.

pub mod dense;
pub mod io;
pub mod negative;
pub mod paste;
pub mod toy2d;

pub use dense::{class_signature, generate_dense_toy, DenseToyConfig, DenseToyScene, DenseToyWorld};
pub use io::{read_dense_world, read_scored_images, read_toy2d, write_dense_world, write_scored_images, write_toy2d};
pub use negative::{
    choose_source, sample_negative, sample_negative_points, NegativeDraw, NegativeRngs, NegativeSource, SourceChoice,
    DEFAULT_LATENT_TEMPERATURE,
};
pub use paste::{paste, random_square, GridMask};
pub use toy2d::{generate_toy2d, generate_toy2d_with, Toy2dConfig, Toy2dDataset};
