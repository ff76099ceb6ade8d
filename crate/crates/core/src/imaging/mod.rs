//! Spectrogram imaging: percentile normalization, rendering to fixed-size
//! 3-channel images, channel standardization and training augmentation.

mod augment;
mod channel;
mod normalize;
pub mod png;
mod render;
mod viridis;

pub use augment::{augment, hflip, AugmentConfig};
pub use channel::{fit_channel_stats, standardize_image, ChannelStats};
pub use normalize::{
    fit_global_bounds, fit_percentile_bounds, normalize_spectrogram, NormalizationMode, PercentileBounds,
};
pub use render::{render_image, resize, Colormap, ResizeMethod, SpectroImage};
pub use viridis::VIRIDIS;

pub const DEFAULT_IMAGE_SIZE: usize = 224;
pub const CHANNELS: usize = 3;
