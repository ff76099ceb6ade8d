use super::render::SpectroImage;
use super::CHANNELS;
use crate::{Error, Real, Result};

/// Per-channel mean and standard deviation over a training image set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats<T> {
    pub mean: [T; 3],
    pub std: [T; 3],
    pub fitted_on: usize,
}

/// Pools every pixel of every training image per channel. Sums run in
/// `f64` regardless of `T`.
pub fn fit_channel_stats<T: Real>(train_images: &[&SpectroImage<T>]) -> Result<ChannelStats<T>> {
    if train_images.is_empty() {
        return Err(Error::InsufficientData("no training images for channel statistics".into()));
    }
    let mut sum = [0.0f64; CHANNELS];
    let mut count = 0usize;
    for img in train_images {
        for px in img.pixels.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                sum[c] += px[c].as_f64();
            }
        }
        count += img.height * img.width;
    }
    let mean = sum.map(|s| s / count as f64);
    let mut sq = [0.0f64; CHANNELS];
    for img in train_images {
        for px in img.pixels.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                sq[c] += (px[c].as_f64() - mean[c]).powi(2);
            }
        }
    }
    let std = sq.map(|s| (s / count as f64).sqrt());
    if let Some(c) = (0..CHANNELS).find(|&c| !(std[c] > 0.0)) {
        return Err(Error::validation(format!(
            "degenerate channel {c}: zero variance over the training images"
        )));
    }
    Ok(ChannelStats {
        mean: mean.map(T::lit),
        std: std.map(T::lit),
        fitted_on: train_images.len(),
    })
}

/// `(pixel − μ_c) / σ_c`, channel-last layout preserved.
pub fn standardize_image<T: Real>(img: &SpectroImage<T>, stats: &ChannelStats<T>) -> Vec<T> {
    img.pixels
        .chunks_exact(CHANNELS)
        .flat_map(|px| (0..CHANNELS).map(move |c| (px[c] - stats.mean[c]) / stats.std[c]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(pixels: Vec<f64>, side: usize) -> SpectroImage<f64> {
        SpectroImage { height: side, width: side, pixels, device_id: 0, segment_index: 0 }
    }

    #[test]
    fn constant_images_are_degenerate() {
        let a = img(vec![0.5; 12], 2);
        let err = fit_channel_stats(&[&a, &a]).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
        assert!(fit_channel_stats::<f64>(&[]).is_err());
    }

    #[test]
    fn two_level_images() {
        let a = img(vec![0.0; 12], 2);
        let b = img(vec![1.0; 12], 2);
        let s = fit_channel_stats(&[&a, &b]).unwrap();
        assert_eq!(s.mean, [0.5; 3]);
        assert_eq!(s.std, [0.5; 3]);
        let r = fit_channel_stats(&[&b, &a]).unwrap();
        assert_eq!(s, r);

        let z = standardize_image(&b, &s);
        assert!(z.iter().all(|&v| v == 1.0));
        let mid = img(vec![0.5; 12], 2);
        assert!(standardize_image(&mid, &s).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_training_set_is_unit() {
        let mut rng = crate::seed::rng(3);
        use rand::Rng;
        let imgs: Vec<_> = (0..6)
            .map(|_| img((0..4 * 4 * 3).map(|_| rng.random::<f64>()).collect(), 4))
            .collect();
        let refs: Vec<_> = imgs.iter().collect();
        let s = fit_channel_stats(&refs).unwrap();
        let z: Vec<_> = imgs
            .iter()
            .map(|i| img(standardize_image(i, &s), 4))
            .collect();
        let zs = fit_channel_stats(&z.iter().collect::<Vec<_>>()).unwrap();
        for c in 0..3 {
            assert!(zs.mean[c].abs() < 1e-6);
            assert!((zs.std[c] - 1.0).abs() < 1e-6);
        }
    }
}
