use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Minimum images per device: enough for at least one image in each split.
pub const MIN_IMAGES_PER_DEVICE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub per_device: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 5.0 / 7.0,
            val_frac: 1.0 / 7.0,
            test_frac: 1.0 / 7.0,
            seed: 0,
            per_device: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::validation("split fractions must be positive"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "split fractions sum to {}, expected 1",
                fr.iter().sum::<f64>()
            )));
        }
        if !self.per_device {
            return Err(Error::validation("only per-device splits are supported"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

/// Image indices of one device, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeviceSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DeviceSplit {
    pub fn get(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    /// Indexed by device id.
    pub devices: Vec<DeviceSplit>,
}

impl DatasetSplit {
    /// Which split image `index` of `device` belongs to.
    pub fn kind_of(&self, device: usize, index: usize) -> Option<SplitKind> {
        let d = self.devices.get(device)?;
        [SplitKind::Train, SplitKind::Val, SplitKind::Test]
            .into_iter()
            .find(|&k| d.get(k).binary_search(&index).is_ok())
    }

    pub fn count(&self, kind: SplitKind) -> usize {
        self.devices.iter().map(|d| d.get(kind).len()).sum()
    }

    /// `device_id,image_index,split`, ordered by device then index.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "device_id,image_index,split")?;
        for (dev, d) in self.devices.iter().enumerate() {
            let mut rows: Vec<(usize, SplitKind)> = [SplitKind::Train, SplitKind::Val, SplitKind::Test]
                .into_iter()
                .flat_map(|k| d.get(k).iter().map(move |&i| (i, k)))
                .collect();
            rows.sort_unstable_by_key(|r| r.0);
            for (i, k) in rows {
                writeln!(out, "{dev},{i},{}", k.name())?;
            }
        }
        Ok(())
    }
}

/// Shuffles each device's image indices with the sub-seed `seed ^ device_id`
/// and cuts the permutation into train, val and test. Val and test get
/// `round(frac·n)` images; the remainder goes to train.
pub fn split_dataset(images_per_device: &[usize], spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let mut devices = Vec::with_capacity(images_per_device.len());
    for (dev, &n) in images_per_device.iter().enumerate() {
        if n < MIN_IMAGES_PER_DEVICE {
            return Err(Error::InsufficientData(format!(
                "device {dev} has {n} images; at least {MIN_IMAGES_PER_DEVICE} are needed to split"
            )));
        }
        let n_val = (spec.val_frac * n as f64).round() as usize;
        let n_test = (spec.test_frac * n as f64).round() as usize;
        if n_val == 0 || n_test == 0 || n_val + n_test >= n {
            return Err(Error::InsufficientData(format!(
                "device {dev}: {n} images give an empty split with these fractions"
            )));
        }
        let n_train = n - n_val - n_test;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(spec.seed ^ dev as u64));
        let take = |range: std::ops::Range<usize>| {
            let mut v = idx[range].to_vec();
            v.sort_unstable();
            v
        };
        devices.push(DeviceSplit {
            train: take(0..n_train),
            val: take(n_train..n_train + n_val),
            test: take(n_train + n_val..n),
        });
    }
    Ok(DatasetSplit { devices })
}
