//! Synthetic packet-length traces with known periodic structure.
//!
//! Each packet length is `base + Σ amp·sin(2π f i) + noise + burst`,
//! rounded and clamped to the observed Ethernet-era bounds [43, 1500].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::trace::PacketTrace;
use crate::{seed, Error, Result};

pub const MIN_PACKET_BYTES: u32 = 43;
pub const MAX_PACKET_BYTES: u32 = 1500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthProfile {
    #[serde(default)]
    pub name: String,
    pub base_bytes: u32,
    /// `(frequency in cycles/packet, amplitude in bytes)`.
    #[serde(default)]
    pub periodic_components: Vec<(f64, f64)>,
    #[serde(default)]
    pub burst_prob: f64,
    #[serde(default)]
    pub burst_bytes: u32,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthProfile {
    pub fn tone(name: &str, base_bytes: u32, freq: f64, amp: f64, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            base_bytes,
            periodic_components: vec![(freq, amp)],
            burst_prob: 0.0,
            burst_bytes: 0,
            noise_std: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &(f, a) in &self.periodic_components {
            if !(f > 0.0 && f <= 0.5) {
                return Err(Error::validation(format!(
                    "component frequency {f} outside (0, 0.5] cycles/packet"
                )));
            }
            if !a.is_finite() {
                return Err(Error::validation("component amplitude must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.burst_prob) {
            return Err(Error::validation(format!(
                "burst_prob {} outside [0, 1]",
                self.burst_prob
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::validation("noise_std must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Dominant frequencies of the four-device demonstration corpus.
pub const DEMO_FREQS: [f64; 4] = [0.05, 0.125, 0.25, 0.4];

/// Four noisy single-tone devices with bursts, one per [`DEMO_FREQS`] entry.
/// Device `d` is seeded with `derive_seed(seed, "synth", d)`.
pub fn demo_profiles(seed_: u64) -> Vec<SynthProfile> {
    DEMO_FREQS
        .iter()
        .enumerate()
        .map(|(d, &f)| SynthProfile {
            name: format!("tone-{f}"),
            base_bytes: 500,
            periodic_components: vec![(f, 200.0)],
            burst_prob: 0.02,
            burst_bytes: 800,
            noise_std: 60.0,
            seed: seed::derive_seed(seed_, "synth", d as u64),
        })
        .collect()
}

/// One trace per profile; device ids follow profile order.
pub fn generate_traces(profiles: &[SynthProfile], length: usize) -> Result<Vec<PacketTrace>> {
    profiles
        .iter()
        .enumerate()
        .map(|(d, p)| generate_trace(p, length, d))
        .collect()
}

pub fn generate_trace(profile: &SynthProfile, length: usize, device_id: usize) -> Result<PacketTrace> {
    profile.validate()?;
    if length < 1 {
        return Err(Error::validation("trace length must be >= 1"));
    }
    let mut rng = seed::rng(profile.seed);
    let noise = Normal::new(0.0, profile.noise_std).map_err(|e| Error::validation(e.to_string()))?;
    let two_pi = 2.0 * std::f64::consts::PI;

    let lengths = (0..length)
        .map(|i| {
            let t = i as f64;
            let periodic: f64 = profile
                .periodic_components
                .iter()
                .map(|&(f, a)| a * (two_pi * f * t).sin())
                .sum();
            // Both draws happen every packet so the noise stream does not
            // depend on burst_prob.
            let n = noise.sample(&mut rng);
            let burst = if rng.random::<f64>() < profile.burst_prob {
                profile.burst_bytes as f64
            } else {
                0.0
            };
            let v = (profile.base_bytes as f64 + periodic + n + burst).round();
            v.clamp(MIN_PACKET_BYTES as f64, MAX_PACKET_BYTES as f64) as u32
        })
        .collect();

    let name = if profile.name.is_empty() {
        format!("synth{device_id}")
    } else {
        profile.name.clone()
    };
    PacketTrace::new(device_id, name, lengths)
}
