//! Scalar abstraction shared by the numeric modules.
//!
//! Everything that does floating-point math (spectral transforms, imaging,
//! the transformer and its optimizer) is written against [`Real`] so the
//! same code runs in `f32` for speed or `f64` for oracle-grade checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Short tag written into checkpoints and sidecars.
    const TAG: &'static str;

    #[inline]
    fn lit(x: f64) -> Self {
        // Every f64 literal is representable (possibly rounded) in f32/f64.
        Self::from_f64(x).unwrap()
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap()
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {
    const TAG: &'static str = "f32";
}

impl Real for f64 {
    const TAG: &'static str = "f64";
}

/// Runtime selector for the scalar type used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn tag(self) -> &'static str {
        match self {
            Precision::F32 => f32::TAG,
            Precision::F64 => f64::TAG,
        }
    }
}

impl FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(crate::Error::validation(format!("unknown precision `{other}`"))),
        }
    }
}
