//! Storage dtypes and conversion to and from the float32 compute representation.

use std::fmt;
use std::str::FromStr;

use half::{bf16, f16};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Element type of a stored tensor. Computation always happens in `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    BF16,
    F16,
}

impl Dtype {
    pub const fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::BF16 | Dtype::F16 => 2,
        }
    }

    /// Tag used in manifest files.
    pub const fn tag(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::BF16 => "bf16",
            Dtype::F16 => "f16",
        }
    }

    /// Parses the dtype tags used by safetensors headers (`F32`, `BF16`, `F16`).
    pub fn from_safetensors_tag(tag: &str) -> Result<Self, Error> {
        match tag {
            "F32" => Ok(Dtype::F32),
            "BF16" => Ok(Dtype::BF16),
            "F16" => Ok(Dtype::F16),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    /// Decodes little-endian `bytes` into `out`. `bytes.len()` must equal
    /// `out.len() * self.size_bytes()`.
    pub fn decode_into(self, bytes: &[u8], out: &mut [f32]) {
        debug_assert_eq!(bytes.len(), out.len() * self.size_bytes());
        match self {
            Dtype::F32 => {
                for (dst, src) in out.iter_mut().zip(bytes.chunks_exact(4)) {
                    *dst = f32::from_le_bytes([src[0], src[1], src[2], src[3]]);
                }
            }
            Dtype::BF16 => {
                for (dst, src) in out.iter_mut().zip(bytes.chunks_exact(2)) {
                    *dst = bf16::from_le_bytes([src[0], src[1]]).to_f32();
                }
            }
            Dtype::F16 => {
                for (dst, src) in out.iter_mut().zip(bytes.chunks_exact(2)) {
                    *dst = f16::from_le_bytes([src[0], src[1]]).to_f32();
                }
            }
        }
    }

    /// Encodes `values` as little-endian bytes, appending to `out`.
    /// Narrowing conversions round to nearest, ties to even.
    pub fn encode_into(self, values: &[f32], out: &mut Vec<u8>) {
        out.reserve(values.len() * self.size_bytes());
        match self {
            Dtype::F32 => {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::BF16 => {
                for v in values {
                    out.extend_from_slice(&bf16::from_f32(*v).to_le_bytes());
                }
            }
            Dtype::F16 => {
                for v in values {
                    out.extend_from_slice(&f16::from_f32(*v).to_le_bytes());
                }
            }
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "float32" => Ok(Dtype::F32),
            "bf16" | "bfloat16" => Ok(Dtype::BF16),
            "f16" | "float16" => Ok(Dtype::F16),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

impl Serialize for Dtype {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for Dtype {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(deserializer)?;
        tag.parse().map_err(serde::de::Error::custom)
    }
}
