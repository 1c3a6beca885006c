//! Bit-exact float encoding for model files.
//!
//! Floats are written twice: as the hexadecimal IEEE-754 bit pattern (which
//! is what gets read back) and as a decimal value for humans.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

fn encode(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn decode<E: serde::de::Error>(s: &str) -> Result<f64, E> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| E::custom(format!("bad float bit pattern {s:?}")))
}

/// `#[serde(with = "f64_vec")]` for `Vec<f64>` fields.
pub mod f64_vec {
    use super::*;

    #[derive(Serialize)]
    struct Out<'a> {
        bits: Vec<String>,
        values: &'a [f64],
    }

    #[derive(Deserialize)]
    struct In {
        bits: Vec<String>,
        #[serde(default)]
        values: Option<Vec<Option<f64>>>,
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        Out {
            bits: v.iter().map(|x| encode(*x)).collect(),
            values: v,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = In::deserialize(d)?;
        if let Some(values) = &raw.values {
            if values.len() != raw.bits.len() {
                return Err(D::Error::custom("bits and values differ in length"));
            }
        }
        raw.bits.iter().map(|b| decode(b)).collect()
    }
}

/// `#[serde(with = "f64_bits")]` for scalar `f64` fields.
pub mod f64_bits {
    use super::*;

    #[derive(Serialize)]
    struct Out {
        bits: String,
        value: f64,
    }

    #[derive(Deserialize)]
    struct In {
        bits: String,
        #[allow(dead_code)]
        #[serde(default)]
        value: Option<f64>,
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        Out {
            bits: encode(*v),
            value: *v,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(&In::deserialize(d)?.bits)
    }
}

/// `#[serde(with = "opt_f64_bits")]` for `Option<f64>` fields.
pub mod opt_f64_bits {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::f64_bits")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
