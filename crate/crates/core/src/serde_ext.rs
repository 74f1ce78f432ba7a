//! Serialization helpers for extended reals (JSON has no infinity).

use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else if v.is_nan() {
        s.serialize_none()
    } else {
        s.serialize_f64(*v)
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Ext {
        Num(f64),
        Str(String),
        Null(()),
    }
    match Ext::deserialize(d)? {
        Ext::Num(v) => Ok(v),
        Ext::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Ext::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        Ext::Str(s) => Err(serde::de::Error::custom(format!(
            "not an extended real: {s}"
        ))),
        Ext::Null(()) => Ok(f64::NAN),
    }
}

pub mod option {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => super::serialize(x, s),
            None => s.serialize_none(),
        }
    }
}
