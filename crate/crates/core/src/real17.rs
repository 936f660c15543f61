//! Serde helpers that write reals with 17 significant digits (`{:.16e}`),
//! enough for an exact binary64 round-trip. Only meaningful with the
//! `serde_json` serializer, which is the only one the on-disk formats use.

use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

pub fn format(x: f64) -> Option<String> {
    x.is_finite().then(|| format!("{x:.16e}"))
}

fn raw(x: f64) -> Result<Box<RawValue>, String> {
    let s = format(x).ok_or_else(|| format!("non-finite real {x}"))?;
    RawValue::from_string(s).map_err(|e| e.to_string())
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    raw(*x).map_err(S::Error::custom)?.serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    f64::deserialize(d)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for &x in v {
            seq.serialize_element(&super::raw(x).map_err(S::Error::custom)?)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<f64>::deserialize(d)
    }
}

pub mod opt_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::vec::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        Option::<Vec<f64>>::deserialize(d)
    }
}

pub mod map {
    use std::collections::BTreeMap;

    use serde::ser::SerializeMap;

    use super::*;

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut out = s.serialize_map(Some(m.len()))?;
        for (k, &v) in m {
            out.serialize_entry(k, &super::raw(v).map_err(S::Error::custom)?)?;
        }
        out.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "super")]
        x: f64,
        #[serde(with = "super::vec")]
        v: Vec<f64>,
    }

    #[test]
    fn writes_seventeen_significant_digits() {
        let h = Holder {
            x: 0.1,
            v: vec![-2.5, 1e-300],
        };
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(
            s,
            r#"{"x":1.0000000000000001e-1,"v":[-2.5000000000000000e0,1.0000000000000000e-300]}"#
        );
    }

    #[test]
    fn rejects_non_finite() {
        let h = Holder {
            x: f64::NAN,
            v: vec![],
        };
        assert!(serde_json::to_string(&h).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let h = Holder { x, v: vec![x, -x] };
            let back: Holder = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
            prop_assert_eq!(back.x.to_bits(), x.to_bits());
            prop_assert_eq!(back.v[1].to_bits(), (-x).to_bits());
        }
    }
}
