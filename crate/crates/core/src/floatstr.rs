//! Serde adapters writing `f64` as a decimal string. Rust's shortest
//! round-trip formatting makes the text exact; JSON numbers are accepted on
//! input too.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Text(String),
    Number(f64),
}

fn parse<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
    match r {
        Repr::Number(v) => Ok(v),
        Repr::Text(s) => {
            let v: f64 = s.trim().parse().map_err(|_| E::custom(format!("`{s}` is not a decimal number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(E::custom(format!("`{s}` is not finite")))
            }
        }
    }
}

/// Shortest exact text; exponent form for very large or very small values.
fn text(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-6..1e16).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&text(*v))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    parse(Repr::deserialize(d)?)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| text(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?.into_iter().map(parse).collect()
    }
}

pub mod map {
    use super::*;

    pub fn serialize<S: Serializer>(v: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(v.iter().map(|(k, x)| (k, text(*x))))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        BTreeMap::<String, Repr>::deserialize(d)?
            .into_iter()
            .map(|(k, r)| parse::<D::Error>(r).map(|v| (k, v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Row {
        #[serde(with = "super")]
        x: f64,
        #[serde(with = "super::vec")]
        v: Vec<f64>,
    }

    #[test]
    fn exact_round_trip() {
        let row = Row {
            x: 0.1 + 0.2,
            v: vec![1e-300, -2.5, 1.0 / 3.0, 6.02e23],
        };
        let text = serde_json::to_string(&row).unwrap();
        assert_eq!(text, r#"{"x":"0.30000000000000004","v":["1e-300","-2.5","0.3333333333333333","6.02e23"]}"#);
        assert_eq!(serde_json::from_str::<Row>(&text).unwrap(), row);
        let numbers: Row = serde_json::from_str(r#"{"x":1.5,"v":[2,"3"]}"#).unwrap();
        assert_eq!(numbers, Row { x: 1.5, v: vec![2.0, 3.0] });
        assert!(serde_json::from_str::<Row>(r#"{"x":"NaN","v":[]}"#).is_err());
    }
}
