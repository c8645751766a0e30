//! Serde adapters for maps whose keys are not strings.

pub mod pairs {
    use std::collections::BTreeMap;

    use serde::de::Deserializer;
    use serde::ser::Serializer;
    use serde::{Deserialize, Serialize};

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize,
        V: Serialize,
        S: Serializer,
    {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let items: Vec<(K, V)> = Vec::deserialize(d)?;
        let n = items.len();
        let map: BTreeMap<K, V> = items.into_iter().collect();
        if map.len() != n {
            return Err(serde::de::Error::custom("duplicate key"));
        }
        Ok(map)
    }
}

/// Rationals written as an integer or a `"p/q"` string.
pub mod rational {
    use num_rational::Rational64;
    use serde::de::{Deserializer, Error};
    use serde::Deserialize;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Rational64::from_integer(n)),
            Raw::Text(s) => s
                .trim()
                .parse::<Rational64>()
                .map_err(|_| D::Error::custom(format!("`{s}` is not a rational of the form p/q"))),
        }
    }
}
