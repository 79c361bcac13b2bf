//! The five PTB-XL diagnostic superclasses and a per-class flag vector.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Superclass {
    Norm,
    Cd,
    Hyp,
    Mi,
    Sttc,
}

impl Superclass {
    pub const ALL: [Superclass; 5] = [
        Superclass::Norm,
        Superclass::Cd,
        Superclass::Hyp,
        Superclass::Mi,
        Superclass::Sttc,
    ];

    /// The short code used by PTB-XL and in response JSON keys.
    pub fn code(self) -> &'static str {
        match self {
            Superclass::Norm => "NORM",
            Superclass::Cd => "CD",
            Superclass::Hyp => "HYP",
            Superclass::Mi => "MI",
            Superclass::Sttc => "STTC",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Superclass::Norm => "Normal ECG",
            Superclass::Cd => "Conduction Disturbance",
            Superclass::Hyp => "Hypertrophy",
            Superclass::Mi => "Myocardial Infarction",
            Superclass::Sttc => "ST-T Changes",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Superclass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown superclass {0:?}")]
pub struct UnknownSuperclass(pub String);

impl FromStr for Superclass {
    type Err = UnknownSuperclass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Superclass::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| UnknownSuperclass(s.to_string()))
    }
}

impl Serialize for Superclass {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Superclass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One boolean per superclass. Used for both ground-truth labels and predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SuperclassFlags([bool; 5]);

impl SuperclassFlags {
    pub const NONE: SuperclassFlags = SuperclassFlags([false; 5]);

    pub fn from_fn(mut f: impl FnMut(Superclass) -> bool) -> Self {
        let mut flags = [false; 5];
        for c in Superclass::ALL {
            flags[c.index()] = f(c);
        }
        Self(flags)
    }

    pub fn get(&self, class: Superclass) -> bool {
        self.0[class.index()]
    }

    pub fn set(&mut self, class: Superclass, value: bool) {
        self.0[class.index()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Superclass, bool)> + '_ {
        Superclass::ALL.into_iter().map(|c| (c, self.get(c)))
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }
}

impl Serialize for SuperclassFlags {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, bool> = self.iter().map(|(c, v)| (c.code(), v)).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SuperclassFlags {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, bool>::deserialize(d)?;
        let mut flags = SuperclassFlags::NONE;
        for (k, v) in map {
            let class: Superclass = k.parse().map_err(serde::de::Error::custom)?;
            flags.set(class, v);
        }
        Ok(flags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for c in Superclass::ALL {
            assert_eq!(c.code().parse::<Superclass>().unwrap(), c);
        }
        assert!("norm".parse::<Superclass>().is_err());
    }

    #[test]
    fn flags_serialize_as_map() {
        let mut f = SuperclassFlags::NONE;
        f.set(Superclass::Cd, true);
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"CD":true,"HYP":false,"MI":false,"NORM":false,"STTC":false}"#);
        assert_eq!(serde_json::from_str::<SuperclassFlags>(&json).unwrap(), f);
    }
}
