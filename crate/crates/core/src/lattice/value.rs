use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use super::{BoolLattice, GCounter, GSet, Lattice, LatticeError, MaxNat, PNCounter, TwoPSet};

/// Type descriptor for a [`LatticeValue`].
///
/// Text form: `gset`, `twopset`, `gcounter`, `pncounter`, `maxnat`, `bool`,
/// `pair<A,B>`, `map<T>`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatticeType {
    GSet,
    TwoPSet,
    GCounter,
    PNCounter,
    MaxNat,
    Bool,
    Pair(Box<LatticeType>, Box<LatticeType>),
    Map(Box<LatticeType>),
}

impl fmt::Display for LatticeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeType::GSet => f.write_str("gset"),
            LatticeType::TwoPSet => f.write_str("twopset"),
            LatticeType::GCounter => f.write_str("gcounter"),
            LatticeType::PNCounter => f.write_str("pncounter"),
            LatticeType::MaxNat => f.write_str("maxnat"),
            LatticeType::Bool => f.write_str("bool"),
            LatticeType::Pair(a, b) => write!(f, "pair<{a},{b}>"),
            LatticeType::Map(v) => write!(f, "map<{v}>"),
        }
    }
}

impl FromStr for LatticeType {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let unknown = || LatticeError::UnknownType(s.to_owned());
        let inner = |prefix: &str| {
            s.strip_prefix(prefix)
                .and_then(|rest| rest.strip_suffix('>'))
        };
        if let Some(body) = inner("map<") {
            return Ok(LatticeType::Map(Box::new(body.parse()?)));
        }
        if let Some(body) = inner("pair<") {
            // split at the top-level comma
            let mut depth = 0usize;
            for (i, c) in body.char_indices() {
                match c {
                    '<' => depth += 1,
                    '>' => depth = depth.checked_sub(1).ok_or_else(unknown)?,
                    ',' if depth == 0 => {
                        let a = body[..i].parse()?;
                        let b = body[i + 1..].parse()?;
                        return Ok(LatticeType::Pair(Box::new(a), Box::new(b)));
                    }
                    _ => {}
                }
            }
            return Err(unknown());
        }
        match s {
            "gset" => Ok(LatticeType::GSet),
            "twopset" => Ok(LatticeType::TwoPSet),
            "gcounter" => Ok(LatticeType::GCounter),
            "pncounter" => Ok(LatticeType::PNCounter),
            "maxnat" => Ok(LatticeType::MaxNat),
            "bool" => Ok(LatticeType::Bool),
            _ => Err(unknown()),
        }
    }
}

impl Serialize for LatticeType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LatticeType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Least element of the type named by `descriptor`.
pub fn bottom_of(descriptor: &str) -> Result<LatticeValue, LatticeError> {
    Ok(LatticeValue::bottom(&descriptor.parse()?))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairValue {
    pub first: Box<LatticeValue>,
    pub second: Box<LatticeValue>,
}

/// Keyed lattice: every entry holds a value of `value_type`, absent keys are
/// bottom. Bottom entries are never stored.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MapLattice {
    value_type: LatticeType,
    entries: BTreeMap<String, LatticeValue>,
}

impl MapLattice {
    pub fn new(value_type: LatticeType) -> Self {
        MapLattice {
            value_type,
            entries: BTreeMap::new(),
        }
    }

    pub fn value_type(&self) -> &LatticeType {
        &self.value_type
    }

    pub fn entries(&self) -> &BTreeMap<String, LatticeValue> {
        &self.entries
    }

    pub fn get(&self, key: &str) -> LatticeValue {
        self.entries
            .get(key)
            .cloned()
            .unwrap_or_else(|| LatticeValue::bottom(&self.value_type))
    }

    /// Merges `delta` into the entry at `key`.
    pub fn put(&mut self, key: &str, delta: &LatticeValue) -> Result<(), LatticeError> {
        let merged = self.get(key).merge(delta)?;
        if merged.is_bottom() {
            self.entries.remove(key);
        } else {
            self.entries.insert(key.to_owned(), merged);
        }
        Ok(())
    }

    pub fn merge(&self, other: &MapLattice) -> Result<MapLattice, LatticeError> {
        if self.value_type != other.value_type {
            return Err(LatticeError::mismatch(
                LatticeType::Map(Box::new(self.value_type.clone())),
                LatticeType::Map(Box::new(other.value_type.clone())),
            ));
        }
        let mut out = self.clone();
        for (k, v) in &other.entries {
            out.put(k, v)?;
        }
        Ok(out)
    }
}

/// A value of any supported lattice type.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatticeValue {
    GSet(GSet),
    TwoPSet(TwoPSet),
    GCounter(GCounter),
    PNCounter(PNCounter),
    MaxNat(MaxNat),
    Bool(BoolLattice),
    Pair(PairValue),
    Map(MapLattice),
}

impl LatticeValue {
    pub fn bottom(ty: &LatticeType) -> LatticeValue {
        match ty {
            LatticeType::GSet => LatticeValue::GSet(GSet::bottom()),
            LatticeType::TwoPSet => LatticeValue::TwoPSet(TwoPSet::bottom()),
            LatticeType::GCounter => LatticeValue::GCounter(GCounter::bottom()),
            LatticeType::PNCounter => LatticeValue::PNCounter(PNCounter::bottom()),
            LatticeType::MaxNat => LatticeValue::MaxNat(MaxNat::bottom()),
            LatticeType::Bool => LatticeValue::Bool(BoolLattice::bottom()),
            LatticeType::Pair(a, b) => LatticeValue::Pair(PairValue {
                first: Box::new(LatticeValue::bottom(a)),
                second: Box::new(LatticeValue::bottom(b)),
            }),
            LatticeType::Map(v) => LatticeValue::Map(MapLattice::new((**v).clone())),
        }
    }

    pub fn lattice_type(&self) -> LatticeType {
        match self {
            LatticeValue::GSet(_) => LatticeType::GSet,
            LatticeValue::TwoPSet(_) => LatticeType::TwoPSet,
            LatticeValue::GCounter(_) => LatticeType::GCounter,
            LatticeValue::PNCounter(_) => LatticeType::PNCounter,
            LatticeValue::MaxNat(_) => LatticeType::MaxNat,
            LatticeValue::Bool(_) => LatticeType::Bool,
            LatticeValue::Pair(p) => LatticeType::Pair(
                Box::new(p.first.lattice_type()),
                Box::new(p.second.lattice_type()),
            ),
            LatticeValue::Map(m) => LatticeType::Map(Box::new(m.value_type.clone())),
        }
    }

    pub fn is_bottom(&self) -> bool {
        *self == LatticeValue::bottom(&self.lattice_type())
    }

    /// Least upper bound of two values of the same type.
    pub fn merge(&self, other: &LatticeValue) -> Result<LatticeValue, LatticeError> {
        use LatticeValue as V;
        Ok(match (self, other) {
            (V::GSet(a), V::GSet(b)) => V::GSet(a.join(b)),
            (V::TwoPSet(a), V::TwoPSet(b)) => V::TwoPSet(a.join(b)),
            (V::GCounter(a), V::GCounter(b)) => V::GCounter(a.join(b)),
            (V::PNCounter(a), V::PNCounter(b)) => V::PNCounter(a.join(b)),
            (V::MaxNat(a), V::MaxNat(b)) => V::MaxNat(a.join(b)),
            (V::Bool(a), V::Bool(b)) => V::Bool(a.join(b)),
            (V::Pair(a), V::Pair(b)) => V::Pair(PairValue {
                first: Box::new(a.first.merge(&b.first)?),
                second: Box::new(a.second.merge(&b.second)?),
            }),
            (V::Map(a), V::Map(b)) => V::Map(a.merge(b)?),
            _ => {
                return Err(LatticeError::mismatch(
                    self.lattice_type(),
                    other.lattice_type(),
                ))
            }
        })
    }

    /// `self <= other`, i.e. `merge(self, other) == other`.
    pub fn leq(&self, other: &LatticeValue) -> Result<bool, LatticeError> {
        use LatticeValue as V;
        Ok(match (self, other) {
            (V::GSet(a), V::GSet(b)) => a.leq(b),
            (V::TwoPSet(a), V::TwoPSet(b)) => a.leq(b),
            (V::GCounter(a), V::GCounter(b)) => a.leq(b),
            (V::PNCounter(a), V::PNCounter(b)) => a.leq(b),
            (V::MaxNat(a), V::MaxNat(b)) => a.leq(b),
            (V::Bool(a), V::Bool(b)) => a.leq(b),
            _ => self.merge(other)? == *other,
        })
    }

    /// Canonical text form: sets as sorted arrays, maps key-sorted.
    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("lattice values always serialize")
    }

    pub fn from_canonical(text: &str) -> Result<LatticeValue, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn as_gset(&self) -> Option<&GSet> {
        match self {
            LatticeValue::GSet(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_twopset(&self) -> Option<&TwoPSet> {
        match self {
            LatticeValue::TwoPSet(s) => Some(s),
            _ => None,
        }
    }
}

impl From<GSet> for LatticeValue {
    fn from(v: GSet) -> Self {
        LatticeValue::GSet(v)
    }
}

impl From<TwoPSet> for LatticeValue {
    fn from(v: TwoPSet) -> Self {
        LatticeValue::TwoPSet(v)
    }
}

impl From<GCounter> for LatticeValue {
    fn from(v: GCounter) -> Self {
        LatticeValue::GCounter(v)
    }
}

impl From<PNCounter> for LatticeValue {
    fn from(v: PNCounter) -> Self {
        LatticeValue::PNCounter(v)
    }
}

impl From<MaxNat> for LatticeValue {
    fn from(v: MaxNat) -> Self {
        LatticeValue::MaxNat(v)
    }
}

impl From<BoolLattice> for LatticeValue {
    fn from(v: BoolLattice) -> Self {
        LatticeValue::Bool(v)
    }
}

impl Serialize for LatticeValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st;
        match self {
            LatticeValue::GSet(s) => {
                st = serializer.serialize_struct("LatticeValue", 2)?;
                st.serialize_field("type", "gset")?;
                st.serialize_field("elements", s)?;
            }
            LatticeValue::TwoPSet(s) => {
                st = serializer.serialize_struct("LatticeValue", 3)?;
                st.serialize_field("type", "twopset")?;
                st.serialize_field("adds", &s.adds)?;
                st.serialize_field("removes", &s.removes)?;
            }
            LatticeValue::GCounter(c) => {
                st = serializer.serialize_struct("LatticeValue", 2)?;
                st.serialize_field("type", "gcounter")?;
                st.serialize_field("counts", c)?;
            }
            LatticeValue::PNCounter(c) => {
                st = serializer.serialize_struct("LatticeValue", 3)?;
                st.serialize_field("type", "pncounter")?;
                st.serialize_field("increments", &c.increments)?;
                st.serialize_field("decrements", &c.decrements)?;
            }
            LatticeValue::MaxNat(m) => {
                st = serializer.serialize_struct("LatticeValue", 2)?;
                st.serialize_field("type", "maxnat")?;
                st.serialize_field("value", &m.value)?;
            }
            LatticeValue::Bool(b) => {
                st = serializer.serialize_struct("LatticeValue", 2)?;
                st.serialize_field("type", "bool")?;
                st.serialize_field("value", &b.value)?;
            }
            LatticeValue::Pair(p) => {
                st = serializer.serialize_struct("LatticeValue", 3)?;
                st.serialize_field("type", "pair")?;
                st.serialize_field("first", &p.first)?;
                st.serialize_field("second", &p.second)?;
            }
            LatticeValue::Map(m) => {
                st = serializer.serialize_struct("LatticeValue", 3)?;
                st.serialize_field("type", "map")?;
                st.serialize_field("value_type", &m.value_type)?;
                st.serialize_field("entries", &m.entries)?;
            }
        }
        st.end()
    }
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum Repr {
    Gset {
        elements: GSet,
    },
    Twopset {
        adds: GSet,
        removes: GSet,
    },
    Gcounter {
        counts: GCounter,
    },
    Pncounter {
        increments: GCounter,
        decrements: GCounter,
    },
    Maxnat {
        value: u64,
    },
    Bool {
        value: bool,
    },
    Pair {
        first: Box<LatticeValue>,
        second: Box<LatticeValue>,
    },
    Map {
        value_type: LatticeType,
        entries: BTreeMap<String, LatticeValue>,
    },
}

impl TryFrom<Repr> for LatticeValue {
    type Error = LatticeError;

    fn try_from(r: Repr) -> Result<Self, LatticeError> {
        Ok(match r {
            Repr::Gset { elements } => LatticeValue::GSet(elements),
            Repr::Twopset { adds, removes } => LatticeValue::TwoPSet(TwoPSet { adds, removes }),
            Repr::Gcounter { counts } => LatticeValue::GCounter(counts),
            Repr::Pncounter {
                increments,
                decrements,
            } => LatticeValue::PNCounter(PNCounter {
                increments,
                decrements,
            }),
            Repr::Maxnat { value } => LatticeValue::MaxNat(MaxNat { value }),
            Repr::Bool { value } => LatticeValue::Bool(BoolLattice { value }),
            Repr::Pair { first, second } => LatticeValue::Pair(PairValue { first, second }),
            Repr::Map {
                value_type,
                entries,
            } => {
                let mut m = MapLattice::new(value_type);
                for (k, v) in entries {
                    if v.lattice_type() != m.value_type {
                        return Err(LatticeError::mismatch(&m.value_type, v.lattice_type()));
                    }
                    m.put(&k, &v)?;
                }
                LatticeValue::Map(m)
            }
        })
    }
}

impl<'de> Deserialize<'de> for LatticeValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = Repr::deserialize(deserializer)?;
        LatticeValue::try_from(repr).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Element, ReplicaId};

    #[test]
    fn type_descriptors_round_trip() {
        for s in ["gset", "twopset", "map<gcounter>", "pair<gset,map<maxnat>>", "bool"] {
            let t: LatticeType = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!(matches!(
            "orset".parse::<LatticeType>(),
            Err(LatticeError::UnknownType(_))
        ));
        assert!("pair<gset>".parse::<LatticeType>().is_err());
    }

    #[test]
    fn bottoms() {
        assert_eq!(bottom_of("gset").unwrap().to_canonical(), r#"{"type":"gset","elements":[]}"#);
        assert_eq!(
            bottom_of("twopset").unwrap().to_canonical(),
            r#"{"type":"twopset","adds":[],"removes":[]}"#
        );
        assert_eq!(bottom_of("maxnat").unwrap(), LatticeValue::MaxNat(MaxNat::new(0)));
        assert!(bottom_of("nope").is_err());
    }

    #[test]
    fn merge_type_mismatch() {
        let a = LatticeValue::bottom(&LatticeType::GSet);
        let b = LatticeValue::bottom(&LatticeType::MaxNat);
        assert!(matches!(a.merge(&b), Err(LatticeError::TypeMismatch { .. })));
        assert!(a.leq(&b).is_err());
    }

    #[test]
    fn map_merge_is_keywise() {
        let mut a = MapLattice::new(LatticeType::GCounter);
        a.put("x", &GCounter::with_slot(ReplicaId(0), 2).into()).unwrap();
        let mut b = MapLattice::new(LatticeType::GCounter);
        b.put("x", &GCounter::with_slot(ReplicaId(0), 5).into()).unwrap();
        b.put("y", &GCounter::with_slot(ReplicaId(1), 1).into()).unwrap();
        let m = a.merge(&b).unwrap();
        assert_eq!(m.get("x"), GCounter::with_slot(ReplicaId(0), 5).into());
        assert_eq!(m.get("y"), GCounter::with_slot(ReplicaId(1), 1).into());
        assert_eq!(m.get("z"), LatticeValue::bottom(&LatticeType::GCounter));
    }

    #[test]
    fn canonical_text_is_stable() {
        let mut s = GSet::new();
        s.insert(Element::text("zeta"));
        s.insert(Element::text("alpha"));
        let v = LatticeValue::GSet(s);
        let text = v.to_canonical();
        assert_eq!(text, r#"{"type":"gset","elements":["alpha","zeta"]}"#);
        assert_eq!(LatticeValue::from_canonical(&text).unwrap(), v);
    }

    #[test]
    fn decode_rejects_mistyped_map_entries() {
        let text = r#"{"type":"map","value_type":"gset","entries":{"k":{"type":"maxnat","value":1}}}"#;
        assert!(LatticeValue::from_canonical(text).is_err());
    }
}
