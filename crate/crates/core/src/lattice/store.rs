use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LatticeError, LatticeType, LatticeValue, Op};

/// The replica namespace: a fixed set of declared keys, each holding one
/// CRDT. Joins are keywise; it is a product lattice over the declared keys.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Store {
    entries: BTreeMap<String, LatticeValue>,
}

impl Store {
    /// A store with every declared key at bottom.
    pub fn new<'a>(schema: impl IntoIterator<Item = (&'a str, &'a LatticeType)>) -> Self {
        Store {
            entries: schema
                .into_iter()
                .map(|(k, t)| (k.to_owned(), LatticeValue::bottom(t)))
                .collect(),
        }
    }

    pub fn schema(&self) -> BTreeMap<String, LatticeType> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.lattice_type()))
            .collect()
    }

    pub fn get(&self, key: &str) -> Option<&LatticeValue> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> &BTreeMap<String, LatticeValue> {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Merges `delta` into `key`.
    pub fn apply(&mut self, key: &str, delta: &LatticeValue) -> Result<(), LatticeError> {
        let slot = self
            .entries
            .get_mut(key)
            .ok_or_else(|| LatticeError::UnknownKey(key.to_owned()))?;
        *slot = slot.merge(delta)?;
        Ok(())
    }

    /// Computes the delta for `op` against the current value of `key`.
    pub fn delta_for(&self, key: &str, op: &Op) -> Result<LatticeValue, LatticeError> {
        let current = self
            .get(key)
            .ok_or_else(|| LatticeError::UnknownKey(key.to_owned()))?;
        op.delta_against(current)
    }

    pub fn merge(&self, other: &Store) -> Result<Store, LatticeError> {
        if self.entries.len() != other.entries.len()
            || self.entries.keys().ne(other.entries.keys())
        {
            return Err(LatticeError::mismatch(
                format!("store{:?}", self.entries.keys().collect::<Vec<_>>()),
                format!("store{:?}", other.entries.keys().collect::<Vec<_>>()),
            ));
        }
        let entries = self
            .entries
            .iter()
            .zip(other.entries.values())
            .map(|((k, a), b)| Ok((k.clone(), a.merge(b)?)))
            .collect::<Result<_, LatticeError>>()?;
        Ok(Store { entries })
    }

    pub fn merge_in(&mut self, other: &Store) -> Result<(), LatticeError> {
        *self = self.merge(other)?;
        Ok(())
    }

    pub fn leq(&self, other: &Store) -> Result<bool, LatticeError> {
        if self.entries.keys().ne(other.entries.keys()) {
            return Err(LatticeError::mismatch("store", "store with different keys"));
        }
        for (a, b) in self.entries.values().zip(other.entries.values()) {
            if !a.leq(b)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Restriction to `keys`, used for partial read replies.
    pub fn project<'a>(&self, keys: impl IntoIterator<Item = &'a str>) -> Store {
        Store {
            entries: keys
                .into_iter()
                .filter_map(|k| self.entries.get(k).map(|v| (k.to_owned(), v.clone())))
                .collect(),
        }
    }

    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("stores always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{GSet, TwoPSet};
    use crate::Element;

    fn schema() -> Vec<(&'static str, LatticeType)> {
        vec![("cart", LatticeType::TwoPSet), ("txns", LatticeType::GSet)]
    }

    #[test]
    fn apply_and_merge() {
        let s = schema();
        let mut a = Store::new(s.iter().map(|(k, t)| (*k, t)));
        let mut b = a.clone();
        a.apply("cart", &TwoPSet { adds: GSet::singleton(Element::text("potato")), removes: GSet::new() }.into())
            .unwrap();
        b.apply("txns", &GSet::singleton(Element::text("t1")).into()).unwrap();
        let m = a.merge(&b).unwrap();
        assert!(a.leq(&m).unwrap());
        assert!(b.leq(&m).unwrap());
        assert!(!a.leq(&b).unwrap());
    }

    #[test]
    fn unknown_key_and_mismatch() {
        let s = schema();
        let mut a = Store::new(s.iter().map(|(k, t)| (*k, t)));
        assert!(matches!(
            a.apply("nope", &GSet::new().into()),
            Err(LatticeError::UnknownKey(_))
        ));
        assert!(matches!(
            a.apply("txns", &TwoPSet::default().into()),
            Err(LatticeError::TypeMismatch { .. })
        ));
        let other = Store::new([("x", &LatticeType::GSet)]);
        assert!(a.merge(&other).is_err());
    }
}
