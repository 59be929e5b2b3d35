use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// An opaque set element stored in canonical JSON text form.
///
/// Records are serialized with sorted keys, so two elements are equal exactly
/// when their canonical texts are equal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Element(String);

impl Element {
    pub fn from_json(value: &Value) -> Self {
        // serde_json's object map is a BTreeMap here, so key order is canonical.
        Element(value.to_string())
    }

    /// A plain string element, e.g. `"potato"`.
    pub fn text(s: &str) -> Self {
        Element::from_json(&Value::String(s.to_owned()))
    }

    /// Parses arbitrary JSON text and canonicalizes it.
    pub fn parse(json: &str) -> Result<Self, serde_json::Error> {
        let value: Value = serde_json::from_str(json)?;
        Ok(Element::from_json(&value))
    }

    pub fn to_json(&self) -> Value {
        serde_json::from_str(&self.0).expect("element text is canonical JSON")
    }

    pub fn canonical(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_json() {
            Value::String(s) => f.write_str(&s),
            _ => f.write_str(&self.0),
        }
    }
}

impl From<&str> for Element {
    fn from(s: &str) -> Self {
        Element::text(s)
    }
}

impl Serialize for Element {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Ok(Element::from_json(&value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_canonical() {
        let a = Element::parse(r#"{"type":"GIFTCARD","amount":120}"#).unwrap();
        let b = Element::parse(r#"{ "amount": 120, "type": "GIFTCARD" }"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.canonical(), r#"{"amount":120,"type":"GIFTCARD"}"#);
    }

    #[test]
    fn text_displays_unquoted() {
        assert_eq!(Element::text("potato").to_string(), "potato");
        assert_eq!(Element::text("potato").canonical(), "\"potato\"");
    }
}
