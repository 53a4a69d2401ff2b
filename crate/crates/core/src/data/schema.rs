use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Level every categorical feature carries for absent or unrecognized values.
pub const MISSING_LEVEL: &str = "missing";

/// Categorical features are limited to this many levels (split masks are `u64`).
pub const MAX_LEVELS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical { levels: Vec<String> },
    Numeric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        units: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Feature {
            name: name.to_string(),
            kind: FeatureKind::Categorical { levels: levels.iter().map(|s| s.to_string()).collect() },
        }
    }

    pub fn numeric(name: &str, units: Option<&str>) -> Self {
        Feature { name: name.to_string(), kind: FeatureKind::Numeric { units: units.map(str::to_string) } }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }
}

/// A single covariate value. Categorical values are indices into the
/// feature's level list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Level(u32),
    Num(f64),
}

impl Value {
    pub fn as_num(self) -> f64 {
        match self {
            Value::Num(x) => x,
            Value::Level(l) => l as f64,
        }
    }
}

/// Covariates of one individual, aligned with the schema's feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector(pub Vec<Value>);

impl CovariateVector {
    pub fn values(&self) -> &[Value] {
        &self.0
    }
}

/// Ordered feature declarations. Serialized as a JSON object mapping each
/// feature name to `{kind, levels?, units?}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    features: Vec<Feature>,
    by_name: HashMap<String, usize>,
    level_index: Vec<HashMap<String, u32>>,
}

impl Schema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let mut by_name = HashMap::new();
        let mut level_index = Vec::with_capacity(features.len());
        let mut normalized = Vec::with_capacity(features.len());
        for (i, mut f) in features.into_iter().enumerate() {
            if by_name.insert(f.name.clone(), i).is_some() {
                return Err(Error::InvalidFeature { feature: f.name, reason: "duplicate name".into() });
            }
            let mut index = HashMap::new();
            if let FeatureKind::Categorical { levels } = &mut f.kind {
                if !levels.iter().any(|l| l == MISSING_LEVEL) {
                    levels.push(MISSING_LEVEL.to_string());
                }
                if levels.len() > MAX_LEVELS {
                    return Err(Error::InvalidFeature {
                        feature: f.name,
                        reason: format!("more than {MAX_LEVELS} levels"),
                    });
                }
                for (j, level) in levels.iter().enumerate() {
                    if index.insert(level.clone(), j as u32).is_some() {
                        return Err(Error::InvalidFeature {
                            feature: f.name.clone(),
                            reason: format!("duplicate level `{level}`"),
                        });
                    }
                }
            }
            level_index.push(index);
            normalized.push(f);
        }
        Ok(Schema { features: normalized, by_name, level_index })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn feature(&self, name: &str) -> Result<&Feature> {
        self.index_of(name).map(|i| &self.features[i]).ok_or_else(|| Error::UnknownFeature(name.into()))
    }

    pub fn levels(&self, feature: usize) -> Option<&[String]> {
        match &self.features[feature].kind {
            FeatureKind::Categorical { levels } => Some(levels),
            FeatureKind::Numeric { .. } => None,
        }
    }

    pub fn level_of(&self, feature: usize, level: &str) -> Option<u32> {
        self.level_index[feature].get(level).copied()
    }

    pub fn missing_level(&self, feature: usize) -> Option<u32> {
        self.level_of(feature, MISSING_LEVEL)
    }

    /// Parse a raw token for a feature. Unknown categorical levels and empty
    /// categorical tokens map to the missing level; the returned flag is true
    /// when that happened for a non-empty token.
    pub fn parse_token(&self, feature: usize, token: &str) -> std::result::Result<(Value, bool), ()> {
        let token = token.trim();
        match &self.features[feature].kind {
            FeatureKind::Categorical { .. } => {
                let missing = self.missing_level(feature).expect("categorical has missing level");
                if token.is_empty() {
                    return Ok((Value::Level(missing), false));
                }
                match self.level_of(feature, token) {
                    Some(l) => Ok((Value::Level(l), false)),
                    None => Ok((Value::Level(missing), true)),
                }
            }
            FeatureKind::Numeric { .. } => match token.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok((Value::Num(x), false)),
                _ => Err(()),
            },
        }
    }

    /// Render a value back to its CSV token.
    pub fn format_value(&self, feature: usize, value: Value) -> String {
        match (&self.features[feature].kind, value) {
            (FeatureKind::Categorical { levels }, Value::Level(l)) => levels[l as usize].clone(),
            (_, Value::Num(x)) => x.to_string(),
            (FeatureKind::Numeric { .. }, Value::Level(l)) => l.to_string(),
        }
    }

    pub fn validate(&self, x: &CovariateVector) -> Result<()> {
        if x.0.len() != self.features.len() {
            return Err(Error::Data(format!(
                "covariate vector has {} values, schema declares {}",
                x.0.len(),
                self.features.len()
            )));
        }
        for (f, v) in self.features.iter().zip(&x.0) {
            match (&f.kind, v) {
                (FeatureKind::Categorical { levels }, Value::Level(l)) if (*l as usize) < levels.len() => {}
                (FeatureKind::Numeric { .. }, Value::Num(x)) if x.is_finite() => {}
                _ => {
                    return Err(Error::InvalidFeature {
                        feature: f.name.clone(),
                        reason: format!("invalid value {v:?}"),
                    })
                }
            }
        }
        Ok(())
    }

    /// Build a covariate vector from a JSON object keyed by feature name.
    ///
    /// Absent or null categorical features become the missing level; absent
    /// numeric features are errors. Returns the number of unknown levels seen.
    pub fn covariates_from_json(
        &self,
        object: &serde_json::Map<String, serde_json::Value>,
    ) -> std::result::Result<(CovariateVector, usize), Vec<String>> {
        let mut bad = Vec::new();
        let mut unknown = 0;
        let mut values = Vec::with_capacity(self.features.len());
        for key in object.keys() {
            if self.index_of(key).is_none() {
                bad.push(key.clone());
            }
        }
        for (i, f) in self.features.iter().enumerate() {
            let raw = object.get(&f.name).filter(|v| !v.is_null());
            let token = match raw {
                None => String::new(),
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Number(n)) => n.to_string(),
                Some(serde_json::Value::Bool(b)) => b.to_string(),
                Some(_) => {
                    bad.push(f.name.clone());
                    values.push(Value::Num(0.0));
                    continue;
                }
            };
            match self.parse_token(i, &token) {
                Ok((v, was_unknown)) => {
                    unknown += was_unknown as usize;
                    values.push(v);
                }
                Err(()) => {
                    bad.push(f.name.clone());
                    values.push(Value::Num(0.0));
                }
            }
        }
        if bad.is_empty() {
            Ok((CovariateVector(values), unknown))
        } else {
            Err(bad)
        }
    }

    pub fn covariates_to_json(&self, x: &CovariateVector) -> serde_json::Map<String, serde_json::Value> {
        self.features
            .iter()
            .zip(&x.0)
            .map(|(f, v)| {
                let json = match (&f.kind, v) {
                    (FeatureKind::Categorical { levels }, Value::Level(l)) => {
                        serde_json::Value::String(levels[*l as usize].clone())
                    }
                    (_, v) => serde_json::json!(v.as_num()),
                };
                (f.name.clone(), json)
            })
            .collect()
    }

    /// Stable content hash of the schema declaration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Schema extended with a set of trailing numeric features.
    pub fn extended(&self, extra: &[Feature]) -> Result<Schema> {
        let mut features = self.features.clone();
        features.extend_from_slice(extra);
        Schema::new(features)
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureDecl {
    #[serde(flatten)]
    kind: FeatureKind,
}

impl Serialize for Schema {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let map: IndexMap<&str, FeatureDecl> = self
            .features
            .iter()
            .map(|f| (f.name.as_str(), FeatureDecl { kind: f.kind.clone() }))
            .collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = IndexMap::<String, FeatureDecl>::deserialize(deserializer)?;
        let features = map.into_iter().map(|(name, decl)| Feature { name, kind: decl.kind }).collect();
        Schema::new(features).map_err(serde::de::Error::custom)
    }
}
