use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::{CovariateVector, Schema};
use crate::error::{Error, Result};

/// Dense 1-based location index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationId(pub u32);

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: LocationId,
    pub name: String,
    pub population: u64,
    pub unemployment_rate: f64,
    /// Annual rent of a two-bedroom unit.
    pub annual_rent: f64,
    /// Annual population growth, used by subset-removal rules.
    #[serde(default)]
    pub growth_rate: f64,
}

impl Location {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Data(format!("location {} has zero population", self.id)));
        }
        if !(0.0..=1.0).contains(&self.unemployment_rate) {
            return Err(Error::Data(format!("location {} unemployment rate outside [0, 1]", self.id)));
        }
        if !(self.annual_rent >= 0.0) || !self.growth_rate.is_finite() {
            return Err(Error::Data(format!("location {} has invalid rent or growth", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmigrantRecord {
    pub id: u64,
    pub covariates: CovariateVector,
    pub landing: LocationId,
    /// Annual employment income in the first full year.
    pub outcome: f64,
    /// Number of adults on the case.
    pub case_size: u32,
    pub spouse_outcome: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<ImmigrantRecord>,
    pub locations: Vec<Location>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<ImmigrantRecord>, locations: Vec<Location>) -> Result<Self> {
        let ds = Dataset { schema, records, locations };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, loc) in self.locations.iter().enumerate() {
            loc.validate()?;
            if loc.id.0 as usize != i + 1 {
                return Err(Error::Data(format!("location ids must be dense 1..K, found {} at position {}", loc.id, i + 1)));
            }
        }
        for r in &self.records {
            if !ids.insert(r.id) {
                return Err(Error::Data(format!("duplicate record id {}", r.id)));
            }
            self.schema.validate(&r.covariates)?;
            if self.location(r.landing).is_none() {
                return Err(Error::Data(format!("record {} lands in unknown location {}", r.id, r.landing)));
            }
            if !(r.outcome >= 0.0) || !r.outcome.is_finite() {
                return Err(Error::Data(format!("record {} has invalid outcome {}", r.id, r.outcome)));
            }
            if r.case_size == 0 {
                return Err(Error::Data(format!("record {} has zero adults", r.id)));
            }
            if r.spouse_outcome.is_some() && r.case_size < 2 {
                return Err(Error::Data(format!("record {} has a spouse outcome but a single adult", r.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn k(&self) -> usize {
        self.locations.len()
    }

    pub fn location(&self, id: LocationId) -> Option<&Location> {
        (id.0 as usize).checked_sub(1).and_then(|i| self.locations.get(i))
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    pub fn landings(&self) -> Vec<LocationId> {
        self.records.iter().map(|r| r.landing).collect()
    }

    /// Record counts per landing location (every location present, possibly 0).
    pub fn landing_counts(&self) -> BTreeMap<LocationId, usize> {
        let mut counts: BTreeMap<LocationId, usize> = self.locations.iter().map(|l| (l.id, 0)).collect();
        for r in &self.records {
            *counts.entry(r.landing).or_default() += 1;
        }
        counts
    }

    /// Copy of the dataset restricted to records passing `keep`.
    pub fn filter(&self, keep: impl Fn(&ImmigrantRecord) -> bool) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            locations: self.locations.clone(),
        }
    }

    /// Value of a categorical or numeric feature rendered as a grouping label.
    /// `case_size` is accepted as a pseudo-feature.
    pub fn group_label(&self, record: &ImmigrantRecord, feature: &str) -> Result<String> {
        if feature == "case_size" && self.schema.index_of(feature).is_none() {
            return Ok(record.case_size.to_string());
        }
        let i = self.schema.index_of(feature).ok_or_else(|| Error::UnknownFeature(feature.into()))?;
        Ok(self.schema.format_value(i, record.covariates.0[i]))
    }
}
