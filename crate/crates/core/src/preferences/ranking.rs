use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::mnl::MultinomialLogitModel;
use crate::data::{CovariateVector, Dataset, LocationId};
use crate::error::{Error, Result};
use crate::seed;

/// Stream key separating ranking tie-breaks from other per-individual draws.
const RANKING_STREAM: u64 = 0x7072_6566;

/// Seed of the tie-break stream for one individual.
pub fn ranking_seed(root: u64, individual: u64) -> u64 {
    seed::derive2(root, RANKING_STREAM, individual)
}

/// Locations from most preferred (rank 1) down, with their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRanking {
    pub order: Vec<LocationId>,
    pub probabilities: Vec<f64>,
}

impl PreferenceRanking {
    pub fn rank_of(&self, location: LocationId) -> Option<usize> {
        self.order.iter().position(|&l| l == location).map(|p| p + 1)
    }

    /// Same ranking with some locations removed.
    pub fn without(&self, excluded: &[LocationId]) -> PreferenceRanking {
        let (order, probabilities) =
            self.order.iter().zip(&self.probabilities).filter(|(l, _)| !excluded.contains(l)).map(|(l, p)| (*l, *p)).unzip();
        PreferenceRanking { order, probabilities }
    }
}

/// Order `locations` by descending score; exact ties are permuted uniformly
/// at random by `rng`.
pub fn rank_by_scores<R: Rng>(locations: &[LocationId], scores: &[f64], rng: &mut R) -> PreferenceRanking {
    let mut idx: Vec<usize> = (0..locations.len()).collect();
    idx.shuffle(rng);
    // stable sort keeps the shuffled order within tie groups
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    PreferenceRanking { order: idx.iter().map(|&i| locations[i]).collect(), probabilities: idx.iter().map(|&i| scores[i]).collect() }
}

pub fn rank_locations<R: Rng>(mnl: &MultinomialLogitModel, x: &CovariateVector, rng: &mut R) -> PreferenceRanking {
    rank_by_scores(&mnl.locations, &mnl.probabilities(x), rng)
}

/// Rank every record, each with its own tie-break stream.
pub fn rank_dataset(mnl: &MultinomialLogitModel, data: &Dataset, root_seed: u64) -> Vec<PreferenceRanking> {
    let one = |r: &crate::data::ImmigrantRecord| rank_locations(mnl, &r.covariates, &mut seed::rng(ranking_seed(root_seed, r.id)));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.records.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    data.records.iter().map(one).collect()
}

/// Number of top-ranked locations admitted, or no restriction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phi {
    Top(usize),
    Unrestricted,
}

impl Phi {
    pub fn validate(self) -> Result<()> {
        match self {
            Phi::Top(0) => Err(Error::Config("phi must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phi::Top(n) => write!(f, "{n}"),
            Phi::Unrestricted => f.write_str("none"),
        }
    }
}

impl FromStr for Phi {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let phi = match s.trim() {
            "none" => Phi::Unrestricted,
            t => Phi::Top(t.parse().map_err(|_| Error::Config(format!("phi must be a count or `none`, got `{t}`")))?),
        };
        phi.validate()?;
        Ok(phi)
    }
}

impl Serialize for Phi {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Phi::Top(n) => s.serialize_u64(*n as u64),
            Phi::Unrestricted => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for Phi {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => {
                let phi = Phi::Top(n);
                phi.validate().map_err(serde::de::Error::custom)?;
                Ok(phi)
            }
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// The locations an individual would consider, in preference order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptableSet {
    pub locations: Vec<LocationId>,
}

impl AcceptableSet {
    pub fn t(&self) -> usize {
        self.locations.len()
    }

    pub fn contains(&self, location: LocationId) -> bool {
        self.locations.contains(&location)
    }
}

pub fn acceptable_set(ranking: &PreferenceRanking, phi: Phi) -> Result<AcceptableSet> {
    phi.validate()?;
    let take = match phi {
        Phi::Top(n) => n.min(ranking.order.len()),
        Phi::Unrestricted => ranking.order.len(),
    };
    Ok(AcceptableSet { locations: ranking.order[..take].to_vec() })
}

/// `individual_id, location_id, probability, rank` rows.
pub fn write_preference_report(path: &Path, data: &Dataset, rankings: &[PreferenceRanking]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["individual_id", "location_id", "probability", "rank"])?;
    for (r, ranking) in data.records.iter().zip(rankings) {
        for (i, (loc, p)) in ranking.order.iter().zip(&ranking.probabilities).enumerate() {
            w.write_record([r.id.to_string(), loc.to_string(), p.to_string(), (i + 1).to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
