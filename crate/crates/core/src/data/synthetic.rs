//! Seeded synthetic population with known potential outcomes.
//!
//! Each generated individual carries its income at every location, so
//! selection bias and model error can be measured exactly.
//!
//! # Structural model
//!
//! For individual `i` and location `a`, log earnings are
//!
//! ```text
//! eta_ia = ln(42000) + level_a - 2 (unemp_a - 0.07)
//!        + edu_slope_a * edu_effect(edu_i)
//!        + occ_base(occ_i) + occ_premium_a(occ_i)
//!        - AGE_CURVATURE ((age_i - 37) / 12)^2
//!        + SYNERGY [graduate degree and management/science/health]
//!        + permit_premium_a * [permit_i]
//!        - 0.45 [age_i >= 45 and no permit]
//!        + language match with francophone locations
//!        + 0.08 [male] + U_SCALE * u_i
//! Y_i(a) = max(0, exp(eta_ia) + v_outcome_scale * v_ia + eps_i)
//! ```
//!
//! with `u_i ~ N(0,1)`, `v_ia ~ N(0,1)` (all zero when `constant_v`), and
//! `eps_i ~ N(0, noise_sd^2)`.
//!
//! Landing is drawn from a softmax over locations with logits
//!
//! ```text
//! s_ia = ln(pop_a / 1e5) + edu_pref_a(edu_i)
//!      + U_SELECTION * u_i * z_a      (u-confounded only; z_a standardized log population)
//!      + V_SELECTION * v_ia           (v-confounded only)
//! ```
//!
//! In observables-only mode the choice depends on education alone, so within
//! any stratum that fixes education, `(u_i, v_ia, eps_i)` and every other
//! covariate are independent of the landing location and the selection-bias
//! bound is zero in expectation. Audits should therefore stratify on
//! `education` (optionally refined further).
//!
//! In v-confounded mode, with `V_SELECTION = 1.5`, the mean of `v_ia` among
//! individuals landing in `a` exceeds its mean among those who do not by at
//! least [`V_CONFOUNDED_MIN_GAP`] standard deviations, which plants a
//! positive outcome premium of at least `V_CONFOUNDED_MIN_GAP *
//! v_outcome_scale` at every location.
//!
//! The sampling noise floor for a stratum-level bias estimate is
//! [`NOISE_FLOOR_SE`] two-sample standard errors of the difference between
//! chooser and non-chooser means.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ImmigrantRecord, Location, LocationId};
use super::schema::{CovariateVector, Feature, Schema, Value};
use crate::error::{Error, Result};
use crate::seed;

pub const EDUCATION_LEVELS: [&str; 4] = ["secondary", "bachelor", "master", "doctorate"];
pub const OCCUPATION_LEVELS: [&str; 8] =
    ["management", "business", "science", "health", "education", "trades", "sales", "manufacturing"];
pub const CATEGORY_LEVELS: [&str; 3] = ["FSW", "CEC", "FST"];

const EDU_EFFECT: [f64; 5] = [-0.45, 0.0, 0.22, 0.35, -0.2];
const OCC_BASE: [f64; 8] = [0.35, 0.1, 0.3, 0.25, -0.05, 0.05, -0.35, -0.2];
const U_SCALE: f64 = 0.25;
const AGE_CURVATURE: f64 = 1.2;
const SYNERGY: f64 = 0.3;
const U_SELECTION: f64 = 0.9;
const V_SELECTION: f64 = 1.5;

/// Documented lower bound on the chooser/non-chooser gap in mean `v` under
/// v-confounded selection, in standard deviations of `v`.
pub const V_CONFOUNDED_MIN_GAP: f64 = 0.5;

/// Multiplier on the two-sample standard error that defines the noise floor
/// for stratum-level bias estimates.
pub const NOISE_FLOOR_SE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    ObservablesOnly,
    UConfounded,
    VConfounded,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observables-only" => Ok(Self::ObservablesOnly),
            "u-confounded" => Ok(Self::UConfounded),
            "v-confounded" => Ok(Self::VConfounded),
            other => Err(Error::Config(format!("unknown selection mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub k: usize,
    pub selection: SelectionMode,
    pub seed: u64,
    /// Outcome weight of the location-specific unobservable.
    pub v_outcome_scale: f64,
    /// Standard deviation of the exogenous error.
    pub noise_sd: f64,
    /// Force every `v_ia` to zero.
    pub constant_v: bool,
    /// Extra uniform numeric features that never affect anything.
    pub noise_features: usize,
    /// Spouse earnings as a fraction of principal-applicant earnings.
    pub spouse_ratio: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 10_000,
            k: 20,
            selection: SelectionMode::ObservablesOnly,
            seed: 1,
            v_outcome_scale: 6_000.0,
            noise_sd: 6_000.0,
            constant_v: false,
            noise_features: 0,
            spouse_ratio: 0.55,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    #[serde(skip)]
    pub id: u64,
    pub potential_outcomes: Vec<f64>,
    pub u: f64,
    pub v: Vec<f64>,
    pub noise: f64,
}

/// Potential outcomes and unobservables per record, in record order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn get(&self, index: usize) -> &TruthEntry {
        &self.entries[index]
    }

    /// Re-key entries loaded from a sidecar (ids are map keys there).
    pub fn with_ids(mut self, ids: impl IntoIterator<Item = u64>) -> Self {
        for (e, id) in self.entries.iter_mut().zip(ids) {
            e.id = id;
        }
        self
    }

    /// Reorder entries to follow the dataset's record order.
    pub fn aligned_to(mut self, dataset: &Dataset) -> Result<Self> {
        let mut by_id: std::collections::HashMap<u64, TruthEntry> = self.entries.drain(..).map(|e| (e.id, e)).collect();
        let entries = dataset
            .records
            .iter()
            .map(|r| by_id.remove(&r.id).ok_or_else(|| Error::Data(format!("no ground truth for record {}", r.id))))
            .collect::<Result<_>>()?;
        Ok(GroundTruth { entries })
    }

    /// Check `observed == potential_outcomes[landing]` for every record.
    pub fn check_consistency(&self, dataset: &Dataset) -> Result<()> {
        if self.entries.len() != dataset.len() {
            return Err(Error::Data("ground truth does not cover every record".into()));
        }
        for (r, t) in dataset.records.iter().zip(&self.entries) {
            if t.id != r.id {
                return Err(Error::Data(format!("ground truth id {} does not match record {}", t.id, r.id)));
            }
            let y = t.potential_outcomes[(r.landing.0 - 1) as usize];
            if y != r.outcome {
                return Err(Error::Data(format!("record {}: observed {} != potential {}", r.id, r.outcome, y)));
            }
        }
        Ok(())
    }
}

/// The schema produced by the generator.
pub fn synthetic_schema(noise_features: usize) -> Schema {
    let mut features = vec![
        Feature::numeric("age", Some("years")),
        Feature::categorical("gender", &["female", "male"]),
        Feature::categorical("education", &EDUCATION_LEVELS),
        Feature::categorical("occupation", &OCCUPATION_LEVELS),
        Feature::categorical("language", &["english", "french"]),
        Feature::categorical("prior_permit", &["no", "yes"]),
        Feature::categorical("category", &CATEGORY_LEVELS),
        Feature::numeric("arrival_year", Some("year")),
        Feature::numeric("arrival_month", Some("month")),
    ];
    for j in 1..=noise_features {
        features.push(Feature::numeric(&format!("noise_{j}"), None));
    }
    Schema::new(features).expect("static schema is valid")
}

struct World {
    level: Vec<f64>,
    edu_slope: Vec<f64>,
    occ_premium: Vec<[f64; 8]>,
    permit_premium: Vec<f64>,
    francophone: Vec<bool>,
    edu_pref: Vec<[f64; 5]>,
    log_pop: Vec<f64>,
    z_pop: Vec<f64>,
}

fn categorical<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn make_world<R: Rng>(rng: &mut R, k: usize) -> (Vec<Location>, World) {
    let normal = |rng: &mut R, sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    let mut locations = Vec::with_capacity(k);
    for a in 0..k {
        let pop = (3_000_000.0 * ((a + 1) as f64).powf(-1.15) * normal(rng, 0.15).exp()).max(20_000.0);
        let unemp = (0.07 + normal(rng, 0.015)).clamp(0.02, 0.2);
        let rent = (9_000.0 + 2_500.0 * (pop / 50_000.0).ln().max(0.0) + normal(rng, 500.0)).max(6_000.0);
        let growth = 0.01 + normal(rng, 0.01);
        locations.push(Location {
            id: LocationId(a as u32 + 1),
            name: format!("Region {:02}", a + 1),
            population: pop.round() as u64,
            unemployment_rate: (unemp * 1e4).round() / 1e4,
            annual_rent: rent.round(),
            growth_rate: (growth * 1e4).round() / 1e4,
        });
    }
    let log_pop: Vec<f64> = locations.iter().map(|l| (l.population as f64 / 1e5).ln()).collect();
    let mean = log_pop.iter().sum::<f64>() / k as f64;
    let sd = (log_pop.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64).sqrt().max(1e-9);
    let z_pop: Vec<f64> = log_pop.iter().map(|x| (x - mean) / sd).collect();

    let mut world = World {
        level: Vec::with_capacity(k),
        edu_slope: Vec::with_capacity(k),
        occ_premium: Vec::with_capacity(k),
        permit_premium: Vec::with_capacity(k),
        francophone: Vec::with_capacity(k),
        edu_pref: Vec::with_capacity(k),
        log_pop: log_pop.clone(),
        z_pop: z_pop.clone(),
    };
    for (a, loc) in locations.iter().enumerate() {
        world.level.push(0.12 * z_pop[a] + normal(rng, 0.05) - 2.0 * (loc.unemployment_rate - 0.07));
        world.edu_slope.push(rng.random_range(0.7..1.3));
        let mut occ = [0.0; 8];
        for o in &mut occ {
            *o = normal(rng, 0.22);
        }
        world.occ_premium.push(occ);
        world.permit_premium.push(rng.random_range(0.0..0.35));
        world.francophone.push(a % 7 == 3);
        let mut pref = [0.0; 5];
        for p in &mut pref {
            *p = normal(rng, 0.5);
        }
        world.edu_pref.push(pref);
    }
    (locations, world)
}

/// Generate a dataset and its ground truth. Pure function of the config.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<(Dataset, GroundTruth)> {
    if config.n < 1 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if config.k < 2 {
        return Err(Error::Config("K must be at least 2".into()));
    }
    if !(config.noise_sd >= 0.0) || !(config.v_outcome_scale >= 0.0) {
        return Err(Error::Config("noise and v scales must be non-negative".into()));
    }
    let k = config.k;
    let schema = synthetic_schema(config.noise_features);
    let mut world_rng = seed::rng(seed::derive(config.seed, 0));
    let (locations, world) = make_world(&mut world_rng, k);
    let mut rng = seed::rng(seed::derive(config.seed, 1));
    let eps = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");

    let mut records = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    let mut logits = vec![0.0; k];
    for i in 0..config.n {
        let id = i as u64 + 1;
        let age = (33.0 + 6.0 * rng.sample::<f64, _>(StandardNormal)).round().clamp(22.0, 60.0);
        let male = rng.random_bool(0.55);
        let edu = categorical(&mut rng, &[0.12, 0.45, 0.33, 0.07, 0.03]);
        let occ = categorical(&mut rng, &[0.12, 0.16, 0.18, 0.1, 0.08, 0.14, 0.12, 0.1]);
        let french = rng.random_bool(0.1);
        let category = categorical(&mut rng, &[0.5, 0.4, 0.1]);
        let permit = category == 1 || rng.random_bool(0.35);
        let year = if rng.random_bool(0.5) { 2015.0 } else { 2016.0 };
        let month = rng.random_range(1..=12) as f64;
        let noise_values: Vec<f64> = (0..config.noise_features).map(|_| rng.random::<f64>()).collect();
        let couple = rng.random_bool(0.45);

        let u: f64 = rng.sample(StandardNormal);
        let v: Vec<f64> = (0..k)
            .map(|_| {
                let draw: f64 = rng.sample(StandardNormal);
                if config.constant_v { 0.0 } else { draw }
            })
            .collect();
        let noise = if config.noise_sd > 0.0 { eps.sample(&mut rng) } else { 0.0 };
        let spouse_shock: f64 = 0.4 * rng.sample::<f64, _>(StandardNormal);

        let log_core = (42_000f64).ln() + world_edu(edu) + OCC_BASE[occ] - AGE_CURVATURE * ((age - 37.0) / 12.0).powi(2)
            + if (edu == 2 || edu == 3) && matches!(occ, 0 | 2 | 3) { SYNERGY } else { 0.0 }
            + if age >= 45.0 && !permit { -0.45 } else { 0.0 }
            + if male { 0.08 } else { 0.0 }
            + U_SCALE * u;
        let mut potential = Vec::with_capacity(k);
        let mut earnings = Vec::with_capacity(k);
        for a in 0..k {
            let lang = match (world.francophone[a], french) {
                (true, true) => 0.25,
                (true, false) => -0.15,
                (false, true) => -0.2,
                (false, false) => 0.0,
            };
            let eta = log_core
                + world.level[a]
                + (world.edu_slope[a] - 1.0) * world_edu(edu)
                + world.occ_premium[a][occ]
                + if permit { world.permit_premium[a] } else { 0.0 }
                + lang;
            let e = eta.exp();
            earnings.push(e);
            potential.push((e + config.v_outcome_scale * v[a] + noise).max(0.0));
        }

        for a in 0..k {
            logits[a] = world.log_pop[a] + world.edu_pref[a][edu];
            match config.selection {
                SelectionMode::ObservablesOnly => {}
                SelectionMode::UConfounded => logits[a] += U_SELECTION * u * world.z_pop[a],
                SelectionMode::VConfounded => logits[a] += V_SELECTION * v[a],
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
        let landing = categorical(&mut rng, &weights);

        let outcome = potential[landing];
        let (case_size, spouse_outcome) = if couple {
            let s = (config.spouse_ratio * earnings[landing] * spouse_shock.exp()).round();
            (2, Some(s.max(0.0)))
        } else {
            (1, None)
        };

        let mut values = vec![
            Value::Num(age),
            Value::Level(male as u32),
            Value::Level(edu as u32),
            Value::Level(occ as u32),
            Value::Level(french as u32),
            Value::Level(permit as u32),
            Value::Level(category as u32),
            Value::Num(year),
            Value::Num(month),
        ];
        values.extend(noise_values.into_iter().map(Value::Num));
        records.push(ImmigrantRecord {
            id,
            covariates: CovariateVector(values),
            landing: LocationId(landing as u32 + 1),
            outcome,
            case_size,
            spouse_outcome,
        });
        truth.push(TruthEntry { id, potential_outcomes: potential, u, v, noise });
    }
    let dataset = Dataset::new(schema, records, locations)?;
    Ok((dataset, GroundTruth { entries: truth }))
}

fn world_edu(edu: usize) -> f64 {
    EDU_EFFECT[edu]
}
