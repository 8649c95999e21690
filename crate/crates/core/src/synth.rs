//! Synthetic triplet cohorts drawn from a known latent logistic model.
//!
//! Numeric values are standard normal, binary values fair coins and
//! categorical values uniform. Only the first `ceil(n_numeric / 2)` numeric
//! features carry signal (coefficient `signal_strength`). The latent score
//! gets Gaussian noise with standard deviation `noise_std`, and the intercept
//! is bisected so the realized prevalence lands on the target. Non-categorical
//! values are then dropped completely at random with probability
//! `missing_rate`.

use rand::distributions::{Bernoulli, Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sigmoid;
use crate::schema::{Cohort, FeatureKind, FeatureSchema, FeatureSpec, RawValue, Triplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_numeric: usize,
    pub n_binary: usize,
    pub n_categorical: usize,
    pub n_categories: usize,
    pub prevalence: f64,
    pub signal_strength: f64,
    pub missing_rate: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 648,
            n_numeric: 20,
            n_binary: 6,
            n_categorical: 2,
            n_categories: 3,
            prevalence: 1.0 / 3.0,
            signal_strength: 1.5,
            missing_rate: 0.2,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be positive".into()));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::Config(format!("prevalence {} outside (0, 1)", self.prevalence)));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config(format!("missing_rate {} outside [0, 1)", self.missing_rate)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std {} must be finite and >= 0", self.noise_std)));
        }
        if !self.signal_strength.is_finite() {
            return Err(Error::Config("signal_strength must be finite".into()));
        }
        if self.n_categorical > 0 && self.n_categories == 0 {
            return Err(Error::Config("categorical features need at least one category".into()));
        }
        Ok(())
    }

    pub fn n_informative(&self) -> usize {
        self.n_numeric.div_ceil(2)
    }
}

/// What was generated, for the provenance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: SynthConfig,
    /// One coefficient per numeric feature.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub empirical_prevalence: f64,
    pub missing_cells: usize,
    pub total_cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub provenance: Provenance,
}

pub fn synth_schema(config: &SynthConfig) -> Result<FeatureSchema> {
    let mut features = Vec::new();
    let mut push = |name: String, kind: FeatureKind, categories: Vec<String>| {
        features.push(FeatureSpec {
            id: features.len(),
            name,
            kind,
            categories,
        })
    };
    for j in 0..config.n_numeric {
        push(format!("num_{j:02}"), FeatureKind::Numeric, vec![]);
    }
    for j in 0..config.n_binary {
        push(format!("bin_{j:02}"), FeatureKind::Binary, vec![]);
    }
    for j in 0..config.n_categorical {
        let cats = (0..config.n_categories).map(|c| format!("c{c}")).collect();
        push(format!("cat_{j:02}"), FeatureKind::Categorical, cats);
    }
    FeatureSchema::new(features)
}

const BISECTION_STEPS: usize = 100;
const PREVALENCE_TOLERANCE: f64 = 0.02;

pub fn generate(config: &SynthConfig) -> Result<SynthCohort> {
    config.validate()?;
    let schema = synth_schema(config)?;
    let n = config.n_patients;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let coefficients: Vec<f64> = (0..config.n_numeric)
        .map(|j| if j < config.n_informative() { config.signal_strength } else { 0.0 })
        .collect();

    let numeric: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..config.n_numeric).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let binary: Vec<Vec<bool>> = (0..n)
        .map(|_| (0..config.n_binary).map(|_| coin.sample(&mut rng)).collect())
        .collect();
    let categorical: Vec<Vec<usize>> = if config.n_categorical > 0 {
        let pick = Uniform::new(0, config.n_categories);
        (0..n)
            .map(|_| (0..config.n_categorical).map(|_| pick.sample(&mut rng)).collect())
            .collect()
    } else {
        vec![Vec::new(); n]
    };
    let scores: Vec<f64> = numeric
        .iter()
        .map(|x| {
            let noise: f64 = rng.sample(StandardNormal);
            x.iter().zip(&coefficients).map(|(a, b)| a * b).sum::<f64>() + config.noise_std * noise
        })
        .collect();
    let uniforms: Vec<f64> = (0..n).map(|_| rng.sample(Uniform::new(0.0, 1.0))).collect();

    let positives = |b: f64| {
        scores
            .iter()
            .zip(&uniforms)
            .filter(|&(&s, &u)| u < sigmoid(s + b))
            .count()
    };
    let target = (config.prevalence * n as f64).round() as usize;
    let (mut lo, mut hi) = (-100.0f64, 100.0f64);
    let mut intercept = 0.0;
    let mut count = positives(intercept);
    for _ in 0..BISECTION_STEPS {
        intercept = 0.5 * (lo + hi);
        count = positives(intercept);
        match count.cmp(&target) {
            std::cmp::Ordering::Less => lo = intercept,
            std::cmp::Ordering::Greater => hi = intercept,
            std::cmp::Ordering::Equal => break,
        }
    }
    let empirical_prevalence = count as f64 / n as f64;
    if (empirical_prevalence - config.prevalence).abs() > PREVALENCE_TOLERANCE {
        return Err(Error::Data(format!(
            "intercept calibration reached prevalence {empirical_prevalence:.4}, target {:.4}",
            config.prevalence
        )));
    }
    let labels: Vec<u8> = scores
        .iter()
        .zip(&uniforms)
        .map(|(&s, &u)| u8::from(u < sigmoid(s + intercept)))
        .collect();

    let missing = Bernoulli::new(config.missing_rate).expect("validated rate");
    let mut triplets = Vec::new();
    let (mut missing_cells, mut total_cells) = (0, 0);
    for i in 0..n {
        let mut emit = |feature_id: usize, raw_value: RawValue, maskable: bool, rng: &mut ChaCha8Rng| {
            if maskable {
                total_cells += 1;
                if missing.sample(rng) {
                    missing_cells += 1;
                    return;
                }
            }
            triplets.push(Triplet {
                patient_id: i,
                feature_id,
                raw_value,
            });
        };
        for (j, &x) in numeric[i].iter().enumerate() {
            emit(j, RawValue::Number(x), true, &mut rng);
        }
        for (j, &b) in binary[i].iter().enumerate() {
            emit(config.n_numeric + j, RawValue::Binary(b), true, &mut rng);
        }
        for (j, &c) in categorical[i].iter().enumerate() {
            emit(config.n_numeric + config.n_binary + j, RawValue::Category(c), false, &mut rng);
        }
    }

    let cohort = Cohort::new(n, schema, triplets, Some(labels))?;
    Ok(SynthCohort {
        cohort,
        provenance: Provenance {
            config: config.clone(),
            coefficients,
            intercept,
            empirical_prevalence,
            missing_cells,
            total_cells,
        },
    })
}
