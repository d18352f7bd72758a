use super::SynthError;
use crate::domain::normalize_question;
use crate::ingest::{compute_crash_rate, DatasetSnapshot, SegmentRecord, Split, SplitRatios};
use crate::rng::{tag, SplitMix64};
use crate::vqa::SYNTHETIC_SCHEME;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFactor {
    pub question: String,
    pub coefficient: f64,
    pub prevalence: f64,
}

/// Specification of a synthetic scene collection with planted binary factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub n: usize,
    pub seed: u64,
    pub noise_sd: f64,
    /// Probability that the mock vision model flips a true-factor answer.
    pub flip_prob: f64,
    /// Outcome intercept; defaults to a value that keeps every outcome
    /// positive (1 + sum of negative coefficient magnitudes + 6 noise sd).
    #[serde(default)]
    pub intercept: Option<f64>,
    /// Probability that the mock generator proposes an undiscovered true
    /// factor in exploit mode.
    #[serde(default = "default_bias")]
    pub llm_bias: f64,
    #[serde(default)]
    pub split: SplitRatios,
    pub true_factors: Vec<PlantedFactor>,
    pub decoy_pool: Vec<String>,
}

fn default_bias() -> f64 {
    0.5
}

const DEFAULT_FACTORS: [(&str, f64, f64); 8] = [
    ("Is there a painted pedestrian crosswalk?", 1.2, 0.45),
    ("Are there multiple travel lanes in each direction?", 1.8, 0.35),
    ("Is there a raised median separating the traffic directions?", -1.1, 0.30),
    ("Is there a bus stop visible?", 0.9, 0.25),
    ("Are there street trees lining the sidewalk?", -0.6, 0.50),
    ("Is on-street parking present?", 0.7, 0.55),
    ("Is there a dedicated bike lane?", -0.8, 0.30),
    ("Are there commercial storefronts along the street?", 1.5, 0.40),
];

const DEFAULT_DECOYS: [&str; 32] = [
    "Is the sky overcast?",
    "Is there a fire hydrant visible?",
    "Are there clouds in the sky?",
    "Is any building painted red?",
    "Is there a flag visible?",
    "Is there a dog in the scene?",
    "Is the image taken in summer?",
    "Are there any satellite dishes on buildings?",
    "Is there graffiti on a wall?",
    "Is there a church spire visible?",
    "Are any windows boarded up?",
    "Is there a mailbox on the sidewalk?",
    "Is a bird visible?",
    "Are there balconies on the buildings?",
    "Is there an awning over a shop entrance?",
    "Is there a water tower on a roof?",
    "Are there air conditioning units in windows?",
    "Is there ivy growing on a facade?",
    "Is a brick facade visible?",
    "Is there a clock visible?",
    "Are there flower pots on the sidewalk?",
    "Is there a yellow taxi visible?",
    "Is the shadow of a building visible on the road?",
    "Is there a newspaper stand?",
    "Are there fire escapes on building facades?",
    "Is there a visible house number?",
    "Is any vehicle parked facing the camera?",
    "Is there a manhole cover visible?",
    "Is a utility pole visible?",
    "Are there decorative lampposts?",
    "Is there a bench on the sidewalk?",
    "Is there a scaffolding-free facade?",
];

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            seed: 1,
            noise_sd: 0.5,
            flip_prob: 0.05,
            intercept: None,
            llm_bias: default_bias(),
            split: SplitRatios::default(),
            true_factors: DEFAULT_FACTORS
                .iter()
                .map(|&(q, b, p)| PlantedFactor {
                    question: q.to_string(),
                    coefficient: b,
                    prevalence: p,
                })
                .collect(),
            decoy_pool: DEFAULT_DECOYS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl WorldSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Spec(e.to_string()))
    }

    pub fn intercept(&self) -> f64 {
        self.intercept.unwrap_or_else(|| {
            let negative: f64 = self
                .true_factors
                .iter()
                .filter(|f| f.coefficient < 0.0)
                .map(|f| -f.coefficient)
                .sum();
            1.0 + negative + 6.0 * self.noise_sd
        })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.true_factors.is_empty() {
            return bad("at least one true factor is required".into());
        }
        let min_n = 10 * (self.true_factors.len() + 1);
        if self.n < min_n {
            return bad(format!("n = {} is below 10 * (factors + 1) = {min_n}", self.n));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob must be in [0, 1], got {}", self.flip_prob));
        }
        if !(0.0..=1.0).contains(&self.llm_bias) {
            return bad(format!("llm_bias must be in [0, 1], got {}", self.llm_bias));
        }
        for f in &self.true_factors {
            if f.coefficient == 0.0 || !f.coefficient.is_finite() {
                return bad(format!("factor {:?} needs a nonzero coefficient", f.question));
            }
            if !(f.prevalence > 0.0 && f.prevalence < 1.0) {
                return bad(format!(
                    "factor {:?} prevalence {} must lie strictly inside (0, 1)",
                    f.question, f.prevalence
                ));
            }
        }
        let mut seen = HashSet::new();
        for q in self.true_factors.iter().map(|f| &f.question).chain(&self.decoy_pool) {
            let canonical = normalize_question(q).map_err(|e| SynthError::Spec(e.to_string()))?;
            if !seen.insert(canonical) {
                return bad(format!("question {q:?} appears twice"));
            }
        }
        self.split
            .validate()
            .map_err(|e| SynthError::Spec(e.to_string()))
    }

    /// Best achievable R² of a linear model on the vision-model answers:
    /// each factor's explained variance is attenuated by its squared
    /// correlation with the flipped answer, and the outcome noise stays
    /// unexplained.
    pub fn r2_ceiling(&self) -> f64 {
        let q = self.flip_prob;
        let mut explained = 0.0;
        let mut total = self.noise_sd * self.noise_sd;
        for f in &self.true_factors {
            let p = f.prevalence;
            let var_f = p * (1.0 - p);
            let p_obs = p * (1.0 - q) + (1.0 - p) * q;
            let var_obs = p_obs * (1.0 - p_obs);
            let cov = p * (1.0 - q) - p * p_obs;
            total += f.coefficient * f.coefficient * var_f;
            if var_obs > 0.0 {
                explained += f.coefficient * f.coefficient * cov * cov / var_obs;
            }
        }
        explained / total
    }
}

/// Ground truth withheld from the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// `factor_values[scene][factor]`.
    pub factor_values: Vec<Vec<bool>>,
    factor_index: HashMap<String, usize>,
    decoys: HashSet<String>,
}

/// What the mock vision model knows about a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuestionKind {
    Factor(usize),
    Decoy,
    Unknown,
}

impl TruthTable {
    pub fn classify(&self, question: &str) -> QuestionKind {
        let Ok(canonical) = normalize_question(question) else {
            return QuestionKind::Unknown;
        };
        if let Some(&i) = self.factor_index.get(&canonical) {
            QuestionKind::Factor(i)
        } else if self.decoys.contains(&canonical) {
            QuestionKind::Decoy
        } else {
            QuestionKind::Unknown
        }
    }

    pub fn factor_for(&self, question: &str) -> Option<usize> {
        match self.classify(question) {
            QuestionKind::Factor(i) => Some(i),
            _ => None,
        }
    }

    pub fn scenes(&self) -> usize {
        self.factor_values.len()
    }
}

pub fn scene_image_ref(scene: usize) -> String {
    format!("{SYNTHETIC_SCHEME}scene/{scene}")
}

/// Scene index encoded in a synthetic image reference or payload.
pub fn scene_from_image(bytes: &[u8]) -> Option<usize> {
    std::str::from_utf8(bytes)
        .ok()?
        .strip_prefix(SYNTHETIC_SCHEME)?
        .strip_prefix("scene/")?
        .parse()
        .ok()
}

const SYNTH_AADT: f64 = 10_000.0;
const SYNTH_LENGTH_KM: f64 = 1.0;

/// Draws every scene: one Bernoulli(prevalence) per factor in factor order,
/// then one standard normal for the outcome noise. Splits are assigned with
/// the same seed.
pub fn generate_world(spec: &WorldSpec) -> Result<(DatasetSnapshot, TruthTable), SynthError> {
    spec.validate()?;
    let intercept = spec.intercept();
    let mut rng = SplitMix64::for_purpose(spec.seed, tag::WORLD);
    let exposure = SYNTH_AADT * SYNTH_LENGTH_KM * 365.0 / 1_000_000.0;
    let mut factor_values = Vec::with_capacity(spec.n);
    let mut records = Vec::with_capacity(spec.n);
    for scene in 0..spec.n {
        let bits: Vec<bool> = spec
            .true_factors
            .iter()
            .map(|f| rng.bernoulli(f.prevalence))
            .collect();
        let z: f64 = StandardNormal.sample(&mut rng);
        let signal: f64 = spec
            .true_factors
            .iter()
            .zip(&bits)
            .map(|(f, &b)| if b { f.coefficient } else { 0.0 })
            .sum();
        let y = intercept + signal + spec.noise_sd * z;
        if y < 0.0 {
            return Err(SynthError::Spec(format!(
                "scene {scene} has negative outcome {y}; raise the intercept"
            )));
        }
        let no_crash = y * exposure;
        let crash_rate = compute_crash_rate(no_crash, SYNTH_AADT, SYNTH_LENGTH_KM)
            .map_err(|e| SynthError::Spec(e.to_string()))?;
        records.push(SegmentRecord {
            segment_id: format!("scene-{scene:05}"),
            image_ref: scene_image_ref(scene),
            no_crash: Some(no_crash),
            aadt: Some(SYNTH_AADT),
            length_km: Some(SYNTH_LENGTH_KM),
            crash_rate,
            split: Split::Train,
            extra_covariates: BTreeMap::new(),
        });
        factor_values.push(bits);
    }
    let spec_hash = crate::domain::content_hash(&[serde_json::to_string(spec)
        .expect("spec serializes")
        .as_bytes()]);
    let snapshot = DatasetSnapshot::assign_splits(records, spec.split, spec.seed, spec_hash)
        .map_err(|e| SynthError::Spec(e.to_string()))?;
    let factor_index = spec
        .true_factors
        .iter()
        .enumerate()
        .map(|(i, f)| (normalize_question(&f.question).unwrap(), i))
        .collect();
    let decoys = spec
        .decoy_pool
        .iter()
        .map(|q| normalize_question(q).unwrap())
        .collect();
    Ok((
        snapshot,
        TruthTable {
            intercept,
            coefficients: spec.true_factors.iter().map(|f| f.coefficient).collect(),
            factor_values,
            factor_index,
            decoys,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_factor_has_two_levels() {
        let spec = WorldSpec {
            n: 40,
            noise_sd: 0.0,
            true_factors: vec![PlantedFactor {
                question: "Is it wet?".into(),
                coefficient: 2.0,
                prevalence: 0.5,
            }],
            decoy_pool: vec![],
            ..WorldSpec::default()
        };
        let (snap, truth) = generate_world(&spec).unwrap();
        let mut levels: Vec<f64> = snap.records.iter().map(|r| r.crash_rate).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        assert_eq!(levels.len(), 2);
        assert!((levels[1] - levels[0] - 2.0).abs() < 1e-9);
        for (r, bits) in snap.records.iter().zip(&truth.factor_values) {
            let expected = truth.intercept + if bits[0] { 2.0 } else { 0.0 };
            assert!((r.crash_rate - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut spec = WorldSpec::default();
        spec.true_factors[0].prevalence = 0.0;
        assert!(generate_world(&spec).is_err());
        let mut spec = WorldSpec::default();
        spec.true_factors[2].coefficient = 0.0;
        assert!(generate_world(&spec).is_err());
        let spec = WorldSpec { n: 50, ..WorldSpec::default() };
        assert!(generate_world(&spec).is_err());
        let mut spec = WorldSpec::default();
        spec.decoy_pool.push("is there a BUS stop visible".into());
        assert!(generate_world(&spec).is_err());
    }

    #[test]
    fn prevalences_concentrate() {
        let spec = WorldSpec::default();
        let (_, truth) = generate_world(&spec).unwrap();
        for (j, f) in spec.true_factors.iter().enumerate() {
            let rate = truth.factor_values.iter().filter(|b| b[j]).count() as f64 / spec.n as f64;
            // binomial sd at n = 2000 is at most 0.0112, so 0.04 is > 3.5 sd
            assert!((rate - f.prevalence).abs() < 0.04, "factor {j}: {rate}");
        }
    }

    #[test]
    fn generation_is_pure_and_outcomes_consistent() {
        let spec = WorldSpec { n: 300, ..WorldSpec::default() };
        let (a, ta) = generate_world(&spec).unwrap();
        let (b, tb) = generate_world(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        for r in &a.records {
            let recomputed = compute_crash_rate(r.no_crash.unwrap(), r.aadt.unwrap(), r.length_km.unwrap()).unwrap();
            assert!((recomputed - r.crash_rate).abs() <= 1e-12 * r.crash_rate.abs());
            assert!(r.crash_rate >= 0.0);
        }
        let other = generate_world(&WorldSpec { seed: 2, ..spec }).unwrap().0;
        assert_ne!(a, other);
    }

    #[test]
    fn scene_refs_round_trip() {
        assert_eq!(scene_from_image(scene_image_ref(42).as_bytes()), Some(42));
        assert_eq!(scene_from_image(b"/tmp/x.png"), None);
    }

    #[test]
    fn ceiling_without_flips_is_signal_share() {
        let spec = WorldSpec { flip_prob: 0.0, ..WorldSpec::default() };
        let signal: f64 = spec
            .true_factors
            .iter()
            .map(|f| f.coefficient.powi(2) * f.prevalence * (1.0 - f.prevalence))
            .sum();
        let expected = signal / (signal + 0.25);
        assert!((spec.r2_ceiling() - expected).abs() < 1e-12);
        assert!(WorldSpec::default().r2_ceiling() < expected);
    }

    #[test]
    fn toml_round_trip_of_default() {
        let text = toml::to_string(&WorldSpec::default()).unwrap();
        assert_eq!(WorldSpec::from_toml(&text).unwrap(), WorldSpec::default());
    }
}
