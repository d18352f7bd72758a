use super::world::{generate_world, scene_from_image, QuestionKind, TruthTable, WorldSpec};
use super::SynthError;
use crate::client::{BackendRegistry, ChatClient, ChatRequest, ClientError, VisionClient, VisionRequest};
use crate::domain::{normalize_question, Hypothesis, HypothesisId};
use crate::hypogen::PromptMode;
use crate::ingest::DatasetSnapshot;
use crate::rng::{derive_seed, tag, SplitMix64};
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

pub const SYNTHETIC_BACKEND: &str = "synthetic";

/// A generated world: the dataset the loop sees and the truth it must not.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub snapshot: DatasetSnapshot,
    pub truth: TruthTable,
}

impl SyntheticWorld {
    pub fn generate(spec: WorldSpec) -> Result<Self, SynthError> {
        let (snapshot, truth) = generate_world(&spec)?;
        Ok(Self { spec, snapshot, truth })
    }
}

/// One answer from the mock vision model: a true factor's bit flipped with
/// probability `flip_prob`, a fair coin for decoys, and option 0 for
/// questions the world knows nothing about.
pub fn answer_question(kind: QuestionKind, truth_bit: bool, flip_prob: f64, rng: &mut SplitMix64) -> u32 {
    match kind {
        QuestionKind::Factor(_) => (truth_bit ^ rng.bernoulli(flip_prob)) as u32,
        QuestionKind::Decoy => rng.bernoulli(0.5) as u32,
        QuestionKind::Unknown => 0,
    }
}

fn question_word(h: &Hypothesis) -> u64 {
    u64::from_str_radix(h.id.as_str(), 16).unwrap_or(0)
}

/// Answers for one scene. Each (scene, question) pair has its own stream,
/// so answers do not depend on set composition, order or thread schedule.
pub fn mock_mllm_answer(
    truth: &TruthTable,
    scene: usize,
    questions: &[Hypothesis],
    flip_prob: f64,
    seed: u64,
) -> Vec<u32> {
    let kinds: Vec<QuestionKind> = questions.iter().map(|h| truth.classify(&h.question)).collect();
    answer_scene(truth, scene, questions, &kinds, flip_prob, seed)
}

fn answer_scene(
    truth: &TruthTable,
    scene: usize,
    questions: &[Hypothesis],
    kinds: &[QuestionKind],
    flip_prob: f64,
    seed: u64,
) -> Vec<u32> {
    questions
        .iter()
        .zip(kinds)
        .map(|(h, &kind)| {
            let bit = match kind {
                QuestionKind::Factor(j) => truth.factor_values[scene][j],
                _ => false,
            };
            let mut rng = SplitMix64::new(derive_seed(&[seed, tag::MOCK_MLLM, scene as u64, question_word(h)]));
            answer_question(kind, bit, flip_prob, &mut rng)
        })
        .collect()
}

/// Vision backend answering from a [`SyntheticWorld`].
pub struct MockVision {
    world: Arc<SyntheticWorld>,
    seed: u64,
    failing: HashSet<usize>,
    kinds: RwLock<HashMap<HypothesisId, QuestionKind>>,
    calls: AtomicUsize,
}

impl MockVision {
    pub fn new(world: Arc<SyntheticWorld>, seed: u64) -> Self {
        Self::with_failures(world, seed, 0.0)
    }

    /// Every call for a fixed `round(failure_rate * n)` scenes fails.
    pub fn with_failures(world: Arc<SyntheticWorld>, seed: u64, failure_rate: f64) -> Self {
        let n = world.truth.scenes();
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::new(derive_seed(&[seed, tag::MOCK_MLLM, u64::MAX])).shuffle(&mut order);
        let count = ((failure_rate.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
        Self {
            world,
            seed,
            failing: order[..count].iter().copied().collect(),
            kinds: RwLock::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn kind(&self, h: &Hypothesis) -> QuestionKind {
        if let Some(&k) = self.kinds.read().unwrap().get(&h.id) {
            return k;
        }
        let k = self.world.truth.classify(&h.question);
        self.kinds.write().unwrap().insert(h.id.clone(), k);
        k
    }
}

impl VisionClient for MockVision {
    fn complete(&self, request: &VisionRequest<'_>) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let scene = scene_from_image(request.image)
            .filter(|&s| s < self.world.truth.scenes())
            .ok_or_else(|| ClientError::Injected(format!("unknown image {:?}", request.image_ref)))?;
        if self.failing.contains(&scene) {
            return Err(ClientError::Injected(format!("scene {scene} is configured to fail")));
        }
        let kinds: Vec<QuestionKind> = request.questions.iter().map(|h| self.kind(h)).collect();
        let answers = answer_scene(
            &self.world.truth,
            scene,
            request.questions,
            &kinds,
            self.world.spec.flip_prob,
            self.seed,
        );
        let list = answers.iter().map(u32::to_string).collect::<Vec<_>>().join(", ");
        Ok(format!("Answers: [{list}]"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatBehavior {
    /// Proposes questions from the world's factor and decoy vocabulary.
    Vocabulary,
    /// Proposes questions unrelated to the outcome.
    Noise,
}

/// Chat backend standing in for the hypothesis generator.
///
/// In vocabulary mode it samples without replacement from the true factors
/// and decoys that are not already retained. In exploit mode each slot goes
/// to an undiscovered true factor with probability `llm_bias`; seed and
/// explore slots are uniform over the remaining pool. The reply is short
/// when the pool runs out.
pub struct MockChat {
    world: Arc<SyntheticWorld>,
    behavior: ChatBehavior,
    rng: Mutex<SplitMix64>,
    calls: AtomicUsize,
}

impl MockChat {
    pub fn new(world: Arc<SyntheticWorld>, seed: u64, behavior: ChatBehavior) -> Self {
        Self {
            world,
            behavior,
            rng: Mutex::new(SplitMix64::for_purpose(seed, tag::MOCK_LLM)),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn propose(&self, excluded: &HashSet<String>, m: usize, mode: PromptMode) -> Vec<String> {
        let mut rng = self.rng.lock().unwrap();
        if self.behavior == ChatBehavior::Noise {
            return (0..m)
                .map(|_| format!("Is visual pattern number {} present in the scene?", rng.next_u64() % 1_000_000_007))
                .collect();
        }
        let open = |q: &String| !excluded.contains(&normalize_question(q).unwrap_or_default());
        let mut factors: Vec<String> = self
            .world
            .spec
            .true_factors
            .iter()
            .map(|f| f.question.clone())
            .filter(open)
            .collect();
        let mut decoys: Vec<String> = self.world.spec.decoy_pool.iter().cloned().filter(open).collect();
        let mut out = Vec::with_capacity(m);
        while out.len() < m && !(factors.is_empty() && decoys.is_empty()) {
            let biased = mode == PromptMode::Exploit && !factors.is_empty() && rng.bernoulli(self.world.spec.llm_bias);
            let q = if biased {
                factors.swap_remove(rng.next_index(factors.len()))
            } else {
                let i = rng.next_index(factors.len() + decoys.len());
                if i < factors.len() {
                    factors.swap_remove(i)
                } else {
                    decoys.swap_remove(i - factors.len())
                }
            };
            out.push(q);
        }
        out
    }
}

impl ChatClient for MockChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let req = request
            .generation
            .as_ref()
            .ok_or_else(|| ClientError::Config("the synthetic chat backend only serves generation requests".into()))?;
        let excluded: HashSet<String> = req
            .prior_set
            .members
            .iter()
            .zip(&req.prior_pvalues)
            .filter(|(_, p)| **p <= req.alpha)
            .map(|(h, _)| h.canonical())
            .collect();
        let questions = self.propose(&excluded, req.m_new, req.mode);
        let items: Vec<serde_json::Value> = questions
            .iter()
            .map(|q| serde_json::json!({ "question": q, "options": ["no", "yes"] }))
            .collect();
        Ok(format!(
            "Here are the hypotheses.\n```json\n{}\n```",
            serde_json::to_string_pretty(&items).expect("json serializes")
        ))
    }
}

/// Registers the `synthetic` chat and vision backends for `world`.
pub fn register_synthetic_backends(
    registry: &mut BackendRegistry,
    world: Arc<SyntheticWorld>,
    seed: u64,
    behavior: ChatBehavior,
    failure_rate: f64,
) {
    let w = world.clone();
    registry.register_chat(
        SYNTHETIC_BACKEND,
        Box::new(move |_| Ok(Arc::new(MockChat::new(w.clone(), seed, behavior)) as Arc<dyn ChatClient>)),
    );
    registry.register_vision(
        SYNTHETIC_BACKEND,
        Box::new(move |_| {
            Ok(Arc::new(MockVision::with_failures(world.clone(), seed, failure_rate)) as Arc<dyn VisionClient>)
        }),
    );
}
