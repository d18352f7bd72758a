#![allow(dead_code)]

use hyposearch::discovery::{LoopConfig, LoopContext};
use hyposearch::hypogen::GenerationSettings;
use hyposearch::stats::ModelRegistry;
use hyposearch::synth::{ChatBehavior, MockChat, MockVision, SyntheticWorld, WorldSpec};
use hyposearch::vqa::{AnswerCache, EmbedSettings, ImageResolver};
use std::path::Path;
use std::sync::Arc;

/// Offline loop wiring around one synthetic world.
pub struct Harness {
    pub world: Arc<SyntheticWorld>,
    pub chat: MockChat,
    pub vision: MockVision,
    pub cache: AnswerCache,
    pub resolver: ImageResolver,
    pub models: ModelRegistry,
    pub generation: GenerationSettings,
    pub embedding: EmbedSettings,
}

impl Harness {
    pub fn new(spec: WorldSpec, seed: u64, behavior: ChatBehavior, failure_rate: f64) -> Self {
        let world = Arc::new(SyntheticWorld::generate(spec).expect("valid spec"));
        Self {
            chat: MockChat::new(world.clone(), seed, behavior),
            vision: MockVision::with_failures(world.clone(), seed, failure_rate),
            world,
            cache: AnswerCache::in_memory(),
            resolver: ImageResolver::default(),
            models: ModelRegistry::with_defaults(),
            generation: GenerationSettings::default(),
            embedding: EmbedSettings::default(),
        }
    }

    pub fn standard(seed: u64) -> Self {
        Self::new(WorldSpec { seed, ..WorldSpec::default() }, seed, ChatBehavior::Vocabulary, 0.0)
    }

    pub fn ctx<'a>(&'a self, run_dir: Option<&'a Path>) -> LoopContext<'a> {
        LoopContext {
            snapshot: &self.world.snapshot,
            chat: &self.chat,
            vision: &self.vision,
            cache: &self.cache,
            resolver: &self.resolver,
            models: &self.models,
            generation: &self.generation,
            embedding: &self.embedding,
            run_dir,
        }
    }
}

/// k = 12, T = 10, alpha = 0.05 with the given seed.
pub fn small_loop(seed: u64) -> LoopConfig {
    LoopConfig {
        k: 12,
        max_iters: 10,
        alpha: 0.05,
        seed,
        ..LoopConfig::default()
    }
}
