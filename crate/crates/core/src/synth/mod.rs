//! Offline ground truth: a generated scene collection with planted factors,
//! plus mock chat and vision backends that answer from it.

mod mocks;
mod world;

pub use mocks::{
    answer_question, mock_mllm_answer, register_synthetic_backends, ChatBehavior, MockChat, MockVision,
    SyntheticWorld, SYNTHETIC_BACKEND,
};
pub use world::{
    generate_world, scene_from_image, scene_image_ref, PlantedFactor, QuestionKind, TruthTable, WorldSpec,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid world spec: {0}")]
    Spec(String),
}
