use hyposearch::domain::{Hypothesis, HypothesisSet, Origin};
use hyposearch::hypogen::{parse_generation, GenerationError};
use hyposearch::vqa::{parse_batch_answer, VqaError};
use proptest::prelude::*;

fn set(k: usize) -> HypothesisSet {
    let members = (0..k)
        .map(|i| Hypothesis::binary(&format!("Is feature {i} visible?"), Origin::Seed, 0).unwrap())
        .collect();
    HypothesisSet::new(0, members).unwrap()
}

const MALFORMED_GENERATIONS: [&str; 20] = [
    "",
    "I cannot help with that.",
    "[]",
    "{\"question\": \"Is there a tree?\"}",
    "[1, 2, 3]",
    "[\"Is there a tree?\", \"Is there a car?\"]",
    "[{\"q\": \"Is there a tree?\"}]",
    "[{\"question\": 5}]",
    "[{\"question\": \"Is there a tree?\"",
    "```json\n[{\"question\": \"Is there a tree?\",]\n```",
    "[{\"question\": \"\"}]",
    "[{\"question\": \"   \"}]",
    "[{\"question\": \"Is there a tree?\", \"options\": []}]",
    "[{\"question\": \"Is there a tree?\", \"options\": [\"only\"]}]",
    "[{\"question\": \"Is there a tree?\", \"options\": \"yes/no\"}]",
    "[{\"question\": \"Is there a tree?\"}, {\"question\": \"is there a TREE?\"}]",
    "null",
    "[[{\"question\": \"Is there a tree?\"}]]",
    "{\"hypotheses\": \"none\"}",
    "[{\"question\": null}]",
];

#[test]
fn malformed_generation_replies_are_errors() {
    for (i, reply) in MALFORMED_GENERATIONS.iter().enumerate() {
        match parse_generation(reply, 2, &[], Origin::Seed, 0) {
            Err(GenerationError::NoArray) | Err(GenerationError::Shortfall { .. }) => {}
            other => panic!("reply {i} {reply:?} gave {other:?}"),
        }
    }
}

#[test]
fn malformed_batch_replies_are_errors() {
    let s = set(3);
    let corpus = [
        "",
        "yes, no, yes",
        "[1, 0]",
        "[1, 0, 1, 1]",
        "[a, b, c]",
        "Answers: none",
        "[]",
        "{1, 0, 1}",
    ];
    for reply in corpus {
        assert!(
            matches!(
                parse_batch_answer(reply, &s),
                Err(VqaError::NoAnswerList) | Err(VqaError::AnswerLength { .. })
            ),
            "{reply:?}"
        );
    }
    assert_eq!(parse_batch_answer("Answers: [1, 7, -1]", &s).unwrap(), vec![Some(1), None, None]);
}

proptest! {
    #[test]
    fn batch_parser_never_panics(reply in ".{0,200}") {
        let _ = parse_batch_answer(&reply, &set(4));
    }

    #[test]
    fn generation_parser_never_panics(reply in ".{0,200}") {
        let _ = parse_generation(&reply, 2, &[], Origin::Seed, 0);
    }

    #[test]
    fn well_formed_batch_round_trips(bits in proptest::collection::vec(0u32..2, 1..12)) {
        let reply = format!("Answers: {bits:?}");
        let parsed = parse_batch_answer(&reply, &set(bits.len())).unwrap();
        prop_assert_eq!(parsed, bits.into_iter().map(Some).collect::<Vec<_>>());
    }
}
