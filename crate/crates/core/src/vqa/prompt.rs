use super::VqaError;
use crate::domain::HypothesisSet;
use regex::Regex;
use std::sync::OnceLock;

pub const BATCH_TEMPLATE: &str = include_str!("../../templates/emb_batch.v1.txt");

fn example_list(k: usize) -> String {
    let bits: Vec<String> = (0..k).map(|i| (i % 2).to_string()).collect();
    if k <= 5 {
        format!("[{}]", bits.join(", "))
    } else {
        format!("[{}, ..., {}]", bits[..3].join(", "), bits[k - 1])
    }
}

/// Batch question prompt: every question with its numbered options, asking
/// for one option index per question as a bracketed integer list.
pub fn render_batch_prompt(set: &HypothesisSet) -> Result<String, VqaError> {
    if set.is_empty() {
        return Err(VqaError::EmptySet);
    }
    let block = set
        .members
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let options = h
                .options
                .iter()
                .enumerate()
                .map(|(j, o)| format!("{j} = {o}"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("Q{}. {}\n    Options: {options}", i + 1, h.question)
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(BATCH_TEMPLATE
        .replace("{{count}}", &set.len().to_string())
        .replace("{{question_block}}", &block)
        .replace("{{example}}", &example_list(set.len())))
}

fn bracket_lists() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]").unwrap())
}

fn parse_int_list(body: &str) -> Option<Vec<i64>> {
    let tokens: Vec<&str> = body
        .split([',', ' ', '\n', '\t', ';'])
        .map(|t| t.trim().trim_matches(|c| c == '"' || c == '\''))
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return None;
    }
    tokens.iter().map(|t| t.parse::<i64>().ok()).collect()
}

/// Extracts one option index per question from a batch reply.
///
/// Takes the first bracketed integer list of length k (a bare
/// comma-separated reply is accepted too). Values outside a question's
/// option range become `None`.
pub fn parse_batch_answer(reply: &str, set: &HypothesisSet) -> Result<Vec<Option<u32>>, VqaError> {
    let k = set.len();
    let mut first_len = None;
    let mut chosen = None;
    for cap in bracket_lists().captures_iter(reply) {
        if let Some(list) = parse_int_list(&cap[1]) {
            if list.len() == k {
                chosen = Some(list);
                break;
            }
            first_len.get_or_insert(list.len());
        }
    }
    if chosen.is_none() && first_len.is_none() {
        chosen = parse_int_list(reply.trim()).filter(|l| l.len() == k);
        if chosen.is_none() {
            if let Some(l) = parse_int_list(reply.trim()) {
                first_len = Some(l.len());
            }
        }
    }
    let list = match (chosen, first_len) {
        (Some(list), _) => list,
        (None, Some(found)) => return Err(VqaError::AnswerLength { expected: k, found }),
        (None, None) => return Err(VqaError::NoAnswerList),
    };
    Ok(list
        .into_iter()
        .zip(&set.members)
        .map(|(v, h)| (v >= 0 && (v as usize) < h.option_count()).then_some(v as u32))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Hypothesis, Origin};

    fn binary_set(k: usize) -> HypothesisSet {
        HypothesisSet::new(
            0,
            (0..k)
                .map(|i| Hypothesis::binary(&format!("Question {i}?"), Origin::Seed, 0).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn renders_two_questions() {
        let text = render_batch_prompt(&binary_set(2)).unwrap();
        assert!(text.contains("Q1. Question 0?\n    Options: 0 = no, 1 = yes"));
        assert!(text.contains("Q2. Question 1?"));
        assert!(text.contains("list of 2 integers"));
        assert!(text.contains("[0, 1]"));
    }

    #[test]
    fn renders_single_and_multi_option() {
        let text = render_batch_prompt(&binary_set(1)).unwrap();
        assert!(text.contains("following 1 questions") && text.contains("[0]"));
        let set = HypothesisSet::new(
            0,
            vec![Hypothesis::new(
                "How wide is the road?",
                vec!["narrow".into(), "medium".into(), "wide".into()],
                Origin::Seed,
                0,
            )
            .unwrap()],
        )
        .unwrap();
        let text = render_batch_prompt(&set).unwrap();
        assert!(text.contains("Options: 0 = narrow, 1 = medium, 2 = wide"));
        assert!(render_batch_prompt(&HypothesisSet::new(0, vec![]).unwrap()).is_err());
    }

    #[test]
    fn parses_lists_with_range_guard() {
        let set = binary_set(3);
        assert_eq!(parse_batch_answer("[1, 0, 1]", &set).unwrap(), vec![Some(1), Some(0), Some(1)]);
        assert_eq!(
            parse_batch_answer("Answers: [1, 5, 0]", &set).unwrap(),
            vec![Some(1), None, Some(0)]
        );
        assert_eq!(parse_batch_answer("[-1, 1, 1]", &set).unwrap()[0], None);
        assert_eq!(parse_batch_answer("1, 1, 0", &set).unwrap(), vec![Some(1), Some(1), Some(0)]);
        assert_eq!(
            parse_batch_answer("see [note] then [\"1\", \"0\", \"0\"]", &set).unwrap(),
            vec![Some(1), Some(0), Some(0)]
        );
    }

    #[test]
    fn length_and_absence_errors() {
        let set = binary_set(3);
        assert_eq!(
            parse_batch_answer("[1, 0]", &set),
            Err(VqaError::AnswerLength { expected: 3, found: 2 })
        );
        assert_eq!(parse_batch_answer("I see a road.", &set), Err(VqaError::NoAnswerList));
    }
}
