mod common;

use proptest::prelude::*;
use taskforge::parser::{normalize_task_name, parse_generation, parse_score, render_generation, ParseError};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn render_then_parse_is_identity(g in common::well_formed_generation()) {
        let text = render_generation(&g);
        let parsed = parse_generation(&text).unwrap();
        prop_assert_eq!(&parsed, &g);
        prop_assert_eq!(render_generation(&parsed), text);
    }

    #[test]
    fn score_line_accepts_one_to_ten(s in 1u8..=10, prefix in "[a-z ]{0,40}", dot in any::<bool>()) {
        let text = format!("{prefix}\nThus the coherency score is {s}{}", if dot { "." } else { "" });
        prop_assert_eq!(parse_score(&text), Ok(s));
    }

    #[test]
    fn score_line_rejects_out_of_range(s in prop_oneof![Just(0u64), 11u64..10_000]) {
        let text = format!("Thus the coherency score is {s}");
        prop_assert_eq!(parse_score(&text), Err(ParseError::ScoreOutOfRange(s)));
    }

    #[test]
    fn task_normalization_is_idempotent(raw in "[\\[\"' ]{0,2}[A-Za-z][A-Za-z ]{0,20}[.\\]\"' ]{0,3}") {
        let once = normalize_task_name(&raw).unwrap();
        let twice = normalize_task_name(&once.display).unwrap();
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn parser_never_panics_on_noise() {
    let mut runner = proptest::test_runner::TestRunner::default();
    runner
        .run(&"(?s).{0,300}", |text| {
            let _ = parse_generation(&text);
            let _ = parse_score(&text);
            Ok(())
        })
        .unwrap();
}
