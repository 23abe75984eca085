//! JSON-Lines datasets and the seeded synthetic task.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub token_ids: Vec<usize>,
    pub intent_label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_labels: Option<Vec<usize>>,
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Example>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("dataset line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

pub fn to_jsonl(examples: &[Example]) -> Result<String> {
    let mut out = String::new();
    for ex in examples {
        writeln!(out, "{}", serde_json::to_string(ex)?).expect("write to string");
    }
    Ok(out)
}

/// Checks ids, lengths and labels against model limits.
pub fn validate(examples: &[Example], vocab: usize, seq_len: usize, intents: usize, slots: usize) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    for (i, ex) in examples.iter().enumerate() {
        let ctx = |m: String| Error::Format(format!("example {i}: {m}"));
        if ex.token_ids.is_empty() || ex.token_ids.len() > seq_len {
            return Err(ctx(format!("length {} outside 1..={seq_len}", ex.token_ids.len())));
        }
        if let Some(&t) = ex.token_ids.iter().find(|&&t| t >= vocab) {
            return Err(ctx(format!("token id {t} outside vocabulary of {vocab}")));
        }
        if ex.intent_label >= intents {
            return Err(ctx(format!("intent label {} outside {intents} classes", ex.intent_label)));
        }
        if slots > 0 {
            match &ex.slot_labels {
                Some(s) if s.len() != ex.token_ids.len() => {
                    return Err(ctx("slot labels and tokens differ in length".into()))
                }
                Some(s) if s.iter().any(|&l| l >= slots) => return Err(ctx(format!("slot label outside {slots} classes"))),
                None => return Err(ctx("slot filling is enabled but slot_labels is missing".into())),
                _ => {}
            }
        }
    }
    Ok(())
}

/// Parameters of the synthetic separable task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub classes: usize,
    pub length: usize,
    pub vocab: usize,
    pub band: usize,
    pub signal: f64,
}

/// Token 0 opens every sequence. Class `c` owns ids `1 + c·band ..
/// 1 + (c+1)·band`; the remaining ids are noise. Each later position holds
/// an indicative token of the example's class with probability `signal`
/// (at least one is forced), and its slot label is 1 exactly there.
pub fn synthesize<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<Vec<Example>> {
    let noise_start = 1 + spec.classes * spec.band;
    if spec.classes == 0 || spec.band == 0 || spec.length < 2 || noise_start >= spec.vocab {
        return Err(Error::InvalidArgument(format!(
            "synthetic task needs classes, band ≥ 1, length ≥ 2 and vocabulary > {noise_start}"
        )));
    }
    let mut out = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let label = rng.gen_range(0..spec.classes);
        let forced = rng.gen_range(1..spec.length);
        let mut tokens = vec![0];
        let mut slots = vec![0];
        for pos in 1..spec.length {
            if pos == forced || rng.gen_bool(spec.signal) {
                tokens.push(1 + label * spec.band + rng.gen_range(0..spec.band));
                slots.push(1);
            } else {
                tokens.push(rng.gen_range(noise_start..spec.vocab));
                slots.push(0);
            }
        }
        out.push(Example {
            token_ids: tokens,
            intent_label: label,
            slot_labels: Some(slots),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn spec() -> SynthSpec {
        SynthSpec {
            count: 20,
            classes: 3,
            length: 8,
            vocab: 40,
            band: 4,
            signal: 0.25,
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let a = synthesize(&spec(), &mut stream(7, Stream::Data)).unwrap();
        let b = synthesize(&spec(), &mut stream(7, Stream::Data)).unwrap();
        assert_eq!(a, b);
        validate(&a, 40, 8, 3, 2).unwrap();
        for ex in &a {
            assert_eq!(ex.token_ids[0], 0);
            let slots = ex.slot_labels.as_ref().unwrap();
            assert!(slots.contains(&1));
            for (&t, &s) in ex.token_ids.iter().zip(slots) {
                let indicative = t > ex.intent_label * 4 && t < 1 + (ex.intent_label + 1) * 4;
                assert_eq!(s == 1, indicative);
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let a = synthesize(&spec(), &mut stream(1, Stream::Data)).unwrap();
        assert_eq!(parse_jsonl(&to_jsonl(&a).unwrap()).unwrap(), a);
    }

    #[test]
    fn bad_records_rejected() {
        assert!(parse_jsonl(r#"{"token_ids":[1],"intent_label":0,"other":1}"#).is_err());
        let ex = Example {
            token_ids: vec![50],
            intent_label: 0,
            slot_labels: None,
        };
        assert!(validate(std::slice::from_ref(&ex), 40, 8, 3, 0).is_err());
        let ok = Example { token_ids: vec![5], ..ex };
        assert!(validate(std::slice::from_ref(&ok), 40, 8, 3, 0).is_ok());
        assert!(validate(&[ok], 40, 8, 3, 2).is_err());
    }
}
