//! d-digit addition where each output digit is a separate skill.
//!
//! Skill `i` asks for the digit of the sum at place value 10^(i-1). The
//! carry out of the top place is dropped, so the sum is taken mod 10^d.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Sample;
use crate::error::{Error, Result};
use crate::rng;

const ADDITION_STREAM: u64 = 0x4144_4421;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdditionSpec {
    pub digits: usize,
    pub seed: u64,
}

pub fn skill_name(place: usize) -> String {
    format!("add{place}")
}

fn spaced(value: u64, digits: usize) -> String {
    let s = format!("{value:0digits$}");
    let mut out = String::with_capacity(2 * digits);
    for (i, c) in s.chars().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push(c);
    }
    out
}

/// Renders the question `A = a + b , A <place> = ?`.
pub fn render_question(a: u64, b: u64, digits: usize, place: usize) -> String {
    format!("A = {} + {} , A {place} = ?", spaced(a, digits), spaced(b, digits))
}

pub fn gen_addition(spec: &AdditionSpec, counts: &BTreeMap<usize, usize>) -> Result<Vec<Sample>> {
    let d = spec.digits;
    // 10^19 overflows u64 once two operands are added
    if d == 0 || d > 18 {
        return Err(Error::InvalidConfig(format!("digit count must be in 1..=18, got {d}")));
    }
    for &i in counts.keys() {
        if i == 0 || i > d {
            return Err(Error::SkillOutOfRange { index: i, max: d });
        }
    }
    let modulus = 10u64.pow(d as u32);
    let mut out = Vec::with_capacity(counts.values().sum());
    for (&skill, &count) in counts {
        let place = skill - 1;
        let mut rng = rng::stream(spec.seed, &[ADDITION_STREAM, skill as u64]);
        for _ in 0..count {
            let a = rng.random_range(0..modulus);
            let b = rng.random_range(0..modulus);
            let digit = ((a + b) % modulus) / 10u64.pow(place as u32) % 10;
            out.push(Sample {
                skill: skill_name(skill),
                input: render_question(a, b, d, place),
                output: digit.to_string(),
            });
        }
    }
    Ok(out)
}

/// `Input: <question> Output: <digit>`
pub fn render(sample: &Sample) -> String {
    format!("Input: {} Output: {}", sample.input, sample.output)
}

pub fn parse_rendered(line: &str) -> Result<(String, String)> {
    let rest = line
        .trim()
        .strip_prefix("Input: ")
        .ok_or_else(|| Error::Parse(format!("missing `Input:` prefix in {line:?}")))?;
    let (input, output) = rest
        .split_once(" Output: ")
        .ok_or_else(|| Error::Parse(format!("missing `Output:` in {line:?}")))?;
    Ok((input.to_string(), output.to_string()))
}
