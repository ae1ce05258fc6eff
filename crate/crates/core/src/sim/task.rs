use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::trajectory::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Arithmetic,
    Digits,
    NumberTheory,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Arithmetic, Family::Digits, Family::NumberTheory];

    pub fn skills(self) -> [Skill; 3] {
        match self {
            Family::Arithmetic => [Skill::AddConst, Skill::MulConst, Skill::SubConst],
            Family::Digits => [Skill::ReverseDigits, Skill::DigitSum, Skill::DigitCount],
            Family::NumberTheory => [Skill::ModConst, Skill::GcdConst, Skill::Square],
        }
    }
}

/// A reusable operation; tasks are pipelines of skills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    AddConst,
    MulConst,
    SubConst,
    ReverseDigits,
    DigitSum,
    DigitCount,
    ModConst,
    GcdConst,
    Square,
}

impl Skill {
    pub const ALL: [Skill; 9] = [
        Skill::AddConst,
        Skill::MulConst,
        Skill::SubConst,
        Skill::ReverseDigits,
        Skill::DigitSum,
        Skill::DigitCount,
        Skill::ModConst,
        Skill::GcdConst,
        Skill::Square,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).expect("skill listed")
    }

    pub fn family(self) -> Family {
        Family::ALL.into_iter().find(|f| f.skills().contains(&self)).expect("skill has a family")
    }

    pub fn name(self) -> &'static str {
        match self {
            Skill::AddConst => "add_const",
            Skill::MulConst => "mul_const",
            Skill::SubConst => "sub_const",
            Skill::ReverseDigits => "reverse_digits",
            Skill::DigitSum => "digit_sum",
            Skill::DigitCount => "digit_count",
            Skill::ModConst => "mod_const",
            Skill::GcdConst => "gcd_const",
            Skill::Square => "square",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Phrasings a created tool may use for its description.
    pub fn descriptions(self) -> [&'static str; 2] {
        match self {
            Skill::AddConst => [
                "Increase an integer by adding a given positive offset k to it",
                "Increase the integer by adding a given positive offset k to it",
            ],
            Skill::MulConst => [
                "Multiply a number by a small integer factor k and return the product",
                "Multiply the number by a small integer factor k and return the product",
            ],
            Skill::SubConst => [
                "Decrease an integer by subtracting a given positive amount k from it",
                "Decrease the integer by subtracting a given positive amount k from it",
            ],
            Skill::ReverseDigits => [
                "Reverse the order of the decimal digits of a number",
                "Reverse the order of all decimal digits of the number",
            ],
            Skill::DigitSum => [
                "Sum all decimal digits of a value into a single total",
                "Sum all the decimal digits of a value into a single total",
            ],
            Skill::DigitCount => [
                "Count how many decimal digits a value has, ignoring sign",
                "Count how many decimal digits the value has, ignoring sign",
            ],
            Skill::ModConst => [
                "Remainder left after integer division by a modulus k",
                "Remainder left after an integer division by a modulus k",
            ],
            Skill::GcdConst => [
                "Greatest common divisor of the input with a constant k",
                "Greatest common divisor of an input with a constant k",
            ],
            Skill::Square => [
                "Square a number by multiplying it with itself once",
                "Square the number by multiplying it with itself once",
            ],
        }
    }

    /// Subtask wording used in plans and as the retrieval query.
    pub fn subtask_text(self, k: i64) -> String {
        match self {
            Skill::AddConst => format!("increase the integer by offset {k}"),
            Skill::MulConst => format!("multiply the number by factor {k}"),
            Skill::SubConst => format!("decrease the integer by subtracting {k}"),
            Skill::ReverseDigits => "reverse the order of the decimal digits".into(),
            Skill::DigitSum => "sum all the digits of the value".into(),
            Skill::DigitCount => "count how many digits the value has".into(),
            Skill::ModConst => format!("remainder after division by modulus {k}"),
            Skill::GcdConst => format!("greatest common divisor with {k}"),
            Skill::Square => "square the number by self multiplication".into(),
        }
    }

    /// Parameter range for `k`; parameterless skills use 0.
    fn param_range(self) -> Option<(i64, i64)> {
        match self {
            Skill::AddConst | Skill::SubConst => Some((1, 9)),
            Skill::MulConst => Some((2, 4)),
            Skill::ModConst => Some((3, 9)),
            Skill::GcdConst => Some((2, 12)),
            _ => None,
        }
    }

    pub fn apply(self, x: i64, k: i64) -> i64 {
        match self {
            Skill::AddConst => x.saturating_add(k),
            Skill::MulConst => x.saturating_mul(k),
            Skill::SubConst => x.saturating_sub(k),
            Skill::ReverseDigits => {
                let r: String = x.unsigned_abs().to_string().chars().rev().collect();
                let r = r.parse::<i64>().unwrap_or(i64::MAX);
                if x < 0 {
                    -r
                } else {
                    r
                }
            }
            Skill::DigitSum => x.unsigned_abs().to_string().bytes().map(|b| i64::from(b - b'0')).sum(),
            Skill::DigitCount => x.unsigned_abs().to_string().len() as i64,
            Skill::ModConst => x.rem_euclid(k.max(1)),
            Skill::GcdConst => gcd(x.unsigned_abs(), k.unsigned_abs()) as i64,
            Skill::Square => x.saturating_mul(x),
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub skill: Skill,
    #[serde(default)]
    pub k: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub id: String,
    pub start: i64,
    pub pipeline: Vec<Operation>,
    pub ground_truth: i64,
    /// Skill tags shared across tasks so that tools pay off on reuse.
    pub skill_tags: Vec<Skill>,
}

impl SyntheticTask {
    pub fn new(id: impl Into<String>, start: i64, pipeline: Vec<Operation>) -> Self {
        let ground_truth = evaluate(start, &pipeline);
        let mut skill_tags: Vec<Skill> = pipeline.iter().map(|o| o.skill).collect();
        skill_tags.sort();
        skill_tags.dedup();
        Self { id: id.into(), start, pipeline, ground_truth, skill_tags }
    }

    pub fn query(&self) -> String {
        let steps: Vec<String> = self.pipeline.iter().map(|o| o.skill.subtask_text(o.k)).collect();
        format!("Start from {}; {}. Report the final value.", self.start, steps.join("; then "))
    }

    pub fn task(&self) -> Task {
        Task { id: self.id.clone(), query: self.query(), ground_truth: Some(self.ground_truth.to_string()) }
    }

    pub fn is_consistent(&self) -> bool {
        !self.pipeline.is_empty() && self.ground_truth == evaluate(self.start, &self.pipeline)
    }
}

pub fn evaluate(start: i64, pipeline: &[Operation]) -> i64 {
    pipeline.iter().fold(start, |x, o| o.skill.apply(x, o.k))
}

/// Dataset shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_tasks: usize,
    pub min_ops: usize,
    pub max_ops: usize,
    /// Probability that a task draws all its skills from one family.
    pub within_family: f64,
    /// Families tasks draw from; empty means all.
    pub families: Vec<Family>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { num_tasks: 64, min_ops: 2, max_ops: 3, within_family: 0.8, families: Vec::new(), seed: 7 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_tasks == 0 || self.min_ops == 0 || self.min_ops > self.max_ops {
            return Err(SimError::InvalidConfig("dataset needs num_tasks >= 1 and 1 <= min_ops <= max_ops".into()));
        }
        if !(0.0..=1.0).contains(&self.within_family) {
            return Err(SimError::InvalidConfig("within_family must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Seeded task generator. Pipelines never repeat a skill.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<SyntheticTask>, SimError> {
    cfg.validate()?;
    let families: Vec<Family> = if cfg.families.is_empty() { Family::ALL.to_vec() } else { cfg.families.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    for i in 0..cfg.num_tasks {
        let n_ops = rng.gen_range(cfg.min_ops..=cfg.max_ops);
        let mut pool: Vec<Skill> = if rng.gen_bool(cfg.within_family) {
            families.choose(&mut rng).expect("at least one family").skills().to_vec()
        } else {
            families.iter().flat_map(|f| f.skills()).collect()
        };
        pool.shuffle(&mut rng);
        let pipeline = pool
            .into_iter()
            .take(n_ops)
            .map(|skill| Operation { skill, k: skill.param_range().map_or(0, |(lo, hi)| rng.gen_range(lo..=hi)) })
            .collect();
        tasks.push(SyntheticTask::new(format!("task-{i:04}"), rng.gen_range(10..100), pipeline));
    }
    Ok(tasks)
}

/// Two-stage curriculum over all families: single-family pipelines, then
/// pipelines that mix families. Ids are prefixed by stage.
pub fn curriculum_datasets(base: &DatasetConfig) -> Result<[Vec<SyntheticTask>; 2], SimError> {
    let stage = |n: u64, within_family: f64| -> Result<Vec<SyntheticTask>, SimError> {
        let cfg =
            DatasetConfig { within_family, families: Vec::new(), seed: base.seed.wrapping_add(n), ..base.clone() };
        let mut tasks = generate_dataset(&cfg)?;
        for t in &mut tasks {
            t.id = format!("stage{n}-{}", t.id);
        }
        Ok(tasks)
    };
    Ok([stage(1, 1.0)?, stage(2, 0.0)?])
}

/// Line-delimited task records; blank lines are skipped.
pub fn read_dataset(reader: impl BufRead) -> Result<Vec<SyntheticTask>, SimError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SimError::Dataset { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let task: SyntheticTask =
            serde_json::from_str(&line).map_err(|e| SimError::Dataset { line: i + 1, message: e.to_string() })?;
        if !task.is_consistent() {
            return Err(SimError::Dataset { line: i + 1, message: "ground truth does not match pipeline".into() });
        }
        out.push(task);
    }
    Ok(out)
}

pub fn write_dataset(mut writer: impl Write, tasks: &[SyntheticTask]) -> std::io::Result<()> {
    for t in tasks {
        writeln!(writer, "{}", serde_json::to_string(t).expect("task serializes"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{cosine, EmbeddingProvider, TrigramEmbedder};

    #[test]
    fn skills_evaluate() {
        assert_eq!(Skill::ReverseDigits.apply(120, 0), 21);
        assert_eq!(Skill::ReverseDigits.apply(-12, 0), -21);
        assert_eq!(Skill::DigitSum.apply(987, 0), 24);
        assert_eq!(Skill::DigitCount.apply(-1000, 0), 4);
        assert_eq!(Skill::ModConst.apply(-7, 3), 2);
        assert_eq!(Skill::GcdConst.apply(84, 18), 6);
        assert_eq!(Skill::Square.apply(-9, 0), 81);
        assert_eq!(
            evaluate(
                37,
                &[Operation { skill: Skill::AddConst, k: 5 }, Operation { skill: Skill::ReverseDigits, k: 0 }]
            ),
            24
        );
    }

    #[test]
    fn generator_is_seeded_and_consistent() {
        let cfg = DatasetConfig::default();
        let a = generate_dataset(&cfg).unwrap();
        assert_eq!(a, generate_dataset(&cfg).unwrap());
        assert_eq!(a.len(), 64);
        for t in &a {
            assert!(t.is_consistent());
            assert!((2..=3).contains(&t.pipeline.len()));
            let mut s: Vec<Skill> = t.pipeline.iter().map(|o| o.skill).collect();
            s.dedup();
            assert_eq!(s.len(), t.pipeline.len());
        }
        let one = DatasetConfig { families: vec![Family::Digits], within_family: 1.0, ..cfg };
        assert!(generate_dataset(&one)
            .unwrap()
            .iter()
            .all(|t| t.skill_tags.iter().all(|s| s.family() == Family::Digits)));
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let tasks = generate_dataset(&DatasetConfig { num_tasks: 5, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &tasks).unwrap();
        assert_eq!(read_dataset(&buf[..]).unwrap(), tasks);
        let err = read_dataset("\n{oops}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SimError::Dataset { line: 2, .. }));
        let mut bad = tasks[0].clone();
        bad.ground_truth += 1;
        let line = serde_json::to_string(&bad).unwrap();
        assert!(read_dataset(line.as_bytes()).is_err());
    }

    #[test]
    fn curriculum_stages_differ_in_family_mixing() {
        let [a, b] = curriculum_datasets(&DatasetConfig::default()).unwrap();
        let families = |t: &SyntheticTask| {
            t.pipeline.iter().map(|o| o.skill.family()).collect::<std::collections::BTreeSet<_>>().len()
        };
        assert!(a.iter().all(|t| families(t) == 1 && t.id.starts_with("stage1-")));
        assert!(b.iter().any(|t| families(t) > 1));
        assert!(b.iter().all(|t| t.id.starts_with("stage2-")));
    }

    /// Variants of one skill's tool text merge at the default threshold;
    /// different skills stay apart.
    #[test]
    fn tool_texts_separate_by_skill() {
        let e = TrigramEmbedder::default();
        let texts = |s: Skill| -> Vec<Vec<f64>> {
            let mut out = Vec::new();
            for name in super::super::runtime::tool_names(s) {
                for d in s.descriptions() {
                    out.push(e.embed(&format!("{name}: {d}")));
                }
            }
            out
        };
        for a in Skill::ALL {
            let ta = texts(a);
            for x in &ta {
                for y in &ta {
                    assert!(cosine(x, y).unwrap() >= 0.85, "{a:?} variants too far apart");
                }
            }
            for b in Skill::ALL.into_iter().filter(|b| *b != a) {
                for x in &ta {
                    for y in texts(b) {
                        assert!(cosine(x, &y).unwrap() < 0.85, "{a:?} vs {b:?} too close");
                    }
                }
            }
        }
    }
}
