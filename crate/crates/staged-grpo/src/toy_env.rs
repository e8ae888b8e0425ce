//! Synthetic modular-arithmetic environment.
//!
//! Tasks are k-operand expressions over `{+, ×}` with single-digit operands,
//! evaluated left to right and reduced mod 10, so every task has a verifiable
//! single-digit answer. Difficulty is structural: level 1 uses 2 operands,
//! level 2 uses 4. Generation and verification are pure functions of their
//! inputs and safe to call from any thread.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub type TokenId = u8;

/// Fixed 16-symbol vocabulary: digits 0-9 plus control tokens.
///
/// `SEP` terminates the expression and marks the mod-10 reduction point;
/// `ANSWER` asks the policy for the final digit; `PAD` is exclusively a
/// left-padding filler for context windows and never appears in any
/// environment-generated sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Vocabulary;

impl Vocabulary {
    pub const SIZE: usize = 16;

    pub const PLUS: TokenId = 10;
    pub const TIMES: TokenId = 11;
    pub const SEP: TokenId = 12;
    pub const ANSWER: TokenId = 13;
    pub const EOS: TokenId = 14;
    pub const PAD: TokenId = 15;

    pub fn contains(token: TokenId) -> bool {
        (token as usize) < Self::SIZE
    }

    pub fn is_digit(token: TokenId) -> bool {
        token < 10
    }

    pub fn digit(value: u8) -> TokenId {
        debug_assert!(value < 10);
        value
    }

    pub fn token_name(token: TokenId) -> &'static str {
        match token {
            0 => "0",
            1 => "1",
            2 => "2",
            3 => "3",
            4 => "4",
            5 => "5",
            6 => "6",
            7 => "7",
            8 => "8",
            9 => "9",
            Self::PLUS => "PLUS",
            Self::TIMES => "TIMES",
            Self::SEP => "SEP",
            Self::ANSWER => "ANSWER",
            Self::EOS => "EOS",
            Self::PAD => "PAD",
            _ => "?",
        }
    }
}

/// Difficulty level of a task; higher level means more operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifficultyLevel {
    pub level: u8,
    pub operand_count: usize,
}

impl DifficultyLevel {
    /// Canonical mapping: level 1 -> 2 operands, level 2 -> 4 operands.
    pub fn new(level: u8) -> Result<Self> {
        let operand_count = match level {
            1 => 2,
            2 => 4,
            other => {
                return Err(Error::Config(format!(
                    "invalid difficulty level {other} (expected 1 or 2)"
                )))
            }
        };
        Ok(Self {
            level,
            operand_count,
        })
    }
}

/// One verifiable task: a prompt ending in the `ANSWER` marker and the
/// single digit token the policy is expected to emit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: u64,
    pub level: DifficultyLevel,
    pub prompt: Vec<TokenId>,
    pub answer: Vec<TokenId>,
}

/// The MDP housing: discount, horizon and vocabulary. The dynamics are the
/// deterministic append-token transitions and the prompt distribution of the
/// generated datasets, so nothing else needs to be represented.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvDescriptor {
    pub gamma: f64,
    pub horizon: usize,
    pub vocab: Vocabulary,
}

impl EnvDescriptor {
    pub fn new(gamma: f64, horizon: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1]")));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        Ok(Self {
            gamma,
            horizon,
            vocab: Vocabulary,
        })
    }
}

impl Default for EnvDescriptor {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            horizon: 32,
            vocab: Vocabulary,
        }
    }
}

fn apply_op(op: TokenId, acc: u8, operand: u8) -> u8 {
    match op {
        Vocabulary::PLUS => (acc + operand) % 10,
        Vocabulary::TIMES => (acc * operand) % 10,
        _ => unreachable!("operator token expected"),
    }
}

/// Build a single task from its (seed, level, id) coordinates.
///
/// The answer digit is drawn uniformly first and the expression is
/// rejection-sampled to hit it: the raw value of a random product-bearing
/// expression mod 10 is heavily skewed toward 0 and the even digits, which
/// would make group rewards nearly constant on some answers.
pub fn task_for_id(level: DifficultyLevel, seed: u64, id: u64) -> Task {
    let mut rng = RngStream::derive(seed, &[level.level as u64, id]);
    let target = rng.below(10) as u8;
    loop {
        let mut operands = Vec::with_capacity(level.operand_count);
        let mut ops = Vec::with_capacity(level.operand_count - 1);
        operands.push(rng.below(10) as u8);
        for _ in 1..level.operand_count {
            ops.push(if rng.below(2) == 0 {
                Vocabulary::PLUS
            } else {
                Vocabulary::TIMES
            });
            operands.push(rng.below(10) as u8);
        }
        let mut value = operands[0];
        for (op, &operand) in ops.iter().zip(&operands[1..]) {
            value = apply_op(*op, value, operand);
        }
        if value != target {
            continue;
        }
        let mut prompt = Vec::with_capacity(2 * level.operand_count + 1);
        prompt.push(Vocabulary::digit(operands[0]));
        for (op, &operand) in ops.iter().zip(&operands[1..]) {
            prompt.push(*op);
            prompt.push(Vocabulary::digit(operand));
        }
        prompt.push(Vocabulary::SEP);
        prompt.push(Vocabulary::ANSWER);
        return Task {
            id,
            level,
            prompt,
            answer: vec![Vocabulary::digit(target)],
        };
    }
}

/// Generate `n` tasks of the given level, deterministic in (level, n, seed).
pub fn generate_dataset(level: DifficultyLevel, n: usize, seed: u64) -> Result<Vec<Task>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be >= 1".into()));
    }
    // Re-validate so a hand-built DifficultyLevel cannot smuggle a bad level in.
    let level = DifficultyLevel::new(level.level).map(|canonical| DifficultyLevel {
        level: canonical.level,
        operand_count: level.operand_count,
    })?;
    Ok((0..n as u64)
        .map(|id| task_for_id(level, seed, id))
        .collect())
}

/// Ground-truth check behind the outcome reward.
///
/// True iff the tokens between the last `ANSWER` marker in prompt‖output and
/// the first `EOS` after it are exactly the task's answer digits. Missing
/// `EOS`, an empty span, or any extra token in the span all verify false;
/// malformed outputs never error.
pub fn verify(task: &Task, output: &[TokenId]) -> bool {
    if output.iter().any(|&t| !Vocabulary::contains(t)) {
        return false;
    }
    let seq: Vec<TokenId> = task
        .prompt
        .iter()
        .chain(output.iter())
        .copied()
        .collect();
    let last_answer = match seq.iter().rposition(|&t| t == Vocabulary::ANSWER) {
        Some(pos) => pos,
        None => return false,
    };
    let tail = &seq[last_answer + 1..];
    let eos = match tail.iter().position(|&t| t == Vocabulary::EOS) {
        Some(pos) => pos,
        None => return false,
    };
    let span = &tail[..eos];
    !span.is_empty() && span == task.answer.as_slice()
}

/// Dump tasks as line-delimited records:
/// `id <TAB> level <TAB> prompt token ids <TAB> answer token ids`.
pub fn write_dataset<W: Write>(tasks: &[Task], mut out: W) -> Result<()> {
    for task in tasks {
        let prompt = join_ids(&task.prompt);
        let answer = join_ids(&task.answer);
        writeln!(out, "{}\t{}\t{}\t{}", task.id, task.level.level, prompt, answer)?;
    }
    Ok(())
}

fn join_ids(tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_ids(field: &str, line: usize) -> Result<Vec<TokenId>> {
    field
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|s| {
            let id: u8 = s.parse().map_err(|_| Error::ConfigLine {
                line,
                msg: format!("bad token id `{s}`"),
            })?;
            if !Vocabulary::contains(id) {
                return Err(Error::ConfigLine {
                    line,
                    msg: format!("token id {id} outside vocabulary"),
                });
            }
            Ok(id)
        })
        .collect()
}

/// Load a dataset dumped by [`write_dataset`].
pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::ConfigLine {
                line: line_no,
                msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let id: u64 = fields[0].parse().map_err(|_| Error::ConfigLine {
            line: line_no,
            msg: format!("bad task id `{}`", fields[0]),
        })?;
        let level_num: u8 = fields[1].parse().map_err(|_| Error::ConfigLine {
            line: line_no,
            msg: format!("bad level `{}`", fields[1]),
        })?;
        let level = DifficultyLevel::new(level_num).map_err(|e| Error::ConfigLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        let prompt = parse_ids(fields[2], line_no)?;
        let answer = parse_ids(fields[3], line_no)?;
        if !answer.iter().all(|&t| Vocabulary::is_digit(t)) {
            return Err(Error::ConfigLine {
                line: line_no,
                msg: "answer field contains non-digit tokens".into(),
            });
        }
        tasks.push(Task {
            id,
            level,
            prompt,
            answer,
        });
    }
    Ok(tasks)
}
