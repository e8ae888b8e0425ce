//! Metrics log records: one space-separated `key=value` line per event.
//!
//! Three record kinds share the format, distinguished by their first key:
//!
//! ```text
//! step=12 stage=1 surrogate=0.25 grad_norm=1.5 mean_reward=0.5 buffer=4 filtered_frac=0.25 mean_len=2.5
//! event=stage_transition from=1 to=2
//! event=warning stage=2 reason=no_optimizer_steps
//! ```

use std::io::BufRead;

use crate::error::{Error, Result};

/// Emitted once per optimizer step. `buffer` is the buffer occupancy at the
/// moment the update fired (before draining), so threshold compliance can be
/// audited from the log alone.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub stage: u8,
    pub surrogate: f64,
    pub grad_norm: f64,
    pub mean_reward: f64,
    pub buffer: u32,
    pub filtered_frac: f64,
    pub mean_len: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Step(StepRecord),
    StageTransition { from: u8, to: u8 },
    Warning { stage: u8, reason: String },
}

impl Record {
    pub fn format(&self) -> String {
        match self {
            Record::Step(s) => format!(
                "step={} stage={} surrogate={} grad_norm={} mean_reward={} buffer={} filtered_frac={} mean_len={}",
                s.step,
                s.stage,
                s.surrogate,
                s.grad_norm,
                s.mean_reward,
                s.buffer,
                s.filtered_frac,
                s.mean_len
            ),
            Record::StageTransition { from, to } => {
                format!("event=stage_transition from={from} to={to}")
            }
            Record::Warning { stage, reason } => {
                format!("event=warning stage={stage} reason={reason}")
            }
        }
    }
}

fn fields(line: &str, line_no: usize) -> Result<Vec<(&str, &str)>> {
    line.split(' ')
        .filter(|p| !p.is_empty())
        .map(|pair| {
            pair.split_once('=').ok_or_else(|| Error::ConfigLine {
                line: line_no,
                msg: format!("`{pair}` is not a key=value pair"),
            })
        })
        .collect()
}

fn take<'a>(
    fields: &[(&str, &'a str)],
    key: &str,
    line_no: usize,
) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::ConfigLine {
            line: line_no,
            msg: format!("missing key `{key}`"),
        })
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str, line_no: usize) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigLine {
        line: line_no,
        msg: format!("bad value `{value}` for `{key}`"),
    })
}

fn parse_finite(value: &str, key: &str, line_no: usize) -> Result<f64> {
    let x: f64 = parse_num(value, key, line_no)?;
    if !x.is_finite() {
        return Err(Error::ConfigLine {
            line: line_no,
            msg: format!("non-finite value `{value}` for `{key}`"),
        });
    }
    Ok(x)
}

/// Parse one record line; `line_no` is 1-based and quoted in every error.
pub fn parse_record(line: &str, line_no: usize) -> Result<Record> {
    let fields = fields(line, line_no)?;
    if fields.is_empty() {
        return Err(Error::ConfigLine {
            line: line_no,
            msg: "empty record".into(),
        });
    }
    match fields[0].0 {
        "step" => Ok(Record::Step(StepRecord {
            step: parse_num(take(&fields, "step", line_no)?, "step", line_no)?,
            stage: parse_num(take(&fields, "stage", line_no)?, "stage", line_no)?,
            surrogate: parse_finite(take(&fields, "surrogate", line_no)?, "surrogate", line_no)?,
            grad_norm: parse_finite(take(&fields, "grad_norm", line_no)?, "grad_norm", line_no)?,
            mean_reward: parse_finite(
                take(&fields, "mean_reward", line_no)?,
                "mean_reward",
                line_no,
            )?,
            buffer: parse_num(take(&fields, "buffer", line_no)?, "buffer", line_no)?,
            filtered_frac: parse_finite(
                take(&fields, "filtered_frac", line_no)?,
                "filtered_frac",
                line_no,
            )?,
            mean_len: parse_finite(take(&fields, "mean_len", line_no)?, "mean_len", line_no)?,
        })),
        "event" => match fields[0].1 {
            "stage_transition" => Ok(Record::StageTransition {
                from: parse_num(take(&fields, "from", line_no)?, "from", line_no)?,
                to: parse_num(take(&fields, "to", line_no)?, "to", line_no)?,
            }),
            "warning" => Ok(Record::Warning {
                stage: parse_num(take(&fields, "stage", line_no)?, "stage", line_no)?,
                reason: take(&fields, "reason", line_no)?.to_string(),
            }),
            other => Err(Error::ConfigLine {
                line: line_no,
                msg: format!("unknown event `{other}`"),
            }),
        },
        other => Err(Error::ConfigLine {
            line: line_no,
            msg: format!("unknown record key `{other}`"),
        }),
    }
}

/// Parse a whole metrics log, skipping blank lines.
pub fn parse_metrics<R: BufRead>(input: R) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line, idx + 1)?);
    }
    Ok(records)
}
