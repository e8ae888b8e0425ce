//! Pass@1 evaluation: k independent samples per task, verifier scoring, and
//! suite-level aggregation with an unweighted average column.
//!
//! Per-task sample streams are derived from `(eval_seed, task.id, sample)`,
//! so reports are invariant to task order and identical across execution
//! modes. Pass@1 accumulates integer correct-counts and divides once, making
//! the aggregate exact.

use std::io::Write;

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::policy::{sample_sequence, PolicyParams, TokenSequence};
use crate::rewards::{combined_reward, RewardConfig};
use crate::rng::RngStream;
use crate::toy_env::{verify, EnvDescriptor, Task};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_len: usize,
    pub eval_seed: u64,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("top_p must be in (0, 1]".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 16,
            temperature: 0.6,
            top_p: 1.0,
            max_len: 32,
            eval_seed: 7777,
        }
    }
}

/// Per-task outcome vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEval {
    pub task_id: u64,
    pub correct_count: usize,
    pub outcomes: Vec<bool>,
    pub total_output_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_task: Vec<TaskEval>,
    pub pass_at_1: f64,
    pub mean_output_len: f64,
    pub n_tasks: usize,
    pub k: usize,
}

/// Evaluate with an arbitrary sampler; the policy path and test stubs share
/// this aggregation.
pub fn pass_at_1_with_sampler<S>(
    tasks: &[Task],
    cfg: &EvalConfig,
    mode: ExecMode,
    sampler: S,
) -> Result<EvalReport>
where
    S: Fn(&Task, &mut RngStream) -> Result<TokenSequence> + Sync + Send,
{
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Input("task list is empty".into()));
    }
    let per_task = map_indexed(mode, tasks.len(), |idx| {
        let task = &tasks[idx];
        let mut outcomes = Vec::with_capacity(cfg.k);
        let mut total_output_len = 0usize;
        for sample in 0..cfg.k {
            let mut rng = RngStream::derive(cfg.eval_seed, &[task.id, sample as u64]);
            let output = sampler(task, &mut rng)?;
            total_output_len += output.len();
            outcomes.push(verify(task, &output.tokens));
        }
        Ok::<_, Error>(TaskEval {
            task_id: task.id,
            correct_count: outcomes.iter().filter(|&&b| b).count(),
            outcomes,
            total_output_len,
        })
    });
    let per_task: Vec<TaskEval> = per_task.into_iter().collect::<Result<_>>()?;
    let correct_total: usize = per_task.iter().map(|t| t.correct_count).sum();
    let len_total: usize = per_task.iter().map(|t| t.total_output_len).sum();
    let samples = tasks.len() * cfg.k;
    Ok(EvalReport {
        pass_at_1: correct_total as f64 / samples as f64,
        mean_output_len: len_total as f64 / samples as f64,
        n_tasks: tasks.len(),
        k: cfg.k,
        per_task,
    })
}

/// k samples per task from the policy at the configured temperature and
/// top_p, scored by the verifier.
pub fn pass_at_1(
    params: &PolicyParams,
    tasks: &[Task],
    cfg: &EvalConfig,
    mode: ExecMode,
) -> Result<EvalReport> {
    pass_at_1_with_sampler(tasks, cfg, mode, |task, rng| {
        let prompt = TokenSequence::prompt(task.prompt.clone());
        sample_sequence(params, &prompt, cfg.temperature, cfg.top_p, cfg.max_len, rng)
    })
}

/// One row per named suite plus the unweighted average.
#[derive(Debug, Clone)]
pub struct BenchmarkTable {
    pub rows: Vec<(String, EvalReport)>,
    pub average: f64,
}

pub fn benchmark_suite(
    params: &PolicyParams,
    suites: &[(String, Vec<Task>)],
    cfg: &EvalConfig,
    mode: ExecMode,
) -> Result<BenchmarkTable> {
    if suites.is_empty() {
        return Err(Error::Input("no suites given".into()));
    }
    for (i, (name, tasks)) in suites.iter().enumerate() {
        if tasks.is_empty() {
            return Err(Error::Input(format!("suite `{name}` is empty")));
        }
        if suites[..i].iter().any(|(other, _)| other == name) {
            return Err(Error::Input(format!("duplicate suite name `{name}`")));
        }
    }
    let mut rows = Vec::with_capacity(suites.len());
    for (name, tasks) in suites {
        rows.push((name.clone(), pass_at_1(params, tasks, cfg, mode)?));
    }
    let average = rows.iter().map(|(_, r)| r.pass_at_1).sum::<f64>() / rows.len() as f64;
    Ok(BenchmarkTable { rows, average })
}

/// Plain-text aligned table, one suite per row plus the `Avg.` row.
pub fn format_table(table: &BenchmarkTable) -> String {
    let name_width = table
        .rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once(4))
        .max()
        .unwrap();
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$}  {:>7}  {:>3}  {:>8}  {:>8}\n",
        "suite", "n_tasks", "k", "pass@1", "mean_len"
    ));
    for (name, report) in &table.rows {
        out.push_str(&format!(
            "{:<name_width$}  {:>7}  {:>3}  {:>8.4}  {:>8.2}\n",
            name, report.n_tasks, report.k, report.pass_at_1, report.mean_output_len
        ));
    }
    out.push_str(&format!(
        "{:<name_width$}  {:>7}  {:>3}  {:>8.4}  {:>8}\n",
        "Avg.", "-", "-", table.average, "-"
    ));
    out
}

/// Machine-readable record file:
/// `suite <TAB> n_tasks <TAB> k <TAB> pass_at_1 <TAB> mean_output_len`.
pub fn write_table_records<W: Write>(table: &BenchmarkTable, mut out: W) -> Result<()> {
    for (name, report) in &table.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            name, report.n_tasks, report.k, report.pass_at_1, report.mean_output_len
        )?;
    }
    Ok(())
}

/// Monte Carlo estimate of the expected discounted return: the combined
/// reward lands on the final token, so one episode contributes
/// `gamma^(len-1) * reward`. With gamma = 1 this is the mean combined reward.
pub fn estimate_return(
    params: &PolicyParams,
    env: &EnvDescriptor,
    tasks: &[Task],
    reward: &RewardConfig,
    cfg: &EvalConfig,
    mode: ExecMode,
) -> Result<f64> {
    cfg.validate()?;
    reward.validate()?;
    if tasks.is_empty() {
        return Err(Error::Input("task list is empty".into()));
    }
    let max_len = reward.len_max.min(env.horizon);
    let totals = map_indexed(mode, tasks.len(), |idx| {
        let task = &tasks[idx];
        let prompt = TokenSequence::prompt(task.prompt.clone());
        let mut acc = 0.0;
        for sample in 0..cfg.k {
            let mut rng = RngStream::derive(cfg.eval_seed, &[task.id, sample as u64]);
            let output = sample_sequence(
                params,
                &prompt,
                cfg.temperature,
                cfg.top_p,
                max_len,
                &mut rng,
            )?;
            let r = combined_reward(task, &output, reward)?;
            acc += env.gamma.powi(output.len() as i32 - 1) * r;
        }
        Ok::<_, Error>(acc)
    });
    let mut sum = 0.0;
    for t in totals {
        sum += t?;
    }
    Ok(sum / (tasks.len() * cfg.k) as f64)
}
