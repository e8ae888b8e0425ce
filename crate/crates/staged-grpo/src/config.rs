//! Run configuration: flat `[section]` + `key = value` text, resolved against
//! a schema of defaults, with per-key provenance tracking.
//!
//! Every key's origin is recorded: `paper` for values lifted from the source
//! protocol (sampling temperature, k, top_p, no discounting),
//! `invented-default` for desk-scale substitutes, `config-file` and `cli` for
//! operator overrides. The resolved echo prints one `key = value # source=..`
//! line per key and is itself a valid config file. Unknown keys are rejected
//! with their line number rather than silently ignored.

use std::collections::BTreeMap;
use std::path::Path;

use crate::curriculum::{StageConfig, TrainRun, WarmupConfig};
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::exec::ExecMode;
use crate::grpo::ClipConfig;
use crate::optim::OptimizerConfig;
use crate::policy::PolicyDims;
use crate::rewards::RewardConfig;
use crate::toy_env::{DifficultyLevel, EnvDescriptor, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Paper,
    InventedDefault,
    ConfigFile,
    Cli,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Paper => "paper",
            Provenance::InventedDefault => "invented-default",
            Provenance::ConfigFile => "config-file",
            Provenance::Cli => "cli",
        }
    }
}

struct SchemaEntry {
    section: &'static str,
    key: &'static str,
    default: &'static str,
    paper: bool,
}

macro_rules! schema {
    ($($section:literal . $key:literal = $default:literal $(, $paper:ident)? ;)*) => {
        &[$(SchemaEntry {
            section: $section,
            key: $key,
            default: $default,
            paper: schema!(@paper $($paper)?),
        }),*]
    };
    (@paper paper) => { true };
    (@paper) => { false };
}

/// Full key set. `paper`-tagged defaults mirror the reference protocol:
/// rollout/eval temperature 0.6, top_p 1.0, k = 16 samples per prompt, and an
/// undiscounted objective. Everything else is a desk-scale invention and must
/// stay visible as such in the echo.
const SCHEMA: &[SchemaEntry] = schema![
    "env" . "gamma" = "1.0", paper;
    "env" . "horizon" = "32";
    "policy" . "embed_dim" = "16";
    "policy" . "context_window" = "16";
    "policy" . "hidden_dim" = "64";
    "policy" . "init_scale" = "0.05";
    "optimizer" . "learning_rate" = "0.003";
    "optimizer" . "beta1" = "0.9";
    "optimizer" . "beta2" = "0.999";
    "optimizer" . "eps" = "1e-8";
    "optimizer" . "weight_decay" = "0.0";
    "optimizer" . "reset_moments_on_transition" = "false";
    "train" . "master_seed" = "42";
    "train" . "mode" = "sequential";
    "train" . "warmup" = "off";
    "train" . "warmup_steps" = "150";
    "train" . "warmup_batch" = "256";
    "train" . "warmup_dataset_seed" = "5005";
    "train" . "warmup_dataset_size" = "256";
    "train" . "kl_coefficient" = "0.0";
    "train" . "variance_guard" = "0.0";
    "train" . "checkpoint_every" = "50";
    "stage1" . "level" = "1";
    "stage1" . "dataset_seed" = "1001";
    "stage1" . "dataset_size" = "512";
    "stage1" . "batch_questions" = "8";
    "stage1" . "group_size" = "8";
    "stage1" . "eps_low" = "0.2";
    "stage1" . "eps_high" = "0.28";
    "stage1" . "len_max" = "8";
    "stage1" . "len_cache_fraction" = "0.8";
    "stage1" . "buffer_threshold" = "4";
    "stage1" . "inner_iterations" = "1";
    "stage1" . "steps" = "200";
    "stage1" . "max_updates" = "0";
    "stage1" . "temperature" = "0.6", paper;
    "stage1" . "top_p" = "1.0", paper;
    "stage2" . "level" = "2";
    "stage2" . "dataset_seed" = "2002";
    "stage2" . "dataset_size" = "512";
    "stage2" . "batch_questions" = "8";
    "stage2" . "group_size" = "8";
    "stage2" . "eps_low" = "0.2";
    "stage2" . "eps_high" = "0.28";
    "stage2" . "len_max" = "8";
    "stage2" . "len_cache_fraction" = "0.8";
    "stage2" . "buffer_threshold" = "4";
    "stage2" . "inner_iterations" = "1";
    "stage2" . "steps" = "200";
    "stage2" . "max_updates" = "0";
    "stage2" . "temperature" = "0.6", paper;
    "stage2" . "top_p" = "1.0", paper;
    "eval" . "k" = "16", paper;
    "eval" . "temperature" = "0.6", paper;
    "eval" . "top_p" = "1.0", paper;
    "eval" . "max_len" = "32";
    "eval" . "seed" = "7777";
    "eval" . "level1_n" = "200";
    "eval" . "level2_n" = "200";
    "eval" . "dataset_seed" = "9009";
];

fn schema_lookup(section: &str, key: &str) -> Option<&'static SchemaEntry> {
    SCHEMA
        .iter()
        .find(|e| e.section == section && e.key == key)
}

fn known_section(section: &str) -> bool {
    SCHEMA.iter().any(|e| e.section == section)
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    provenance: Provenance,
    line: Option<usize>,
}

/// Resolved configuration: every schema key bound to a value string plus its
/// provenance.
#[derive(Debug, Clone)]
pub struct RunConfig {
    entries: BTreeMap<String, Entry>,
}

impl PartialEq for RunConfig {
    /// Two resolved configs are equal when every key holds the same value;
    /// provenance is excluded (re-parsing an echo retags keys as
    /// config-file).
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .all(|(k, e)| other.entries.get(k).map(|o| o.value == e.value) == Some(true))
    }
}

impl RunConfig {
    fn defaults() -> Self {
        let entries = SCHEMA
            .iter()
            .map(|e| {
                (
                    format!("{}.{}", e.section, e.key),
                    Entry {
                        value: e.default.to_string(),
                        provenance: if e.paper {
                            Provenance::Paper
                        } else {
                            Provenance::InventedDefault
                        },
                        line: None,
                    },
                )
            })
            .collect();
        Self { entries }
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.entries.get(key).map(|e| e.provenance)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn entry(&self, key: &str) -> Result<&Entry> {
        self.entries
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))
    }

    fn bad_value(&self, key: &str, detail: &str) -> Error {
        let msg = format!("bad value for `{key}`: {detail}");
        match self.entries.get(key).and_then(|e| e.line) {
            Some(line) => Error::ConfigLine { line, msg },
            None => Error::Config(msg),
        }
    }

    /// Re-home a validation error onto the first of `keys` that was set in
    /// the file, so operators see the offending line.
    fn attach_line(&self, keys: &[&str], err: Error) -> Error {
        if let Error::Config(msg) = &err {
            for key in keys {
                if let Some(line) = self.entries.get(*key).and_then(|e| e.line) {
                    return Error::ConfigLine {
                        line,
                        msg: format!("{msg} (see `{key}`)"),
                    };
                }
            }
        }
        err
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        let e = self.entry(key)?;
        e.value
            .parse()
            .map_err(|_| self.bad_value(key, "expected a number"))
    }

    fn get_u64(&self, key: &str) -> Result<u64> {
        let e = self.entry(key)?;
        e.value
            .parse()
            .map_err(|_| self.bad_value(key, "expected an unsigned integer"))
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        Ok(self.get_u64(key)? as usize)
    }

    fn get_u8(&self, key: &str) -> Result<u8> {
        let e = self.entry(key)?;
        e.value
            .parse()
            .map_err(|_| self.bad_value(key, "expected a small unsigned integer"))
    }

    fn get_bool(&self, key: &str) -> Result<bool> {
        let e = self.entry(key)?;
        match e.value.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.bad_value(key, "expected true or false")),
        }
    }

    pub fn policy_dims(&self) -> Result<PolicyDims> {
        Ok(PolicyDims {
            vocab: Vocabulary::SIZE,
            embed: self.get_usize("policy.embed_dim")?,
            window: self.get_usize("policy.context_window")?,
            hidden: self.get_usize("policy.hidden_dim")?,
        })
    }

    pub fn env(&self) -> Result<EnvDescriptor> {
        EnvDescriptor::new(self.get_f64("env.gamma")?, self.get_usize("env.horizon")?)
            .map_err(|e| self.attach_line(&["env.gamma", "env.horizon"], e))
    }

    fn stage(&self, section: &str) -> Result<StageConfig> {
        let key = |k: &str| format!("{section}.{k}");
        let level = DifficultyLevel::new(self.get_u8(&key("level"))?)
            .map_err(|e| self.attach_line(&[&key("level")], e))?;
        let clip = ClipConfig::new(
            self.get_f64(&key("eps_low"))?,
            self.get_f64(&key("eps_high"))?,
        )
        .map_err(|e| self.attach_line(&[&key("eps_low"), &key("eps_high")], e))?;
        let reward = RewardConfig::new(
            self.get_usize(&key("len_max"))?,
            self.get_f64(&key("len_cache_fraction"))?,
        )
        .map_err(|e| self.attach_line(&[&key("len_max"), &key("len_cache_fraction")], e))?;
        let max_updates = match self.get_u64(&key("max_updates"))? {
            0 => None,
            n => Some(n),
        };
        Ok(StageConfig {
            level,
            dataset_seed: self.get_u64(&key("dataset_seed"))?,
            dataset_size: self.get_usize(&key("dataset_size"))?,
            batch_questions: self.get_usize(&key("batch_questions"))?,
            group_size: self.get_usize(&key("group_size"))?,
            clip,
            reward,
            buffer_threshold: self.get_usize(&key("buffer_threshold"))?,
            inner_iterations: self.get_usize(&key("inner_iterations"))?,
            steps: self.get_usize(&key("steps"))?,
            max_updates,
            temperature: self.get_f64(&key("temperature"))?,
            top_p: self.get_f64(&key("top_p"))?,
        })
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig> {
        let cfg = OptimizerConfig {
            learning_rate: self.get_f64("optimizer.learning_rate")?,
            beta1: self.get_f64("optimizer.beta1")?,
            beta2: self.get_f64("optimizer.beta2")?,
            eps: self.get_f64("optimizer.eps")?,
            weight_decay: self.get_f64("optimizer.weight_decay")?,
        };
        cfg.validate().map_err(|e| {
            self.attach_line(
                &[
                    "optimizer.learning_rate",
                    "optimizer.beta1",
                    "optimizer.beta2",
                    "optimizer.eps",
                    "optimizer.weight_decay",
                ],
                e,
            )
        })?;
        Ok(cfg)
    }

    pub fn mode(&self) -> Result<ExecMode> {
        let e = self.entry("train.mode")?;
        e.value
            .parse()
            .map_err(|msg: String| self.bad_value("train.mode", &msg))
    }

    pub fn warmup(&self) -> Result<WarmupConfig> {
        let e = self.entry("train.warmup")?;
        match e.value.as_str() {
            "off" => Ok(WarmupConfig::Off),
            "supervised" => Ok(WarmupConfig::Supervised {
                steps: self.get_usize("train.warmup_steps")?,
                batch: self.get_usize("train.warmup_batch")?,
                dataset_seed: self.get_u64("train.warmup_dataset_seed")?,
                dataset_size: self.get_usize("train.warmup_dataset_size")?,
            }),
            _ => Err(self.bad_value("train.warmup", "expected off or supervised")),
        }
    }

    pub fn to_train_run(&self) -> Result<TrainRun> {
        let run = TrainRun {
            env: self.env()?,
            stages: vec![self.stage("stage1")?, self.stage("stage2")?],
            optimizer: self.optimizer()?,
            reset_moments_on_transition: self.get_bool("optimizer.reset_moments_on_transition")?,
            master_seed: self.get_u64("train.master_seed")?,
            warmup: self.warmup()?,
            kl_coefficient: self.get_f64("train.kl_coefficient")?,
            variance_guard: self.get_f64("train.variance_guard")?,
            mode: self.mode()?,
            policy_dims: self.policy_dims()?,
            init_scale: self.get_f64("policy.init_scale")?,
            checkpoint_every: self.get_u64("train.checkpoint_every")?,
            initial_params: None,
        };
        run.validate().map_err(|e| {
            self.attach_line(
                &["stage1.level", "stage2.level", "stage1.steps", "stage2.steps"],
                e,
            )
        })?;
        Ok(run)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            k: self.get_usize("eval.k")?,
            temperature: self.get_f64("eval.temperature")?,
            top_p: self.get_f64("eval.top_p")?,
            max_len: self.get_usize("eval.max_len")?,
            eval_seed: self.get_u64("eval.seed")?,
        };
        cfg.validate().map_err(|e| {
            self.attach_line(
                &["eval.k", "eval.temperature", "eval.top_p", "eval.max_len"],
                e,
            )
        })?;
        Ok(cfg)
    }

    /// (level, n_tasks, dataset_seed) for each held-out eval suite.
    pub fn eval_suites(&self) -> Result<Vec<(u8, usize, u64)>> {
        let seed = self.get_u64("eval.dataset_seed")?;
        Ok(vec![
            (1, self.get_usize("eval.level1_n")?, seed),
            (2, self.get_usize("eval.level2_n")?, seed),
        ])
    }

    /// Run every cross-key validation; called at the end of parsing so a bad
    /// config never escapes `parse_config`.
    fn validate(&self) -> Result<()> {
        self.to_train_run()?;
        self.eval_config()?;
        self.eval_suites()?;
        Ok(())
    }

    /// Resolved echo: every key with its value and provenance tag, grouped in
    /// schema order. Itself parseable as a config file.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut current_section = "";
        for entry in SCHEMA {
            if entry.section != current_section {
                if !current_section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{}]\n", entry.section));
                current_section = entry.section;
            }
            let key = format!("{}.{}", entry.section, entry.key);
            let e = &self.entries[&key];
            out.push_str(&format!(
                "{} = {} # source={}\n",
                entry.key,
                e.value,
                e.provenance.label()
            ));
        }
        out
    }
}

fn set_key(
    config: &mut RunConfig,
    section: &str,
    key: &str,
    value: &str,
    provenance: Provenance,
    line: Option<usize>,
) -> Result<()> {
    if schema_lookup(section, key).is_none() {
        let msg = format!("unknown key `{section}.{key}`");
        return Err(match line {
            Some(line) => Error::ConfigLine { line, msg },
            None => Error::Config(msg),
        });
    }
    config.entries.insert(
        format!("{section}.{key}"),
        Entry {
            value: value.to_string(),
            provenance,
            line,
        },
    );
    Ok(())
}

/// Parse config text plus `section.key=value` overrides into a fully
/// resolved, validated configuration.
pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut config = RunConfig::defaults();
    let mut section: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| Error::ConfigLine {
                line: line_no,
                msg: "unterminated section header".into(),
            })?;
            if !known_section(name) {
                return Err(Error::ConfigLine {
                    line: line_no,
                    msg: format!("unknown section `[{name}]`"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigLine {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let section = section.as_deref().ok_or_else(|| Error::ConfigLine {
            line: line_no,
            msg: "key outside any [section]".into(),
        })?;
        set_key(
            &mut config,
            section,
            key.trim(),
            value.trim(),
            Provenance::ConfigFile,
            Some(line_no),
        )?;
    }
    for (key, value) in overrides {
        let (section, key) = key.split_once('.').ok_or_else(|| {
            Error::Config(format!("override key `{key}` must be section.key"))
        })?;
        set_key(&mut config, section, key, value, Provenance::Cli, None)?;
    }
    config.validate()?;
    Ok(config)
}

/// Parse a config file from disk; an empty or missing-keys file resolves to
/// the documented defaults.
pub fn parse_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config `{}`: {e}", path.display()))
    })?;
    parse_config_str(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_resolves_all_defaults() {
        let config = parse_config_str("", &[]).unwrap();
        assert_eq!(config.raw("eval.k"), Some("16"));
        assert_eq!(config.provenance("eval.k"), Some(Provenance::Paper));
        assert_eq!(
            config.provenance("optimizer.learning_rate"),
            Some(Provenance::InventedDefault)
        );
        let echo = config.echo();
        for entry in SCHEMA {
            assert!(
                echo.contains(&format!("{} = ", entry.key)),
                "echo missing {}",
                entry.key
            );
        }
        assert!(echo.contains("k = 16 # source=paper"));
        assert!(echo.contains("learning_rate = 0.003 # source=invented-default"));
    }

    #[test]
    fn file_and_cli_provenance() {
        let text = "[stage1]\ngroup_size = 12\n";
        let overrides = vec![("stage2.group_size".to_string(), "16".to_string())];
        let config = parse_config_str(text, &overrides).unwrap();
        assert_eq!(config.raw("stage1.group_size"), Some("12"));
        assert_eq!(
            config.provenance("stage1.group_size"),
            Some(Provenance::ConfigFile)
        );
        assert_eq!(config.raw("stage2.group_size"), Some("16"));
        assert_eq!(config.provenance("stage2.group_size"), Some(Provenance::Cli));
        assert!(config.echo().contains("group_size = 16 # source=cli"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let err = parse_config_str("[stage1]\ngruop_size = 8\n", &[]).unwrap_err();
        match err {
            Error::ConfigLine { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("gruop_size"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_config_str("[nope]\n", &[]).is_err());
        assert!(parse_config_str("orphan = 1\n", &[]).is_err());
        let err = parse_config_str("", &[("stage1.zzz".into(), "1".into())]).unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn invariant_violation_names_clip_bounds() {
        let text = "[stage1]\neps_low = 0.3\neps_high = 0.2\n";
        let err = parse_config_str(text, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("eps_low"), "got: {msg}");
        assert!(msg.contains("line 2"), "got: {msg}");
    }

    #[test]
    fn echo_round_trips() {
        let text = "[stage2]\ngroup_size = 16\nsteps = 7\n[eval]\nk = 8\n";
        let config = parse_config_str(text, &[("train.master_seed".into(), "99".into())]).unwrap();
        let echo = config.echo();
        let reparsed = parse_config_str(&echo, &[]).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# header comment\n\n[stage1]\nsteps = 5 # trailing\n";
        let config = parse_config_str(text, &[]).unwrap();
        assert_eq!(config.raw("stage1.steps"), Some("5"));
    }

    #[test]
    fn builds_domain_objects() {
        let config = parse_config_str("", &[]).unwrap();
        let run = config.to_train_run().unwrap();
        assert_eq!(run.stages.len(), 2);
        assert_eq!(run.stages[0].level.level, 1);
        assert_eq!(run.stages[1].level.level, 2);
        assert_eq!(run.stages[0].temperature, 0.6);
        let eval = config.eval_config().unwrap();
        assert_eq!(eval.k, 16);
        assert_eq!(eval.top_p, 1.0);
        let env = config.env().unwrap();
        assert_eq!(env.gamma, 1.0);
    }

    #[test]
    fn bad_level_ordering_rejected() {
        let err = parse_config_str("[stage2]\nlevel = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("level"));
    }

    #[test]
    fn malformed_lines_carry_numbers() {
        let err = parse_config_str("[stage1]\nsteps 5\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let err = parse_config_str("[stage1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
