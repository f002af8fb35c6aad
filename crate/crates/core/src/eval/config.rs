//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys without a `task_` prefix
//! set [`ExperimentSpec`] fields; `task_*` keys set [`SyntheticTask`]
//! fields. Lists are comma separated and ranges are written `min,max`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::experiment::{ExperimentSpec, System};
use super::synthetic::SyntheticTask;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub spec: ExperimentSpec,
    pub task: SyntheticTask,
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        msg: format!("bad value {raw:?} for {key}"),
    })
}

fn list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(line, key, s))
        .collect()
}

fn range(line: usize, key: &str, raw: &str) -> Result<(usize, usize)> {
    match list::<usize>(line, key, raw)?.as_slice() {
        &[lo, hi] => Ok((lo, hi)),
        _ => Err(Error::Config {
            line,
            msg: format!("{key} expects min,max"),
        }),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let (spec, task) = (&mut config.spec, &mut config.task);
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected key = value, got {content:?}"),
            })?;
            let (key, raw) = (key.trim(), raw.trim());
            match key {
                "seed" => spec.seed = value(line, key, raw)?,
                "sizes" => spec.sizes = list(line, key, raw)?,
                "seeds" => spec.seeds = value(line, key, raw)?,
                "decode_repeats" => spec.decode_repeats = value(line, key, raw)?,
                "systems" => {
                    spec.systems = list::<String>(line, key, raw)?
                        .iter()
                        .map(|s| {
                            s.parse::<System>().map_err(|e| Error::Config {
                                line,
                                msg: e.to_string(),
                            })
                        })
                        .collect::<Result<_>>()?
                }
                "alpha" => spec.alpha = value(line, key, raw)?,
                "n" => spec.n = value(line, key, raw)?,
                "beam_width" => spec.beam_width = value(line, key, raw)?,
                "max_len" => spec.max_len = value(line, key, raw)?,
                "length_norm_power" => spec.length_norm_power = value(line, key, raw)?,
                "vocab_size" => spec.vocab_size = value(line, key, raw)?,
                "vocab_sizes" => spec.vocab_sizes = list(line, key, raw)?,
                "emb_dim" => spec.emb_dim = value(line, key, raw)?,
                "hidden_dim" => spec.hidden_dim = value(line, key, raw)?,
                "epochs" => spec.epochs = value(line, key, raw)?,
                "train_updates" => {
                    let u: usize = value(line, key, raw)?;
                    spec.train_updates = (u > 0).then_some(u);
                }
                "batch_size" => spec.batch_size = value(line, key, raw)?,
                "learning_rate" => spec.learning_rate = value(line, key, raw)?,
                "warmup_steps" => spec.warmup_steps = value(line, key, raw)?,
                "grad_clip_norm" => spec.grad_clip_norm = value(line, key, raw)?,
                "label_smoothing" => spec.label_smoothing = value(line, key, raw)?,
                "eval_size" => spec.eval_size = value(line, key, raw)?,
                "task_seed" => task.seed = value(line, key, raw)?,
                "task_consonants" => task.consonants = raw.chars().collect(),
                "task_vowels" => task.vowels = raw.chars().collect(),
                "task_num_stems" => task.num_stems = value(line, key, raw)?,
                "task_num_endings" => task.num_endings = value(line, key, raw)?,
                "task_stem_len" => task.stem_len = range(line, key, raw)?,
                "task_ending_len" => task.ending_len = range(line, key, raw)?,
                "task_words_per_sentence" => task.words_per_sentence = range(line, key, raw)?,
                "task_zipf_exponent" => task.zipf_exponent = value(line, key, raw)?,
                "task_noise_rate" => task.noise_rate = value(line, key, raw)?,
                other => {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        config.spec.validate().map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        config.task.validate().map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes every key; `parse` of the output gives back `self`.
    pub fn to_config_string(&self) -> String {
        let (s, t) = (&self.spec, &self.task);
        let join = |xs: Vec<String>| xs.join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", s.seed.to_string());
        kv("sizes", join(s.sizes.iter().map(usize::to_string).collect()));
        kv("seeds", s.seeds.to_string());
        kv("decode_repeats", s.decode_repeats.to_string());
        kv("systems", join(s.systems.iter().map(System::to_string).collect()));
        kv("alpha", s.alpha.to_string());
        kv("n", s.n.to_string());
        kv("beam_width", s.beam_width.to_string());
        kv("max_len", s.max_len.to_string());
        kv("length_norm_power", s.length_norm_power.to_string());
        kv("vocab_size", s.vocab_size.to_string());
        kv("vocab_sizes", join(s.vocab_sizes.iter().map(usize::to_string).collect()));
        kv("emb_dim", s.emb_dim.to_string());
        kv("hidden_dim", s.hidden_dim.to_string());
        kv("epochs", s.epochs.to_string());
        kv("train_updates", s.train_updates.unwrap_or(0).to_string());
        kv("batch_size", s.batch_size.to_string());
        kv("learning_rate", s.learning_rate.to_string());
        kv("warmup_steps", s.warmup_steps.to_string());
        kv("grad_clip_norm", s.grad_clip_norm.to_string());
        kv("label_smoothing", s.label_smoothing.to_string());
        kv("eval_size", s.eval_size.to_string());
        kv("task_seed", t.seed.to_string());
        kv("task_consonants", t.consonants.iter().collect());
        kv("task_vowels", t.vowels.iter().collect());
        kv("task_num_stems", t.num_stems.to_string());
        kv("task_num_endings", t.num_endings.to_string());
        kv("task_stem_len", format!("{},{}", t.stem_len.0, t.stem_len.1));
        kv("task_ending_len", format!("{},{}", t.ending_len.0, t.ending_len.1));
        kv(
            "task_words_per_sentence",
            format!("{},{}", t.words_per_sentence.0, t.words_per_sentence.1),
        );
        kv("task_zipf_exponent", t.zipf_exponent.to_string());
        kv("task_noise_rate", t.noise_rate.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::StrategyKind;
    use crate::train::TrainMode;

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.spec.sizes = vec![500, 16000];
        c.spec.train_updates = Some(5000);
        c.spec.vocab_sizes = vec![150, 400];
        c.spec.alpha = 0.5;
        c.task.noise_rate = 0.125;
        let text = c.to_config_string();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_config_string(), text);
    }

    #[test]
    fn comments_and_errors() {
        let c = ExperimentConfig::parse("# header\nseeds = 2 # two\n\nsystems = subreg/single, subreg/combined\n").unwrap();
        assert_eq!(c.spec.seeds, 2);
        assert_eq!(c.spec.systems[1], System::single(TrainMode::SubwordReg, StrategyKind::ProposedPlusEnsemble));
        assert!(matches!(ExperimentConfig::parse("seeds 2"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("\nbogus = 1"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(ExperimentConfig::parse("n = x"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("seeds = 0"), Err(Error::Config { line: 0, .. })));
    }
}
