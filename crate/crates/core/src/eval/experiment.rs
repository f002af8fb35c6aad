//! Experiment harness: trains vanilla and subword-regularized models over
//! several seeds, decodes a held-out set with each requested system and
//! aggregates corpus BLEU per cell.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;

use super::bleu::{corpus_bleu, BleuReport};
use super::synthetic::{generate_sweep_data, SyntheticTask};
use crate::decode::{batch_translate, DecodeStrategy, StrategyKind};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NeuralModel};
use crate::rng::derive_seed;
use crate::train::{train, ParallelCorpus, Split, TrainConfig, TrainMode};
use crate::unigram::{Estimator, Vocabulary, DEFAULT_ALPHA};

/// A row of the results table: which models are used and how they decode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct System {
    pub mode: TrainMode,
    pub kind: StrategyKind,
    /// Decode with every seed's model at once instead of each on its own.
    pub ensemble: bool,
}

impl System {
    pub fn single(mode: TrainMode, kind: StrategyKind) -> Self {
        System {
            mode,
            kind,
            ensemble: matches!(kind, StrategyKind::ModelEnsemble | StrategyKind::ProposedPlusEnsemble),
        }
    }

    pub fn ensemble(mode: TrainMode, kind: StrategyKind) -> Self {
        let kind = match kind {
            StrategyKind::SingleBest => StrategyKind::ModelEnsemble,
            StrategyKind::Proposed => StrategyKind::ProposedPlusEnsemble,
            k => k,
        };
        System { mode, kind, ensemble: true }
    }

    /// The rows of the standard comparison: vanilla, subword
    /// regularization, n-best and proposed decoding, each for single models
    /// and for model ensembles.
    pub fn defaults() -> Vec<System> {
        use StrategyKind::*;
        use TrainMode::*;
        vec![
            System::single(Vanilla, SingleBest),
            System::single(SubwordReg, SingleBest),
            System::single(SubwordReg, NBestDecoding),
            System::single(SubwordReg, Proposed),
            System::ensemble(Vanilla, ModelEnsemble),
            System::ensemble(SubwordReg, ModelEnsemble),
            System::ensemble(SubwordReg, NBestDecoding),
            System::ensemble(SubwordReg, ProposedPlusEnsemble),
        ]
    }

    fn strategy_name(&self) -> &'static str {
        match (self.kind, self.ensemble) {
            (StrategyKind::NBestDecoding, true) => "ensemble-nbest",
            (k, _) => k.name(),
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.mode, self.strategy_name())
    }
}

impl FromStr for System {
    type Err = Error;

    /// Parses `mode/strategy`, e.g. `subreg/proposed` or `vanilla/ensemble`.
    fn from_str(s: &str) -> Result<Self> {
        let (mode, strategy) = s
            .split_once('/')
            .ok_or_else(|| Error::InvalidArgument(format!("system {s:?} is not of the form mode/strategy")))?;
        let mode: TrainMode = mode.trim().parse()?;
        let strategy = strategy.trim();
        if strategy == "ensemble-nbest" {
            return Ok(System::ensemble(mode, StrategyKind::NBestDecoding));
        }
        Ok(System::single(mode, strategy.parse()?))
    }
}

/// Everything that defines an experiment apart from the synthetic task.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub seed: u64,
    /// Training-set sizes; each size trains on a prefix of one pool.
    pub sizes: Vec<usize>,
    /// Models trained per mode and size.
    pub seeds: usize,
    /// Decodes per model for strategies that sample segmentations.
    pub decode_repeats: usize,
    pub systems: Vec<System>,
    /// Sampling temperature for training and decoding.
    pub alpha: f64,
    /// Segmentations per source sentence at inference.
    pub n: usize,
    pub beam_width: usize,
    pub max_len: usize,
    pub length_norm_power: f64,
    /// Target size of both the source and the target vocabulary.
    pub vocab_size: usize,
    /// Per-size vocabulary sizes, parallel to `sizes`; empty means
    /// `vocab_size` everywhere.
    pub vocab_sizes: Vec<usize>,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    /// When set, overrides `epochs` so every size gets about this many
    /// updates.
    pub train_updates: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub grad_clip_norm: f64,
    pub label_smoothing: f64,
    /// Sentences in each of the dev and test sets.
    pub eval_size: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seed: 0,
            sizes: vec![2000],
            seeds: 3,
            decode_repeats: 3,
            systems: System::defaults(),
            alpha: DEFAULT_ALPHA,
            n: 5,
            beam_width: 4,
            max_len: 80,
            length_norm_power: 1.0,
            vocab_size: 400,
            vocab_sizes: Vec::new(),
            emb_dim: 32,
            hidden_dim: 64,
            epochs: 40,
            train_updates: None,
            batch_size: 8,
            learning_rate: 3e-3,
            warmup_steps: 100,
            grad_clip_norm: 1.0,
            label_smoothing: 0.0,
            eval_size: 250,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be a non-empty list of positive counts");
        }
        if self.seeds == 0 || self.decode_repeats == 0 || self.eval_size == 0 {
            return bad("seeds, decode repeats and eval size must be at least 1");
        }
        if self.systems.is_empty() {
            return bad("no systems to evaluate");
        }
        if !self.vocab_sizes.is_empty() && self.vocab_sizes.len() != self.sizes.len() {
            return bad("vocab sizes must be empty or list one entry per size");
        }
        if self.train_updates == Some(0) {
            return bad("train updates must be positive");
        }
        self.train_config(TrainMode::Vanilla, 1, 0).validate()?;
        self.decode_strategy(StrategyKind::SingleBest, 0).validate()?;
        ModelConfig::new(5, 5).with_dims(self.emb_dim, self.hidden_dim).validate()
    }

    fn vocab_size_for(&self, index: usize) -> usize {
        self.vocab_sizes.get(index).copied().unwrap_or(self.vocab_size)
    }

    fn epochs_for(&self, size: usize) -> usize {
        match self.train_updates {
            Some(updates) => updates.div_ceil(size.div_ceil(self.batch_size)).max(1),
            None => self.epochs,
        }
    }

    fn train_config(&self, mode: TrainMode, size: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            alpha: self.alpha,
            epochs: self.epochs_for(size),
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            grad_clip_norm: self.grad_clip_norm,
            label_smoothing: self.label_smoothing,
            seed,
            ..TrainConfig::default()
        }
    }

    fn decode_strategy(&self, kind: StrategyKind, seed: u64) -> DecodeStrategy {
        DecodeStrategy {
            kind,
            n: self.n,
            alpha: self.alpha,
            beam_width: self.beam_width,
            max_len: self.max_len,
            length_norm_power: self.length_norm_power,
            seed,
        }
    }
}

/// One decode of the test set.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub size: usize,
    /// Model seed index; `None` for ensemble systems, which use all seeds.
    pub seed: Option<usize>,
    pub system: System,
    pub repeat: usize,
    pub report: BleuReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub size: usize,
    pub system: System,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub runs: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const TSV_HEADER: &str = "size\tseed\tstrategy\tbleu\tp1\tp2\tp3\tp4\tbp\trepeat";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResults {
    /// Every run, ordered by size, then system order in the spec, then
    /// seed and repeat.
    pub records: Vec<RunRecord>,
}

impl ExperimentResults {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = Vec::new();
        for r in &self.records {
            if !sizes.contains(&r.size) {
                sizes.push(r.size);
            }
        }
        sizes
    }

    pub fn systems(&self) -> Vec<System> {
        let mut systems: Vec<System> = Vec::new();
        for r in &self.records {
            if !systems.contains(&r.system) {
                systems.push(r.system);
            }
        }
        systems
    }

    pub fn runs(&self, size: usize, system: System) -> impl Iterator<Item = &RunRecord> + '_ {
        self.records
            .iter()
            .filter(move |r| r.size == size && r.system == system)
    }

    pub fn cell(&self, size: usize, system: System) -> Option<CellSummary> {
        let scores: Vec<f64> = self.runs(size, system).map(|r| r.report.bleu).collect();
        if scores.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(&scores);
        Some(CellSummary {
            size,
            system,
            mean,
            std,
            runs: scores.len(),
        })
    }

    /// One summary per (size, system), in table order.
    pub fn summary(&self) -> Vec<CellSummary> {
        let systems = self.systems();
        self.sizes()
            .into_iter()
            .flat_map(|size| systems.iter().filter_map(move |&s| self.cell(size, s)))
            .collect()
    }

    /// Mean BLEU per model seed, averaged over decode repeats.
    pub fn seed_means(&self, size: usize, system: System) -> Vec<(usize, f64)> {
        let mut by_seed: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in self.runs(size, system) {
            if let Some(seed) = r.seed {
                by_seed.entry(seed).or_default().push(r.report.bleu);
            }
        }
        by_seed
            .into_iter()
            .map(|(seed, xs)| (seed, mean_std(&xs).0))
            .collect()
    }

    /// Mean BLEU of proposed decoding minus that of single-best decoding,
    /// both with subword-regularized single models.
    pub fn proposed_gap(&self, size: usize) -> Option<f64> {
        let proposed = self.cell(size, System::single(TrainMode::SubwordReg, StrategyKind::Proposed))?;
        let single = self.cell(size, System::single(TrainMode::SubwordReg, StrategyKind::SingleBest))?;
        Some(proposed.mean - single.mean)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{TSV_HEADER}")?;
        for r in &self.records {
            let seed = r.seed.map_or_else(|| "all".to_string(), |s| s.to_string());
            let p = &r.report.precisions;
            writeln!(
                w,
                "{}\t{}\t{}\t{:.4}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                r.size, seed, r.system, r.report.bleu, p[0], p[1], p[2], p[3], r.report.brevity_penalty, r.repeat
            )?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }

    /// Markdown table with single-model and ensemble sections and one
    /// column per training size; cells read `mean ± std`.
    pub fn summary_markdown(&self) -> String {
        let sizes = self.sizes();
        let systems = self.systems();
        let mut out = String::from("| system |");
        for s in &sizes {
            let _ = write!(out, " {s} pairs |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(sizes.len()));
        out.push('\n');
        for (title, ensemble) in [("Single model", false), ("Model ensemble", true)] {
            let rows: Vec<&System> = systems.iter().filter(|s| s.ensemble == ensemble).collect();
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(out, "| *{title}* |{}", " |".repeat(sizes.len()));
            for system in rows {
                let _ = write!(out, "| {system} |");
                for &size in &sizes {
                    match self.cell(size, *system) {
                        Some(c) => {
                            let _ = write!(out, " {:.2} ± {:.2} |", c.mean, c.std);
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Results of a size sweep plus the proposed-minus-single gap per size.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub results: ExperimentResults,
    pub gaps: Vec<(usize, Option<f64>)>,
}

impl SweepTable {
    pub fn summary_markdown(&self) -> String {
        let mut out = self.results.summary_markdown();
        out.push_str("| proposed − single (subreg) |");
        for (_, gap) in &self.gaps {
            match gap {
                Some(g) => {
                    let _ = write!(out, " {g:+.2} |");
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
        out
    }
}

struct Trained {
    mode: TrainMode,
    seed: usize,
    model: NeuralModel,
}

/// Runs the comparison for every size in `spec.sizes`.
pub fn run_strategy_comparison(spec: &ExperimentSpec, task: &SyntheticTask) -> Result<ExperimentResults> {
    run_experiment(spec, task, &|_| {})
}

/// Runs the comparison once per size in `sizes` (at least two) and reports
/// the gap between proposed and single-best decoding for each.
/// `spec.vocab_sizes`, when given, must be parallel to `sizes`.
pub fn run_datasize_sweep(spec: &ExperimentSpec, task: &SyntheticTask, sizes: &[usize]) -> Result<SweepTable> {
    run_datasize_sweep_with_progress(spec, task, sizes, &|_| {})
}

/// [`run_datasize_sweep`] reporting progress lines through `progress`.
pub fn run_datasize_sweep_with_progress(
    spec: &ExperimentSpec,
    task: &SyntheticTask,
    sizes: &[usize],
    progress: &(dyn Fn(&str) + Sync),
) -> Result<SweepTable> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument("a sweep needs at least two sizes".into()));
    }
    let spec = ExperimentSpec {
        sizes: sizes.to_vec(),
        ..spec.clone()
    };
    let results = run_experiment(&spec, task, progress)?;
    let gaps = sizes.iter().map(|&s| (s, results.proposed_gap(s))).collect();
    Ok(SweepTable { results, gaps })
}

/// [`run_strategy_comparison`] reporting progress lines through `progress`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    task: &SyntheticTask,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<ExperimentResults> {
    spec.validate()?;
    task.validate()?;
    let max_size = *spec.sizes.iter().max().expect("validated non-empty");
    let data = generate_sweep_data(task, max_size, spec.eval_size)?;
    let sources = data.test.sources();
    let references = data.test.targets();

    let mut records = Vec::new();
    for (index, &size) in spec.sizes.iter().enumerate() {
        let cell = |what: String| move |e: Error| Error::Cell {
            cell: format!("size={size} {what}"),
            source: Box::new(e),
        };
        let train_set = ParallelCorpus::new(data.train.pairs[..size].to_vec(), Split::Train)?;
        let estimator = Estimator::new(spec.vocab_size_for(index));
        let vocab_src = estimator.run(&train_set.sources()).map_err(cell("source vocabulary".into()))?.vocab;
        let vocab_tgt = estimator.run(&train_set.targets()).map_err(cell("target vocabulary".into()))?.vocab;

        let mut modes: Vec<TrainMode> = Vec::new();
        for s in &spec.systems {
            if !modes.contains(&s.mode) {
                modes.push(s.mode);
            }
        }
        let jobs: Vec<(TrainMode, usize)> = modes
            .iter()
            .flat_map(|&m| (0..spec.seeds).map(move |s| (m, s)))
            .collect();
        let trained = jobs
            .par_iter()
            .map(|&(mode, seed)| {
                let init = derive_seed(spec.seed, &[0, size as u64, seed as u64]);
                let config = ModelConfig::new(vocab_src.len(), vocab_tgt.len()).with_dims(spec.emb_dim, spec.hidden_dim);
                let model = NeuralModel::new(config, init)?;
                let train_config = spec.train_config(mode, size, derive_seed(spec.seed, &[1, size as u64, seed as u64]));
                let outcome = train(model, &train_set, Some(&data.dev), &vocab_src, &vocab_tgt, &train_config)
                    .map_err(cell(format!("train {mode} seed={seed}")))?;
                let dev = outcome.history[outcome.best_epoch].dev_loss.unwrap_or(f64::NAN);
                progress(&format!(
                    "size {size}: trained {mode} seed {seed}, best epoch {} of {}, dev loss {dev:.4}",
                    outcome.best_epoch + 1,
                    train_config.epochs
                ));
                Ok(Trained {
                    mode,
                    seed,
                    model: outcome.model,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut decodes: Vec<(System, Option<usize>, usize)> = Vec::new();
        for &system in &spec.systems {
            let repeats = if system.kind.is_sampled() { spec.decode_repeats } else { 1 };
            let seeds: Vec<Option<usize>> = if system.ensemble {
                vec![None]
            } else {
                (0..spec.seeds).map(Some).collect()
            };
            for seed in seeds {
                for repeat in 0..repeats {
                    decodes.push((system, seed, repeat));
                }
            }
        }
        let runs = decodes
            .par_iter()
            .map(|&(system, seed, repeat)| {
                let models: Vec<&NeuralModel> = trained
                    .iter()
                    .filter(|t| t.mode == system.mode && seed.is_none_or(|s| s == t.seed))
                    .map(|t| &t.model)
                    .collect();
                let decode_seed = derive_seed(
                    spec.seed,
                    &[2, size as u64, seed.map_or(u64::MAX, |s| s as u64), repeat as u64],
                );
                let strategy = spec.decode_strategy(system.kind, decode_seed);
                let label = format!("{system} seed={} repeat={repeat}", seed.map_or("all".into(), |s| s.to_string()));
                let report = decode_and_score(&models, &sources, &references, &vocab_src, &vocab_tgt, &strategy)
                    .map_err(cell(label.clone()))?;
                progress(&format!("size {size}: {label} BLEU {:.2}", report.bleu));
                Ok(RunRecord {
                    size,
                    seed,
                    system,
                    repeat,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(runs);
    }
    Ok(ExperimentResults { records })
}

fn decode_and_score(
    models: &[&NeuralModel],
    sources: &[&str],
    references: &[&str],
    vocab_src: &Vocabulary,
    vocab_tgt: &Vocabulary,
    strategy: &DecodeStrategy,
) -> Result<BleuReport> {
    let outputs = batch_translate(sources, models, vocab_src, vocab_tgt, strategy)?;
    let hyps: Vec<&str> = outputs.iter().map(|r| r.output.as_str()).collect();
    corpus_bleu(&hyps, references)
}
