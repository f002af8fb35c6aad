//! A synthetic translation task with a known reference transduction.
//!
//! Every word is a consonant run (the stem) followed by a vowel run (the
//! ending), so a source string parses into words uniquely even after the
//! spaces between words are dropped. Translation maps each stem and ending
//! to a fixed target counterpart, then swaps any word of the "swapping"
//! stem class with a following word of the other class.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derived_rng, ChaCha8Rng};
use crate::train::{ParallelCorpus, Split};

pub const CONSONANTS: &str = "bcdfghjklmnpqrstvwxz";
pub const VOWELS: &str = "aeiouy";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    /// Characters stems are built from.
    pub consonants: Vec<char>,
    /// Characters endings are built from.
    pub vowels: Vec<char>,
    pub num_stems: usize,
    pub num_endings: usize,
    pub stem_len: (usize, usize),
    pub ending_len: (usize, usize),
    pub words_per_sentence: (usize, usize),
    /// Exponent of the Zipfian stem and ending frequencies.
    pub zipf_exponent: f64,
    /// Probability that the space between two source words is dropped.
    pub noise_rate: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            seed: 1,
            consonants: CONSONANTS.chars().collect(),
            vowels: VOWELS.chars().collect(),
            num_stems: 60,
            num_endings: 8,
            stem_len: (2, 4),
            ending_len: (1, 2),
            words_per_sentence: (3, 6),
            zipf_exponent: 1.0,
            noise_rate: 0.3,
        }
    }
}

/// The generated lexicon and transduction tables of a task.
#[derive(Clone, Debug)]
pub struct Grammar {
    stems: Vec<String>,
    endings: Vec<String>,
    target_stems: Vec<String>,
    target_endings: Vec<String>,
    stem_class: Vec<bool>,
    vowels: HashSet<char>,
    stem_index: HashMap<String, usize>,
    ending_index: HashMap<String, usize>,
    stem_weights: Vec<f64>,
    ending_weights: Vec<f64>,
}

/// Train / dev / test splits of a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

fn distinct_strings(rng: &mut ChaCha8Rng, alphabet: &[char], len: (usize, usize), count: usize) -> Result<Vec<String>> {
    let capacity: f64 = (len.0..=len.1).map(|l| (alphabet.len() as f64).powi(l as i32)).sum();
    if (count as f64) > capacity / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {count} distinct strings of length {}..={} from {} characters",
            len.0,
            len.1,
            alphabet.len()
        )));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let l = rng.gen_range(len.0..=len.1);
        let s: String = (0..l).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

fn pick(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().expect("non-empty weights");
    let u = rng.gen::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let cs: HashSet<char> = self.consonants.iter().copied().collect();
        if self.consonants.is_empty() || self.vowels.is_empty() || self.vowels.iter().any(|v| cs.contains(v)) {
            return bad("stem and ending alphabets must be non-empty and disjoint");
        }
        if self.consonants.iter().chain(&self.vowels).any(|c| c.is_whitespace()) {
            return bad("alphabets must not contain whitespace");
        }
        let ranges = [self.stem_len, self.ending_len, self.words_per_sentence];
        if ranges.iter().any(|&(lo, hi)| lo == 0 || lo > hi) {
            return bad("length ranges must satisfy 1 <= min <= max");
        }
        if self.num_stems < 2 || self.num_endings == 0 {
            return bad("need at least two stems and one ending");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || !(self.zipf_exponent >= 0.0) {
            return bad("noise rate must be in [0, 1] and the Zipf exponent >= 0");
        }
        Ok(())
    }

    /// Builds the lexicon and translation tables.
    pub fn grammar(&self) -> Result<Grammar> {
        self.validate()?;
        let mut rng = derived_rng(self.seed, &[0]);
        let stems = distinct_strings(&mut rng, &self.consonants, self.stem_len, self.num_stems)?;
        let endings = distinct_strings(&mut rng, &self.vowels, self.ending_len, self.num_endings)?;
        let mut target_stems = distinct_strings(&mut rng, &self.consonants, self.stem_len, self.num_stems)?;
        let mut target_endings = distinct_strings(&mut rng, &self.vowels, self.ending_len, self.num_endings)?;
        target_stems.shuffle(&mut rng);
        target_endings.shuffle(&mut rng);
        let stem_class = (0..self.num_stems).map(|_| rng.gen_bool(0.5)).collect();
        let cumulative = |w: Vec<f64>| {
            w.iter()
                .scan(0.0, |acc, x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect()
        };
        Ok(Grammar {
            stem_index: stems.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect(),
            ending_index: endings.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect(),
            stem_weights: cumulative(zipf_weights(self.num_stems, self.zipf_exponent)),
            ending_weights: cumulative(zipf_weights(self.num_endings, self.zipf_exponent)),
            stems,
            endings,
            target_stems,
            target_endings,
            stem_class,
            vowels: self.vowels.iter().copied().collect(),
        })
    }
}

impl Grammar {
    /// Splits a source string (spaces optional) into (stem, ending) indices.
    pub fn parse(&self, raw: &str) -> Result<Vec<(usize, usize)>> {
        let bad = || Error::InvalidArgument(format!("not a sentence of this task: {raw:?}"));
        let chars: Vec<char> = raw.chars().filter(|c| !c.is_whitespace()).collect();
        let mut words = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let start = i;
            while i < chars.len() && !self.is_vowel(chars[i]) {
                i += 1;
            }
            let stem: String = chars[start..i].iter().collect();
            let mid = i;
            while i < chars.len() && self.is_vowel(chars[i]) {
                i += 1;
            }
            let ending: String = chars[mid..i].iter().collect();
            let s = *self.stem_index.get(&stem).ok_or_else(bad)?;
            let e = *self.ending_index.get(&ending).ok_or_else(bad)?;
            words.push((s, e));
        }
        Ok(words)
    }

    fn is_vowel(&self, c: char) -> bool {
        self.vowels.contains(&c)
    }

    /// The reference translation of a source sentence.
    pub fn transduce(&self, raw: &str) -> Result<String> {
        Ok(self.translate_words(&self.parse(raw)?))
    }

    fn translate_words(&self, words: &[(usize, usize)]) -> String {
        let mut order: Vec<usize> = (0..words.len()).collect();
        let mut i = 0;
        while i + 1 < order.len() {
            if self.stem_class[words[order[i]].0] && !self.stem_class[words[order[i + 1]].0] {
                order.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        order
            .iter()
            .map(|&k| {
                let (s, e) = words[k];
                format!("{}{}", self.target_stems[s], self.target_endings[e])
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn source_text(&self, words: &[(usize, usize)], rng: &mut ChaCha8Rng, noise_rate: f64) -> String {
        let mut out = String::new();
        for (k, &(s, e)) in words.iter().enumerate() {
            if k > 0 && !rng.gen_bool(noise_rate) {
                out.push(' ');
            }
            out.push_str(&self.stems[s]);
            out.push_str(&self.endings[e]);
        }
        out
    }

    pub fn num_stems(&self) -> usize {
        self.stems.len()
    }
}

/// Draws `n_pairs` sentence pairs and splits them 80/10/10 into train, dev
/// and test.
pub fn generate_task(task: &SyntheticTask, n_pairs: usize) -> Result<TaskData> {
    if n_pairs < 30 {
        return Err(Error::InvalidArgument(format!("need at least 30 pairs, got {n_pairs}")));
    }
    let grammar = task.grammar()?;
    let mut rng = derived_rng(task.seed, &[1]);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = rng.gen_range(task.words_per_sentence.0..=task.words_per_sentence.1);
        let words: Vec<(usize, usize)> = (0..len)
            .map(|_| (pick(&mut rng, &grammar.stem_weights), pick(&mut rng, &grammar.ending_weights)))
            .collect();
        let src = grammar.source_text(&words, &mut rng, task.noise_rate);
        pairs.push((src, grammar.translate_words(&words)));
    }
    let n_dev = n_pairs / 10;
    let n_test = n_pairs / 10;
    let n_train = n_pairs - n_dev - n_test;
    let test = pairs.split_off(n_train + n_dev);
    let dev = pairs.split_off(n_train);
    Ok(TaskData {
        train: ParallelCorpus::new(pairs, Split::Train)?,
        dev: ParallelCorpus::new(dev, Split::Dev)?,
        test: ParallelCorpus::new(test, Split::Test)?,
    })
}

/// Generates data for a size sweep: dev and test are drawn once and the
/// training pool holds `max_train` pairs, so each size trains on a prefix.
pub fn generate_sweep_data(task: &SyntheticTask, max_train: usize, eval_size: usize) -> Result<TaskData> {
    let total = max_train + 2 * eval_size;
    let data = generate_task(task, total.max(30))?;
    let mut pairs = data.train.pairs;
    pairs.extend(data.dev.pairs);
    pairs.extend(data.test.pairs);
    let test = pairs.split_off(max_train + eval_size);
    let dev = pairs.split_off(max_train);
    Ok(TaskData {
        train: ParallelCorpus::new(pairs, Split::Train)?,
        dev: ParallelCorpus::new(dev, Split::Dev)?,
        test: ParallelCorpus::new(test, Split::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_parse_without_spaces() {
        let task = SyntheticTask::default();
        let g = task.grammar().unwrap();
        let data = generate_task(&task, 100).unwrap();
        for (src, tgt) in &data.train.pairs {
            assert_eq!(&g.transduce(src).unwrap(), tgt);
            assert_eq!(&g.transduce(&src.replace(' ', "")).unwrap(), tgt);
        }
        assert!(g.transduce("zzzzzzzzzzzza").is_err());
    }

    #[test]
    fn swaps_class_one_before_class_zero() {
        let g = SyntheticTask::default().grammar().unwrap();
        let one = g.stem_class.iter().position(|&c| c).unwrap();
        let zero = g.stem_class.iter().position(|&c| !c).unwrap();
        let out = g.translate_words(&[(one, 0), (zero, 1), (zero, 0)]);
        let expect = format!(
            "{}{} {}{} {}{}",
            g.target_stems[zero], g.target_endings[1], g.target_stems[one], g.target_endings[0],
            g.target_stems[zero], g.target_endings[0]
        );
        assert_eq!(out, expect);
    }

    #[test]
    fn splits_are_80_10_10() {
        let d = generate_task(&SyntheticTask::default(), 100).unwrap();
        assert_eq!((d.train.len(), d.dev.len(), d.test.len()), (80, 10, 10));
        assert!(generate_task(&SyntheticTask::default(), 29).is_err());
    }
}
