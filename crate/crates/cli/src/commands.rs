use std::fs::File;
use std::io::{self, BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use subreg::decode::{batch_translate_from, DecodeStrategy, StrategyKind};
use subreg::eval::{corpus_bleu, run_datasize_sweep_with_progress, run_experiment, ExperimentConfig};
use subreg::model::{load_checkpoint, LookupModel, ModelConfig, NeuralModel, Seq2SeqScorer, LOOKUP_MAGIC};
use subreg::rng::derived_rng;
use subreg::train::{train_with_progress, ParallelCorpus, Split, TrainConfig, TrainMode};
use subreg::unigram::{Estimator, Lattice, Vocabulary};
use subreg::{Error, Result};

use crate::{BleuArgs, ExperimentArgs, Globals, SegmentArgs, SegmentMode, TrainArgs, TranslateArgs, VocabArgs};

/// Lines decoded per parallel batch when streaming standard input.
const TRANSLATE_CHUNK: usize = 256;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn vocab(g: &Globals, a: &VocabArgs) -> Result<()> {
    let corpus = read_lines(&a.input)?;
    let mut estimator = Estimator::new(a.vocab_size);
    estimator.max_piece_len = a.max_piece_len;
    let estimation = estimator.run(&corpus)?;
    estimation.vocab.save(&a.out)?;
    let ll = estimation
        .log_likelihoods
        .iter()
        .flatten()
        .last()
        .copied()
        .unwrap_or(f64::NAN);
    println!("pieces\t{}", estimation.vocab.len());
    println!("log_likelihood\t{ll:.6}");
    g.log(&format!("wrote {}", a.out.display()));
    Ok(())
}

pub fn segment(g: &Globals, a: &SegmentArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    if a.n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    let stdin = io::stdin().lock();
    let mut out = BufWriter::new(io::stdout().lock());
    for (i, line) in stdin.lines().enumerate() {
        let line = line?;
        let lattice = Lattice::build(&line, &vocab);
        match a.mode {
            SegmentMode::Viterbi => writeln!(out, "{}", lattice.viterbi().display_pieces(&vocab).join(" "))?,
            SegmentMode::Sample => {
                let mut rng = derived_rng(g.seed(), &[i as u64]);
                let seg = lattice.sample(a.alpha, &mut rng)?;
                writeln!(out, "{}", seg.display_pieces(&vocab).join(" "))?;
            }
            SegmentMode::Nbest => {
                for (rank, seg) in lattice.nbest(a.n).iter().enumerate() {
                    writeln!(out, "{}\t{}", rank + 1, seg.display_pieces(&vocab).join(" "))?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn train(g: &Globals, a: &TrainArgs) -> Result<()> {
    let mode: TrainMode = a.mode.parse()?;
    let config = TrainConfig {
        mode,
        alpha: a.alpha,
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        warmup_steps: a.warmup,
        grad_clip_norm: a.clip,
        label_smoothing: a.label_smoothing,
        seed: g.seed(),
        ..TrainConfig::default()
    };
    config.validate()?;
    let vocab_src = Vocabulary::load(&a.src_vocab)?;
    let vocab_tgt = Vocabulary::load(&a.tgt_vocab)?;
    let model_config = ModelConfig::new(vocab_src.len(), vocab_tgt.len()).with_dims(a.emb_dim, a.hidden_dim);
    model_config.validate()?;
    let corpus = ParallelCorpus::read(&a.src, &a.tgt, Split::Train)?;
    let dev = match (&a.dev_src, &a.dev_tgt) {
        (Some(s), Some(t)) => Some(ParallelCorpus::read(s, t, Split::Dev)?),
        _ => None,
    };
    let metrics_path = a.metrics.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".metrics.tsv");
        PathBuf::from(p)
    });
    // Open both outputs before training so bad paths fail early.
    let mut metrics = create(&metrics_path)?;
    let ckpt = create(&a.out)?;

    let model = NeuralModel::new(model_config, g.seed())?;
    g.log(&format!(
        "training {mode} model with {} parameters on {} pairs",
        model.num_params(),
        corpus.len()
    ));
    let outcome = train_with_progress(model, &corpus, dev.as_ref(), &vocab_src, &vocab_tgt, &config, |s| {
        let dev = s.dev_loss.map_or_else(String::new, |d| format!(", dev loss {d:.4}"));
        g.log(&format!("epoch {}: train loss {:.4}{dev}", s.epoch + 1, s.train_loss));
    })?;

    writeln!(metrics, "epoch\ttrain_loss\tdev_loss\tupdates")?;
    for s in &outcome.history {
        let dev = s.dev_loss.map_or_else(|| "-".to_string(), |d| format!("{d:.6}"));
        writeln!(metrics, "{}\t{:.6}\t{dev}\t{}", s.epoch + 1, s.train_loss, s.updates)?;
    }
    metrics.flush()?;
    let mut ckpt = ckpt;
    subreg::model::write_checkpoint(&outcome.model, &mut ckpt)?;
    ckpt.flush()?;
    g.log(&format!(
        "kept epoch {}; wrote {} and {}",
        outcome.best_epoch + 1,
        a.out.display(),
        metrics_path.display()
    ));
    Ok(())
}

fn is_lookup_file(path: &Path) -> Result<bool> {
    let mut head = [0u8; 4];
    let mut file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut read = 0;
    while read < head.len() {
        match file.read(&mut head[read..])? {
            0 => break,
            k => read += k,
        }
    }
    Ok(&head[..read] == LOOKUP_MAGIC.as_bytes())
}

fn load_model(path: &Path) -> Result<Box<dyn Seq2SeqScorer>> {
    if is_lookup_file(path)? {
        Ok(Box::new(LookupModel::load(path)?))
    } else {
        Ok(Box::new(load_checkpoint(path)?))
    }
}

pub fn translate(g: &Globals, a: &TranslateArgs) -> Result<()> {
    let kind: StrategyKind = a.strategy.parse()?;
    let strategy = DecodeStrategy {
        kind,
        n: a.n,
        alpha: a.alpha,
        beam_width: a.beam,
        max_len: a.max_len,
        length_norm_power: a.length_norm,
        seed: g.seed(),
    };
    strategy.validate()?;
    let vocab_src = Vocabulary::load(&a.src_vocab)?;
    let vocab_tgt = Vocabulary::load(&a.tgt_vocab)?;
    let models = a.model.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let ensemble_kind = matches!(kind, StrategyKind::ModelEnsemble | StrategyKind::ProposedPlusEnsemble);
    if ensemble_kind && models.len() == 1 {
        g.log(&format!("warning: strategy {kind} with a single model"));
    } else if !kind.uses_all_models() && models.len() > 1 {
        g.log(&format!("warning: strategy {kind} uses only the first model"));
    }
    let mut dump = match &a.dump_scores {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "index\tscore\tnormalized_score\tsegmentations")?;
            Some(w)
        }
        None => None,
    };

    let mut out = BufWriter::new(io::stdout().lock());
    let mut lines = io::stdin().lock().lines();
    let mut offset = 0;
    loop {
        let chunk = lines.by_ref().take(TRANSLATE_CHUNK).collect::<io::Result<Vec<String>>>()?;
        if chunk.is_empty() {
            break;
        }
        let results = batch_translate_from(offset, &chunk, &models, &vocab_src, &vocab_tgt, &strategy)?;
        for (i, r) in results.iter().enumerate() {
            writeln!(out, "{}", r.output)?;
            if let Some(w) = dump.as_mut() {
                let segs: Vec<String> = r.inputs.iter().map(|s| s.display_pieces(&vocab_src).join(" ")).collect();
                writeln!(w, "{}\t{}\t{}\t{}", offset + i, r.score, r.normalized_score, segs.join("\t"))?;
            }
        }
        out.flush()?;
        offset += chunk.len();
    }
    if let Some(mut w) = dump {
        w.flush()?;
    }
    Ok(())
}

pub fn bleu(_g: &Globals, a: &BleuArgs) -> Result<()> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    let r = corpus_bleu(&hyps, &refs)?;
    let p = r.precisions.map(|x| x * 100.0);
    println!(
        "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3}, hyp_len = {}, ref_len = {})",
        r.bleu, p[0], p[1], p[2], p[3], r.brevity_penalty, r.hyp_len, r.ref_len
    );
    Ok(())
}

pub fn experiment(g: &Globals, a: &ExperimentArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = g.seed {
        config.spec.seed = seed;
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    let tsv_path = a.out_dir.join("results.tsv");
    let md_path = a.out_dir.join("summary.md");
    let (mut tsv, mut md) = (create(&tsv_path)?, create(&md_path)?);

    let progress = |m: &str| g.log(m);
    let (results, summary) = if config.spec.sizes.len() >= 2 {
        let sweep = run_datasize_sweep_with_progress(&config.spec, &config.task, &config.spec.sizes, &progress)?;
        let md = sweep.summary_markdown();
        (sweep.results, md)
    } else {
        let results = run_experiment(&config.spec, &config.task, &progress)?;
        let md = results.summary_markdown();
        (results, md)
    };
    results.write_tsv(&mut tsv)?;
    tsv.flush()?;
    md.write_all(summary.as_bytes())?;
    md.flush()?;
    print!("{summary}");
    g.log(&format!("wrote {} and {}", tsv_path.display(), md_path.display()));
    Ok(())
}
