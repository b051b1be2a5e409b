use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ratnmt::bench::{bench_translate, summary_table, LatencyReport};
use ratnmt::config::{apply, apply_file, parse_pairs, render, Section};
use ratnmt::decoding::{translate, DecodeConfig, Pipeline};
use ratnmt::evaluation::{corpus_bleu, paired_bootstrap, BleuReport, SignificanceResult};
use ratnmt::exec::Exec;
use ratnmt::model::{Model, ModelConfig, Variant};
use ratnmt::retriever::{Bm25Params, TmIndex, TranslationMemory};
use ratnmt::synthetic::{generate, SyntheticConfig};
use ratnmt::tensor::op_suite;
use ratnmt::tokenizer::{train_bpe, Vocab};
use ratnmt::training::{
    build_heldout_examples, build_training_stream, tiny_model_grad_check, train, Checkpoint, TrainConfig, Trainer, LOSS_LOG_HEADER,
};

use crate::manifest::RunManifest;
use crate::{Cli, Command};

/// A failure reported as one JSON line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl From<ratnmt::Error> for CliError {
    fn from(e: ratnmt::Error) -> Self {
        use ratnmt::Error as E;
        let kind = match &e {
            E::Tensor(_) => "tensor",
            E::Tokenizer(_) => "tokenizer",
            E::Retrieval(_) => "retrieval",
            E::Eval(_) => "evaluation",
            E::Config(_) => "config",
            E::Model(_) => "model",
            E::Plan(_) => "plan",
            E::Training(_) => "training",
            E::Checkpoint(_) => "checkpoint",
            E::Bench(_) => "bench",
            E::Io(_) => "io",
        };
        Self::new(kind, e.to_string())
    }
}

macro_rules! impl_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                ratnmt::Error::from(e).into()
            }
        }
    )*};
}
impl_from!(std::io::Error, ratnmt::tokenizer::TokenizerError, ratnmt::retriever::RetrievalError, ratnmt::evaluation::EvalError);

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

/// Lines of a file; with `first_column`, TSV lines keep only their first field.
fn read_lines(path: &Path, first_column: bool) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(|l| if first_column { l.split('\t').next().unwrap_or("").to_string() } else { l.to_string() })
        .collect())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn load_vocab(path: &Path, model: &ModelConfig) -> Result<Vocab> {
    let vocab = Vocab::load(path)?;
    if vocab.len() != model.vocab_size {
        return Err(CliError::new(
            "config",
            format!("vocab_size: model expects {} tokens, {} has {}", model.vocab_size, path.display(), vocab.len()),
        ));
    }
    Ok(vocab)
}

fn load_memory(path: &Path) -> Result<(TranslationMemory, TmIndex)> {
    let tm = TranslationMemory::load_tsv(path)?;
    let index = TmIndex::build(&tm, Bm25Params::default())?;
    Ok((tm, index))
}

fn decode_config(path: Option<&Path>) -> Result<DecodeConfig> {
    let mut dc = DecodeConfig::default();
    if let Some(p) = path {
        apply_file(p, &mut [&mut dc])?;
    }
    Ok(dc)
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let name = match &cli.command {
        Command::TokenizerTrain(_) => "tokenizer-train",
        Command::IndexBuild(_) => "index-build",
        Command::Retrieve(_) => "retrieve",
        Command::Train(_) => "train",
        Command::Translate(_) => "translate",
        Command::Evaluate(_) => "evaluate",
        Command::Significance(_) => "significance",
        Command::Bench(_) => "bench",
        Command::GradCheck(_) => "grad-check",
        Command::MakeSynthetic(_) => "make-synthetic",
    };
    let mut m = RunManifest::new(name, argv);
    match cli.command {
        Command::TokenizerTrain(a) => tokenizer_train(a, &mut m)?,
        Command::IndexBuild(a) => index_build(a, &mut m)?,
        Command::Retrieve(a) => retrieve(a, &mut m)?,
        Command::Train(a) => train_cmd(a, exec, &mut m)?,
        Command::Translate(a) => translate_cmd(a, &mut m)?,
        Command::Evaluate(a) => evaluate(a, &mut m)?,
        Command::Significance(a) => significance(a, exec, &mut m)?,
        Command::Bench(a) => bench(a, &mut m)?,
        Command::GradCheck(a) => grad_check(a, &mut m)?,
        Command::MakeSynthetic(a) => make_synthetic(a, &mut m)?,
    }
    m.append_to(&cli.run_dir)?;
    Ok(())
}

fn tokenizer_train(a: crate::TokenizerTrainArgs, m: &mut RunManifest) -> Result<()> {
    let mut texts = Vec::new();
    for p in &a.inputs {
        for line in read_text(p)?.lines() {
            texts.extend(line.split('\t').map(str::to_string));
        }
        m.input(p)?;
    }
    let vocab = train_bpe(&texts, a.vocab_size)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    vocab.save(&a.out)?;
    m.output(&a.out)?;
    println!("vocab_size\t{}", vocab.len());
    Ok(())
}

fn index_build(a: crate::IndexBuildArgs, m: &mut RunManifest) -> Result<()> {
    let tm = TranslationMemory::load_tsv(&a.tm)?;
    m.input(&a.tm)?;
    let index = TmIndex::build(&tm, Bm25Params { k1: a.k1, b: a.b })?;
    index.save(&a.out)?;
    m.output(&a.out)?;
    m.settings = Some(format!("k1 = {}\nb = {}\n", a.k1, a.b));
    println!("entries\t{}\nterms\t{}", index.len(), index.terms().count());
    Ok(())
}

fn retrieve(a: crate::RetrieveArgs, m: &mut RunManifest) -> Result<()> {
    let tm = TranslationMemory::load_tsv(&a.tm)?;
    m.input(&a.tm)?;
    let index = match &a.index {
        Some(p) => {
            m.input(p)?;
            let index = TmIndex::load(p)?;
            if index.len() != tm.len() {
                return Err(CliError::new(
                    "retrieval",
                    format!("index {} covers {} entries, memory has {}", p.display(), index.len(), tm.len()),
                ));
            }
            index
        }
        None => TmIndex::build(&tm, Bm25Params::default())?,
    };
    let mut out = String::new();
    match (&a.query, &a.queries) {
        (Some(q), _) => {
            out.push_str("entry_id\tscore\ttarget\n");
            for f in index.retrieve(&tm, q, a.k, None).matches {
                writeln!(out, "{}\t{:.6}\t{}", f.entry_id, f.score, f.target).unwrap();
            }
        }
        (None, Some(path)) => {
            m.input(path)?;
            let lines = read_lines(path, true)?;
            out.push_str("query\tentry_id\tscore\ttarget\n");
            for (i, q) in lines.iter().enumerate() {
                for f in index.retrieve(&tm, q, a.k, None).matches {
                    writeln!(out, "{}\t{}\t{:.6}\t{}", i + 1, f.entry_id, f.score, f.target).unwrap();
                }
            }
        }
        (None, None) => unreachable!("clap requires one of --query and --queries"),
    }
    print!("{out}");
    Ok(())
}

fn train_cmd(a: crate::TrainArgs, exec: Exec, m: &mut RunManifest) -> Result<()> {
    let vocab = Vocab::load(&a.vocab)?;
    m.input(&a.vocab)?;
    let mut trainer = match (&a.resume, &a.config) {
        (Some(ckpt), _) => {
            m.input(ckpt)?;
            let mut c = Checkpoint::load(ckpt)?;
            if let Some(steps) = a.max_steps {
                c.train.max_steps = steps;
            }
            Trainer::from_checkpoint(c)?
        }
        (None, Some(cfg_path)) => {
            m.input(cfg_path)?;
            m.config = Some(cfg_path.display().to_string());
            let pairs = parse_pairs(&read_text(cfg_path)?)?;
            if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "vocab_size") {
                if v.parse::<usize>().ok() != Some(vocab.len()) {
                    return Err(CliError::new("config", format!("vocab_size: {v} does not match the {} tokens of {}", vocab.len(), a.vocab.display())));
                }
            }
            let mut mc = ModelConfig::desk(vocab.len(), Variant::Baseline, 3);
            let mut tc = TrainConfig::desk();
            apply(&pairs, &mut [&mut mc, &mut tc])?;
            Trainer::new(Model::new(mc, tc.seed)?, tc)?
        }
        (None, None) => unreachable!("clap requires --config or --resume"),
    };
    if a.resume.is_none() && a.out.join("loss.tsv").exists() {
        return Err(CliError::new("training", format!("{} already holds a run; use --resume to continue it", a.out.display())));
    }
    load_vocab(&a.vocab, &trainer.model.config)?;
    trainer.exec = exec;
    let (mc, tc) = (trainer.model.config.clone(), trainer.cfg.clone());
    m.seed = Some(tc.seed);
    m.settings = Some(render(&[&mc as &dyn Section, &tc]));

    let (tm, index) = load_memory(&a.train)?;
    m.input(&a.train)?;
    let stream = build_training_stream(&tm, &index, &vocab, mc.k, mc.max_len, tc.seed, (tc.batch_src_tokens, tc.batch_tgt_tokens), exec)?;
    let valid = match &a.valid {
        Some(p) => {
            m.input(p)?;
            let held = TranslationMemory::load_tsv(p)?;
            build_heldout_examples(&held, &tm, &index, &vocab, mc.k, mc.max_len, exec)?
        }
        None => Vec::new(),
    };
    let outcome = train(&mut trainer, &stream, &valid, Some(&a.out))?;
    println!("{LOSS_LOG_HEADER}");
    for row in &outcome.log {
        println!("{}", row.to_tsv_row());
    }
    for c in &outcome.checkpoints {
        m.output(c)?;
    }
    m.output(&a.out.join("loss.tsv"))?;
    Ok(())
}

fn translate_cmd(a: crate::TranslateArgs, m: &mut RunManifest) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.model;
    m.input(&a.checkpoint)?;
    let vocab = load_vocab(&a.vocab, &model.config)?;
    m.input(&a.vocab)?;
    let memory = match &a.tm {
        Some(p) => {
            m.input(p)?;
            Some(load_memory(p)?)
        }
        None => None,
    };
    if let Some(p) = &a.config {
        m.input(p)?;
        m.config = Some(p.display().to_string());
    }
    let dc = decode_config(a.config.as_deref())?;
    m.settings = Some(render(&[&dc as &dyn Section]));
    let sources = match (&a.text, &a.input) {
        (Some(t), _) => vec![t.clone()],
        (None, Some(p)) => {
            m.input(p)?;
            read_lines(p, true)?
        }
        (None, None) => unreachable!("clap requires --text or --input"),
    };
    let p = Pipeline { vocab: &vocab, memory: memory.as_ref().map(|(tm, ix)| (tm, ix)), model: &model };
    let mut out = String::new();
    let mut trace = String::from("line\tretrieved\tsrc_tokens\tpass_lengths\tmemory_len\toutput_tokens\tscore\ttruncated\tencode_ms\ttotal_ms\n");
    for (i, s) in sources.iter().enumerate() {
        let (text, t) = translate(&p, s, &dc)?;
        out.push_str(&text);
        out.push('\n');
        let retrieved: Vec<String> = t.retrieved.iter().map(|(id, sc)| format!("{id}:{sc:.4}")).collect();
        let passes: Vec<String> = t.pass_lengths.iter().map(usize::to_string).collect();
        writeln!(
            trace,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{:.4}\t{:.4}",
            i + 1,
            retrieved.join(","),
            t.src_ids.len(),
            passes.join(","),
            t.memory_len,
            t.output_ids.len(),
            t.score,
            t.truncated,
            t.timings.encode.as_secs_f64() * 1e3,
            t.timings.total.as_secs_f64() * 1e3
        )
        .unwrap();
    }
    match &a.out {
        Some(path) => {
            write_file(path, &out)?;
            m.output(path)?;
        }
        None => print!("{out}"),
    }
    if let Some(path) = &a.trace {
        write_file(path, &trace)?;
        m.output(path)?;
    }
    Ok(())
}

fn evaluate(a: crate::EvaluateArgs, m: &mut RunManifest) -> Result<()> {
    let hyps = read_lines(&a.hyp, false)?;
    let refs = read_lines(&a.reference, false)?;
    m.input(&a.hyp)?;
    m.input(&a.reference)?;
    let report = corpus_bleu(&hyps, &refs)?;
    let tsv = format!("{}\n{}\n", BleuReport::TSV_HEADER, report.to_tsv_row());
    print!("{tsv}");
    if let Some(p) = &a.out {
        write_file(p, &tsv)?;
        m.output(p)?;
    }
    Ok(())
}

fn significance(a: crate::SignificanceArgs, exec: Exec, m: &mut RunManifest) -> Result<()> {
    let ha = read_lines(&a.hyp_a, false)?;
    let hb = read_lines(&a.hyp_b, false)?;
    let refs = read_lines(&a.reference, false)?;
    for p in [&a.hyp_a, &a.hyp_b, &a.reference] {
        m.input(p)?;
    }
    m.seed = Some(a.seed);
    m.settings = Some(format!("resamples = {}\nthreshold = {}\nseed = {}\n", a.resamples, a.threshold, a.seed));
    let r = paired_bootstrap(&ha, &hb, &refs, a.resamples, a.threshold, a.seed, exec)?;
    let tsv = format!("{}\n{}\n", SignificanceResult::TSV_HEADER, r.to_tsv_row());
    print!("{tsv}");
    if let Some(p) = &a.out {
        write_file(p, &tsv)?;
        m.output(p)?;
    }
    Ok(())
}

fn bench(a: crate::BenchArgs, m: &mut RunManifest) -> Result<()> {
    let sentences = read_lines(&a.input, true)?;
    m.input(&a.input)?;
    let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
    let memory = match &a.tm {
        Some(p) => {
            m.input(p)?;
            Some(load_memory(p)?)
        }
        None => None,
    };
    if let Some(p) = &a.config {
        m.input(p)?;
        m.config = Some(p.display().to_string());
    }
    let dc = decode_config(a.config.as_deref())?;
    m.settings = Some(render(&[&dc as &dyn Section]) + &format!("warmup = {}\n", a.warmup));
    m.input(&a.vocab)?;
    let mut reports = Vec::new();
    for c in &a.checkpoints {
        let model = Checkpoint::load(c)?.model;
        m.input(c)?;
        let vocab = load_vocab(&a.vocab, &model.config)?;
        let p = Pipeline { vocab: &vocab, memory: memory.as_ref().map(|(tm, ix)| (tm, ix)), model: &model };
        reports.push(bench_translate(&p, &refs, a.warmup, &dc)?);
    }
    let mut tsv = format!("{}\n", LatencyReport::TSV_HEADER);
    for r in &reports {
        tsv.push_str(&r.to_tsv_row());
        tsv.push('\n');
    }
    print!("{}", summary_table(&reports));
    match &a.out {
        Some(p) => {
            write_file(p, &tsv)?;
            m.output(p)?;
        }
        None => print!("\n{tsv}"),
    }
    Ok(())
}

/// Thresholds on the maximum relative error.
const OP_THRESHOLD: f64 = 1e-4;
const MODEL_THRESHOLD: f64 = 1e-3;

fn grad_check(a: crate::GradCheckArgs, m: &mut RunManifest) -> Result<()> {
    m.seed = Some(a.seed);
    let variants: Vec<Variant> = a.variants.iter().map(|v| v.parse()).collect::<ratnmt::Result<_>>()?;
    let mut rows = Vec::new();
    for (name, r) in op_suite(a.seed).map_err(ratnmt::Error::from)? {
        rows.push((format!("op:{name}"), r, OP_THRESHOLD));
    }
    for v in variants {
        rows.push((format!("model:{v}"), tiny_model_grad_check(v, a.seed, 0.1)?, MODEL_THRESHOLD));
    }
    let mut tsv = String::from("check\tcoordinates\tmax_rel_error\tthreshold\tpass\n");
    let mut failed = Vec::new();
    for (name, r, thr) in &rows {
        let pass = r.max_relative_error < *thr;
        if !pass {
            failed.push(name.clone());
        }
        writeln!(tsv, "{name}\t{}\t{:.3e}\t{thr:e}\t{pass}", r.coordinates, r.max_relative_error).unwrap();
    }
    print!("{tsv}");
    if let Some(p) = &a.out {
        write_file(p, &tsv)?;
        m.output(p)?;
    }
    if !failed.is_empty() {
        return Err(CliError::new("gradcheck", format!("failed: {}", failed.join(","))));
    }
    Ok(())
}

fn make_synthetic(a: crate::MakeSyntheticArgs, m: &mut RunManifest) -> Result<()> {
    let mut cfg = SyntheticConfig::default();
    if let Some(p) = &a.config {
        m.input(p)?;
        m.config = Some(p.display().to_string());
        apply_file(p, &mut [&mut cfg])?;
    }
    m.seed = Some(cfg.seed);
    m.settings = Some(render(&[&cfg as &dyn Section]));
    let data = generate(&cfg)?;
    data.write(&a.out)?;
    let answers: String = data.test_answers.iter().map(|w| format!("{w}\n")).collect();
    write_file(&a.out.join("answers.txt"), &answers)?;
    for f in ["train.tsv", "test.tsv", "memory.tsv", "answers.txt"] {
        m.output(&a.out.join(f))?;
    }
    println!("train\t{}\ntest\t{}\nmemory\t{}", data.train.len(), data.test.len(), data.memory.len());
    Ok(())
}
