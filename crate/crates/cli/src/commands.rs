use std::fs;
use std::path::{Path, PathBuf};

use adawm::eval::{run_experiment, ExperimentInputs, ExperimentOutput, ExperimentSpec, MetricsReport, Scheme};
use adawm::redteam::{common_tokens, paraphrase_attack, spoof_attack, AdaptiveTarget, KgwTarget, SpoofReport, SpoofTarget};
use adawm::rng::{derive_seed, WatermarkRng};
use adawm::semantics::{train_mapper as fit_mapper, SemanticKey, SemanticMapper, SentenceEmbedder};
use adawm::watermark::{
    detect as detect_adaptive, generate as generate_adaptive, generate_plain, kgw_detect, kgw_generate, DetectionStatus,
    KgwScheme,
};
use adawm::{Corpus, NGramModel, NGramRole, TokenId, Vocabulary};
use serde::Serialize;

use crate::config::{RunConfig, SchemeKind};
use crate::error::CliError;
use crate::manifest::{self, write_artifact};

pub const GENERATIONS_JSONL: &str = "generations.jsonl";
pub const GENERATIONS_TXT: &str = "generations.txt";
pub const DETECTION_JSONL: &str = "detection.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const ROC_CSV: &str = "roc.csv";
pub const ATTACKED_TXT: &str = "attacked.txt";
pub const SPOOF_JSON: &str = "spoof.json";
pub const MAPPER_LOG_JSON: &str = "mapper_log.json";

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn non_empty_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.trim().is_empty()).collect()
}

pub fn load_vocab(c: &RunConfig) -> Result<Vocabulary, CliError> {
    Ok(Vocabulary::load(&c.paths.vocab())?)
}

pub fn load_corpus(path: &Path, vocab: &Vocabulary, c: &RunConfig) -> Result<Corpus, CliError> {
    if !path.exists() {
        return Err(CliError::CorpusNotFound(path.to_path_buf()));
    }
    Ok(Corpus::load(path, vocab, c.tokenizer)?)
}

/// `(train, heldout)` documents of the main corpus.
pub fn split_corpus(c: &RunConfig, vocab: &Vocabulary) -> Result<(Corpus, Corpus), CliError> {
    let corpus = load_corpus(&c.paths.corpus, vocab, c)?;
    Ok(corpus.split(c.lm.heldout_fraction, derive_seed(c.seed, "split"))?)
}

pub fn load_lm(path: &Path, vocab: &Vocabulary, role: NGramRole) -> Result<NGramModel, CliError> {
    let m = NGramModel::load(path)?;
    if m.vocab_hash() != vocab.hash() {
        return Err(CliError::Mismatch(format!(
            "{} was trained on vocabulary {:016x}, loaded vocabulary is {:016x}",
            path.display(),
            m.vocab_hash(),
            vocab.hash()
        )));
    }
    if m.role() != role {
        log::warn!("{} is tagged {:?}, used as {:?}", path.display(), m.role(), role);
    }
    Ok(m)
}

pub fn load_key(c: &RunConfig, vocab: &Vocabulary) -> Result<SemanticKey, CliError> {
    let path = c.paths.mapper();
    let mapper = SemanticMapper::load(&path)?;
    if mapper.vocab_hash != vocab.hash() {
        return Err(CliError::Mismatch(format!(
            "{} was trained on vocabulary {:016x}, loaded vocabulary is {:016x}",
            path.display(),
            mapper.vocab_hash,
            vocab.hash()
        )));
    }
    Ok(SemanticKey::from_mapper(mapper)?)
}

/// The secret opening sentence, from the inline override or the opening file.
pub fn load_opening(c: &RunConfig, vocab: &Vocabulary) -> Result<Vec<TokenId>, CliError> {
    let text = match (&c.opening_inline, &c.paths.opening) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => read_text(p)?,
        (None, None) if c.watermark.measure_threshold == 0 => return Ok(Vec::new()),
        (None, None) => {
            return Err(CliError::Usage(
                "an opening sentence is required when measure_threshold > 0 (--opening-sentence-file)".into(),
            ))
        }
    };
    let ids = vocab.encode(text.trim(), c.tokenizer)?;
    if ids.is_empty() && c.watermark.measure_threshold > 0 {
        return Err(CliError::Input("the opening sentence is empty".into()));
    }
    Ok(ids)
}

/// The first `n` tokens of every held-out document that has them.
pub fn heldout_prompts(held: &Corpus, n: usize) -> Vec<Vec<TokenId>> {
    held.documents
        .iter()
        .filter(|d| d.len() > n)
        .map(|d| d.ids[..n].to_vec())
        .collect()
}

fn record(c: &RunConfig, artifacts: &[PathBuf], command: &str) -> Result<(), CliError> {
    manifest::record(&c.paths.out, artifacts, command, &c.hash())
}

pub fn make_corpus(c: &RunConfig) -> Result<(), CliError> {
    let write = |path: &Path, n: usize, label: &str| -> Result<(), CliError> {
        let docs = c.corpus.generator.generate(n, derive_seed(c.seed, label));
        let mut text = docs.join("\n");
        text.push('\n');
        write_artifact(path, text.as_bytes())
    };
    let mut artifacts = vec![c.paths.corpus.clone()];
    write(&c.paths.corpus, c.corpus.docs, "corpus")?;
    if let Some(r) = &c.paths.reference_corpus {
        write(r, c.corpus.reference_docs, "reference-corpus")?;
        artifacts.push(r.clone());
    }
    record(c, &artifacts, "make-corpus")
}

pub fn train_lm(c: &RunConfig) -> Result<(), CliError> {
    if !c.paths.corpus.exists() {
        return Err(CliError::CorpusNotFound(c.paths.corpus.clone()));
    }
    let text = read_text(&c.paths.corpus)?;
    let vocab = Vocabulary::build(text.lines(), c.tokenizer, c.lm.max_vocab)?;
    let vocab_path = c.paths.vocab();
    write_artifact(&vocab_path, vocab.to_lines().as_bytes())?;

    let (train, held) = split_corpus(c, &vocab)?;
    let fit = |corpus: &Corpus, order: usize, role: NGramRole| {
        NGramModel::train(corpus, order, c.lm.k, vocab.len(), vocab.hash(), role)
    };
    let eval_corpus = match &c.paths.reference_corpus {
        Some(p) => load_corpus(p, &vocab, c)?,
        None => held,
    };
    let models = [
        (c.paths.generator(), fit(&train, c.lm.generator_order, NGramRole::Generator)?),
        (c.paths.measurement(), fit(&train, c.lm.measurement_order, NGramRole::Measurement)?),
        (c.paths.evaluator(), fit(&eval_corpus, c.lm.evaluator_order, NGramRole::Evaluator)?),
    ];
    let mut artifacts = vec![vocab_path];
    for (path, model) in &models {
        write_artifact(path, &model.to_bytes())?;
        artifacts.push(path.clone());
    }
    log::info!("vocabulary {} tokens, {} training documents", vocab.len(), train.len());
    record(c, &artifacts, "train-lm")
}

pub fn train_mapper(c: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(c)?;
    let (train, _) = split_corpus(c, &vocab)?;
    let mut cfg = c.mapper.clone();
    cfg.seed = derive_seed(c.seed, "mapper-train");
    let (key, log) = fit_mapper(&train, vocab.len(), vocab.hash(), &cfg)?;
    let path = c.paths.mapper();
    write_artifact(&path, &key.mapper.to_bytes())?;
    let log_path = c.paths.out.join(MAPPER_LOG_JSON);
    write_artifact(&log_path, &json(&log))?;
    record(c, &[path, log_path], "train-mapper")
}

#[derive(Debug, Serialize)]
struct GenerationRecord {
    index: usize,
    scheme: SchemeKind,
    prompt: Vec<TokenId>,
    tokens: Vec<TokenId>,
    text: String,
    /// Per-token watermark flags (adaptive scheme only).
    #[serde(skip_serializing_if = "Option::is_none")]
    watermarked: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    entropy: Option<Vec<Option<f64>>>,
}

fn kgw_scheme(kind: SchemeKind) -> Option<KgwScheme> {
    match kind {
        SchemeKind::Kgw0 => Some(KgwScheme::Kgw0),
        SchemeKind::Kgw1 => Some(KgwScheme::Kgw1),
        _ => None,
    }
}

pub fn generate(c: &RunConfig, prompt: Option<&str>, prompt_file: Option<&Path>) -> Result<(), CliError> {
    let vocab = load_vocab(c)?;
    let lm = load_lm(&c.paths.generator(), &vocab, NGramRole::Generator)?;
    let prompts: Vec<Vec<TokenId>> = match (prompt, prompt_file) {
        (Some(p), _) => vec![vocab.encode(p, c.tokenizer)?],
        (None, Some(f)) => non_empty_lines(&read_text(f)?)
            .into_iter()
            .map(|l| vocab.encode(l, c.tokenizer))
            .collect::<Result<_, _>>()?,
        (None, None) => heldout_prompts(&split_corpus(c, &vocab)?.1, c.generate.prompt_tokens),
    };
    if prompts.is_empty() {
        return Err(CliError::Input("no prompts".into()));
    }

    let scheme = c.generate.scheme;
    let adaptive = match scheme {
        SchemeKind::Adaptive => Some((
            load_lm(&c.paths.measurement(), &vocab, NGramRole::Measurement)?,
            load_key(c, &vocab)?,
            c.watermark_params(load_opening(c, &vocab)?),
        )),
        _ => None,
    };

    let mut records = Vec::with_capacity(c.generate.count);
    for i in 0..c.generate.count {
        let prompt = &prompts[i % prompts.len()];
        let mut rng = WatermarkRng::derived(c.seed, &format!("gen:{i}"));
        let (tokens, watermarked, entropy) = match (&adaptive, kgw_scheme(scheme)) {
            (Some((mm, key, wp)), _) => {
                let trace = generate_adaptive(&lm, mm, key, prompt, wp, &mut rng)?;
                (
                    trace.tokens(),
                    Some(trace.records.iter().map(|r| r.watermarked).collect()),
                    Some(trace.records.iter().map(|r| r.entropy).collect()),
                )
            }
            (None, Some(k)) => (kgw_generate(&lm, prompt, &c.kgw_params(k), &mut rng)?, None, None),
            (None, None) => (
                generate_plain(&lm, prompt, &c.sampler(), c.watermark.max_tokens, &mut rng)?,
                None,
                None,
            ),
        };
        records.push(GenerationRecord {
            index: i,
            scheme,
            prompt: prompt.clone(),
            text: vocab.decode(&tokens, c.tokenizer)?,
            tokens,
            watermarked,
            entropy,
        });
    }

    let mut jsonl = String::new();
    let mut txt = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r).expect("record serializes"));
        jsonl.push('\n');
        txt.push_str(&r.text);
        txt.push('\n');
    }
    let jsonl_path = c.paths.out.join(GENERATIONS_JSONL);
    let txt_path = c.paths.out.join(GENERATIONS_TXT);
    write_artifact(&jsonl_path, jsonl.as_bytes())?;
    write_artifact(&txt_path, txt.as_bytes())?;
    record(c, &[jsonl_path, txt_path], "generate")
}

#[derive(Debug, Serialize)]
struct DetectionLine {
    index: usize,
    scheme: SchemeKind,
    status: DetectionStatus,
    score: Option<f64>,
    verdict: &'static str,
    text_len: usize,
    scored_tokens: usize,
    green_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    short_text: Option<bool>,
}

/// Prints one line per text and writes `detection.jsonl`. Returns
/// [`CliError::Inconclusive`] after writing if any text had no scorable token.
pub fn detect(c: &RunConfig, input: &Path, scheme: SchemeKind) -> Result<(), CliError> {
    let vocab = load_vocab(c)?;
    let text = read_text(input)?;
    let texts: Vec<Vec<TokenId>> = non_empty_lines(&text)
        .into_iter()
        .map(|l| vocab.encode(l, c.tokenizer))
        .collect::<Result<_, _>>()?;

    let verdict = |score: Option<f64>, threshold: f64| match score {
        None => "inconclusive",
        Some(s) if s > threshold => "watermarked",
        Some(_) => "not-watermarked",
    };
    let lines: Vec<DetectionLine> = match scheme {
        SchemeKind::Adaptive => {
            let mm = load_lm(&c.paths.measurement(), &vocab, NGramRole::Measurement)?;
            let key = load_key(c, &vocab)?;
            let wp = c.watermark_params(load_opening(c, &vocab)?);
            let threshold = c.watermark.threshold * wp.delta;
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let r = detect_adaptive(t, &mm, &key, &wp)?;
                    Ok(DetectionLine {
                        index: i,
                        scheme,
                        status: r.status,
                        score: r.score.map(round6),
                        verdict: verdict(r.score, threshold),
                        text_len: r.text_len,
                        scored_tokens: r.watermarked_count(),
                        green_tokens: r.green_count,
                        short_text: Some(r.short_text),
                    })
                })
                .collect::<Result<_, CliError>>()?
        }
        SchemeKind::Kgw0 | SchemeKind::Kgw1 => {
            let kp = c.kgw_params(kgw_scheme(scheme).expect("kgw scheme"));
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let r = kgw_detect(t, &kp, vocab.len())?;
                    Ok(DetectionLine {
                        index: i,
                        scheme,
                        status: r.status,
                        score: r.score.map(round6),
                        verdict: verdict(r.score, c.kgw.threshold),
                        text_len: t.len(),
                        scored_tokens: r.scored,
                        green_tokens: r.green,
                        short_text: None,
                    })
                })
                .collect::<Result<_, CliError>>()?
        }
        SchemeKind::Plain => return Err(CliError::Usage("detect needs a watermark scheme".into())),
    };

    let mut jsonl = String::new();
    for l in &lines {
        let score = l.score.map_or_else(|| "none".to_string(), |s| format!("{s:.6}"));
        println!(
            "text {}: status={} score={score} verdict={} scored={}/{}",
            l.index,
            if l.status == DetectionStatus::Ok { "ok" } else { "inconclusive" },
            l.verdict,
            l.scored_tokens,
            l.text_len
        );
        jsonl.push_str(&serde_json::to_string(l).expect("line serializes"));
        jsonl.push('\n');
    }
    let path = c.paths.out.join(DETECTION_JSONL);
    write_artifact(&path, jsonl.as_bytes())?;
    record(c, &[path], "detect")?;
    if lines.iter().any(|l| l.status == DetectionStatus::Inconclusive) {
        return Err(CliError::Inconclusive);
    }
    Ok(())
}

/// The attacker's synonym table: a seeded embedder that shares nothing with the key.
fn attack_embedder(c: &RunConfig, vocab_size: usize) -> SentenceEmbedder {
    SentenceEmbedder::new(vocab_size, SentenceEmbedder::DEFAULT_DIM, derive_seed(c.seed, "attack-embedder"))
}

#[derive(Debug, Serialize)]
struct SampleRow<'a> {
    index: usize,
    label: &'a str,
    score: f64,
    attacked: bool,
    config_hash: &'a str,
}

pub fn evaluate(c: &RunConfig) -> Result<MetricsReport, CliError> {
    if c.evaluate.samples_per_class < 2 {
        return Err(CliError::Usage("evaluate needs at least 2 samples per class".into()));
    }
    let vocab = load_vocab(c)?;
    let (_, held) = split_corpus(c, &vocab)?;
    let lm = load_lm(&c.paths.generator(), &vocab, NGramRole::Generator)?;
    let mm = load_lm(&c.paths.measurement(), &vocab, NGramRole::Measurement)?;
    let ev = load_lm(&c.paths.evaluator(), &vocab, NGramRole::Evaluator)?;
    let prompts = heldout_prompts(&held, c.evaluate.prompt_tokens);
    let human: Option<Vec<Vec<TokenId>>> = match &c.paths.human {
        Some(p) => Some(
            non_empty_lines(&read_text(p)?)
                .into_iter()
                .map(|l| vocab.encode(l, c.tokenizer))
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };

    let (scheme, key) = match c.evaluate.scheme {
        SchemeKind::Adaptive => (
            Scheme::Adaptive(c.watermark_params(load_opening(c, &vocab)?)),
            Some(load_key(c, &vocab)?),
        ),
        SchemeKind::Plain => return Err(CliError::Usage("evaluate needs a watermark scheme".into())),
        kind => (Scheme::Kgw(c.kgw_params(kgw_scheme(kind).expect("kgw scheme"))), None),
    };
    let spec = ExperimentSpec {
        samples_per_class: c.evaluate.samples_per_class,
        length: c.evaluate.length,
        length_jitter: c.evaluate.length_jitter,
        seed: derive_seed(c.seed, "evaluate"),
        scheme,
        attack: c.evaluate.attack.then(|| c.attack.clone()),
    };
    let attacker = attack_embedder(c, vocab.len());
    let inputs = ExperimentInputs {
        generator: &lm,
        measurement: &mm,
        key: key.as_ref(),
        attack_embedder: Some(&attacker),
        evaluator: Some(&ev),
        prompts: &prompts,
        human: human.as_deref(),
    };
    let ExperimentOutput {
        report, samples, roc, ..
    } = run_experiment(&spec, &inputs)?;

    let report_path = c.paths.out.join(REPORT_JSON);
    write_artifact(&report_path, &json(&report))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &samples {
        w.serialize(SampleRow {
            index: s.index,
            label: match s.label {
                adawm::eval::Label::Watermarked => "watermarked",
                adawm::eval::Label::Human => "human",
            },
            score: s.score,
            attacked: s.attacked,
            config_hash: &s.config_hash,
        })
        .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let samples_path = c.paths.out.join(SAMPLES_CSV);
    write_artifact(&samples_path, &w.into_inner().expect("in-memory writer"))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fpr", "tpr"]).expect("in-memory writer");
    for (fpr, tpr) in &roc {
        w.write_record([fpr.to_string(), tpr.to_string()]).expect("in-memory writer");
    }
    let roc_path = c.paths.out.join(ROC_CSV);
    write_artifact(&roc_path, &w.into_inner().expect("in-memory writer"))?;

    println!(
        "roc_auc={:.6} best_f1={:.6} tpr@1%={:.6} tpr@10%={:.6} awr={}",
        report.roc_auc,
        report.best_f1,
        report.tpr_at_1pct_fpr,
        report.tpr_at_10pct_fpr,
        report.awr.map_or_else(|| "n/a".into(), |a| format!("{a:.6}"))
    );
    record(c, &[report_path, samples_path, roc_path], "evaluate")?;
    Ok(report)
}

pub fn attack(c: &RunConfig, input: &Path) -> Result<(), CliError> {
    let vocab = load_vocab(c)?;
    let mm = load_lm(&c.paths.measurement(), &vocab, NGramRole::Measurement)?;
    let embedder = attack_embedder(c, vocab.len());
    let mut out = String::new();
    for (i, line) in non_empty_lines(&read_text(input)?).into_iter().enumerate() {
        let ids = vocab.encode(line, c.tokenizer)?;
        if ids.is_empty() {
            continue;
        }
        let pp = adawm::redteam::ParaphraseParams {
            seed: derive_seed(c.seed, &format!("attack:{i}")),
            ..c.attack.clone()
        };
        out.push_str(&vocab.decode(&paraphrase_attack(&ids, &pp, &embedder, &mm)?, c.tokenizer)?);
        out.push('\n');
    }
    let path = c.paths.out.join(ATTACKED_TXT);
    write_artifact(&path, out.as_bytes())?;
    record(c, &[path], "attack")
}

#[derive(Debug, Serialize)]
struct SpoofOutput {
    target: SchemeKind,
    generations: usize,
    length: usize,
    #[serde(flatten)]
    report: SpoofReport,
}

pub fn spoof(c: &RunConfig) -> Result<SpoofReport, CliError> {
    let vocab = load_vocab(c)?;
    let (train, held) = split_corpus(c, &vocab)?;
    let lm = load_lm(&c.paths.generator(), &vocab, NGramRole::Generator)?;
    let prompts = heldout_prompts(&held, c.generate.prompt_tokens);
    let pool = common_tokens(&train, vocab.len(), c.spoof.config.pool);
    let mut sc = c.spoof.config.clone();
    sc.seed = derive_seed(c.seed, "spoof");

    let report = match c.spoof.target {
        SchemeKind::Adaptive => {
            let mm = load_lm(&c.paths.measurement(), &vocab, NGramRole::Measurement)?;
            let key = load_key(c, &vocab)?;
            let fixed = match &c.spoof.fixed_sentence {
                Some(s) => vocab.encode(s, c.tokenizer)?,
                None => prompts.first().cloned().unwrap_or_default(),
            };
            let target = AdaptiveTarget {
                lm: &lm,
                mm: &mm,
                key: &key,
                params: c.watermark_params(load_opening(c, &vocab)?),
                prompts: &prompts,
                fixed_embedding: Some(key.embedder.embed(&fixed)),
                pin_opening: c.spoof.pin_opening,
            };
            run_spoof(&target, &pool, &sc)?
        }
        SchemeKind::Kgw0 | SchemeKind::Kgw1 => {
            let target = KgwTarget {
                lm: &lm,
                params: c.kgw_params(kgw_scheme(c.spoof.target).expect("kgw scheme")),
                prompts: &prompts,
                prefix: pool[0],
            };
            run_spoof(&target, &pool, &sc)?
        }
        SchemeKind::Plain => return Err(CliError::Usage("spoof needs a watermark scheme".into())),
    };

    println!(
        "decryption_rate={:.6} pool={} frequency_gap={:.6}",
        report.decryption_rate, report.pool_size, report.frequency_gap
    );
    let path = c.paths.out.join(SPOOF_JSON);
    let out = SpoofOutput {
        target: c.spoof.target,
        generations: sc.generations,
        length: sc.length,
        report,
    };
    write_artifact(&path, &json(&out))?;
    record(c, &[path], "spoof")?;
    Ok(out.report)
}

fn run_spoof(target: &dyn SpoofTarget, pool: &[TokenId], sc: &adawm::redteam::SpoofConfig) -> Result<SpoofReport, CliError> {
    if pool.is_empty() {
        return Err(CliError::Input("the training corpus has no tokens to pool".into()));
    }
    Ok(spoof_attack(target, pool, sc)?)
}
