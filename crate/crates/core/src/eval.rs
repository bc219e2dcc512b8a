//! Detection metrics and the experiment runner.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LanguageModel, MeasurementModel, NGramModel};
use crate::redteam::{paraphrase_attack, ParaphraseParams};
use crate::rng::{derive_seed, fnv1a64, WatermarkRng};
use crate::semantics::{SemanticKey, SentenceEmbedder};
use crate::vocab::TokenId;
use crate::watermark::{
    detect, generate, generate_plain, green_fractions, kgw_detect, kgw_generate, DetectionStatus, GenerationTrace,
    KgwParams, WatermarkParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Watermarked,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: Label,
    /// Hash of the scheme configuration that produced the text.
    pub config_hash: String,
    pub attacked: bool,
    pub index: usize,
}

impl ScoredSample {
    pub fn new(score: f64, label: Label) -> Self {
        Self {
            score,
            label,
            config_hash: String::new(),
            attacked: false,
            index: 0,
        }
    }
}

fn split_scores(samples: &[ScoredSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in samples {
        if !s.score.is_finite() {
            return Err(Error::invalid(format!("non-finite score {}", s.score)));
        }
        match s.label {
            Label::Watermarked => pos.push(s.score),
            Label::Human => neg.push(s.score),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("metrics need samples of both classes"));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC; ties count one half.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, mut neg) = split_scores(samples)?;
    neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for p in &pos {
        let below = neg.partition_point(|n| n < p);
        let not_above = neg.partition_point(|n| n <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}

/// Every operating point of "positive iff score > threshold", from the
/// all-positive threshold (`-inf`) to the all-negative one (`+inf`).
fn operating_points(samples: &[ScoredSample]) -> Result<Vec<(f64, usize, usize, usize, usize)>> {
    let (mut pos, mut neg) = split_scores(samples)?;
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut uniq: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();

    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);

    // (threshold, tp, fp, P, N)
    Ok(thresholds
        .into_iter()
        .map(|thr| {
            let tp = pos.len() - pos.partition_point(|&s| s <= thr);
            let fp = neg.len() - neg.partition_point(|&s| s <= thr);
            (thr, tp, fp, pos.len(), neg.len())
        })
        .collect())
}

fn f1(tp: usize, fp: usize, p: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + (p - tp)) as f64
    }
}

/// Highest F1 for the watermarked class over the threshold sweep, with the
/// threshold achieving it (the first one on ties).
pub fn best_f1(samples: &[ScoredSample]) -> Result<(f64, f64)> {
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (thr, tp, fp, p, _) in operating_points(samples)? {
        let f = f1(tp, fp, p);
        if f > best.0 {
            best = (f, thr);
        }
    }
    Ok(best)
}

/// Best TPR among thresholds whose empirical FPR does not exceed `fpr_target`.
pub fn tpr_at_fpr(samples: &[ScoredSample], fpr_target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fpr_target) {
        return Err(Error::invalid(format!("FPR target {fpr_target} outside [0, 1]")));
    }
    Ok(operating_points(samples)?
        .into_iter()
        .filter(|&(_, _, fp, _, n)| fp as f64 <= fpr_target * n as f64 + 1e-12)
        .map(|(_, tp, _, p, _)| tp as f64 / p as f64)
        .fold(0.0, f64::max))
}

/// ROC curve as (FPR, TPR) pairs from (0, 0) to (1, 1).
pub fn roc_points(samples: &[ScoredSample]) -> Result<Vec<(f64, f64)>> {
    let mut pts: Vec<(f64, f64)> = operating_points(samples)?
        .into_iter()
        .map(|(_, tp, fp, p, n)| (fp as f64 / n as f64, tp as f64 / p as f64))
        .collect();
    pts.reverse();
    Ok(pts)
}

/// Pooled fraction of watermarked tokens.
pub fn awr(traces: &[GenerationTrace]) -> Result<f64> {
    let total: usize = traces.iter().map(GenerationTrace::len).sum();
    if total == 0 {
        return Err(Error::invalid("AWR of no tokens"));
    }
    let marked: usize = traces.iter().map(GenerationTrace::watermarked_count).sum();
    Ok(marked as f64 / total as f64)
}

/// `1 - distinct n-grams / total n-grams`.
pub fn repetition_rate(text: &[TokenId], n: usize) -> Result<f64> {
    if n == 0 || text.len() < n {
        return Err(Error::invalid(format!("text of length {} has no {n}-grams", text.len())));
    }
    let total = text.len() - n + 1;
    let distinct: HashSet<&[TokenId]> = text.windows(n).collect();
    Ok(1.0 - distinct.len() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scheme {
    Adaptive(WatermarkParams),
    Kgw(KgwParams),
}

impl Scheme {
    pub fn config_hash(&self) -> String {
        format!("{:016x}", fnv1a64(format!("{self:?}").as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub samples_per_class: usize,
    /// Each text gets `length ± length_jitter` tokens.
    pub length: usize,
    pub length_jitter: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Paraphrase applied to watermarked texts before detection.
    pub attack: Option<ParaphraseParams>,
}

impl ExperimentSpec {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            samples_per_class: 100,
            length: 200,
            length_jitter: 30,
            seed: 0,
            scheme,
            attack: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class < 2 {
            return Err(Error::invalid("experiments need at least 2 samples per class"));
        }
        if self.length == 0 || self.length_jitter >= self.length {
            return Err(Error::invalid("text length must stay >= 1"));
        }
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        match &self.scheme {
            Scheme::Adaptive(_) => Ok(()),
            Scheme::Kgw(kp) => kp.validate(),
        }
    }
}

/// Models and texts an experiment draws on.
pub struct ExperimentInputs<'a> {
    pub generator: &'a dyn LanguageModel,
    pub measurement: &'a dyn MeasurementModel,
    /// Required by the adaptive scheme.
    pub key: Option<&'a SemanticKey>,
    /// Synonym table for the paraphrase attack; defaults to the key's embedder.
    pub attack_embedder: Option<&'a SentenceEmbedder>,
    pub evaluator: Option<&'a NGramModel>,
    /// Cycled through by sample index.
    pub prompts: &'a [Vec<TokenId>],
    /// Replaces generated human texts when present.
    pub human: Option<&'a [Vec<TokenId>]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Self {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenSummary {
    /// Mean green fraction among `W` on watermarked texts.
    pub watermarked_among_w: f64,
    pub watermarked_all_tokens: f64,
    pub human_among_w: f64,
    pub human_all_tokens: f64,
}

/// Wall-clock medians in milliseconds per text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub generation_ms: f64,
    pub detection_ms: f64,
    pub texts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples_per_class: usize,
    pub roc_auc: f64,
    pub best_f1: f64,
    pub best_f1_threshold: f64,
    pub tpr_at_1pct_fpr: f64,
    pub tpr_at_10pct_fpr: f64,
    pub mean_score_watermarked: f64,
    pub mean_score_human: f64,
    pub inconclusive: usize,
    pub awr: Option<f64>,
    pub perplexity_watermarked: Option<Summary>,
    pub perplexity_human: Option<Summary>,
    /// Mean repetition rate of watermarked texts for n = 1..=4.
    pub repetition_watermarked: Vec<f64>,
    pub repetition_human: Vec<f64>,
    pub green: Option<GreenSummary>,
    pub decryption_rate: Option<f64>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub samples: Vec<ScoredSample>,
    pub roc: Vec<(f64, f64)>,
    pub traces: Vec<GenerationTrace>,
}

struct Row {
    wm_score: Option<f64>,
    human_score: Option<f64>,
    trace: Option<GenerationTrace>,
    wm_text: Vec<TokenId>,
    human_text: Vec<TokenId>,
    wm_ppl: Option<f64>,
    human_ppl: Option<f64>,
    wm_green: Option<(Option<f64>, Option<f64>)>,
    human_green: Option<(Option<f64>, Option<f64>)>,
    gen_ms: f64,
    det_ms: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn check_inputs(spec: &ExperimentSpec, inp: &ExperimentInputs) -> Result<()> {
    let v = inp.generator.vocab_size();
    let mut sizes = vec![("measurement model", inp.measurement.vocab_size())];
    if let Some(k) = inp.key {
        sizes.push(("mapper", k.vocab_size()));
    }
    if let Some(e) = inp.evaluator {
        sizes.push(("evaluator", LanguageModel::vocab_size(e)));
    }
    if let Some(e) = inp.attack_embedder {
        sizes.push(("attack embedder", e.vocab_size()));
    }
    for (name, n) in sizes {
        if n != v {
            return Err(Error::DimensionMismatch(format!(
                "{name} has vocabulary size {n}, generator has {v}"
            )));
        }
    }
    if let Scheme::Adaptive(wp) = &spec.scheme {
        if inp.key.is_none() {
            return Err(Error::invalid("the adaptive scheme needs a semantic key"));
        }
        wp.validate(v)?;
    }
    if spec.attack.is_some() && inp.attack_embedder.or(inp.key.map(|k| &k.embedder)).is_none() {
        return Err(Error::invalid("the paraphrase attack needs an embedder"));
    }
    if let Some(h) = inp.human {
        if h.len() < spec.samples_per_class || h.iter().any(Vec::is_empty) {
            return Err(Error::invalid(format!(
                "need {} non-empty human texts, got {}",
                spec.samples_per_class,
                h.len()
            )));
        }
    }
    for t in inp.prompts.iter().chain(inp.human.unwrap_or_default()) {
        if let Some(&id) = t.iter().find(|&&id| id as usize >= v) {
            return Err(Error::TokenOutOfRange { id: id as usize, size: v });
        }
    }
    Ok(())
}

fn run_one(i: usize, spec: &ExperimentSpec, inp: &ExperimentInputs) -> Result<Row> {
    let prompt: &[TokenId] = if inp.prompts.is_empty() {
        &[]
    } else {
        &inp.prompts[i % inp.prompts.len()]
    };
    let jitter = 2 * spec.length_jitter + 1;
    let len = spec.length - spec.length_jitter + WatermarkRng::derived(spec.seed, &format!("len:{i}")).below(jitter);
    let mut wm_rng = WatermarkRng::derived(spec.seed, &format!("gen:{i}"));
    let mut human_rng = WatermarkRng::derived(spec.seed, &format!("human:{i}"));

    let t0 = Instant::now();
    let (trace, wm_text) = match &spec.scheme {
        Scheme::Adaptive(wp) => {
            let wp = WatermarkParams {
                max_tokens: len,
                ..wp.clone()
            };
            let key = inp.key.expect("checked");
            let trace = generate(inp.generator, inp.measurement, key, prompt, &wp, &mut wm_rng)?;
            let toks = trace.tokens();
            (Some(trace), toks)
        }
        Scheme::Kgw(kp) => {
            let kp = KgwParams {
                max_tokens: len,
                ..kp.clone()
            };
            (None, kgw_generate(inp.generator, prompt, &kp, &mut wm_rng)?)
        }
    };
    let gen_ms = ms(t0);

    let human_text = match inp.human {
        Some(h) => h[i].clone(),
        None => {
            let sampler = match &spec.scheme {
                Scheme::Adaptive(wp) => wp.sampler,
                Scheme::Kgw(kp) => kp.sampler,
            };
            generate_plain(inp.generator, prompt, &sampler, len, &mut human_rng)?
        }
    };

    let detected = match &spec.attack {
        Some(pp) => {
            let pp = ParaphraseParams {
                seed: derive_seed(spec.seed, &format!("attack:{i}")),
                ..pp.clone()
            };
            let emb = inp.attack_embedder.or(inp.key.map(|k| &k.embedder)).expect("checked");
            paraphrase_attack(&wm_text, &pp, emb, inp.measurement)?
        }
        None => wm_text.clone(),
    };

    let t1 = Instant::now();
    let (wm_score, det_ms, human_score, wm_green, human_green) = match &spec.scheme {
        Scheme::Adaptive(wp) => {
            let key = inp.key.expect("checked");
            let score = |r: crate::watermark::DetectionReport| match r.status {
                DetectionStatus::Ok => r.score,
                DetectionStatus::Inconclusive => None,
            };
            let w = score(detect(&detected, inp.measurement, key, wp)?);
            let det_ms = ms(t1);
            let h = score(detect(&human_text, inp.measurement, key, wp)?);
            let gw = green_fractions(&detected, inp.measurement, key, wp)?;
            let gh = green_fractions(&human_text, inp.measurement, key, wp)?;
            (
                w,
                det_ms,
                h,
                Some((gw.among_watermarked, gw.all_tokens)),
                Some((gh.among_watermarked, gh.all_tokens)),
            )
        }
        Scheme::Kgw(kp) => {
            let v = inp.generator.vocab_size();
            let w = kgw_detect(&detected, kp, v)?.score;
            let det_ms = ms(t1);
            let h = kgw_detect(&human_text, kp, v)?.score;
            (w, det_ms, h, None, None)
        }
    };

    let ppl = |t: &[TokenId]| inp.evaluator.map(|e| e.perplexity(t)).transpose();
    Ok(Row {
        wm_score,
        human_score,
        wm_ppl: ppl(&wm_text)?,
        human_ppl: ppl(&human_text)?,
        trace,
        wm_text,
        human_text,
        wm_green,
        human_green,
        gen_ms,
        det_ms,
    })
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn repetition_means(texts: &[&[TokenId]]) -> Vec<f64> {
    (1..=4)
        .map(|n| mean(texts.iter().filter_map(|t| repetition_rate(t, n).ok())))
        .collect()
}

/// Generates both classes, attacks and scores them, and reduces the metrics
/// in sample order. Everything but `timing` is a function of the spec,
/// inputs and seed.
pub fn run_experiment(spec: &ExperimentSpec, inp: &ExperimentInputs) -> Result<ExperimentOutput> {
    spec.validate()?;
    check_inputs(spec, inp)?;

    let rows: Vec<Row> = (0..spec.samples_per_class)
        .into_par_iter()
        .map(|i| run_one(i, spec, inp))
        .collect::<Result<_>>()?;

    let config_hash = spec.scheme.config_hash();
    let attacked = spec.attack.is_some();
    let mut inconclusive = 0;
    let mut samples = Vec::with_capacity(2 * rows.len());
    for (i, r) in rows.iter().enumerate() {
        for (score, label, att) in [(r.wm_score, Label::Watermarked, attacked), (r.human_score, Label::Human, false)] {
            if score.is_none() {
                inconclusive += 1;
            }
            samples.push(ScoredSample {
                score: score.unwrap_or(0.0),
                label,
                config_hash: config_hash.clone(),
                attacked: att,
                index: i,
            });
        }
    }

    let (f1, thr) = best_f1(&samples)?;
    let traces: Vec<GenerationTrace> = rows.iter().filter_map(|r| r.trace.clone()).collect();
    let ppl_w: Vec<f64> = rows.iter().filter_map(|r| r.wm_ppl).collect();
    let ppl_h: Vec<f64> = rows.iter().filter_map(|r| r.human_ppl).collect();
    let wm_texts: Vec<&[TokenId]> = rows.iter().map(|r| r.wm_text.as_slice()).collect();
    let human_texts: Vec<&[TokenId]> = rows.iter().map(|r| r.human_text.as_slice()).collect();
    let green = matches!(spec.scheme, Scheme::Adaptive(_)).then(|| GreenSummary {
        watermarked_among_w: mean(rows.iter().filter_map(|r| r.wm_green.and_then(|g| g.0))),
        watermarked_all_tokens: mean(rows.iter().filter_map(|r| r.wm_green.and_then(|g| g.1))),
        human_among_w: mean(rows.iter().filter_map(|r| r.human_green.and_then(|g| g.0))),
        human_all_tokens: mean(rows.iter().filter_map(|r| r.human_green.and_then(|g| g.1))),
    });
    let gen_ms: Vec<f64> = rows.iter().map(|r| r.gen_ms).collect();
    let det_ms: Vec<f64> = rows.iter().map(|r| r.det_ms).collect();

    let report = MetricsReport {
        samples_per_class: spec.samples_per_class,
        roc_auc: roc_auc(&samples)?,
        best_f1: f1,
        best_f1_threshold: thr,
        tpr_at_1pct_fpr: tpr_at_fpr(&samples, 0.01)?,
        tpr_at_10pct_fpr: tpr_at_fpr(&samples, 0.10)?,
        mean_score_watermarked: mean(samples.iter().filter(|s| s.label == Label::Watermarked).map(|s| s.score)),
        mean_score_human: mean(samples.iter().filter(|s| s.label == Label::Human).map(|s| s.score)),
        inconclusive,
        awr: if traces.is_empty() { None } else { Some(awr(&traces)?) },
        perplexity_watermarked: Summary::of(&ppl_w),
        perplexity_human: Summary::of(&ppl_h),
        repetition_watermarked: repetition_means(&wm_texts),
        repetition_human: repetition_means(&human_texts),
        green,
        decryption_rate: None,
        timing: Timing {
            generation_ms: Summary::of(&gen_ms).map_or(0.0, |s| s.median),
            detection_ms: Summary::of(&det_ms).map_or(0.0, |s| s.median),
            texts: rows.len(),
        },
    };
    Ok(ExperimentOutput {
        roc: roc_points(&samples)?,
        report,
        samples,
        traces,
    })
}
