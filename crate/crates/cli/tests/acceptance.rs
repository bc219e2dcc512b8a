use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use adawm::dist::{shannon_entropy, softmax};
use adawm::eval::{awr, MetricsReport};
use adawm::rng::{derive_seed, WatermarkRng};
use adawm::semantics::{loss, loss_and_grad, Activation, GreenList, LossBatch, LossWeights, MapperParams, RescaleBounds, SignMode};
use adawm::watermark::{awts_perturb, detect, generate, generate_plain, likelihood_ratio_term, GenerationTrace};
use adawm::{Corpus, Logits, NGramModel, NGramRole, SemanticKey, TokenId, Vocabulary, WatermarkParams};
use adawm_cli::commands::{self, heldout_prompts, load_key, load_lm, load_opening, load_vocab, split_corpus};
use adawm_cli::{RunConfig, SchemeKind};
use ndarray::Array2;
use tempfile::TempDir;

const SEEDS: [u64; 3] = [0, 1, 2];
const TEXTS: usize = 100;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2} {}: {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().write_all(line.as_bytes()).unwrap();
}

/// A full pipeline trained through the command layer under one seed.
struct World {
    _dir: TempDir,
    c: RunConfig,
    vocab: Vocabulary,
    held: Corpus,
    gen: NGramModel,
    mm: NGramModel,
    key: SemanticKey,
    opening: Vec<TokenId>,
    prompts: Vec<Vec<TokenId>>,
}

impl World {
    fn build(seed: u64) -> World {
        let dir = tempfile::tempdir().unwrap();
        let p = |f: &str| dir.path().join(f);
        let mut c = RunConfig::default();
        c.seed = seed;
        c.paths.corpus = p("corpus.txt");
        c.paths.reference_corpus = Some(p("reference.txt"));
        c.paths.out = p("out");
        c.paths.opening = Some(p("opening.txt"));
        commands::make_corpus(&c).unwrap();
        commands::train_lm(&c).unwrap();
        commands::train_mapper(&c).unwrap();

        let vocab = load_vocab(&c).unwrap();
        let (_, held) = split_corpus(&c, &vocab).unwrap();
        let stop = vocab.id(".").unwrap();
        let last = &held.documents[held.len() - 1].ids;
        let end = last.iter().position(|&t| t == stop).map_or(last.len(), |i| i + 1);
        let text = vocab.decode(&last[..end], c.tokenizer).unwrap();
        fs::write(p("opening.txt"), text).unwrap();

        World {
            gen: load_lm(&c.paths.generator(), &vocab, NGramRole::Generator).unwrap(),
            mm: load_lm(&c.paths.measurement(), &vocab, NGramRole::Measurement).unwrap(),
            key: load_key(&c, &vocab).unwrap(),
            opening: load_opening(&c, &vocab).unwrap(),
            prompts: heldout_prompts(&held, c.evaluate.prompt_tokens),
            held,
            vocab,
            c,
            _dir: dir,
        }
    }

    fn params(&self, alpha: f64) -> WatermarkParams {
        let mut c = self.c.clone();
        c.watermark.alpha = alpha;
        c.watermark_params(self.opening.clone())
    }

    fn traces(&self, wp: &WatermarkParams, label: &str) -> Vec<GenerationTrace> {
        (0..TEXTS)
            .map(|i| {
                let mut rng = WatermarkRng::derived(self.c.seed, &format!("{label}:{i}"));
                generate(&self.gen, &self.mm, &self.key, &self.prompts[i], wp, &mut rng).unwrap()
            })
            .collect()
    }

    fn evaluate(&self, edit: impl FnOnce(&mut RunConfig)) -> MetricsReport {
        let mut c = self.c.clone();
        edit(&mut c);
        commands::evaluate(&c).unwrap()
    }

    fn spoof(&self, target: SchemeKind) -> f64 {
        let mut c = self.c.clone();
        c.spoof.target = target;
        c.spoof.config.generations = 5000;
        commands::spoof(&c).unwrap().decryption_rate
    }
}

fn worlds() -> &'static [World] {
    static W: OnceLock<Vec<World>> = OnceLock::new();
    W.get_or_init(|| SEEDS.iter().map(|&s| World::build(s)).collect())
}

/// Unattacked evaluation reports at the default `alpha` and at `alpha = 0`.
fn clean_reports() -> &'static [(MetricsReport, MetricsReport)] {
    static R: OnceLock<Vec<(MetricsReport, MetricsReport)>> = OnceLock::new();
    R.get_or_init(|| {
        worlds()
            .iter()
            .map(|w| (w.evaluate(|_| {}), w.evaluate(|c| c.watermark.alpha = 0.0)))
            .collect()
    })
}

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

fn fmt(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/")
}

#[test]
fn c01_no_attack_detection() {
    let r = clean_reports();
    let awr: Vec<f64> = r.iter().map(|(a, _)| a.awr.unwrap()).collect();
    let auc: Vec<f64> = r.iter().map(|(a, _)| a.roc_auc).collect();
    let f1: Vec<f64> = r.iter().map(|(a, _)| a.best_f1).collect();
    let pass = awr.iter().all(|a| (0.5..=0.9).contains(a)) && auc.iter().all(|&a| a >= 0.99) && f1.iter().all(|&f| f >= 0.97);
    report(1, "no-attack detection", pass, &format!("awr {} auc {} f1 {}", fmt(&awr), fmt(&auc), fmt(&f1)));
    assert!(pass);
}

#[test]
fn c02_paraphrase_robustness_ordering() {
    let mut ours = Vec::new();
    let mut kgw = Vec::new();
    for w in worlds() {
        ours.push(w.evaluate(|c| c.evaluate.attack = true).roc_auc);
        kgw.push(
            w.evaluate(|c| {
                c.evaluate.attack = true;
                c.evaluate.scheme = SchemeKind::Kgw1;
            })
            .roc_auc,
        );
    }
    let pass = ours.iter().zip(&kgw).all(|(a, k)| a >= k) && ours.iter().all(|&a| a >= 0.85);
    report(2, "paraphrase robustness", pass, &format!("adaptive {} kgw1 {}", fmt(&ours), fmt(&kgw)));
    assert!(pass);
}

#[test]
fn c03_awr_monotone_in_alpha() {
    let mut detail = Vec::new();
    let mut pass = true;
    for w in worlds() {
        let a: Vec<f64> = [0.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|&alpha| awr(&w.traces(&w.params(alpha), "awr")).unwrap())
            .collect();
        pass &= a[0] == 1.0 && a.windows(2).all(|p| p[0] >= p[1]) && a[0] - a[3] >= 0.05;
        detail.push(fmt(&a));
    }
    report(3, "awr monotonicity", pass, &detail.join(" | "));
    assert!(pass);
}

#[test]
fn c04_detector_replays_gate() {
    let mut matched = Vec::new();
    for w in worlds() {
        let wp = w.params(w.c.watermark.alpha);
        let n = w
            .traces(&wp, "replay")
            .iter()
            .filter(|t| detect(&t.tokens(), &w.mm, &w.key, &wp).unwrap().positions == t.watermarked_positions())
            .count();
        matched.push(n);
    }
    let pass = matched.iter().all(|&n| n == TEXTS);
    report(4, "gate replay", pass, &format!("{matched:?} of {TEXTS}"));
    assert!(pass);
}

/// Raw mapper signs for 500 held-out sentences.
fn held_signs(w: &World) -> Vec<Vec<f64>> {
    let stop = w.vocab.id(".").unwrap();
    w.held
        .documents
        .iter()
        .flat_map(|d| d.ids.split_inclusive(|&t| t == stop))
        .filter(|s| s.len() >= 2)
        .take(500)
        .map(|s| w.key.scaling_vector(s).iter().map(|x| x.signum() * (*x != 0.0) as u8 as f64).collect())
        .collect()
}

#[test]
fn c05_mapper_balance() {
    let mut m = Vec::new();
    for w in worlds() {
        let signs = held_signs(w);
        assert_eq!(signs.len(), 500);
        let v = w.vocab.len() as f64;
        m.push(median(signs.iter().map(|s| s.iter().sum::<f64>().abs() / v).collect()));
    }
    let pass = m.iter().all(|&x| x <= 0.05);
    report(5, "mapper balance", pass, &format!("median {}", fmt(&m)));
    assert!(pass);
}

#[test]
fn c06_mapper_unbiasedness() {
    let mut m = Vec::new();
    for w in worlds() {
        let signs = held_signs(w);
        let n = signs.len() as f64;
        let per_token = (0..w.vocab.len()).map(|i| signs.iter().map(|s| s[i]).sum::<f64>().abs() / n).collect();
        m.push(median(per_token));
    }
    let pass = m.iter().all(|&x| x <= 0.1);
    report(6, "mapper unbiasedness", pass, &format!("median {}", fmt(&m)));
    assert!(pass);
}

#[test]
fn c07_plain_text_calibration() {
    let mut means = Vec::new();
    for w in worlds() {
        let wp = w.params(w.c.watermark.alpha);
        let scores: Vec<f64> = (0..200)
            .map(|i| {
                let mut rng = WatermarkRng::derived(w.c.seed, &format!("calibration:{i}"));
                let p = &w.prompts[i % w.prompts.len()];
                let text = generate_plain(&w.gen, p, &wp.sampler, 200, &mut rng).unwrap();
                detect(&text, &w.mm, &w.key, &wp).unwrap().score.expect("conclusive")
            })
            .collect();
        means.push(scores.iter().sum::<f64>() / scores.len() as f64 / wp.delta);
    }
    let pass = means.iter().all(|m| (m - 0.5).abs() <= 0.05);
    report(7, "plain-text calibration", pass, &format!("mean score / delta {}", fmt(&means)));
    assert!(pass);
}

#[test]
fn c08_green_share_among_watermarked() {
    let g: Vec<f64> = clean_reports().iter().map(|(a, _)| a.green.as_ref().unwrap().watermarked_among_w).collect();
    let pass = g.iter().all(|&x| x >= 0.65);
    report(8, "green share in W", pass, &fmt(&g));
    assert!(pass);
}

#[test]
fn c09_spoofing_ordering() {
    let mut kgw = Vec::new();
    let mut ours = Vec::new();
    for w in worlds() {
        kgw.push(w.spoof(SchemeKind::Kgw0));
        ours.push(w.spoof(SchemeKind::Adaptive));
    }
    let pass = ours.iter().zip(&kgw).all(|(a, k)| *a <= k - 0.10);
    report(9, "spoofing ordering", pass, &format!("adaptive {} kgw0 {}", fmt(&ours), fmt(&kgw)));
    assert!(pass);
}

#[test]
fn c10_text_quality_pattern() {
    let mut identical = 0;
    let mut total = 0;
    for w in worlds() {
        let mut wp = w.params(w.c.watermark.alpha);
        wp.delta = 0.0;
        for i in 0..TEXTS {
            let rng = || WatermarkRng::new(derive_seed(w.c.seed, &format!("identity:{i}")));
            let a = generate(&w.gen, &w.mm, &w.key, &w.prompts[i], &wp, &mut rng()).unwrap();
            let b = generate_plain(&w.gen, &w.prompts[i], &wp.sampler, wp.max_tokens, &mut rng()).unwrap();
            identical += (a.tokens() == b) as usize;
            total += 1;
        }
    }
    let r = clean_reports();
    let at = |f: fn(&(MetricsReport, MetricsReport)) -> &MetricsReport| {
        median(r.iter().map(|x| f(x).perplexity_watermarked.as_ref().unwrap().median).collect())
    };
    let (ppl2, ppl0) = (at(|x| &x.0), at(|x| &x.1));
    let pass = ppl2 <= ppl0 && identical == total;
    report(
        10,
        "text-quality pattern",
        pass,
        &format!("median ppl alpha=2 {ppl2:.2} alpha=0 {ppl0:.2}; delta=0 identical {identical}/{total}"),
    );
    assert!(pass);
}

// Reference values computed with mpmath at 40 significant digits.
const SOFTMAX_CASES: &[(&[f64], &[f64], f64)] = &[
    (
        &[2.0, 1.0, -1.0],
        &[0.7053845126982411583285483, 0.2594964603424191174836125, 0.03511902695933972418783922],
        0.7138657579886246754646701,
    ),
    (
        &[0.5, -3.25, 7.0, 0.0, 1e-3],
        &[
            0.001498399367218164479838127,
            0.00003523897550904165771892493,
            0.9966478020641283434065926,
            0.000908825156711825769713059,
            0.0009097344364326246861372963,
        ],
        0.02618763194296068080613569,
    ),
    (
        &[1000.0, 999.0, 990.0],
        &[0.7310343155951327691285314, 0.2689324954982852456594106, 0.00003318890658198521205798628],
        0.582559261539673863297393,
    ),
];

fn unit_rows(n: usize, dim: usize, rng: &mut WatermarkRng) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn((n, dim), || rng.next_f64() * 2.0 - 1.0);
    for mut row in m.rows_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.mapv_inplace(|x| x / norm);
    }
    m
}

fn worst_gradient_error() -> f64 {
    let bounds = RescaleBounds::new(0.0, 2.0, -2.0, 4.0).unwrap();
    let w = LossWeights::default();
    let sign = SignMode::Smooth(0.1);
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mut rng = WatermarkRng::new(100 + seed);
        let params = MapperParams::random(4, 8, 6, seed);
        let batch = LossBatch {
            embeddings: unit_rows(5, 4, &mut rng),
            pairs: vec![(0, 1), (0, 2), (1, 3), (2, 4), (3, 4)],
            contrastive: vec![(0, 4), (1, 2)],
        };
        let (_, grads) = loss_and_grad(&params, Activation::Relu, &batch, &bounds, &w, sign).unwrap();
        for idx in 0..params.len() {
            let at = |d: f64| {
                let mut p = params.clone();
                p.set(idx, params.get(idx) + d);
                loss(&p, Activation::Relu, &batch, &bounds, &w, sign).unwrap().total
            };
            // Fourth-order central stencil.
            let h = 1e-4;
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            let an = grads.get(idx);
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-7));
        }
    }
    worst
}

fn worst_softmax_entropy_error() -> f64 {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let mut worst: f64 = 0.0;
    for (logits, want, h) in SOFTMAX_CASES {
        let p = softmax(&Logits(logits.to_vec())).unwrap();
        for (got, want) in p.0.iter().zip(want.iter()) {
            worst = worst.max(rel(*got, *want));
        }
        worst = worst.max(rel(shannon_entropy(&p), *h));
    }
    worst
}

fn worst_likelihood_residual() -> f64 {
    let mut rng = WatermarkRng::new(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let l: Vec<f64> = (0..5).map(|_| rng.next_f64() * 10.0 - 5.0).collect();
        let green = GreenList::from_bools((0..5).map(|_| rng.bernoulli(0.5)));
        let delta = rng.next_f64() * 2.5;
        let k = rng.below(5);
        let logits = Logits(l.clone());
        let pert = awts_perturb(&logits, &green, delta).unwrap();
        let exact = softmax(&pert).unwrap().0[k].ln() - softmax(&logits).unwrap().0[k].ln();
        let approx = likelihood_ratio_term(l[k], delta, green.contains(k as TokenId));
        let z0: f64 = l.iter().map(|x| x.exp()).sum();
        let z1: f64 = pert.0.iter().map(|x| x.exp()).sum();
        worst = worst.max((exact - approx - (z0 / z1).ln()).abs());
    }
    worst
}

#[test]
fn c11_numerical_oracles() {
    let (g, s, l) = (worst_gradient_error(), worst_softmax_entropy_error(), worst_likelihood_residual());
    let pass = g <= 1e-4 && s <= 1e-9 && l <= 1e-9;
    report(11, "numerical oracles", pass, &format!("gradient {g:.2e} softmax/entropy {s:.2e} lr residual {l:.2e}"));
    assert!(pass);
}

fn without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn c12_evaluate_is_deterministic() {
    let w = &worlds()[0];
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| -> PathBuf {
        let mut c = w.c.clone();
        let models = c.paths.out.clone();
        c.paths.vocab = Some(models.join("vocab.txt"));
        c.paths.generator = Some(c.paths.generator());
        c.paths.measurement = Some(c.paths.measurement());
        c.paths.evaluator = Some(c.paths.evaluator());
        c.paths.mapper = Some(c.paths.mapper());
        c.paths.out = dir.path().join(name);
        c.evaluate.samples_per_class = 20;
        c.evaluate.attack = true;
        commands::evaluate(&c).unwrap();
        c.paths.out
    };
    let (a, b) = (run("a"), run("b"));
    let mut pass = without_timing(&a.join("report.json")) == without_timing(&b.join("report.json"));
    for f in ["samples.csv", "roc.csv"] {
        pass &= fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();
    }
    report(12, "end-to-end determinism", pass, "report.json, samples.csv and roc.csv compared");
    assert!(pass);
}
