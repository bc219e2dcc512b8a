mod common;

use std::sync::OnceLock;

use adawm::eval::{self, ExperimentInputs, ExperimentSpec};
use adawm::rng::WatermarkRng;
use adawm::watermark::{detect, generate, generate_plain, kgw_detect, kgw_generate, DetectionStatus, KgwScheme};
use adawm::{KgwParams, TokenId, WatermarkParams};
use common::Fixture;

fn fx() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| common::fixture(7))
}

fn params(alpha: f64, delta: f64) -> WatermarkParams {
    let mut wp = WatermarkParams::new(fx().opening.clone());
    wp.alpha = alpha;
    wp.delta = delta;
    wp.measure_threshold = 10;
    wp.max_tokens = 120;
    wp
}

#[test]
fn zero_delta_reproduces_plain_sampling() {
    let f = fx();
    let wp = params(0.0, 0.0);
    for i in 0..10 {
        let p = &f.prompts[i];
        let a = generate(&f.gen, &f.mm, &f.key, p, &wp, &mut WatermarkRng::new(i as u64)).unwrap();
        let b = generate_plain(&f.gen, p, &wp.sampler, wp.max_tokens, &mut WatermarkRng::new(i as u64)).unwrap();
        assert_eq!(a.tokens(), b);
    }
}

#[test]
fn zero_bias_kgw_reproduces_plain_sampling() {
    let f = fx();
    for scheme in [KgwScheme::Kgw0, KgwScheme::Kgw1] {
        let mut kp = KgwParams::new(scheme, 3);
        kp.delta_add = 0.0;
        let a = kgw_generate(&f.gen, &f.prompts[0], &kp, &mut WatermarkRng::new(5)).unwrap();
        let b = generate_plain(&f.gen, &f.prompts[0], &kp.sampler, kp.max_tokens, &mut WatermarkRng::new(5)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn alpha_zero_watermarks_everything() {
    let f = fx();
    let wp = params(0.0, 1.5);
    let t = generate(&f.gen, &f.mm, &f.key, &f.prompts[1], &wp, &mut WatermarkRng::new(1)).unwrap();
    assert_eq!(t.watermarked_count(), t.len());
}

#[test]
fn alpha_above_log_vocab_watermarks_nothing() {
    let f = fx();
    let mut wp = params((f.vocab.len() as f64).ln() + 0.01, 1.5);
    wp.measure_threshold = 0;
    wp.opening.clear();
    for i in 0..5 {
        let t = generate(&f.gen, &f.mm, &f.key, &f.prompts[i], &wp, &mut WatermarkRng::new(i as u64)).unwrap();
        assert_eq!(t.watermarked_count(), 0);
        let r = detect(&t.tokens(), &f.mm, &f.key, &wp).unwrap();
        assert_eq!(r.status, DetectionStatus::Inconclusive);
        assert_eq!(r.score, None);
    }
}

#[test]
fn detector_replays_the_generation_gate() {
    let f = fx();
    for (alpha, m) in [(2.0, 10), (1.0, 0), (3.0, 50)] {
        let mut wp = params(alpha, 1.5);
        wp.measure_threshold = m;
        for i in 0..20 {
            let t = generate(&f.gen, &f.mm, &f.key, &f.prompts[i], &wp, &mut WatermarkRng::new(i as u64)).unwrap();
            let r = detect(&t.tokens(), &f.mm, &f.key, &wp).unwrap();
            assert_eq!(r.positions, t.watermarked_positions());
            for (k, rec) in t.records.iter().enumerate().filter(|(_, r)| r.watermarked) {
                let j = r.positions.iter().position(|&p| p == k).unwrap();
                let green = rec.green_list.as_ref().unwrap().contains(rec.token);
                assert_eq!(r.contributions[j], if green { 1.5 } else { 0.0 });
            }
        }
    }
}

#[test]
fn gate_flag_matches_entropy_rule() {
    let f = fx();
    let wp = params(2.0, 1.5);
    let t = generate(&f.gen, &f.mm, &f.key, &f.prompts[2], &wp, &mut WatermarkRng::new(2)).unwrap();
    for (i, r) in t.records.iter().enumerate() {
        let t1 = i + 1;
        match r.entropy {
            None => assert!(t1 <= wp.measure_threshold && r.watermarked),
            Some(h) => assert_eq!(r.watermarked, h >= wp.alpha),
        }
    }
}

#[test]
fn score_bounds() {
    let f = fx();
    let wp = params(0.0, 1.5);
    let ids = |p: &dyn Fn(TokenId) -> bool| -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        for _ in 0..40 {
            let t = if prefix.len() < wp.measure_threshold {
                f.key.green_list(&wp.opening)
            } else {
                f.key.green_list(&prefix)
            };
            let tok = (0..f.vocab.len() as TokenId).find(|&x| t.contains(x) == p(x)).unwrap();
            out.push(tok);
            prefix.push(tok);
        }
        out
    };
    let all_green = ids(&|_| true);
    let all_red = ids(&|_| false);
    assert_eq!(detect(&all_green, &f.mm, &f.key, &wp).unwrap().score, Some(1.5));
    assert_eq!(detect(&all_red, &f.mm, &f.key, &wp).unwrap().score, Some(0.0));
}

#[test]
fn watermarked_scores_separate_from_plain() {
    let f = fx();
    let wp = params(2.0, 1.5);
    let (mut w, mut h) = (0.0, 0.0);
    for i in 0..40 {
        let p = &f.prompts[i];
        let t = generate(&f.gen, &f.mm, &f.key, p, &wp, &mut WatermarkRng::derived(1, &format!("w{i}"))).unwrap();
        let u = generate_plain(&f.gen, p, &wp.sampler, wp.max_tokens, &mut WatermarkRng::derived(1, &format!("h{i}"))).unwrap();
        w += detect(&t.tokens(), &f.mm, &f.key, &wp).unwrap().score.unwrap();
        h += detect(&u, &f.mm, &f.key, &wp).unwrap().score.unwrap_or(0.0);
    }
    assert!(w / 40.0 >= h / 40.0 + 0.25 * 1.5, "{} vs {}", w / 40.0, h / 40.0);
}

#[test]
fn kgw_scores_separate_from_plain() {
    let f = fx();
    for scheme in [KgwScheme::Kgw0, KgwScheme::Kgw1] {
        let kp = KgwParams::new(scheme, 11);
        let v = f.vocab.len();
        let (mut w, mut h) = (0.0, 0.0);
        for i in 0..20 {
            let t = kgw_generate(&f.gen, &f.prompts[i], &kp, &mut WatermarkRng::new(i as u64)).unwrap();
            let u = generate_plain(&f.gen, &f.prompts[i], &kp.sampler, kp.max_tokens, &mut WatermarkRng::new(100 + i as u64)).unwrap();
            w += kgw_detect(&t, &kp, v).unwrap().score.unwrap();
            h += kgw_detect(&u, &kp, v).unwrap().score.unwrap();
        }
        assert!(w > h + 2.0, "{scheme:?}: {w} vs {h}");
    }
}

fn inputs(f: &Fixture) -> ExperimentInputs<'_> {
    ExperimentInputs {
        generator: &f.gen,
        measurement: &f.mm,
        key: Some(&f.key),
        attack_embedder: None,
        evaluator: None,
        prompts: &f.prompts,
        human: None,
    }
}

#[test]
fn random_text_scores_half_delta() {
    let f = fx();
    let wp = params(0.0, 1.5);
    let mut rng = WatermarkRng::new(99);
    let n = 200;
    let total: f64 = (0..n)
        .map(|_| {
            let text: Vec<TokenId> = (0..100).map(|_| rng.below(f.vocab.len()) as TokenId).collect();
            detect(&text, &f.mm, &f.key, &wp).unwrap().score.unwrap()
        })
        .sum();
    let mean = total / n as f64 / 1.5;
    assert!((mean - 0.5).abs() <= 0.05, "{mean}");
}

#[test]
fn experiment_is_deterministic() {
    let f = fx();
    let mut spec = ExperimentSpec::new(eval::Scheme::Adaptive(params(2.0, 1.5)));
    spec.samples_per_class = 8;
    spec.length = 50;
    spec.length_jitter = 5;
    spec.attack = Some(Default::default());
    let run = || {
        let mut out = eval::run_experiment(&spec, &inputs(f)).unwrap();
        out.report.timing.generation_ms = 0.0;
        out.report.timing.detection_ms = 0.0;
        out
    };
    let (a, b) = (run(), run());
    assert_eq!(a.report, b.report);
    assert_eq!(a.samples, b.samples);
}

#[test]
fn zero_delta_experiment_has_chance_auc() {
    let f = fx();
    let mut spec = ExperimentSpec::new(eval::Scheme::Adaptive(params(2.0, 0.0)));
    spec.samples_per_class = 20;
    spec.length = 60;
    spec.length_jitter = 10;
    let r = eval::run_experiment(&spec, &inputs(f)).unwrap().report;
    assert!((r.roc_auc - 0.5).abs() <= 0.05);
}
