use adawm::dist::{shannon_entropy, softmax};
use adawm::rng::WatermarkRng;
use adawm::semantics::{loss, loss_and_grad, Activation, GreenList, LossBatch, LossWeights, MapperParams, RescaleBounds, SignMode};
use adawm::watermark::{awts_perturb, likelihood_ratio_term};
use adawm::{Logits, Probs, TokenId};
use ndarray::Array2;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
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

#[test]
fn softmax_matches_extended_precision() {
    for (logits, want, _) in SOFTMAX_CASES {
        let p = softmax(&Logits(logits.to_vec())).unwrap();
        for (got, want) in p.0.iter().zip(want.iter()) {
            assert!(rel(*got, *want) <= 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn entropy_matches_extended_precision() {
    for (logits, _, want) in SOFTMAX_CASES {
        let h = shannon_entropy(&softmax(&Logits(logits.to_vec())).unwrap());
        assert!(rel(h, *want) <= 1e-9, "{h} vs {want}");
    }
    let h = shannon_entropy(&Probs::uniform(1000));
    assert!((h - 1000f64.ln()).abs() <= 1e-9);
}

fn unit_rows(n: usize, dim: usize, rng: &mut WatermarkRng) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn((n, dim), || rng.next_f64() * 2.0 - 1.0);
    for mut row in m.rows_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.mapv_inplace(|x| x / norm);
    }
    m
}

#[test]
fn loss_gradient_matches_central_differences() {
    let bounds = RescaleBounds::new(0.0, 2.0, -2.0, 4.0).unwrap();
    let w = LossWeights::default();
    let sign = SignMode::Smooth(0.1);
    for seed in 0..3 {
        let mut rng = WatermarkRng::new(100 + seed);
        let params = MapperParams::random(4, 8, 6, seed);
        let batch = LossBatch {
            embeddings: unit_rows(5, 4, &mut rng),
            pairs: vec![(0, 1), (0, 2), (1, 3), (2, 4), (3, 4)],
            contrastive: vec![(0, 4), (1, 2)],
        };
        let (_, grads) = loss_and_grad(&params, Activation::Relu, &batch, &bounds, &w, sign).unwrap();
        for _ in 0..20 {
            let idx = rng.below(params.len());
            let at = |d: f64| {
                let mut p = params.clone();
                p.set(idx, params.get(idx) + d);
                loss(&p, Activation::Relu, &batch, &bounds, &w, sign).unwrap().total
            };
            // Fourth-order central stencil.
            let h = 1e-4;
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            let an = grads.get(idx);
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
            assert!(err <= 1e-4, "seed {seed} param {idx}: fd {fd} vs analytic {an}");
        }
    }
}

#[test]
fn likelihood_ratio_residual_is_normalizer_ratio() {
    let mut rng = WatermarkRng::new(2024);
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
        assert!((exact - approx - (z0 / z1).ln()).abs() <= 1e-9);
    }
}
