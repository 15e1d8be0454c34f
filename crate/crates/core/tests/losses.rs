mod common;

use common::{objective_gradient_error, perturbed, random_batch, random_tensor, rng, toy_config, toy_twin};
use jtcse::cross::TwinModel;
use jtcse::losses::{
    alignment, icnce, ictm, info_nce_value, tmc_amended, tmc_binary, tmc_geometric,
    tmc_surface, uniformity, LossConfig, LossMask,
};
use jtcse::model::EncoderWeights;
use jtcse::train::{loss_value, StepPlan};
use jtcse::{Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
}

fn info_nce_loop(h: &Tensor, hp: &Tensor, tau: f64) -> f64 {
    let b = h.rows();
    (0..b)
        .map(|i| {
            let denom: f64 = (0..b).map(|j| (cos(h.row(i), hp.row(j)) / tau).exp()).sum();
            -((cos(h.row(i), hp.row(i)) / tau).exp() / denom).ln()
        })
        .sum::<f64>()
        / b as f64
}

#[test]
fn info_nce_matches_pairwise_loop() {
    let mut r = rng(1);
    for b in [2, 4, 8] {
        for _ in 0..5 {
            let h = random_tensor(&[b, 6], &mut r);
            let hp = random_tensor(&[b, 6], &mut r);
            let got = info_nce_value(&h, &hp, 0.05).unwrap();
            let want = info_nce_loop(&h, &hp, 0.05);
            assert!((got - want).abs() < 1e-10, "B = {b}: {got} vs {want}");
        }
    }
}

#[test]
fn info_nce_examples() {
    let mut r = rng(2);
    let h = random_tensor(&[1, 5], &mut r);
    let hp = random_tensor(&[1, 5], &mut r);
    assert_eq!(info_nce_value(&h, &hp, 0.05).unwrap(), 0.0);

    // orthogonal pair with perfect positives: log(1 + e^-20)
    let e = Tensor::identity(2);
    let v = info_nce_value(&e, &e, 0.05).unwrap();
    assert!((v - (-20f64).exp().ln_1p()).abs() < 1e-14);
    assert!((v - 2.061e-9).abs() < 1e-12);
}

proptest! {
    #[test]
    fn info_nce_is_scale_invariant(seed in 0u64..1000, b in 2usize..8, s in 0.5f64..100.0) {
        let mut r = rng(seed);
        let h = random_tensor(&[b, 4], &mut r);
        let hp = random_tensor(&[b, 4], &mut r);
        let scaled = |t: &Tensor| Tensor::new(t.shape().to_vec(), t.values().iter().map(|v| v * s).collect()).unwrap();
        let a = info_nce_value(&h, &hp, 0.05).unwrap();
        let c = info_nce_value(&scaled(&h), &scaled(&hp), 0.05).unwrap();
        prop_assert!((a - c).abs() < 1e-9);
    }

    #[test]
    fn info_nce_is_permutation_equivariant(seed in 0u64..1000, b in 2usize..8) {
        let mut r = rng(seed);
        let h = random_tensor(&[b, 4], &mut r);
        let hp = random_tensor(&[b, 4], &mut r);
        let perm: Vec<usize> = (0..b).rev().collect();
        let pick = |t: &Tensor| Tensor::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let a = info_nce_value(&h, &hp, 0.05).unwrap();
        let c = info_nce_value(&pick(&h), &pick(&hp), 0.05).unwrap();
        prop_assert!((a - c).abs() < 1e-12);
    }
}

#[test]
fn closed_form_matches_geometry_on_random_pairs() {
    let mut r = rng(3);
    for i in 0..1000 {
        let d = [2, 8, 64][i % 3];
        let h: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let scale = r.random_range(0.1..10.0);
        let hp: Vec<f64> = (0..d).map(|_| scale * r.random_range(-1.0..1.0)).collect();
        let k = norm(&hp) / norm(&h);
        let t = cos(&h, &hp).clamp(-1.0, 1.0);
        let a = tmc_geometric(&h, &hp).unwrap();
        let b = tmc_binary(k, t).unwrap();
        assert!((a - b).abs() < 1e-10, "d = {d}: {a} vs {b}");
    }
}

#[test]
fn surface_minimum_is_unique_at_unit_ratio_and_alignment() {
    let grid = tmc_surface(0.1, 5.0, 491, 201).unwrap();
    assert_eq!(grid.len(), 491 * 201);
    let best = grid
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .unwrap();
    assert!((best.k - 1.0).abs() < 1e-9 && best.t == 1.0 && best.value < 1e-12);
    assert_eq!(grid.iter().filter(|p| p.value < 1e-12).count(), 1);
    for row in grid.chunks(201) {
        assert!(row.windows(2).all(|w| w[1].value <= w[0].value));
    }
}

#[test]
fn modulus_constraint_sees_norm_but_not_common_scale() {
    let h = [1.0, 2.0, -0.5];
    let hp = [0.8, 2.1, -0.4];
    let base = tmc_geometric(&h, &hp).unwrap();
    let both: Vec<f64> = h.iter().map(|v| v * 3.0).collect();
    let both_p: Vec<f64> = hp.iter().map(|v| v * 3.0).collect();
    assert!((tmc_geometric(&both, &both_p).unwrap() - base).abs() < 1e-15);
    let one: Vec<f64> = hp.iter().map(|v| v * 3.0).collect();
    assert!((tmc_geometric(&h, &one).unwrap() - base).abs() > 0.1);
    // same direction, different norms: InfoNCE-style cosine would call this perfect
    let long: Vec<f64> = h.iter().map(|v| v * 2.0).collect();
    assert!((tmc_geometric(&h, &long).unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

fn amended_value(p: &Tensor, pp: &Tensor, ci: &Tensor, cii: &Tensor, eps: f64) -> f64 {
    let mut g = Graph::new();
    let vars = [p, pp, ci, cii].map(|t| g.constant(t.clone()));
    let v = tmc_amended(&mut g, vars[0], vars[1], vars[2], vars[3], eps).unwrap();
    g.value(v).item()
}

/// The graph form offsets the difference norm by 1e-6 so identical rows
/// score exactly zero; the loop applies the same offset.
fn amended_loop(p: &Tensor, pp: &Tensor, ci: &Tensor, cii: &Tensor, eps: f64) -> f64 {
    let tmc = |a: &[f64], b: &[f64]| {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        (norm(&diff) - 1e-6) / (norm(a) + norm(b))
    };
    (0..p.rows())
        .map(|i| -cos(ci.row(i), cii.row(i)).clamp(eps, 1.0).ln() * tmc(p.row(i), pp.row(i)))
        .sum::<f64>()
        / p.rows() as f64
}

#[test]
fn amended_modulus_examples() {
    let p = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let pp = Tensor::from_rows(&[vec![-1.0, 0.0]]).unwrap();
    let ci = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let orth = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
    // orthogonal towers hit the clamp: coefficient −log(1e-4)
    let v = amended_value(&p, &pp, &ci, &orth, 1e-4);
    assert!((v - 9.210340371976184).abs() < 1e-5, "{v}");
    assert!((v - 9.210340371976184 * (2.0 - 1e-6) / 2.0).abs() < 1e-10, "{v}");
    assert!(amended_value(&p, &p, &ci, &orth, 1e-4).abs() < 1e-12);
    // identical towers leave only the 1e-12 norm epsilon in the coefficient
    assert!(amended_value(&p, &pp, &ci, &ci, 1e-4).abs() < 1e-11);

    let mut r = rng(4);
    for _ in 0..10 {
        let [a, b, c, d] = [(); 4].map(|_| random_tensor(&[4, 5], &mut r));
        let got = amended_value(&a, &b, &c, &d, 1e-4);
        let want = amended_loop(&a, &b, &c, &d, 1e-4);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

fn ictm_value(t: &[Tensor; 6]) -> f64 {
    let mut g = Graph::new();
    let v = t.clone().map(|t| g.constant(t));
    let out = ictm(&mut g, v[0], v[1], v[2], v[3], v[4], v[5], 1e-4).unwrap();
    g.value(out).item()
}

#[test]
fn ictm_is_symmetric_and_matches_a_loop() {
    let mut r = rng(5);
    for _ in 0..10 {
        let t = [(); 6].map(|_| random_tensor(&[3, 4], &mut r));
        let [pi, pip, pii, piip, ci, cii] = t.clone();
        let swapped = [pii.clone(), piip.clone(), pi.clone(), pip.clone(), cii.clone(), ci.clone()];
        assert!((ictm_value(&t) - ictm_value(&swapped)).abs() < 1e-12);
        let want = amended_loop(&pi, &piip, &ci, &cii, 1e-4) + amended_loop(&pii, &pip, &ci, &cii, 1e-4);
        assert!((ictm_value(&t) - want).abs() < 1e-10);
    }
}

fn icnce_value(t: &[Tensor; 4], r: bool) -> f64 {
    let mut g = Graph::new();
    let v = t.clone().map(|t| g.constant(t));
    let out = icnce(&mut g, v[0], v[1], v[2], v[3], 0.05, r).unwrap();
    g.value(out).item()
}

#[test]
fn icnce_gate_picks_the_anchor_tower() {
    let mut r = rng(6);
    let t = [(); 4].map(|_| random_tensor(&[4, 6], &mut r));
    let [ci, cii, xi, xii] = t.clone();
    let fwd = info_nce_value(&ci, &cii, 0.05).unwrap() + info_nce_value(&xi, &xii, 0.05).unwrap();
    let back = info_nce_value(&cii, &ci, 0.05).unwrap() + info_nce_value(&xii, &xi, 0.05).unwrap();
    assert!((icnce_value(&t, true) - fwd).abs() < 1e-12);
    assert!((icnce_value(&t, false) - back).abs() < 1e-12);
    assert!((fwd - back).abs() > 1e-6);

    let single = [(); 4].map(|_| random_tensor(&[1, 6], &mut r));
    assert_eq!(icnce_value(&single, true), 0.0);
}

#[test]
fn total_is_the_sum_of_reported_terms() {
    let model = toy_twin(1);
    let batch = random_batch(4, 6, 12, &mut rng(7));
    let plan = StepPlan::for_step(2, 5);
    let cfg = LossConfig::default();
    let rep = loss_value(&model, &batch, &cfg, LossMask::FULL, plan).unwrap();
    assert_eq!(rep.total, rep.l_nce_i + rep.l_nce_ii + rep.l_icnce + rep.l_ictm);
    let nce = loss_value(&model, &batch, &cfg, LossMask::NCE_ONLY, plan).unwrap();
    assert_eq!((nce.l_nce_i, nce.l_nce_ii), (rep.l_nce_i, rep.l_nce_ii));
    assert_eq!((nce.l_icnce, nce.l_ictm), (0.0, 0.0));
    let none = LossMask {
        nce: false,
        icnce: false,
        ictm: false,
    };
    assert!(loss_value(&model, &batch, &cfg, none, plan).is_err());
}

#[test]
fn alignment_and_uniformity_match_double_loops() {
    let mut r = rng(8);
    for n in [2, 5, 9] {
        let h = random_tensor(&[n, 4], &mut r);
        let hp = random_tensor(&[n, 4], &mut r);
        let unit = |x: &[f64]| x.iter().map(|v| v / norm(x)).collect::<Vec<_>>();
        let sq = |a: &[f64], b: &[f64]| {
            let (a, b) = (unit(a), unit(b));
            a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
        };
        let align: f64 = (0..n).map(|i| sq(h.row(i), hp.row(i))).sum::<f64>() / n as f64;
        assert!((alignment(&h, &hp).unwrap() - align).abs() < 1e-10);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += (-2.0 * sq(h.row(i), h.row(j))).exp();
                }
            }
        }
        let unif = (acc / (n * (n - 1)) as f64).ln();
        assert!((uniformity(&h, 2.0).unwrap() - unif).abs() < 1e-10);
        assert_eq!(alignment(&h, &h).unwrap(), 0.0);
    }
}

#[test]
fn nce_only_objective_gradients_match_finite_differences() {
    let model = toy_twin(5);
    let batch = random_batch(2, 5, 12, &mut rng(9));
    let (err, n) = objective_gradient_error(&model, &batch, LossMask::NCE_ONLY, StepPlan::for_step(1, 0), 3e-4, 1e-6);
    assert!(n > 2000);
    assert!(err < 1e-4, "worst relative error {err}");
}

#[test]
fn modulus_objective_gradients_match_finite_differences() {
    // nearby towers keep the cosine coefficient off its clamp
    let w = EncoderWeights::init(&toy_config(), 2).unwrap();
    let model = TwinModel::new(w.clone(), perturbed(&w, 0.02, 4), 2).unwrap();
    let batch = random_batch(2, 5, 12, &mut rng(10));
    let mask = LossMask {
        nce: false,
        icnce: false,
        ictm: true,
    };
    let (err, _) = objective_gradient_error(&model, &batch, mask, StepPlan::for_step(1, 0), 3e-4, 1e-6);
    assert!(err < 1e-4, "worst relative error {err}");
}
