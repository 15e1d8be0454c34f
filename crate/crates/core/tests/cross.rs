mod common;

use common::{perturbed, random_batch, random_tensor, rng, toy_config, toy_twin};
use jtcse::cross::{
    cael_positions, cls_energy_weight, cross_context, twin_encode, twin_forward, TwinMode, TwinModel,
};
use jtcse::model::{forward, Dropout, EncoderWeights, LayerWeights, LAYER_NORM_EPS};
use jtcse::{Error, Graph, Tensor};
use proptest::prelude::*;

#[test]
fn placement_examples() {
    assert_eq!(cael_positions(12, 2).unwrap().positions, vec![2, 4, 6, 8, 10, 12]);
    assert_eq!(cael_positions(12, 5).unwrap().positions, vec![5, 10]);
    assert_eq!(cael_positions(4, 4).unwrap().positions, vec![4]);
    assert_eq!(cael_positions(3, 1).unwrap().positions, vec![1, 2, 3]);
    assert!(matches!(cael_positions(12, 0), Err(Error::Config(_))));
    assert!(matches!(cael_positions(12, 13), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn placement_size_and_idempotence(n in 1usize..40, k in 1usize..40) {
        prop_assume!(k <= n);
        let p = cael_positions(n, k).unwrap();
        prop_assert_eq!(p.len(), n / k);
        prop_assert_eq!(p.clone(), cael_positions(n, k).unwrap());
        prop_assert!(p.positions.iter().all(|&j| j % k == 0 && j <= n));
    }
}

#[test]
fn mismatched_tower_configs_are_rejected() {
    let a = EncoderWeights::init(&toy_config(), 1).unwrap();
    let mut cfg = toy_config();
    cfg.d_ffn = 8;
    let b = EncoderWeights::init(&cfg, 2).unwrap();
    assert!(matches!(TwinModel::new(a, b, 1), Err(Error::Config(_))));
}

#[test]
fn primitive_streams_ignore_the_cross_branch() {
    let model = toy_twin(3);
    let batch = random_batch(3, 7, 12, &mut rng(1));
    let (a_i, a_ii, with) = twin_forward(&model, &batch, 17, TwinMode::TRAIN).unwrap();
    let no_cross = TwinMode {
        dropout: true,
        cross: false,
    };
    let (b_i, b_ii, without) = twin_forward(&model, &batch, 17, no_cross).unwrap();
    assert!(with.is_some() && without.is_none());
    assert_eq!(a_i, b_i);
    assert_eq!(a_ii, b_ii);
}

#[test]
fn identical_towers_make_the_cross_branch_a_copy() {
    let w = EncoderWeights::init(&toy_config(), 8).unwrap();
    let model = TwinModel::new(w.clone(), w, 1).unwrap();
    let batch = random_batch(4, 8, 12, &mut rng(2));
    let mode = TwinMode {
        dropout: false,
        cross: true,
    };
    let (out_i, _, cross) = twin_forward(&model, &batch, 0, mode).unwrap();
    let cross = cross.unwrap();
    assert_eq!(cross.c_i, cross.c_ii);
    for (idx, &j) in model.placement.positions.iter().enumerate() {
        assert_eq!(cross.hidden_i[idx], out_i.layer_hidden[j - 1]);
    }
    assert_eq!(cross.c_i, out_i.cls_pool);
}

#[test]
fn inference_matches_independent_forwards() {
    let model = toy_twin(4);
    let batch = random_batch(3, 6, 12, &mut rng(3));
    let (i, ii, cross) = twin_forward(&model, &batch, 9, TwinMode::INFERENCE).unwrap();
    assert!(cross.is_none());
    assert_eq!(i, forward(&model.encoder_i, &batch, 0, false).unwrap());
    assert_eq!(ii, forward(&model.encoder_ii, &batch, 0, false).unwrap());
}

fn affine(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            let mut s = b.values()[o];
            for i in 0..din {
                s += x[r * din + i] * w.values()[i * dout + o];
            }
            out[r * dout + o] = s;
        }
    }
    out
}

fn layer_norm(x: &mut [f64], d: usize, gain: &Tensor, bias: &Tensor) {
    for row in x.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain.values()[k] + bias.values()[k];
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

/// Cross hidden state of one example, rebuilt with explicit loops from
/// the attending tower's attention and the other tower's value projection.
#[allow(clippy::too_many_arguments)]
fn cross_oracle(
    lw: &LayerWeights,
    lw_other: &LayerWeights,
    heads: usize,
    attn: &[f64],
    x_self: &[f64],
    x_other: &[f64],
    n: usize,
    d: usize,
) -> Vec<f64> {
    let hd = d / heads;
    let v = affine(x_other, n, &lw_other.wv, &lw_other.bv);
    let mut ctx = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            for c in 0..hd {
                ctx[i * d + h * hd + c] =
                    (0..n).map(|t| attn[(h * n + i) * n + t] * v[t * d + h * hd + c]).sum();
            }
        }
    }
    let mut y = affine(&ctx, n, &lw.wo, &lw.bo);
    for (a, b) in y.iter_mut().zip(x_self) {
        *a += b;
    }
    layer_norm(&mut y, d, &lw.ln1_gain, &lw.ln1_bias);
    let hidden: Vec<f64> = affine(&y, n, &lw.ffn_in_w, &lw.ffn_in_b).into_iter().map(gelu).collect();
    let mut z = affine(&hidden, n, &lw.ffn_out_w, &lw.ffn_out_b);
    for (a, b) in z.iter_mut().zip(&y) {
        *a += b;
    }
    layer_norm(&mut z, d, &lw.ln2_gain, &lw.ln2_bias);
    z
}

#[test]
fn cross_branch_matches_a_per_head_loop() {
    let model = toy_twin(12);
    let cfg = toy_config();
    let batch = random_batch(3, 8, 12, &mut rng(5));
    let mode = TwinMode {
        dropout: false,
        cross: true,
    };
    let (oi, oii, cross) = twin_forward(&model, &batch, 0, mode).unwrap();
    let cross = cross.unwrap();
    let (n, d, h) = (batch.seq_len(), cfg.d, cfg.n_heads);
    let j = 2;
    let lw_i = &model.encoder_i.layers[j - 1];
    let lw_ii = &model.encoder_ii.layers[j - 1];
    for b in 0..3 {
        let slice = |t: &Tensor| t.values()[b * n * d..][..n * d].to_vec();
        let attn = |t: &Tensor| t.values()[b * h * n * n..][..h * n * n].to_vec();
        let xi = slice(&oi.layer_hidden[j - 2]);
        let xii = slice(&oii.layer_hidden[j - 2]);
        let got_i = slice(&cross.hidden_i[0]);
        let got_ii = slice(&cross.hidden_ii[0]);
        let want_i = cross_oracle(lw_i, lw_ii, h, &attn(&oi.attention[j - 1]), &xi, &xii, n, d);
        let want_ii = cross_oracle(lw_ii, lw_i, h, &attn(&oii.attention[j - 1]), &xii, &xi, n, d);
        for (a, e) in got_i.iter().zip(&want_i).chain(got_ii.iter().zip(&want_ii)) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        assert_eq!(cross.c_i.row(b), &got_i[..d]);
    }
}

#[test]
fn cross_branch_differs_from_primitive_for_distinct_towers() {
    let w = EncoderWeights::init(&toy_config(), 2).unwrap();
    let model = TwinModel::new(w.clone(), perturbed(&w, 0.05, 3), 2).unwrap();
    let batch = random_batch(2, 6, 12, &mut rng(6));
    let mode = TwinMode {
        dropout: false,
        cross: true,
    };
    let (oi, _, cross) = twin_forward(&model, &batch, 0, mode).unwrap();
    assert_ne!(cross.unwrap().c_i, oi.cls_pool);
}

#[test]
fn cross_context_rejects_non_cael_layers() {
    let model = toy_twin(1);
    let batch = random_batch(1, 4, 12, &mut rng(7));
    let mut g = Graph::new();
    let vi = model.encoder_i.bind(&mut g, false);
    let vii = model.encoder_ii.bind(&mut g, false);
    let trace = twin_encode(
        &mut g,
        &model.placement,
        [&vi, &vii],
        &batch,
        [&mut Dropout::off(), &mut Dropout::off()],
        None,
    )
    .unwrap();
    let own = trace.tower_i.layers[0].attention;
    let other = trace.tower_ii.layers[0].value;
    let err = cross_context(&mut g, &model.placement, 1, &vi, own, other).unwrap_err();
    assert!(matches!(err, Error::Contract { .. }));
    let own = trace.tower_i.layers[1].attention;
    let other = trace.tower_ii.layers[1].value;
    assert!(cross_context(&mut g, &model.placement, 2, &vi, own, other).is_ok());
}

fn uniform_context(n: usize, d: usize, value: f64) -> (Tensor, Vec<u8>) {
    (Tensor::filled(&[1, n, d], value), vec![1; n])
}

#[test]
fn cls_energy_of_uniform_rows() {
    for n in [2usize, 5, 17] {
        let (ctx, mask) = uniform_context(n, 6, 0.37);
        let e = cls_energy_weight(&ctx, &mask).unwrap()[0];
        assert!((e - 1.0 / ((n - 1) as f64).sqrt()).abs() < 1e-12, "n = {n}: {e}");
    }
}

#[test]
fn cls_energy_ignores_padding_and_flags_degenerate_rows() {
    let mut vals = vec![1.0; 4 * 3];
    vals[9..].fill(100.0);
    let ctx = Tensor::new(vec![1, 4, 3], vals).unwrap();
    let e = cls_energy_weight(&ctx, &[1, 1, 1, 0]).unwrap()[0];
    assert!((e - 0.5f64.sqrt()).abs() < 1e-12);
    let (ctx, _) = uniform_context(1, 3, 1.0);
    assert!(matches!(cls_energy_weight(&ctx, &[1]), Err(Error::Degenerate { .. })));
}

fn rotation(d: usize, seed: u64) -> Vec<f64> {
    // Gram-Schmidt on a random matrix
    let m = random_tensor(&[d, d], &mut rng(seed));
    let mut q: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut v = m.row(i).to_vec();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= p * b;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / norm).collect());
    }
    q.concat()
}

proptest! {
    #[test]
    fn cls_energy_is_rotation_invariant(seed in 0u64..500, n in 3usize..9) {
        let d = 5;
        let ctx = random_tensor(&[2, n, d], &mut rng(seed));
        let mut mask = vec![1u8; 2 * n];
        mask[2 * n - 1] = 0;
        let q = rotation(d, seed + 1);
        let rotated: Vec<f64> = ctx
            .values()
            .chunks(d)
            .flat_map(|row| (0..d).map(|o| (0..d).map(|i| row[i] * q[i * d + o]).sum::<f64>()).collect::<Vec<_>>())
            .collect();
        let rotated = Tensor::new(vec![2, n, d], rotated).unwrap();
        let a = cls_energy_weight(&ctx, &mask).unwrap();
        let b = cls_energy_weight(&rotated, &mask).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}

