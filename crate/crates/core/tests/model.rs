mod common;

use common::{from_mat, naive_rel_attention, random_mat, to_mat, AttnParams};
use emoxl::model::{fuse_emotion, rel_attention, Chatbot, LayerNormVars, Mode, ModelConfig, RelAttnVars};
use emoxl::text::BOS;
use emoxl::{Float, Rng, Tape, Tensor};
use proptest::prelude::*;

fn bind(tape: &mut Tape, p: &AttnParams) -> RelAttnVars {
    let mut c = |m: &common::Mat| tape.constant(from_mat(m));
    RelAttnVars {
        q: c(&p.q),
        k: c(&p.k),
        v: c(&p.v),
        o: c(&p.o),
        r: c(&p.r),
        u: c(&p.u),
        v_bias: c(&p.v_bias),
        ln: LayerNormVars {
            gamma: c(&vec![p.gamma.clone()]),
            beta: c(&vec![p.beta.clone()]),
        },
    }
}

fn run_attention(h: &common::Mat, mem: &common::Mat, p: &AttnParams, heads: usize, causal: bool) -> Tensor {
    let mut tape = Tape::new();
    let vars = bind(&mut tape, p);
    let hv = tape.constant(from_mat(h));
    let mem_t = (!mem.is_empty()).then(|| from_mat(mem));
    let mut rng = Rng::new(0);
    let out = rel_attention(&mut tape, &vars, hv, mem_t.as_ref(), 8, heads, causal, &mut Mode::eval(&mut rng)).unwrap();
    tape.value(out).clone()
}

#[test]
fn attention_matches_naive_oracle() {
    let mut rng = Rng::new(2024);
    let mut worst: Float = 0.0;
    for case in 0..60 {
        let l = 1 + rng.below(8);
        let m = rng.below(9);
        let d = if case % 2 == 0 { 8 } else { 12 };
        let causal = case % 3 != 0;
        let p = AttnParams::random(&mut rng, d, 2);
        let h = random_mat(&mut rng, l, d, 1.0);
        let mem = random_mat(&mut rng, m, d, 1.0);
        let got = run_attention(&h, &mem, &p, 2, causal);
        let want = from_mat(&naive_rel_attention(&h, &mem, &p, 2, causal));
        worst = worst.max(got.max_abs_diff(&want));
    }
    assert!(worst < 1e-10, "max deviation {worst:e}");
}

#[test]
fn causal_rows_ignore_later_positions() {
    let mut rng = Rng::new(7);
    let d = 8;
    let p = AttnParams::random(&mut rng, d, 2);
    let mem = random_mat(&mut rng, 3, d, 1.0);
    let h = random_mat(&mut rng, 6, d, 1.0);
    let base = to_mat(&run_attention(&h, &mem, &p, 2, true));
    for t in 0..5 {
        let mut edited = h.clone();
        for row in edited.iter_mut().skip(t + 1) {
            for x in row.iter_mut() {
                *x = *x * -3.0 + 0.7;
            }
        }
        let out = to_mat(&run_attention(&edited, &mem, &p, 2, true));
        for i in 0..=t {
            let same = out[i].iter().zip(&base[i]).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "row {i} changed after editing rows > {t}");
        }
        assert_ne!(out[5], base[5]);
    }
}

fn tiny(mem_len: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        n_enc_layers: 2,
        n_dec_layers: 1,
        n_heads: 2,
        d_model: 8,
        d_ff: 12,
        mem_len,
        dropout: 0.0,
        max_gen_len: 8,
        max_len: 64,
        emotion_fusion: true,
    }
}

#[test]
fn decoder_logits_are_causal() {
    let model = Chatbot::new(tiny(4), 11).unwrap();
    let mut rng = Rng::new(0);
    let mut tape = Tape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let (enc, _) = model
        .encode(&mut tape, &bound, &[5, 6, 7, 3], 2, &model.empty_memory(), &mut Mode::eval(&mut rng))
        .unwrap();
    let prefix = [BOS, 4, 9, 10, 12];
    let base = model.decoder_forward(&mut tape, &bound, &prefix, enc, &mut Mode::eval(&mut rng)).unwrap();
    let base = tape.value(base).clone();
    for t in 1..prefix.len() {
        let mut edited = prefix;
        edited[t] = 15 - edited[t];
        let out = model.decoder_forward(&mut tape, &bound, &edited, enc, &mut Mode::eval(&mut rng)).unwrap();
        let out = tape.value(out);
        for row in 0..t {
            let same = out.row_slice(row).iter().zip(base.row_slice(row)).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "logits row {row} changed after editing position {t}");
        }
    }
}

#[test]
fn memory_gradient_is_exactly_zero() {
    let model = Chatbot::new(tiny(4), 5).unwrap();
    let mut rng = Rng::new(3);
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let seg1 = tape.leaf(from_mat(&random_mat(&mut rng, 5, 8, 1.0)), true);
    let seg2 = tape.leaf(from_mat(&random_mat(&mut rng, 3, 8, 1.0)), true);
    let (_, mem) = model
        .encoder_forward(&mut tape, &bound, seg1, &model.empty_memory(), &mut Mode::eval(&mut rng))
        .unwrap();
    assert_eq!(mem.rows(0), 4);
    let (out, _) = model.encoder_forward(&mut tape, &bound, seg2, &mem, &mut Mode::eval(&mut rng)).unwrap();
    let weights = tape.constant(from_mat(&random_mat(&mut rng, 3, 8, 1.0)));
    let weighted = tape.mul(out, weights).unwrap();
    let loss = tape.sum(weighted).unwrap();
    let grads = tape.backward(loss).unwrap();

    let g1 = grads.get(seg1).map(|g| g.data().to_vec()).unwrap_or_default();
    assert!(g1.iter().all(|&g| g == 0.0), "{g1:?}");
    let g2 = grads.get(seg2).expect("segment 2 gradient");
    assert!(g2.data().iter().any(|&g| g != 0.0));
}

fn segment_outputs(mem_len: usize) -> (Tensor, Tensor) {
    let model = Chatbot::new(tiny(mem_len), 8).unwrap();
    let mut rng = Rng::new(0);
    let mut tape = Tape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let mut mode = Mode::eval(&mut rng);
    let (_, mem) = model
        .encode(&mut tape, &bound, &[4, 5, 6, 3], 1, &model.empty_memory(), &mut mode)
        .unwrap();
    let (with_mem, _) = model.encode(&mut tape, &bound, &[7, 8, 3], 1, &mem, &mut mode).unwrap();
    let (alone, _) = model
        .encode(&mut tape, &bound, &[7, 8, 3], 1, &model.empty_memory(), &mut mode)
        .unwrap();
    (tape.value(with_mem).clone(), tape.value(alone).clone())
}

#[test]
fn zero_memory_length_means_no_recurrence() {
    let (with_mem, alone) = segment_outputs(0);
    assert!(with_mem.bitwise_eq(&alone));
    let (with_mem, alone) = segment_outputs(4);
    assert!(with_mem.max_abs_diff(&alone) > 1e-6);
}

fn fuse(w: &[Float], e: &[Float]) -> Vec<Float> {
    let mut tape = Tape::new();
    let wv = tape.constant(Tensor::new(vec![1, w.len()], w.to_vec()).unwrap());
    let ev = tape.constant(Tensor::new(vec![e.len()], e.to_vec()).unwrap());
    let out = fuse_emotion(&mut tape, wv, ev).unwrap();
    tape.value(out).data().to_vec()
}

fn moments(x: &[Float]) -> (Float, Float) {
    let n = x.len() as Float;
    let mean = x.iter().sum::<Float>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<Float>() / n;
    (mean, var.sqrt())
}

fn pair_strategy() -> impl Strategy<Value = (Vec<Float>, Vec<Float>)> {
    (2usize..48).prop_flat_map(|d| {
        (
            prop::collection::vec(-20.0f64..20.0, d),
            prop::collection::vec(-20.0f64..20.0, d),
        )
            .prop_map(|(w, e)| {
                (
                    w.into_iter().map(|x| x as Float).collect(),
                    e.into_iter().map(|x| x as Float).collect(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fused_rows_are_standardized((w, e) in pair_strategy()) {
        let z: Vec<Float> = w.iter().zip(&e).map(|(a, b)| a + b).collect();
        prop_assume!(moments(&z).1 >= 1e-2);
        let (mean, std) = moments(&fuse(&w, &e));
        prop_assert!(mean.abs() <= 1e-6, "mean {mean}");
        prop_assert!((std - 1.0).abs() <= 1e-3, "std {std}");
    }

    #[test]
    fn shift_moves_between_word_and_emotion((w, e) in pair_strategy(), c in -5.0f64..5.0) {
        let c = c as Float;
        let shifted_w: Vec<Float> = w.iter().map(|x| x + c).collect();
        let shifted_e: Vec<Float> = e.iter().map(|x| x + c).collect();
        let a = fuse(&shifted_w, &e);
        let b = fuse(&w, &shifted_e);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn shift_is_bitwise_on_dyadic_values(
        w in prop::collection::vec(-64i32..64, 6),
        e in prop::collection::vec(-64i32..64, 6),
        c in -64i32..64,
    ) {
        let w: Vec<Float> = w.into_iter().map(|x| x as Float / 8.0).collect();
        let e: Vec<Float> = e.into_iter().map(|x| x as Float / 8.0).collect();
        let c = c as Float / 8.0;
        let a = fuse(&w.iter().map(|x| x + c).collect::<Vec<_>>(), &e);
        let b = fuse(&w, &e.iter().map(|x| x + c).collect::<Vec<_>>());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn constant_rows_fuse_to_zero() {
    let mut rng = Rng::new(1);
    for _ in 0..100 {
        let d = 2 + rng.below(30);
        let base = (rng.normal() * 5.0) as Float;
        let e: Vec<Float> = (0..d).map(|_| (rng.normal() * 3.0) as Float).collect();
        let w: Vec<Float> = e.iter().map(|x| base - x).collect();
        let z: Vec<Float> = w.iter().zip(&e).map(|(a, b)| a + b).collect();
        if z.iter().all(|&v| v == z[0]) {
            assert!(fuse(&w, &e).iter().all(|&v| v == 0.0));
        }
    }
    assert!(fuse(&[0.25; 5], &[-1.5; 5]).iter().all(|&v| v == 0.0));
}

#[test]
fn small_spread_is_damped_by_epsilon() {
    // With eps added to the std, the output std is s / (s + eps).
    for s in [1e-3, 1e-2, 1e-1] {
        let w = [-s, s, -s, s];
        let out = fuse(&w, &[0.0; 4]);
        let (_, std) = moments(&out);
        let expect = s / (s + 1e-5);
        assert!((std - expect).abs() < 1e-9, "{s}: {std} vs {expect}");
    }
}
