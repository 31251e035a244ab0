use grinlab::data::{attach_refusals, generate_corpus, record_sequences, refusal_sequence, CorpusConfig, Split, BOS, PAD};
use grinlab::model::{train, TrainOptions};
use grinlab::optim::{adamw_step, OptimizerState};
use grinlab::tensor::{finite_diff_grad_5pt, max_relative_error};
use grinlab::unlearn::*;
use grinlab::{Error, Model, ModelConfig, ModuleKind, ParamSet, Sequence, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        context_len: 32,
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        seed: 7,
    }
}

struct Fixture {
    model: Model,
    data: UnlearnData,
}

fn fixture() -> Fixture {
    let corpus = generate_corpus(&CorpusConfig {
        n_entities: 10,
        facts_per_entity: 2,
        forget_fraction: 0.2,
        seed: 3,
        ..CorpusConfig::default()
    })
    .unwrap();
    let forget = attach_refusals(&corpus.split(Split::Forget), 1);
    let retain = corpus.split(Split::Retain);
    let data = UnlearnData::from_records(&corpus.vocab, &forget, &retain).unwrap();
    let mut model = Model::build(small_config(corpus.vocab.len())).unwrap();
    let mut all = data.forget.clone();
    all.extend(data.retain.iter().cloned());
    let opts = TrainOptions {
        epochs: 3,
        lr: 1e-2,
        batch_size: 4,
        grad_accum: 1,
        ..TrainOptions::default()
    };
    train(&mut model, &all, &opts).unwrap();
    Fixture { model, data }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Mix exact zeros, repeats and a wide dynamic range.
            match rng.gen_range(0..10) {
                0 => 0.0,
                1 => 0.5,
                _ => rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-6..3)),
            }
        })
        .collect()
}

fn sort_percentile(values: &[f64], k: f64) -> f64 {
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let rank = (k / 100.0 * abs.len() as f64).ceil() as usize;
    abs[rank.max(1) - 1]
}

fn sort_top(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}

fn selected(mask: &SelectionMask) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask.bits[i]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn percentile_matches_sort_oracle(seed in any::<u64>(), n in 1usize..2000, k in 0.01f64..99.99) {
        let v = random_vec(&mut ChaCha8Rng::seed_from_u64(seed), n);
        prop_assert_eq!(percentile_abs(&v, k).unwrap(), sort_percentile(&v, k));
    }

    #[test]
    fn epsilon_is_positively_homogeneous(seed in any::<u64>(), n in 1usize..500, e in -8i32..8) {
        let v = random_vec(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let c = 2f64.powi(e);
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert_eq!(percentile_abs(&scaled, 5.0).unwrap(), c * percentile_abs(&v, 5.0).unwrap());
    }

    #[test]
    fn common_scaling_leaves_scores_unchanged(seed in any::<u64>(), n in 2usize..500, e in -8i32..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gf = random_vec(&mut rng, n);
        let mut gr = random_vec(&mut rng, n);
        gr[0] = 1.0;
        let c = 2f64.powi(e);
        let a = gri_scores(&gf, &gr, 5.0).unwrap();
        let sf: Vec<f64> = gf.iter().map(|x| x * c).collect();
        let sr: Vec<f64> = gr.iter().map(|x| x * c).collect();
        let b = gri_scores(&sf, &sr, 5.0).unwrap();
        prop_assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn scores_are_monotone(seed in any::<u64>(), n in 2usize..300, bump in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gf = random_vec(&mut rng, n);
        let mut gr = random_vec(&mut rng, n);
        gr[0] = 1.0;
        let base = gri_scores(&gf, &gr, 5.0).unwrap();
        let i = rng.gen_range(0..n);
        let mut up = gf.clone();
        up[i] = up[i].abs() + bump;
        let raised = gri_scores(&up, &gr, 5.0).unwrap();
        prop_assert_eq!(raised.epsilon, base.epsilon);
        prop_assert!(raised.scores[i] >= base.scores[i]);

        // Raising |G_r[i]| at a fixed ε.
        let eps = base.epsilon;
        let grown = gf[i].abs() / (gr[i].abs() + bump + eps);
        prop_assert!(grown <= base.scores[i]);
    }

    #[test]
    fn mask_file_round_trips(seed in any::<u64>(), n in 1usize..400, p in 0.01f64..1.0) {
        let scores = random_vec(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let mut mask = build_mask(&scores, p).unwrap();
        mask.seed = Some(seed);
        prop_assert_eq!(read_mask(&write_mask(&mask)).unwrap(), mask);
    }
}

#[test]
fn gri_matches_brute_force_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=10_000);
        let gf = random_vec(&mut rng, n);
        let mut gr = random_vec(&mut rng, n);
        gr[0] = 1.0;
        let k = 5.0;
        let s = gri_scores(&gf, &gr, k).unwrap();
        let mut eps = sort_percentile(&gr, k);
        if eps == 0.0 {
            eps = gr.iter().map(|x| x.abs()).filter(|x| *x > 0.0).fold(f64::INFINITY, f64::min);
        }
        assert_eq!(s.epsilon, eps);
        for i in 0..n {
            let want = gf[i].abs() / (gr[i].abs() + eps);
            assert!((s.scores[i] - want).abs() <= 1e-12 * want.max(1.0));
        }
        let m = mask_budget(0.4, n);
        assert_eq!(sort_top(&s.scores, m), selected(&build_mask(&s.scores, 0.4).unwrap()));
    }
}

#[test]
fn masks_match_sort_oracle_on_the_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.gen_range(1..=10_000);
        let scores: Vec<f64> = random_vec(&mut rng, n).iter().map(|x| x.abs()).collect();
        for p in P_GRID {
            let mask = build_mask(&scores, p).unwrap();
            let k = (p * n as f64).ceil() as usize;
            assert_eq!(mask.popcount(), k);
            assert_eq!(selected(&mask), sort_top(&scores, k));
        }
    }
}

#[test]
fn shared_gradients_give_increasing_scores() {
    let g = [0.1, 0.2, 0.4, 0.8, 1.6];
    let s = gri_scores(&g, &g, 5.0).unwrap();
    assert_eq!(s.epsilon, 0.1);
    for (i, v) in s.scores.iter().enumerate() {
        assert_eq!(*v, g[i] / (g[i] + 0.1));
    }
    assert!(s.scores.windows(2).all(|w| w[0] < w[1]));
    assert!(matches!(gri_scores(&g, &g[..4], 5.0), Err(Error::Contract(_))));
    assert!(matches!(percentile_abs(&[], 5.0), Err(Error::Contract(_))));
}

#[test]
fn noise_has_the_requested_spread_and_respects_the_mask() {
    let n = 200_000;
    let mut params = ParamSet::new();
    params
        .push("w", ModuleKind::FfnUp, Some(0), Tensor::param(vec![n], vec![0.25; n]).unwrap())
        .unwrap();
    let bits: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let mask = SelectionMask {
        bits,
        p_fraction: 0.5,
        origin: MaskOrigin::Random,
        seed: None,
    };
    for seed in 0..5 {
        let mut noisy = params.clone();
        inject_noise(&mut noisy, &mask, 0.1, seed).unwrap();
        let diffs: Vec<f64> = (0..n)
            .filter(|&i| mask.bits[i])
            .map(|i| noisy.get(i).unwrap() - 0.25)
            .collect();
        assert_eq!(diffs.len(), 100_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((0.098..=0.102).contains(&sd), "seed {seed}: sd {sd}");
        for i in (1..n).step_by(2) {
            assert_eq!(noisy.get(i).unwrap().to_bits(), 0.25f64.to_bits());
        }
    }
    let mut same = params.clone();
    inject_noise(&mut same, &mask, 0.0, 9).unwrap();
    assert!(same.bit_eq(&params));
    assert_eq!(sigma_from_variance(0.01), 0.1);
}

#[test]
fn masked_step_matches_reference_adamw() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 64;
    let init: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut params = ParamSet::new();
    params
        .push("w", ModuleKind::AttnQ, Some(0), Tensor::param(vec![n], init.clone()).unwrap())
        .unwrap();
    let full = SelectionMask {
        bits: vec![true; n],
        p_fraction: 1.0,
        origin: MaskOrigin::Full,
        seed: None,
    };
    let mut state = OptimizerState::new(n);
    let (mut theta, mut m, mut v) = (init, vec![0.0; n], vec![0.0; n]);
    let (lr, wd, b1, b2, eps) = (1e-2, 0.1, 0.9, 0.999, 1e-8);
    for t in 1..=5 {
        let grads: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        masked_step(&mut params, &grads, &full, &mut state, lr, wd).unwrap();
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grads[i] * grads[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            theta[i] -= lr * (mh / (vh.sqrt() + eps) + wd * theta[i]);
        }
        for (i, want) in theta.iter().enumerate() {
            assert!((params.get(i).unwrap() - want).abs() <= 1e-15);
        }
    }
}

#[test]
fn masked_step_leaves_unselected_coordinates_alone() {
    let n = 32;
    let mut params = ParamSet::new();
    params
        .push("w", ModuleKind::AttnV, Some(0), Tensor::param(vec![n], vec![1.0; n]).unwrap())
        .unwrap();
    let before = params.clone();
    let none = SelectionMask {
        bits: vec![false; n],
        p_fraction: 0.0,
        origin: MaskOrigin::External,
        seed: None,
    };
    let mut state = OptimizerState::new(n);
    for _ in 0..4 {
        masked_step(&mut params, &vec![1.0; n], &none, &mut state, 0.1, 0.1).unwrap();
    }
    assert!(params.bit_eq(&before));
    assert!(state.m.iter().chain(&state.v).all(|x| *x == 0.0));

    let all = SelectionMask {
        bits: vec![true; n],
        ..none
    };
    for _ in 0..2 {
        masked_step(&mut params, &vec![0.0; n], &all, &mut state, 0.1, 0.0).unwrap();
    }
    assert!(params.bit_eq(&before));
}

#[test]
fn snapshot_is_a_per_token_mean() {
    let f = fixture();
    let once = compute_grad_snapshot(&f.model, &f.data.forget, Split::Forget).unwrap();
    let mut twice = f.data.forget.clone();
    twice.extend(f.data.forget.iter().cloned());
    let doubled = compute_grad_snapshot(&f.model, &twice, Split::Forget).unwrap();
    assert_eq!(once.values.len(), f.model.params().total_count());
    assert_eq!(once.loss_kind, "answer_ce");
    for (a, b) in once.values.iter().zip(&doubled.values) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    // PAD never appears in a sequence, so its embedding row gets no gradient.
    let emb = f.model.params().entry("tok_emb").unwrap();
    let d = emb.tensor.shape()[1];
    let row = &once.values[emb.offset() + PAD * d..emb.offset() + (PAD + 1) * d];
    assert!(row.iter().all(|g| *g == 0.0));
    assert!(matches!(
        compute_grad_snapshot(&f.model, &[], Split::Retain),
        Err(Error::Contract(_))
    ));
}

#[test]
fn snapshot_matches_finite_differences_on_a_toy_model() {
    let cfg = ModelConfig {
        vocab_size: 3,
        context_len: 2,
        n_layers: 1,
        n_heads: 1,
        d_model: 2,
        d_ff: 2,
        seed: 1,
    };
    let mut model = Model::build(cfg.clone()).unwrap();
    assert!(model.params().total_count() <= 60);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (_, chunk) in model.params_mut().chunks_mut() {
        for v in chunk {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let records = vec![Sequence::new(vec![1, 2], 1).unwrap(), Sequence::new(vec![0, 1], 1).unwrap()];
    let snap = compute_grad_snapshot(&model, &records, Split::Forget).unwrap();
    let fd = finite_diff_grad_5pt(
        |p| Model::from_parts(cfg.clone(), p.clone())?.batch_loss(&records),
        model.params(),
        3e-3,
    )
    .unwrap();
    assert!(max_relative_error(&snap.values, &fd) < 1e-4);
}

#[test]
fn grad_diff_contracts() {
    let f = fixture();
    let (forget, retain) = (&f.data.forget[..3], &f.data.retain[..3]);
    let (lf, gf) = f.model.batch_loss_grad(forget).unwrap();
    let (lr_, gr) = f.model.batch_loss_grad(retain).unwrap();

    let zero = loss_grad_diff(&f.model, forget, retain, 0.0).unwrap();
    assert!((zero.value + lf).abs() <= 1e-12);

    let lambda = 0.7;
    let lv = loss_grad_diff(&f.model, forget, retain, lambda).unwrap();
    assert!((lv.value - (lambda * lr_ - lf)).abs() <= 1e-10);
    for i in 0..gf.len() {
        assert!((lv.grad[i] - (lambda * gr[i] - gf[i])).abs() <= 1e-10);
    }

    let same = loss_grad_diff(&f.model, forget, forget, 1.0).unwrap();
    assert_eq!(same.value, 0.0);
    assert!(same.grad.iter().all(|g| *g == 0.0));
    assert!(matches!(loss_grad_diff(&f.model, &[], retain, 1.0), Err(Error::Contract(_))));
}

#[test]
fn grad_diff_step_raises_the_forget_loss() {
    let f = fixture();
    let forget = &f.data.forget[..4];
    let before = f.model.batch_loss(forget).unwrap();
    let lv = loss_grad_diff(&f.model, forget, &f.data.retain[..4], 0.0).unwrap();
    let mut model = f.model.clone();
    let n = model.params().total_count();
    let mask = model_mask(&vec![1.0; n], model.params(), 0.4, MaskOrigin::Gri).unwrap();
    let mut state = OptimizerState::new(n);
    masked_step(model.params_mut(), &lv.grad, &mask, &mut state, 1e-6, 0.0).unwrap();
    assert!(model.batch_loss(forget).unwrap() > before);
}

#[test]
fn po_contracts() {
    let f = fixture();
    let refusals = f.data.refusals.as_ref().unwrap();
    let (r, retain) = (&refusals[..3], &f.data.retain[..3]);
    let (lf, gf) = f.model.batch_loss_grad(r).unwrap();
    let (lr_, gr) = f.model.batch_loss_grad(retain).unwrap();

    let pure = loss_po(&f.model, r, retain, 0.0).unwrap();
    assert_eq!(pure.value, lf);
    let lv = loss_po(&f.model, r, retain, 1.0).unwrap();
    assert_eq!(lv.forget_term, lf);
    assert!((lv.value - (lf + lr_)).abs() <= 1e-10);
    for i in 0..gf.len() {
        assert!((lv.grad[i] - (gf[i] + gr[i])).abs() <= 1e-10);
    }
}

#[test]
fn po_forget_term_vanishes_on_a_refusing_model() {
    let corpus = generate_corpus(&CorpusConfig {
        n_entities: 4,
        facts_per_entity: 1,
        forget_fraction: 0.25,
        ..CorpusConfig::default()
    })
    .unwrap();
    let forget = attach_refusals(&corpus.split(Split::Forget), 0);
    let refusals: Vec<Sequence> = forget.iter().map(|r| refusal_sequence(&corpus.vocab, r).unwrap()).collect();
    let retain = record_sequences(&corpus.vocab, &corpus.split(Split::Retain)).unwrap();
    let mut model = Model::build(small_config(corpus.vocab.len())).unwrap();
    let opts = TrainOptions {
        epochs: 400,
        lr: 1e-2,
        weight_decay: 0.0,
        batch_size: 1,
        grad_accum: 1,
        seed: 0,
    };
    train(&mut model, &refusals, &opts).unwrap();
    let lv = loss_po(&model, &refusals, &retain, 1.0).unwrap();
    assert!(lv.forget_term < 1e-3, "refusal loss {}", lv.forget_term);
    assert!(lv.retain_term > 1.0);

    let missing = corpus.split(Split::Retain);
    assert!(matches!(refusal_sequence(&corpus.vocab, &missing[0]), Err(Error::Contract(_))));
}

#[test]
fn npo_contracts() {
    let f = fixture();
    let (forget, retain) = (&f.data.forget[..4], &f.data.retain[..2]);
    let n = forget.len() as f64;
    let logp = sequence_log_probs(&f.model, forget).unwrap();

    for beta in [0.1, 0.2] {
        let lv = loss_npo(&f.model, &f.model, forget, retain, beta, 1.0).unwrap();
        assert!((lv.forget_term - 2.0 / beta * std::f64::consts::LN_2).abs() <= 1e-10);

        // A reference that is more confident by δ per record.
        let shifted: Vec<f64> = logp.iter().enumerate().map(|(i, l)| l + 0.3 * i as f64).collect();
        let (value, _) = npo_term(&f.model, forget, &shifted, beta).unwrap();
        let want: f64 = (0..forget.len())
            .map(|i| (1.0 + (-beta * 0.3 * i as f64).exp()).ln())
            .sum::<f64>()
            * 2.0
            / (beta * n);
        assert!((value - want).abs() <= 1e-10, "beta {beta}: {value} vs {want}");
    }

    // π_θ ≪ π_ref drives the term to zero.
    let confident: Vec<f64> = logp.iter().map(|l| l + 500.0).collect();
    let (tiny, _) = npo_term(&f.model, forget, &confident, 0.1).unwrap();
    assert!(tiny < 1e-10);

    // The term grows with π_θ at a fixed reference.
    let (a, _) = npo_term(&f.model, forget, &logp, 0.1).unwrap();
    let higher: Vec<f64> = logp.iter().map(|l| l - 1.0).collect();
    let (b, _) = npo_term(&f.model, forget, &higher, 0.1).unwrap();
    assert!(b > a);

    let (t, gt) = npo_term(&f.model, forget, &logp, 0.1).unwrap();
    let (r, gr) = f.model.batch_loss_grad(retain).unwrap();
    let lv = loss_npo_with_reference(&f.model, &logp, forget, retain, 0.1, 0.5).unwrap();
    assert!((lv.value - (t + 0.5 * r)).abs() <= 1e-10);
    for i in 0..gt.len() {
        assert!((lv.grad[i] - (gt[i] + 0.5 * gr[i])).abs() <= 1e-10);
    }

    let other = Model::build(small_config(40)).unwrap();
    assert!(matches!(loss_npo(&f.model, &other, forget, retain, 0.1, 1.0), Err(Error::Contract(_))));
}

#[test]
fn unlearning_runs_preserve_unmasked_parameters() {
    let f = fixture();
    for loss_kind in LossKind::ALL {
        for origin in [MaskOrigin::Gri, MaskOrigin::Random, MaskOrigin::GradMagnitude, MaskOrigin::WeightMagnitude, MaskOrigin::LastLayers] {
            let cfg = UnlearnConfig {
                loss_kind,
                origin,
                epochs: 2,
                lr: 1e-2,
                noise_sigma: 0.05,
                ..UnlearnConfig::default()
            };
            let out = run_unlearning(&f.model, &f.data, &cfg, None).unwrap();
            let mut noised = f.model.clone();
            let noise_seed = {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(2);
                rng.gen::<u64>()
            };
            inject_noise(noised.params_mut(), &out.mask, cfg.noise_sigma, noise_seed).unwrap();
            let (post, after) = (noised.params().to_flat(), out.model.params().to_flat());
            let mut moved = 0;
            for i in 0..post.len() {
                if out.mask.bits[i] {
                    moved += usize::from(after[i] != post[i]);
                } else {
                    assert_eq!(after[i].to_bits(), post[i].to_bits(), "{loss_kind} {origin} index {i}");
                    assert_eq!(after[i].to_bits(), f.model.params().get(i).unwrap().to_bits());
                }
            }
            assert!(moved > 0);
            assert_eq!(out.log.origin, origin);
            assert_eq!(out.log.epochs.len(), 2);
            assert_eq!(out.log.popcount, out.mask.popcount());
            if origin.has_exact_budget() {
                assert_eq!(out.mask.popcount(), mask_budget(0.4, post.len()));
            }
        }
    }
}

#[test]
fn full_budget_run_equals_unmasked_fine_tuning() {
    let f = fixture();
    let cfg = UnlearnConfig {
        p_fraction: 1.0,
        noise_sigma: 0.0,
        epochs: 2,
        lr: 1e-3,
        ..UnlearnConfig::default()
    };
    let out = run_unlearning(&f.model, &f.data, &cfg, None).unwrap();
    assert_eq!(out.mask.popcount(), out.mask.len());

    let order_seed = {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3);
        rng.gen::<u64>()
    };
    use rand::seq::SliceRandom;
    let refusals = f.data.refusals.as_ref().unwrap();
    let mut model = f.model.clone();
    let mut state = OptimizerState::new(model.params().total_count());
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
    let mut forget_order: Vec<usize> = (0..refusals.len()).collect();
    let mut retain_order: Vec<usize> = (0..f.data.retain.len()).collect();
    retain_order.shuffle(&mut rng);
    let mut pos = 0;
    for _ in 0..cfg.epochs {
        forget_order.shuffle(&mut rng);
        for ids in forget_order.chunks(cfg.micro_batch * cfg.grad_accum) {
            let fb: Vec<Sequence> = ids.iter().map(|&i| refusals[i].clone()).collect();
            let mut rb = Vec::new();
            while rb.len() < ids.len() {
                if pos == retain_order.len() {
                    retain_order.shuffle(&mut rng);
                    pos = 0;
                }
                rb.push(f.data.retain[retain_order[pos]].clone());
                pos += 1;
            }
            let lv = loss_po(&model, &fb, &rb, cfg.lambda).unwrap();
            adamw_step(model.params_mut(), &lv.grad, None, &mut state, cfg.lr, cfg.weight_decay).unwrap();
        }
    }
    assert!(model.params().bit_eq(out.model.params()));

    let full = run_unlearning(&f.model, &f.data, &UnlearnConfig { origin: MaskOrigin::Full, ..cfg.clone() }, None).unwrap();
    assert!(full.model.params().bit_eq(out.model.params()));
}

#[test]
fn runs_are_reproducible_and_external_masks_pass_through() {
    let f = fixture();
    let cfg = UnlearnConfig {
        epochs: 1,
        lr: 1e-3,
        origin: MaskOrigin::Random,
        ..UnlearnConfig::default()
    };
    let a = run_unlearning(&f.model, &f.data, &cfg, None).unwrap();
    let b = run_unlearning(&f.model, &f.data, &cfg, None).unwrap();
    assert!(a.model.params().bit_eq(b.model.params()));
    assert_eq!(a.mask, b.mask);

    let ext = read_mask(&write_mask(&a.mask)).unwrap();
    let c = run_unlearning(&f.model, &f.data, &cfg, Some(ext)).unwrap();
    assert_eq!(c.log.origin, MaskOrigin::External);
    assert!(c.model.params().bit_eq(a.model.params()));

    let short = SelectionMask {
        bits: vec![true; 3],
        ..a.mask.clone()
    };
    assert!(run_unlearning(&f.model, &f.data, &cfg, Some(short)).is_err());
}

#[test]
fn baseline_masks_follow_their_definitions() {
    let f = fixture();
    let params = f.model.params();
    let n = params.total_count();
    let gf = compute_grad_snapshot(&f.model, &f.data.forget, Split::Forget).unwrap();

    let r1 = baseline_mask(MaskOrigin::Random, &f.model, None, 0.4, 9).unwrap();
    let r2 = baseline_mask(MaskOrigin::Random, &f.model, None, 0.4, 9).unwrap();
    let r3 = baseline_mask(MaskOrigin::Random, &f.model, None, 0.4, 10).unwrap();
    assert_eq!(r1, r2);
    assert_ne!(r1.bits, r3.bits);
    assert_eq!(r1.popcount(), mask_budget(0.4, n));

    let abs: Vec<f64> = gf.values.iter().map(|g| g.abs()).collect();
    let grad = baseline_mask(MaskOrigin::GradMagnitude, &f.model, Some(&gf.values), 0.4, 0).unwrap();
    assert_eq!(grad.bits, model_mask(&abs, params, 0.4, MaskOrigin::GradMagnitude).unwrap().bits);
    assert!(matches!(baseline_mask(MaskOrigin::GradMagnitude, &f.model, None, 0.4, 0), Err(Error::Contract(_))));

    let full = baseline_mask(MaskOrigin::Full, &f.model, None, 0.4, 0).unwrap();
    assert_eq!(full.popcount(), n);

    let last = baseline_mask(MaskOrigin::LastLayers, &f.model, None, 0.2, 0).unwrap();
    for e in params.entries() {
        let want = e.layer == Some(1);
        assert!(last.bits[e.range()].iter().all(|b| *b == want), "{}", e.name);
    }
    assert!(matches!(baseline_mask(MaskOrigin::Gri, &f.model, None, 0.4, 0), Err(Error::Contract(_))));
    assert!(matches!("wagle".parse::<MaskOrigin>(), Err(Error::Contract(_))));

    // Special-token rows are only chosen once everything else is.
    let emb = params.entry("tok_emb").unwrap();
    let d = emb.tensor.shape()[1];
    let mut scores = vec![0.0; n];
    for row in [PAD, BOS] {
        scores[emb.offset() + row * d..emb.offset() + (row + 1) * d].fill(1e9);
    }
    let m = model_mask(&scores, params, 0.8, MaskOrigin::Gri).unwrap();
    assert_eq!(m.popcount(), mask_budget(0.8, n));
    assert!(!m.bits[emb.offset() + PAD * d] && !m.bits[emb.offset() + BOS * d]);
    assert_eq!(model_mask(&scores, params, 1.0, MaskOrigin::Gri).unwrap().popcount(), n);
}

#[test]
fn config_validation_names_fields() {
    let bad = UnlearnConfig {
        p_fraction: 1.5,
        ..UnlearnConfig::default()
    };
    match bad.validate() {
        Err(Error::Config(m)) => assert!(m.contains("unlearn.p_fraction")),
        other => panic!("{other:?}"),
    }
    let paper = UnlearnConfig {
        regime: Regime::Paper,
        lr: 1e-5,
        epochs: 5,
        noise_sigma: 0.01f64.sqrt(),
        ..UnlearnConfig::default()
    };
    assert!(paper.validate().is_ok());
    let off_grid = UnlearnConfig { noise_sigma: 0.05, ..paper.clone() };
    assert!(matches!(off_grid.validate(), Err(Error::Config(_))));
    let desk = UnlearnConfig::default();
    assert!(desk.validate().is_ok());
    assert!(matches!(UnlearnConfig { regime: Regime::Paper, ..desk }.validate(), Err(Error::Config(_))));
    assert!(matches!("sgd".parse::<LossKind>(), Err(Error::Config(_))));
}
