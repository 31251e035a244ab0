use std::time::Instant;

use grinlab::tensor::{finite_diff_grad, finite_diff_grad_5pt, max_relative_error};
use grinlab::{Graph, Model, ModelConfig, ModuleKind, ParamSet, Sequence, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(seed: u64) -> (Model, Vec<Sequence>) {
    let cfg = ModelConfig {
        vocab_size: 16,
        context_len: 8,
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        seed,
    };
    let mut model = Model::build(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, chunk) in model.params_mut().chunks_mut() {
        for v in chunk {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let batch = (0..2)
        .map(|_| {
            let len = rng.gen_range(4..=8);
            let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..16)).collect();
            Sequence::new(tokens, rng.gen_range(1..len)).unwrap()
        })
        .collect();
    (model, batch)
}

#[test]
fn transformer_gradients_match_central_differences() {
    let start = Instant::now();
    for seed in 0..20 {
        let (model, batch) = random_model(seed);
        assert!(model.params().total_count() <= 5000);
        let (_, analytic) = model.batch_loss_grad(&batch).unwrap();
        let config = model.config().clone();
        let numeric = finite_diff_grad_5pt(
            |p| Model::from_parts(config.clone(), p.clone())?.batch_loss(&batch),
            model.params(),
            3e-3,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

fn mlp_params(rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for (name, shape) in [("w1", vec![6, 8]), ("w2", vec![8, 5])] {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p.push(name, ModuleKind::FfnUp, Some(0), Tensor::param(shape, data).unwrap())
            .unwrap();
    }
    p
}

fn mlp_loss(p: &ParamSet, x: &Tensor, targets: &[Option<usize>]) -> grinlab::Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let w1 = g.leaf(&p.entries()[0].tensor);
    let w2 = g.leaf(&p.entries()[1].tensor);
    let xv = g.input(x.clone());
    let h = g.matmul(xv, w1)?;
    let h = g.gelu(h)?;
    let logits = g.matmul(h, w2)?;
    let loss = g.cross_entropy(logits, targets)?;
    let value = g.scalar(loss)?;
    let mut grads = g.backward(loss)?;
    let mut flat = grads.take(w1).unwrap();
    flat.extend(grads.take(w2).unwrap());
    Ok((value, flat))
}

#[test]
fn mlp_gradients_match_two_point_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = mlp_params(&mut rng);
        let x = Tensor::new(vec![4, 6], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let targets: Vec<Option<usize>> = (0..4).map(|_| Some(rng.gen_range(0..5))).collect();
        let (_, analytic) = mlp_loss(&params, &x, &targets).unwrap();
        let numeric = finite_diff_grad(|p| Ok(mlp_loss(p, &x, &targets)?.0), &params, 1e-5).unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}
