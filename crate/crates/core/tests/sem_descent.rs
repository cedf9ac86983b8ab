use rand::Rng;

use pcrobust::autodiff::{Graph, Tensor};
use pcrobust::loss;
use pcrobust::model::{record_self_attention, AttentionNodes};
use pcrobust::seed;

fn random_tensor(r: usize, c: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Attention self-entropy of one toy layer, and its gradient with respect to
/// the query and key projections.
fn sem_and_grads(f: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor) -> (f64, Tensor, Tensor) {
    let mut g = Graph::new();
    let fin = g.constant(f.clone());
    let nodes = AttentionNodes {
        w_q: g.leaf(wq.clone()),
        w_k: g.leaf(wk.clone()),
        w_v: g.constant(wv.clone()),
    };
    let (_, s) = record_self_attention(&mut g, fin, nodes).unwrap();
    let sem = loss::graph::attention_sem_loss(&mut g, &[s], &[1], 1.0).unwrap();
    let mut grads = g.backward(sem).unwrap();
    (
        g.value(sem).item().unwrap(),
        grads.take(nodes.w_q).unwrap(),
        grads.take(nodes.w_k).unwrap(),
    )
}

fn step(w: &Tensor, grad: &Tensor, lr: f64) -> Tensor {
    let data = w.data().iter().zip(grad.data()).map(|(a, b)| a - lr * b).collect();
    Tensor::new(w.shape().to_vec(), data).unwrap()
}

#[test]
fn small_gradient_step_lowers_attention_entropy() {
    for s in 0..10 {
        let mut rng = seed::rng(seed::derive(77, &[s]));
        let f = random_tensor(8, 6, &mut rng);
        let wq = random_tensor(6, 3, &mut rng);
        let wk = random_tensor(6, 3, &mut rng);
        let wv = random_tensor(6, 6, &mut rng);
        let (before, gq, gk) = sem_and_grads(&f, &wq, &wk, &wv);
        let (after, _, _) = sem_and_grads(&f, &step(&wq, &gq, 1e-3), &step(&wk, &gk, 1e-3), &wv);
        assert!(after < before, "seed {s}: {before} -> {after}");
    }
}

#[test]
fn repeated_steps_sharpen_attention() {
    let mut rng = seed::rng(5);
    let f = random_tensor(8, 6, &mut rng);
    let (mut wq, mut wk) = (random_tensor(6, 3, &mut rng), random_tensor(6, 3, &mut rng));
    let wv = random_tensor(6, 6, &mut rng);
    let (start, _, _) = sem_and_grads(&f, &wq, &wk, &wv);
    for _ in 0..200 {
        let (_, gq, gk) = sem_and_grads(&f, &wq, &wk, &wv);
        wq = step(&wq, &gq, 0.05);
        wk = step(&wk, &gk, 0.05);
    }
    let (end, _, _) = sem_and_grads(&f, &wq, &wk, &wv);
    assert!(end < 0.5 * start, "{start} -> {end}");
}
