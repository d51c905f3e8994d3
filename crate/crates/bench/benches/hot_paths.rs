use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tpp_core::autodiff::Tape;
use tpp_core::data::pad_batch;
use tpp_core::hawkes::{self, GenerateConfig, HawkesParams};

fn two_type_params() -> HawkesParams {
    HawkesParams::new(
        vec![0.2, 0.3],
        vec![0.3, 0.2, 0.1, 0.25],
        vec![1.0, 2.0, 1.5, 0.8],
    )
    .expect("valid params")
}

fn sample_sequences(n: usize, t_end: f64) -> Vec<tpp_core::EventSequence> {
    let cfg = GenerateConfig { t_end, num_sequences: n, seed: 7 };
    hawkes::generate(&two_type_params(), &cfg).expect("generation succeeds")
}

fn bench_loglik(c: &mut Criterion) {
    let params = two_type_params();
    let seqs = sample_sequences(1, 400.0);
    c.bench_function("hawkes_loglik_400t", |b| {
        b.iter(|| hawkes::loglik(black_box(&params), black_box(&seqs[0])).unwrap())
    });
}

fn bench_rescaled(c: &mut Criterion) {
    let params = two_type_params();
    let seqs = sample_sequences(1, 400.0);
    c.bench_function("hawkes_rescaled_intervals_400t", |b| {
        b.iter(|| hawkes::rescaled_intervals(black_box(&params), black_box(&seqs[0])).unwrap())
    });
}

fn bench_generate(c: &mut Criterion) {
    c.bench_function("hawkes_generate_10x50t", |b| b.iter(|| sample_sequences(10, 50.0)));
}

fn bench_pad_batch(c: &mut Criterion) {
    let seqs = sample_sequences(64, 50.0);
    let refs: Vec<&tpp_core::EventSequence> = seqs.iter().collect();
    c.bench_function("pad_batch_64", |b| b.iter(|| pad_batch(black_box(&refs), 2).unwrap()));
}

fn bench_autodiff_layer(c: &mut Criterion) {
    c.bench_function("autodiff_mlp_fwd_bwd_64x32", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let x = tape.constant(vec![0.1; 64 * 32], &[64, 32]).unwrap();
            let w1 = tape.leaf(vec![0.05; 32 * 32], &[32, 32]).unwrap();
            let w2 = tape.leaf(vec![-0.03; 32 * 32], &[32, 32]).unwrap();
            let h = x.matmul(&w1).unwrap().tanh();
            let out = h.matmul(&w2).unwrap().softplus();
            let loss = out.mean_all();
            loss.backward().unwrap();
            black_box(w1.grad().unwrap()[0])
        })
    });
}

criterion_group!(
    benches,
    bench_loglik,
    bench_rescaled,
    bench_generate,
    bench_pad_batch,
    bench_autodiff_layer
);
criterion_main!(benches);
