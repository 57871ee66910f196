use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use dsac_core::decorrelation::{decorrelate, fuse, update_from_samples};
use dsac_core::env::{Environment, NoisyChain};
use dsac_core::layer::{conv_forward, ConvGeometry, LayerKind, LayerParams};
use dsac_core::sac::{Architecture, Collector, ObsEncoding, ReplayBuffer, SacAgent, SacConfig};
use dsac_core::seed::{stream_rng, Stream};
use dsac_core::{DecorrelationKind, DecorrelationState, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = ConvGeometry::new([4, 84, 84], 32, 8, 4).unwrap();
    let params = LayerParams::<f32>::init(
        LayerKind::Conv(g),
        g.patch_dim(),
        g.out_channels,
        0.01,
        &mut rng,
    );
    let input = uniform(&mut rng, &[16, 4, 84, 84]);
    c.bench_function("conv_forward 16x4x84x84 k8 s4", |b| {
        b.iter(|| conv_forward(black_box(&params), black_box(&input)).unwrap())
    });
}

fn decorrelation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 256;
    let z = uniform(&mut rng, &[512, dim]);
    let state = DecorrelationState::<f32>::identity(dim, 1e-3, DecorrelationKind::Dense, 9.0);
    c.bench_function("decorrelate 512x256", |b| {
        b.iter(|| decorrelate(black_box(&state), black_box(&z)).unwrap())
    });
    c.bench_function("update_from_samples 512x256", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| update_from_samples(&mut s, &z).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let params = LayerParams::<f32>::init(LayerKind::Dense, dim, 512, 0.01, &mut rng);
    c.bench_function("fuse 512x256", |b| {
        b.iter(|| fuse(black_box(&params), black_box(&state)).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let env: Box<dyn Environment> =
        Box::new(NoisyChain::new(10, 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap());
    let spec = env.spec().clone();
    let config = SacConfig {
        batch_size: 32,
        initial_random_steps: 500,
        architecture: Architecture {
            vector_hidden: vec![64, 64],
            vector_dense: 128,
            ..Architecture::default()
        },
        ..SacConfig::default()
    };
    let mut agent = SacAgent::<f32>::new(
        config,
        &spec.observation_shape,
        spec.action_count,
        &mut stream_rng(0, Stream::Init),
    )
    .unwrap();
    let mut buffer = ReplayBuffer::new(
        1000,
        &spec.observation_shape,
        spec.action_count,
        ObsEncoding::Real,
    )
    .unwrap();
    let mut collector = Collector::new(env, 0);
    let mut action_rng = stream_rng(0, Stream::Action);
    for t in 0..500 {
        collector
            .step(&agent, &mut buffer, t, &mut action_rng)
            .unwrap();
    }
    let (mut replay, mut down) = (
        stream_rng(0, Stream::Replay),
        stream_rng(0, Stream::Downsample),
    );
    c.bench_function("train_step chain dsac b32", |b| {
        b.iter(|| agent.train_step(&buffer, &mut replay, &mut down).unwrap())
    });
}

criterion_group!(benches, conv, decorrelation, train_step);
criterion_main!(benches);
