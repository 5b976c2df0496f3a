use fastdepth_core::graph::{assemble_network, build_encoder, DecoderKind, EncoderKind, NetGraph};
use fastdepth_core::schedule::{DefaultSchedules, Schedule, ScheduleSource};
use fastdepth_core::{Fill, Tensor};

fn forward_on(threads: usize, g: &NetGraph, x: &Tensor, schedules: &dyn ScheduleSource) -> Tensor {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| g.forward(x, schedules).unwrap())
}

#[test]
fn forward_is_bitwise_identical_across_thread_counts() {
    let enc = build_encoder(EncoderKind::MobileNet).unwrap();
    let mut g = assemble_network(&enc, DecoderKind::fastdepth()).unwrap();
    g.init_weights(13);
    let x = Tensor::create(g.input_shape, Fill::Uniform { seed: 5, low: 0.0, high: 1.0 });
    let schedules: [&dyn ScheduleSource; 4] = [
        &DefaultSchedules,
        &Schedule::naive(),
        &Schedule::naive_vectorized(),
        &Schedule::tiled(4, 32, false),
    ];
    for s in schedules {
        let one = forward_on(1, &g, &x, s);
        for threads in [2, 4] {
            assert_eq!(forward_on(threads, &g, &x, s), one, "{threads} threads");
        }
    }
}
