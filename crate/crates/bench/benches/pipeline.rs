use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use tempose_core::metrics::{evaluate_poses, n_mrpe, PCK_THRESHOLD_MM};
use tempose_core::refine::{refine_track, visibility_scores, RefineConfig};
use tempose_core::synth::{derive_rng, generate_ground_truth, generate_sequence, SynthConfig};
use tempose_core::tpn::{normalized_track, predict_normalized, TpnConfig, TpnModel};
use tempose_core::Pose3D;

fn small_synth() -> SynthConfig {
    SynthConfig {
        num_persons: 2,
        num_frames: 200,
        ..SynthConfig::default()
    }
}

fn generation(c: &mut Criterion) {
    let cfg = small_synth();
    c.bench_function("generate_sequence_200f_2p", |b| {
        b.iter(|| generate_sequence(&cfg, "bench", black_box(7)).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let cfg = small_synth();
    let seq = generate_sequence(&cfg, "bench", 7).unwrap();
    let model = TpnModel::new(TpnConfig::desk(), &mut derive_rng(0, 0)).unwrap();
    let (inputs, _) =
        normalized_track(&seq.tracks[0], &seq.camera, model.config.num_joints).unwrap();
    c.bench_function("tpn_predict_200f", |b| {
        b.iter(|| predict_normalized(black_box(&inputs), &model).unwrap())
    });
}

fn refinement(c: &mut Criterion) {
    let cfg = small_synth();
    let seq = generate_sequence(&cfg, "bench", 7).unwrap();
    let model = TpnModel::new(TpnConfig::desk(), &mut derive_rng(0, 0)).unwrap();
    let track = &seq.tracks[0];
    let (inputs, _) = normalized_track(track, &seq.camera, model.config.num_joints).unwrap();
    let predicted = predict_normalized(&inputs, &model).unwrap();
    let rcfg = RefineConfig::default();
    let vis = visibility_scores(track, rcfg.median_window);
    let mut group = c.benchmark_group("refine");
    group.sample_size(10);
    group.bench_function("refine_track_200f", |b| {
        b.iter(|| refine_track(black_box(&predicted), &vis, &rcfg, &model.norm).unwrap())
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let frames = generate_ground_truth(&small_synth(), 3).unwrap();
    let gt: Vec<Vec<_>> = frames.iter().map(|f| f[0].clone()).collect();
    let gt = &gt;
    let pred: Vec<_> = gt
        .iter()
        .enumerate()
        .map(|(t, pose)| {
            pose.iter()
                .map(|p| [p[0] + (t % 5) as f64, p[1] - 3.0, p[2] * 1.02])
                .collect::<Vec<_>>()
        })
        .collect();
    let roots_gt: Vec<_> = gt.iter().map(|p| p[0]).collect();
    let roots_pred: Vec<_> = pred.iter().map(|p| p[0]).collect();
    c.bench_function("n_mrpe_200", |b| {
        b.iter(|| n_mrpe(black_box(&roots_pred), &roots_gt).unwrap())
    });
    let root = small_synth().skeleton.root_index;
    let to_poses = |s: &[Vec<_>]| -> Vec<Pose3D> {
        s.iter()
            .map(|a| Pose3D::from_absolute(a, root).unwrap())
            .collect()
    };
    let (pred, gt) = (to_poses(&pred), to_poses(gt));
    c.bench_function("evaluate_poses_200", |b| {
        b.iter(|| evaluate_poses("bench", black_box(&pred), &gt, PCK_THRESHOLD_MM).unwrap())
    });
}

criterion_group!(benches, generation, network, refinement, metrics);
criterion_main!(benches);
