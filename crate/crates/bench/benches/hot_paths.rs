use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ybev_bench::{compact_model, frame};
use ybev_core::dataset::{synth_scene, SceneSpec};
use ybev_core::geometry::{iou_boxes, nms};
use ybev_core::loss::total_loss;
use ybev_core::model::batch_input;
use ybev_core::{LossConfig, Model, Tensor};

fn conv(c: &mut Criterion) {
    let x = Tensor::full(&[4, 16, 48, 48], 0.3).unwrap();
    let w = Tensor::parameter(&[32, 16, 3, 3], vec![0.01; 32 * 16 * 9]).unwrap();
    let b = Tensor::parameter(&[32], vec![0.0; 32]).unwrap();
    c.bench_function("conv2d_fwd_4x16x48x48_k3", |bch| {
        bch.iter(|| black_box(x.conv2d(&w, &b, 1, 1).unwrap()))
    });
    c.bench_function("conv2d_fwd_bwd_4x16x48x48_k3", |bch| {
        bch.iter(|| {
            w.zero_grad();
            x.conv2d(&w, &b, 1, 1).unwrap().sum().backward().unwrap();
        })
    });
}

fn train_step(c: &mut Criterion) {
    let model = Model::new(compact_model()).unwrap();
    let frames: Vec<_> = (0..4).map(|s| frame(s, 4)).collect();
    let images: Vec<Vec<f64>> = frames.iter().map(|f| f.mosaic.to_chw()).collect();
    let gts: Vec<_> = frames.iter().map(|f| f.truth.vehicles.clone()).collect();
    let input = batch_input(&images, 192, 192).unwrap();
    c.bench_function("forward_loss_backward_batch4", |bch| {
        bch.iter(|| {
            model.zero_grad();
            let d = model.forward(&input).unwrap();
            let (loss, _) = total_loss(&d, &gts, &LossConfig::default()).unwrap();
            loss.backward().unwrap();
        })
    });
    c.bench_function("predict_single_frame", |bch| {
        let one = batch_input(&images[..1], 192, 192).unwrap();
        bch.iter(|| black_box(model.predict(&one).unwrap()))
    });
}

fn postprocess(c: &mut Criterion) {
    let model = Model::new(compact_model()).unwrap();
    let f = frame(7, 6);
    let d = model
        .predict(&batch_input(&[f.mosaic.to_chw()], 192, 192).unwrap())
        .unwrap();
    let dets = d.frame_detections(0);
    c.bench_function("nms_756", |bch| bch.iter(|| black_box(nms(&dets, 0.45))));
    let (a, b) = (dets[10].bbox, dets[11].bbox);
    c.bench_function("iou_boxes", |bch| bch.iter(|| black_box(iou_boxes(&a, &b))));
    c.bench_function("synth_scene", |bch| {
        bch.iter_batched(
            || SceneSpec {
                seed: 3,
                n_vehicles: 6,
                tile_size: 64,
            },
            |s| black_box(synth_scene(&s).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, conv, train_step, postprocess);
criterion_main!(benches);
