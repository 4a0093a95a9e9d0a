use nonsem::detector::{DetectorConfig, DetectorModel, Mode};
use nonsem::features::{build_matrix, chunk_waveform, normalize_length, PadMode, SyntheticFrontend};
use nonsem::nn::{Graph, Tensor};

#[test]
fn full_size_forward_on_trillsson_sized_input() {
    let cfg = DetectorConfig::new(1024);
    assert!(cfg.is_full_size());
    let model = DetectorModel::<f32>::new(cfg).unwrap();

    // one 6 s utterance at 200 ms -> 1024 x 30
    let wave: Vec<f32> = (0..50_000).map(|i| ((i as f32) * 0.013).sin() * 0.3).collect();
    let wave = normalize_length(&wave, PadMode::Cyclic).unwrap();
    let chunks = chunk_waveform(&wave, 200).unwrap();
    let m = build_matrix(&chunks, &SyntheticFrontend::new(1, 1024).unwrap(), 200).unwrap();
    assert_eq!((m.dim(), m.frames()), (1024, 30));

    let x = m.to_tensor().reshape([1, 1024, 30]).unwrap();
    let mut g = Graph::no_grad();
    let xv = g.constant(x.clone());
    let pooled = model.pooled(&mut g, xv).unwrap();
    assert_eq!(g.shape(pooled), &[1, 1536]);
    let logits = model.forward_eval(&mut g, xv).unwrap();
    assert_eq!(g.shape(logits), &[1, 2]);
    assert!(g.value(logits).is_finite());

    let scores = model.score_batch(x).unwrap();
    assert_eq!(scores.len(), 1);
    assert!(scores[0].is_finite());
}

#[test]
fn full_model_train_step_on_small_batch() {
    let mut model = DetectorModel::<f32>::new(DetectorConfig::new(512)).unwrap();
    let x = Tensor::new([2, 512, 20], (0..2 * 512 * 20).map(|i| ((i % 97) as f32 - 48.0) / 50.0).collect()).unwrap();
    let mut g = Graph::new();
    let xv = g.input(x);
    let logits = model.forward(&mut g, xv, Mode::Train).unwrap();
    let loss = g
        .weighted_cross_entropy(logits, &[0, 1], &[0.1, 0.9], nonsem::nn::CeReduction::WeightedMean)
        .unwrap();
    g.backward(loss, model.params_mut()).unwrap();
    assert!(model.params().iter().all(|p| p.grad.is_finite()));
}
