use pan_core::config::TrainingConfig;
use pan_core::data::{generate_sample, slice_batches, Dataset, GeneratorConfig, SliceOrder};
use pan_core::models::Network;
use pan_core::training::Trainer;
use pan_core::Graph;

fn mean_bce(trainer: &Trainer, data: &Dataset) -> f64 {
    let (seg, w) = (&trainer.segmentor.net, trainer.weights());
    let mut losses = Vec::new();
    for sample in &data.train {
        for batch in slice_batches(sample, trainer.config().batch_size, SliceOrder::Sequential).unwrap() {
            let mut g = Graph::new();
            let p = seg.params().bind(&mut g, false);
            let x = g.constant(batch.images.clone());
            let out = seg.forward(&mut g, &p, x).unwrap();
            let y = g.constant(batch.masks.clone());
            let l = g.weighted_bce(out.prob_map, y, w.w_pos, w.epsilon).unwrap();
            losses.push(g.value(l).item());
        }
    }
    losses.iter().sum::<f64>() / losses.len() as f64
}

#[test]
fn one_default_epoch_lowers_pixel_loss() {
    let gen = GeneratorConfig::default();
    let samples: Vec<_> = (0..6).map(|i| generate_sample(&gen, 40 + i).unwrap()).collect();
    let data = Dataset::from_samples(samples[..5].to_vec(), samples[5..].to_vec());
    let cfg = TrainingConfig::default();
    let mut trainer = Trainer::new(&cfg, &data).unwrap();
    let before = mean_bce(&trainer, &data);
    let m = trainer.train_epoch(&data).unwrap();
    let after = mean_bce(&trainer, &data);
    assert!(after < before, "{before} -> {after}");
    assert!(m.bce.is_finite() && m.l_ds.is_finite() && m.l_dp.is_finite());
    assert!((0.0..=1.0).contains(&m.test_dsc_mean));
}
