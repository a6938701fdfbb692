use splice_mfcn::datagen::{generate_sample, GenParams};
use splice_mfcn::masks::{derive_edge_label, median_freq_weights};
use splice_mfcn::model::{images_to_tensor, Model, ModelConfig, TrainBatch};
use splice_mfcn::optim::SgdSettings;

#[test]
fn single_image_loss_drops_tenfold_in_200_steps() {
    let s = generate_sample(&GenParams::default(), 11).unwrap();
    let edge = derive_edge_label(&s.surface, 1);
    let batch = TrainBatch {
        images: images_to_tensor(&[&s.image]).unwrap(),
        surface: vec![s.surface.clone()],
        edge: Some(vec![edge.clone()]),
    };
    let ws = median_freq_weights([&s.surface]).unwrap();
    let we = median_freq_weights([&edge]).unwrap();
    let mut model = Model::build(ModelConfig::default(), 3).unwrap();
    let sgd = SgdSettings {
        lr: 0.01,
        ..SgdSettings::default()
    };
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..200 {
        let r = model.train_step(&batch, ws, we, &sgd).unwrap();
        assert!((r.total - (r.surface + r.edge.unwrap())).abs() <= 1e-12);
        first.get_or_insert(r.total);
        last = r.total;
    }
    let first = first.unwrap();
    println!("loss {first:.4} -> {last:.4}");
    assert!(last < 0.1 * first, "{first} -> {last}");
}
