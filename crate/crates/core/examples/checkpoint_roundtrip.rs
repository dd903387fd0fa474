//! Save a checkpoint, read it back and confirm the bytes and the model's
//! outputs are unchanged.

use adaf::autodiff::Graph;
use adaf::config::desk_model;
use adaf::model::Model;
use adaf::train::{Adam, Checkpoint, CheckpointMeta, TrainConfig};
use adaf::Tensor;

fn main() -> adaf::Result<()> {
    let mut cfg = desk_model();
    cfg.backbone.n_classes = 3;
    let (model, params) = Model::new::<f32>(&cfg, 7)?;
    let train = TrainConfig::default();
    let opt = Adam::new(params.tensors(), train.beta1, train.beta2, train.eps);
    let meta = CheckpointMeta {
        model: model.config(),
        train,
        classes: vec!["a".into(), "b".into(), "c".into()],
        run_label: cfg.frontend.label(),
        chunk_seconds: 1.0,
    };
    let ck = Checkpoint::from_state(&params, &opt, 0, 7, meta);
    let bytes = ck.to_bytes()?;
    let back = Checkpoint::from_bytes(&bytes)?;
    println!(
        "{} tensors, {} bytes, re-encoded identical: {}",
        ck.tensors.len(),
        bytes.len(),
        back.to_bytes()? == bytes
    );

    let (model2, params2) = back.model()?;
    let x = Tensor::<f32>::new(&[1, 40, 400], (0..16_000).map(|i| ((i as f32) * 0.01).sin()).collect())?;
    let logits = |m: &Model, p: &adaf::params::ParamStore<f32>| -> adaf::Result<Vec<f32>> {
        let g = Graph::new();
        let vars = p.bind_frozen(&g);
        let out = m.forward(&vars, g.constant(x.clone()), None)?;
        let v = out.logits.value().data().to_vec();
        Ok(v)
    };
    println!(
        "logits match after reload: {}",
        logits(&model, &params)? == logits(&model2, &params2)?
    );
    Ok(())
}
