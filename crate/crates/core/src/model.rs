//! Front end and backbone composed into one classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::backbone::{Backbone, BackboneConfig};
use crate::error::Result;
use crate::frontend::{FrontEnd, FrontEndConfig, RouterVars};
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frontend: FrontEndConfig,
    pub backbone: BackboneConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.frontend.normalized().validate()?;
        self.backbone.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub frontend: FrontEnd,
    pub backbone: Backbone,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutput<'g, F: Real> {
    /// `B × C`
    pub logits: Var<'g, F>,
    /// `B × T × C`
    pub token_logits: Var<'g, F>,
    pub router: Option<RouterVars<'g, F>>,
}

impl Model {
    /// Build the model and its freshly initialised parameters from `seed`.
    pub fn new<F: Real>(config: &ModelConfig, seed: u64) -> Result<(Model, ParamStore<F>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frontend = FrontEnd::new(&mut store, &mut rng, &config.frontend)?;
        let backbone = Backbone::new(&mut store, &mut rng, &config.backbone, frontend.config.embed_dim)?;
        Ok((Model { frontend, backbone }, store))
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            frontend: self.frontend.config.clone(),
            backbone: self.backbone.config.clone(),
        }
    }

    /// `B × T × P` patches to clip and token logits.
    pub fn forward<'g, F: Real>(
        &self,
        vars: &[Var<'g, F>],
        patches: Var<'g, F>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ModelOutput<'g, F>> {
        let fe = self.frontend.forward(vars, patches)?;
        let encoded = self.backbone.encode(vars, fe.embeddings, dropout_rng)?;
        Ok(ModelOutput {
            logits: self.backbone.classify(vars, encoded)?,
            token_logits: self.backbone.token_logits(vars, encoded)?,
            router: fe.router,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use crate::autodiff::huber_loss;
    use crate::frontend::{FrontEndKind, Pooling};
    use crate::tensor::Tensor;

    fn tiny(kind: FrontEndKind, pooling: Pooling) -> ModelConfig {
        ModelConfig {
            frontend: FrontEndConfig {
                kind,
                n_filterbanks: 2,
                pooling,
                alpha: 100.0,
                embed_dim: 4,
                hidden_width: 6,
                filters_per_bank: 4,
                kernel_length: 8,
                router_widths: vec![5],
                patch_length: 16,
            },
            backbone: BackboneConfig {
                layers: 1,
                model_dim: 4,
                heads: 2,
                ff_dim: 6,
                n_classes: 3,
                max_len: 4,
                ..BackboneConfig::default()
            },
        }
    }

    #[test]
    fn end_to_end_huber_gradcheck() {
        for (kind, pooling) in [
            (FrontEndKind::Baseline, Pooling::Max),
            (FrontEndKind::Moe, Pooling::Max),
            (FrontEndKind::BankOfFilterbanks, Pooling::Max),
            (FrontEndKind::BankOfFilterbanks, Pooling::Avg),
        ] {
            let cfg = tiny(kind, pooling);
            let mut checked = 0;
            for seed in 0..12 {
                let (model, store) = Model::new::<f64>(&cfg, seed).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
                let n = 2 * 3 * 16;
                let patches = Tensor::from_f64(
                    &[2, 3, 16],
                    &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
                )
                .unwrap();
                let target = Tensor::from_f64(&[2, 3], &[1., 0., 0., 0., 1., 1.]).unwrap();
                let report = check_gradients(store.tensors(), |g, vars| {
                    let out = model.forward(vars, g.constant(patches.clone()), None)?;
                    huber_loss(out.logits, g.constant(target.clone()), 1.0)
                })
                .unwrap();
                if report.kink_margin < 1e-4 {
                    continue;
                }
                assert!(report.passed(), "{kind:?} seed {seed}: {report:?}");
                checked += 1;
                if checked == 3 {
                    break;
                }
            }
            assert_eq!(checked, 3, "{kind:?}: too few seeds away from kinks");
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = tiny(FrontEndKind::BankOfFilterbanks, Pooling::Max);
        let (_, a) = Model::new::<f32>(&cfg, 5).unwrap();
        let (_, b) = Model::new::<f32>(&cfg, 5).unwrap();
        let (_, c) = Model::new::<f32>(&cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
