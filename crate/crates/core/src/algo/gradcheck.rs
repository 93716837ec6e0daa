use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::losses::{LossBatch, PreparedLoss};
use super::model::{forward_batch, loss_gradient, ModelContract, SeqInput};
use super::{Algorithm, TrainConfig};
use crate::exec::Exec;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub loss: f64,
}

/// Compares the analytic parameter gradient of `algo`'s loss with central
/// differences `(L(θ+ε) − L(θ−ε)) / 2ε`.
///
/// Targets, advantage weights and the REM mixture (drawn from `mixture_seed`)
/// are fixed at the unperturbed parameters, matching the stop-gradient
/// semantics of the losses. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
/// At most `max_params` evenly spaced coordinates are checked.
#[allow(clippy::too_many_arguments)]
pub fn grad_check<M: ModelContract>(
    algo: Algorithm,
    model: &M,
    target: Option<&M>,
    inputs: &[SeqInput<'_>],
    batch: &LossBatch,
    cfg: &TrainConfig,
    eps: f64,
    mixture_seed: u64,
    max_params: usize,
) -> GradCheckReport {
    let exec = Exec::Sequential;
    let target_out = target.map(|t| forward_batch(t, inputs, exec));
    let online0 = forward_batch(model, inputs, exec);
    let mut rng = ChaCha8Rng::seed_from_u64(mixture_seed);
    let prepared = PreparedLoss::prepare(algo, &online0, target_out.as_deref(), batch, cfg, &mut rng);
    let mut loss = 0.0;
    let (grad, _, _) = loss_gradient(model, inputs, None, exec, |outs| {
        let o = prepared.evaluate(outs, batch, cfg);
        loss = o.report.total;
        o.grads
    });
    let eval_at = |m: &M| prepared.evaluate(&forward_batch(m, inputs, exec), batch, cfg).report.total;

    let n = grad.len();
    let stride = n.div_ceil(max_params.max(1)).max(1);
    let mut probe = model.clone();
    let mut worst = (0.0f64, 0usize);
    let mut checked = 0;
    for i in (0..n).step_by(stride) {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + eps;
        let up = eval_at(&probe);
        probe.params_mut()[i] = orig - eps;
        let down = eval_at(&probe);
        probe.params_mut()[i] = orig;
        let num = (up - down) / (2.0 * eps);
        let err = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
        if err > worst.0 {
            worst = (err, i);
        }
        checked += 1;
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked,
        loss,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::algo::model::{ConvLayer, HeadSpec, ModelConfig, RecurrentNet};
    use crate::render::RenderSpec;
    use rand::Rng;

    /// Two-layer toy network with hidden size 8 and a two-step window.
    pub(crate) fn toy(algo: Algorithm, conv: bool) -> (RecurrentNet, RecurrentNet, Vec<f64>, Vec<u8>, LossBatch) {
        let cfg = ModelConfig {
            render: RenderSpec {
                glyph_width: 1,
                glyph_height: 2,
                ..RenderSpec::crop(3, 3)
            },
            conv: if conv { vec![ConvLayer { channels: 2, kernel: 2, stride: 1 }] } else { Vec::new() },
            encoder_dim: 6,
            hidden: 8,
            layers: 2,
            dropout: 0.0,
            num_actions: 5,
            heads: HeadSpec::for_algorithm(algo, 3),
            prev_action: true,
        };
        let online = RecurrentNet::new(cfg.clone(), 11).unwrap();
        let target = RecurrentNet::new(cfg.clone(), 12).unwrap();
        let (b, l) = (3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let images: Vec<f64> = (0..b * (l + 1) * cfg.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let prev: Vec<u8> = (0..b * (l + 1)).map(|_| rng.gen_range(0..5)).collect();
        let batch = LossBatch {
            batch_size: b,
            seq_len: l,
            actions: (0..b * l).map(|_| rng.gen_range(0..5)).collect(),
            rewards: (0..b * l).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            dones: (0..b * l).map(|i| if i == 3 { 1.0 } else { 0.0 }).collect(),
            mask: vec![1.0; b * l],
        };
        (online, target, images, prev, batch)
    }

    pub(crate) fn inputs<'a>(images: &'a [f64], prev: &'a [u8], b: usize, steps: usize, img: usize) -> Vec<SeqInput<'a>> {
        (0..b)
            .map(|i| SeqInput {
                images: &images[i * steps * img..(i + 1) * steps * img],
                prev_actions: &prev[i * steps..(i + 1) * steps],
            })
            .collect()
    }

    #[test]
    fn every_loss_passes_on_toy_models() {
        for algo in Algorithm::ALL {
            for conv in [false, true] {
                let (online, target, images, prev, batch) = toy(algo, conv);
                let img = online.config().input_len();
                let xs = inputs(&images, &prev, 3, 3, img);
                let mut cfg = TrainConfig::for_algorithm(algo);
                // A larger alpha makes the CQL TD term visible to the check.
                cfg.cql_alpha = 0.5;
                let r = grad_check(algo, &online, Some(&target), &xs, &batch, &cfg, 1e-5, 3, 4000);
                assert!(r.max_rel_error < 1e-4, "{algo} conv={conv}: {r:?}");
                assert!(r.loss.is_finite());
            }
        }
    }
}
