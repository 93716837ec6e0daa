use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::{LossBatch, LossReport, PreparedLoss};
use super::model::{forward_batch, loss_gradient, ModelContract, RecurrentNet, SeqInput};
use super::{AdamW, AlgoError, Checkpoint, RunConfig};
use crate::exec::Exec;
use crate::loader::{DatasetHandle, SamplerConfig, SequenceBatch, SequenceSampler};
use crate::render::{render_screen_into, RenderSpec};

/// Receives scalar training metrics.
pub trait MetricSink {
    fn record(&mut self, step: u64, name: &str, value: f64) -> std::io::Result<()>;
}

/// Receives periodic checkpoints.
pub trait CheckpointSink {
    fn save(&mut self, checkpoint: &Checkpoint) -> Result<(), AlgoError>;
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _: u64, _: &str, _: f64) -> std::io::Result<()> {
        Ok(())
    }
}

impl CheckpointSink for NullSink {
    fn save(&mut self, _: &Checkpoint) -> Result<(), AlgoError> {
        Ok(())
    }
}

/// One `{"step", "name", "value"}` JSON object per line.
pub struct JsonLinesSink<W: Write>(pub W);

impl<W: Write> MetricSink for JsonLinesSink<W> {
    fn record(&mut self, step: u64, name: &str, value: f64) -> std::io::Result<()> {
        let line = serde_json::json!({ "step": step, "name": name, "value": value });
        writeln!(self.0, "{line}")
    }
}

/// Writes `ckpt-<iteration>.ktck` files into a directory.
#[derive(Debug, Clone)]
pub struct DirCheckpoints {
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl DirCheckpoints {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirCheckpoints {
            dir: dir.into(),
            written: Vec::new(),
        }
    }
}

impl CheckpointSink for DirCheckpoints {
    fn save(&mut self, checkpoint: &Checkpoint) -> Result<(), AlgoError> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(format!("ckpt-{:08}.ktck", checkpoint.iteration));
        checkpoint.save(&path)?;
        self.written.push(path);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub last_report: LossReport,
}

/// Renders every observation of `batch` into `[B, L+1, 3, H, W]` doubles.
pub fn render_inputs(batch: &SequenceBatch, spec: &RenderSpec, exec: Exec) -> Vec<f64> {
    let steps = batch.obs_len();
    let len = spec.image_len();
    let mut out = vec![0.0f64; batch.batch_size * steps * len];
    exec.for_each_chunk_mut(&mut out, len, |k, img| {
        let (b, t) = (k / steps, k % steps);
        render_screen_into(batch.chars_at(b, t), batch.colors_at(b, t), batch.cursor_at(b, t), spec, img);
    });
    out
}

/// Per-row views into rendered images and previous actions.
pub(crate) fn seq_inputs<'a>(batch: &'a SequenceBatch, images: &'a [f64], img_len: usize) -> Vec<SeqInput<'a>> {
    let steps = batch.obs_len();
    (0..batch.batch_size)
        .map(|b| SeqInput {
            images: &images[b * steps * img_len..(b + 1) * steps * img_len],
            prev_actions: &batch.prev_actions[b * steps..(b + 1) * steps],
        })
        .collect()
}

fn report_metrics(sink: &mut dyn MetricSink, step: u64, r: &LossReport) -> std::io::Result<()> {
    sink.record(step, "loss/total", r.total)?;
    for (k, v) in &r.components {
        sink.record(step, &format!("loss/{k}"), *v)?;
    }
    sink.record(step, "grad_norm", r.grad_norm)?;
    if let Some(q) = r.mean_q {
        sink.record(step, "mean_q", q)?;
    }
    if let Some(e) = r.entropy {
        sink.record(step, "entropy", e)?;
    }
    Ok(())
}

/// Runs `run.train.iterations` gradient steps: sample a window batch, compute
/// the loss, take an AdamW step, then soft-update the target network.
///
/// Results depend only on the dataset, the config and its seed: gradients are
/// reduced in a fixed order whatever `exec` is.
pub fn train(
    handle: &DatasetHandle,
    run: &RunConfig,
    metrics: &mut dyn MetricSink,
    checkpoints: &mut dyn CheckpointSink,
    exec: Exec,
) -> Result<TrainResult, AlgoError> {
    run.validate()?;
    let tc = &run.train;
    let algo = tc.algorithm;
    let mut model = RecurrentNet::new(run.model.clone(), tc.seed)?;
    let mut target = algo.uses_target().then(|| model.clone());
    let mut opt = AdamW::new(
        model.params().len(),
        tc.learning_rate,
        tc.adam_beta1,
        tc.adam_beta2,
        tc.adam_eps,
        tc.weight_decay,
    );
    let sampler_cfg = SamplerConfig {
        batch_size: tc.batch_size,
        seq_len: tc.seq_len,
        seed: tc.seed,
        pad_policy: tc.pad_policy,
    };
    let mut sampler = SequenceSampler::new(handle, sampler_cfg).with_exec(exec);
    let img_len = run.model.input_len();
    let mut last = LossReport::default();

    for it in 1..=tc.iterations {
        let batch = sampler.next_batch()?;
        let images = render_inputs(&batch, &run.model.render, exec);
        let inputs = seq_inputs(&batch, &images, img_len);
        let lb = LossBatch::from_batch(&batch, tc.burn_in);
        let target_out = target.as_ref().map(|t| forward_batch(t, &inputs, exec));
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(it);
        let dropout_seeds: Option<Vec<u64>> = (run.model.dropout > 0.0)
            .then(|| (0..tc.batch_size as u64).map(|b| tc.seed.wrapping_mul(31).wrapping_add(it << 20).wrapping_add(b)).collect());

        let mut report = None;
        let (grad, _, _) = loss_gradient(&model, &inputs, dropout_seeds.as_deref(), exec, |outs| {
            let prepared = PreparedLoss::prepare(algo, outs, target_out.as_deref(), &lb, tc, &mut rng);
            let out = prepared.evaluate(outs, &lb, tc);
            report = Some(out.report);
            out.grads
        });
        let mut report = report.expect("loss closure ran");
        report.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !report.total.is_finite() || !report.grad_norm.is_finite() {
            return Err(AlgoError::NonFiniteLoss {
                iteration: it,
                snapshot: serde_json::to_string(&report).unwrap_or_default(),
            });
        }
        opt.step(model.params_mut(), &grad);
        if let Some(t) = target.as_mut() {
            super::soft_update(t.params_mut(), model.params(), tc.tau);
        }
        if tc.log_every > 0 && (it % tc.log_every == 0 || it == tc.iterations) {
            report_metrics(metrics, it, &report)?;
        }
        if tc.checkpoint_every > 0 && it % tc.checkpoint_every == 0 {
            checkpoints.save(&Checkpoint {
                iteration: it,
                run: run.clone(),
                params: model.params().to_vec(),
            })?;
        }
        last = report;
    }
    let checkpoint = Checkpoint {
        iteration: tc.iterations,
        run: run.clone(),
        params: model.params().to_vec(),
    };
    Ok(TrainResult {
        checkpoint,
        last_report: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{Algorithm, ModelConfig};
    use crate::loader::{load, LoaderMode};
    use crate::render::RenderSpec;

    fn tiny_run(algo: Algorithm) -> RunConfig {
        let mut run = RunConfig::for_algorithm(algo);
        run.train.iterations = 6;
        run.train.batch_size = 3;
        run.train.seq_len = 4;
        run.train.log_every = 2;
        run.train.checkpoint_every = 3;
        run.train.rem_heads = 3;
        run.model = ModelConfig {
            render: RenderSpec {
                glyph_width: 1,
                glyph_height: 1,
                ..RenderSpec::crop(5, 5)
            },
            encoder_dim: 6,
            num_actions: 16,
            ..ModelConfig::desk(algo, 3, 6)
        };
        run
    }

    #[test]
    fn every_algorithm_trains_and_is_deterministic() {
        let (_d, path) = crate::loader::tests::tmp_store(6, 10, 30, 5);
        let handle = load(&path, LoaderMode::InMemory).unwrap();
        for algo in Algorithm::ALL {
            let run = tiny_run(algo);
            let mut lines = Vec::new();
            let mut ck = DirCheckpoints::new(_d.path().join(algo.name()));
            let a = train(&handle, &run, &mut JsonLinesSink(&mut lines), &mut ck, Exec::Parallel).unwrap();
            let b = train(&handle, &run, &mut NullSink, &mut NullSink, Exec::Sequential).unwrap();
            assert_eq!(a.checkpoint.params, b.checkpoint.params, "{algo}");
            assert!(a.last_report.total.is_finite());
            let text = String::from_utf8(lines).unwrap();
            assert!(text.lines().count() >= 3);
            let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
            assert_eq!(first["step"], 2);
            assert_eq!(ck.written.len(), 2);
            let initial = RecurrentNet::new(run.model.clone(), run.train.seed).unwrap();
            assert_ne!(initial.params(), &a.checkpoint.params[..]);
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (_d, path) = crate::loader::tests::tmp_store(4, 10, 20, 2);
        let handle = load(&path, LoaderMode::CompressedOnRead).unwrap();
        let mut run = tiny_run(Algorithm::Bc);
        run.train.learning_rate = f64::MAX;
        run.train.iterations = 50;
        let err = train(&handle, &run, &mut NullSink, &mut NullSink, Exec::Sequential).unwrap_err();
        assert!(matches!(err, AlgoError::NonFiniteLoss { .. }), "{err}");
    }
}
