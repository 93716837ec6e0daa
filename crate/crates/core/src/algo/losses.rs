//! Loss functions over head outputs. Each loss returns its value together with
//! the gradient w.r.t. the online model's head outputs; quantities that are
//! treated as constants (targets, advantage weights, REM mixtures) are fixed in
//! a separate preparation step.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use super::model::HeadOutputs;
use super::{Algorithm, TrainConfig};
use crate::loader::SequenceBatch;

/// Step-level training data of a `[B, L]` window.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    pub dones: Vec<f64>,
    /// 1 for steps that contribute to the loss.
    pub mask: Vec<f64>,
}

impl LossBatch {
    /// Steps before `burn_in` only warm the recurrent state and carry no loss.
    pub fn from_batch(batch: &SequenceBatch, burn_in: usize) -> Self {
        let l = batch.seq_len;
        LossBatch {
            batch_size: batch.batch_size,
            seq_len: l,
            actions: batch.actions.clone(),
            rewards: batch.rewards.iter().map(|&r| r as f64).collect(),
            dones: batch.dones.iter().map(|&d| d as f64).collect(),
            mask: batch
                .mask
                .iter()
                .enumerate()
                .map(|(i, &m)| if i % l >= burn_in { m as f64 } else { 0.0 })
                .collect(),
        }
    }

    fn idx(&self, b: usize, t: usize) -> usize {
        b * self.seq_len + t
    }

    fn weight_sum(&self) -> f64 {
        self.mask.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    /// Named parts: `td`, `penalty`, `policy`, `value`.
    pub components: BTreeMap<&'static str, f64>,
    /// L2 norm of the parameter gradient; filled in by the trainer.
    pub grad_norm: f64,
    /// Mean Q(s, a_data), when the model has Q heads.
    pub mean_q: Option<f64>,
    /// Mean policy entropy, when the model has a policy head.
    pub entropy: Option<f64>,
}

impl LossReport {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub report: LossReport,
    /// Gradient of `report.total` w.r.t. each sequence's head outputs.
    pub grads: Vec<HeadOutputs>,
}

pub fn huber(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.5 * u * u
    } else {
        u.abs() - 0.5
    }
}

fn huber_grad(u: f64) -> f64 {
    u.clamp(-1.0, 1.0)
}

pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = logsumexp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

/// Asymmetric squared loss `|τ − 1{u<0}|·u²`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

/// Advantage weight `min(exp(A / temperature), clip)`.
pub fn advantage_weight(adv: f64, temperature: f64, clip: f64) -> f64 {
    (adv / temperature).exp().min(clip)
}

/// How the successor state is valued in a TD target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapRule {
    /// `max_a Q(s', a)` (mixed over heads when weights are given).
    MaxQ,
    /// `V(s')`
    StateValue,
    /// `Σ_a π(a|s') Q(s', a)` with π from a separate set of outputs.
    ExpectedQ,
}

/// Successor value for every `(b, t)` of the window, read from step `t + 1`.
pub fn bootstrap_values(
    target: &[HeadOutputs],
    seq_len: usize,
    rule: BootstrapRule,
    policy: Option<&[HeadOutputs]>,
    mixture: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(target.len() * seq_len);
    for (b, tgt) in target.iter().enumerate() {
        for t in 0..seq_len {
            let s = t + 1;
            out.push(match rule {
                BootstrapRule::MaxQ => mixed_q(tgt, s, mixture).into_iter().fold(f64::NEG_INFINITY, f64::max),
                BootstrapRule::StateValue => tgt.value[s],
                BootstrapRule::ExpectedQ => {
                    let pi = softmax(policy.expect("expected-Q bootstrap needs policy outputs")[b].logits(s));
                    pi.iter().zip(tgt.q_head(s, 0)).map(|(p, q)| p * q).sum()
                }
            });
        }
    }
    out
}

/// `y = clip(r) + γ·(1 − done)·bootstrap`, per `(b, t)`.
pub fn td_targets(batch: &LossBatch, bootstrap: &[f64], gamma: f64, clip: (f64, f64)) -> Vec<f64> {
    batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(bootstrap)
        .map(|((r, d), v)| r.clamp(clip.0, clip.1) + gamma * (1.0 - d) * v)
        .collect()
}

/// Mixture weights on the simplex: K uniform draws, normalized.
pub fn rem_mixture<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|v| *v /= s);
    } else {
        w.iter_mut().for_each(|v| *v = 1.0 / k as f64);
    }
    w
}

fn mixed_q(out: &HeadOutputs, t: usize, mixture: Option<&[f64]>) -> Vec<f64> {
    match mixture {
        None => out.q_head(t, 0).to_vec(),
        Some(w) => {
            let mut q = vec![0.0; out.num_actions];
            for (k, wk) in w.iter().enumerate() {
                for (a, v) in q.iter_mut().zip(out.q_head(t, k)) {
                    *a += wk * v;
                }
            }
            q
        }
    }
}

/// Detached quantities a loss needs, fixed before differentiation.
#[derive(Debug, Clone, PartialEq)]
enum Aux {
    Bc,
    Cql { y: Vec<f64> },
    Iql { q_target_a: Vec<f64>, y: Vec<f64>, w: Vec<f64> },
    Awac { y: Vec<f64>, w: Vec<f64> },
    Rem { mixture: Vec<f64>, y: Vec<f64> },
}

/// A loss with its constants bound, so it can be evaluated at any parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedLoss {
    pub algorithm: Algorithm,
    aux: Aux,
}

impl PreparedLoss {
    /// `target` is required for every algorithm except BC. `rng` is only used
    /// by REM to draw the mixture.
    pub fn prepare<R: Rng>(
        algorithm: Algorithm,
        online: &[HeadOutputs],
        target: Option<&[HeadOutputs]>,
        batch: &LossBatch,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Self {
        let l = batch.seq_len;
        let tgt = || target.expect("this loss needs target-network outputs");
        let clip = cfg.reward_clip;
        let aux = match algorithm {
            Algorithm::Bc => Aux::Bc,
            Algorithm::Cql => {
                let boot = bootstrap_values(tgt(), l, BootstrapRule::MaxQ, None, None);
                Aux::Cql { y: td_targets(batch, &boot, cfg.gamma, clip) }
            }
            Algorithm::Rem => {
                let k = tgt()[0].q_heads;
                let mixture = rem_mixture(k, rng);
                Self::rem_with_mixture(tgt(), batch, cfg, mixture).aux
            }
            Algorithm::Iql => {
                let boot = bootstrap_values(tgt(), l, BootstrapRule::StateValue, None, None);
                let y = td_targets(batch, &boot, cfg.gamma, clip);
                let mut q_target_a = Vec::new();
                let mut w = Vec::new();
                for (b, (on, tg)) in online.iter().zip(tgt()).enumerate() {
                    for t in 0..l {
                        let a = batch.actions[batch.idx(b, t)] as usize;
                        let qa = tg.q_head(t, 0)[a];
                        q_target_a.push(qa);
                        w.push(advantage_weight(qa - on.value[t], cfg.temperature, cfg.advantage_clip));
                    }
                }
                Aux::Iql { q_target_a, y, w }
            }
            Algorithm::Awac => {
                let boot = bootstrap_values(tgt(), l, BootstrapRule::ExpectedQ, Some(online), None);
                let y = td_targets(batch, &boot, cfg.gamma, clip);
                let mut w = Vec::new();
                for (b, on) in online.iter().enumerate() {
                    for t in 0..l {
                        let a = batch.actions[batch.idx(b, t)] as usize;
                        let q = on.q_head(t, 0);
                        let pi = softmax(on.logits(t));
                        let v: f64 = pi.iter().zip(q).map(|(p, q)| p * q).sum();
                        w.push(advantage_weight(q[a] - v, cfg.temperature, cfg.advantage_clip));
                    }
                }
                Aux::Awac { y, w }
            }
        };
        PreparedLoss { algorithm, aux }
    }

    /// REM with a given mixture instead of a random draw.
    pub fn rem_with_mixture(target: &[HeadOutputs], batch: &LossBatch, cfg: &TrainConfig, mixture: Vec<f64>) -> Self {
        let boot = bootstrap_values(target, batch.seq_len, BootstrapRule::MaxQ, None, Some(&mixture));
        let y = td_targets(batch, &boot, cfg.gamma, cfg.reward_clip);
        PreparedLoss {
            algorithm: Algorithm::Rem,
            aux: Aux::Rem { mixture, y },
        }
    }

    /// Loss value and head-output gradients at the given online outputs.
    pub fn evaluate(&self, online: &[HeadOutputs], batch: &LossBatch, cfg: &TrainConfig) -> LossOutput {
        let mut grads: Vec<HeadOutputs> = online.iter().map(|o| o.zeros_like()).collect();
        let n = batch.weight_sum();
        let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
        let mut components = BTreeMap::new();
        let mut comp = |name: &'static str, v: f64| {
            components.insert(name, v);
        };
        let total;
        let l = batch.seq_len;
        let steps = || (0..online.len()).flat_map(move |b| (0..l).map(move |t| (b, t)));

        // Weighted NLL of the data action; `w` is indexed like the batch.
        let nll = |w: Option<&[f64]>, grads: &mut [HeadOutputs]| -> f64 {
            let mut total = 0.0;
            for (b, t) in steps() {
                let i = batch.idx(b, t);
                let m = batch.mask[i];
                if m == 0.0 {
                    continue;
                }
                let wi = w.map_or(1.0, |w| w[i]) * m;
                let a = batch.actions[i] as usize;
                let logits = online[b].logits(t);
                total += wi * (logsumexp(logits) - logits[a]);
                let g = grads[b].logits_mut(t);
                for (k, p) in softmax(logits).into_iter().enumerate() {
                    g[k] += wi * inv * (p - if k == a { 1.0 } else { 0.0 });
                }
            }
            total * inv
        };

        // Huber TD on Q(s, a_data), optionally over a head mixture.
        let td = |y: &[f64], mixture: Option<&[f64]>, scale: f64, grads: &mut [HeadOutputs]| -> f64 {
            let mut total = 0.0;
            for (b, t) in steps() {
                let i = batch.idx(b, t);
                let m = batch.mask[i];
                if m == 0.0 {
                    continue;
                }
                let a = batch.actions[i] as usize;
                let q = mixed_q(&online[b], t, mixture)[a];
                let u = q - y[i];
                total += m * huber(u);
                let d = scale * m * inv * huber_grad(u);
                match mixture {
                    None => grads[b].q_head_mut(t, 0)[a] += d,
                    Some(w) => {
                        for (k, wk) in w.iter().enumerate() {
                            grads[b].q_head_mut(t, k)[a] += d * wk;
                        }
                    }
                }
            }
            total * inv
        };

        match &self.aux {
            Aux::Bc => {
                let p = nll(None, &mut grads);
                comp("policy", p);
                total = p;
            }
            Aux::Cql { y } => {
                let t = td(y, None, cfg.cql_alpha, &mut grads);
                let mut pen = 0.0;
                for (b, t) in steps() {
                    let i = batch.idx(b, t);
                    let m = batch.mask[i];
                    if m == 0.0 {
                        continue;
                    }
                    let a = batch.actions[i] as usize;
                    let q = online[b].q_head(t, 0);
                    pen += m * (logsumexp(q) - q[a]);
                    let g = grads[b].q_head_mut(t, 0);
                    for (k, p) in softmax(q).into_iter().enumerate() {
                        g[k] += m * inv * (p - if k == a { 1.0 } else { 0.0 });
                    }
                }
                let pen = pen * inv;
                comp("td", t);
                comp("penalty", pen);
                total = cfg.cql_alpha * t + pen;
            }
            Aux::Iql { q_target_a, y, w } => {
                let mut value = 0.0;
                for (b, t) in steps() {
                    let i = batch.idx(b, t);
                    let m = batch.mask[i];
                    if m == 0.0 {
                        continue;
                    }
                    let u = q_target_a[i] - online[b].value[t];
                    value += m * expectile_loss(u, cfg.expectile);
                    let wt = if u < 0.0 { 1.0 - cfg.expectile } else { cfg.expectile };
                    grads[b].value[t] += m * inv * (-2.0 * wt * u);
                }
                let value = value * inv;
                let q = td(y, None, 1.0, &mut grads);
                let p = nll(Some(w), &mut grads);
                comp("value", value);
                comp("td", q);
                comp("policy", p);
                total = value + q + p;
            }
            Aux::Awac { y, w } => {
                let q = td(y, None, 1.0, &mut grads);
                let p = nll(Some(w), &mut grads);
                comp("td", q);
                comp("policy", p);
                total = q + p;
            }
            Aux::Rem { mixture, y } => {
                let q = td(y, Some(mixture), 1.0, &mut grads);
                comp("td", q);
                total = q;
            }
        }

        let mut report = LossReport {
            total,
            components,
            ..LossReport::default()
        };
        let first = &online[0];
        if first.q_heads > 0 {
            let mut s = 0.0;
            for (b, t) in steps() {
                let i = batch.idx(b, t);
                s += batch.mask[i] * online[b].mean_q(t)[batch.actions[i] as usize];
            }
            report.mean_q = Some(s * inv);
        }
        if !first.policy.is_empty() {
            let mut s = 0.0;
            for (b, t) in steps() {
                let i = batch.idx(b, t);
                let p = softmax(online[b].logits(t));
                s += batch.mask[i] * -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
            }
            report.entropy = Some(s * inv);
        }
        LossOutput { report, grads }
    }
}

pub fn bc_loss(online: &[HeadOutputs], batch: &LossBatch) -> LossOutput {
    let cfg = TrainConfig::default();
    PreparedLoss {
        algorithm: Algorithm::Bc,
        aux: Aux::Bc,
    }
    .evaluate(online, batch, &cfg)
}

pub fn cql_loss(online: &[HeadOutputs], target: &[HeadOutputs], batch: &LossBatch, cfg: &TrainConfig) -> LossOutput {
    prepare_and_eval(Algorithm::Cql, online, target, batch, cfg, &mut rand::rngs::mock::StepRng::new(0, 0))
}

pub fn iql_losses(online: &[HeadOutputs], target: &[HeadOutputs], batch: &LossBatch, cfg: &TrainConfig) -> LossOutput {
    prepare_and_eval(Algorithm::Iql, online, target, batch, cfg, &mut rand::rngs::mock::StepRng::new(0, 0))
}

pub fn awac_losses(online: &[HeadOutputs], target: &[HeadOutputs], batch: &LossBatch, cfg: &TrainConfig) -> LossOutput {
    prepare_and_eval(Algorithm::Awac, online, target, batch, cfg, &mut rand::rngs::mock::StepRng::new(0, 0))
}

pub fn rem_loss<R: Rng>(online: &[HeadOutputs], target: &[HeadOutputs], batch: &LossBatch, cfg: &TrainConfig, rng: &mut R) -> LossOutput {
    prepare_and_eval(Algorithm::Rem, online, target, batch, cfg, rng)
}

fn prepare_and_eval<R: Rng>(algo: Algorithm, online: &[HeadOutputs], target: &[HeadOutputs], batch: &LossBatch, cfg: &TrainConfig, rng: &mut R) -> LossOutput {
    PreparedLoss::prepare(algo, online, Some(target), batch, cfg, rng).evaluate(online, batch, cfg)
}
