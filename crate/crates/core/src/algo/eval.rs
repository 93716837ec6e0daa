use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::softmax;
use super::model::{HeadOutputs, ModelContract, SeqInput};
use super::{AlgoError, Algorithm};
use crate::env::{EnvAdapter, Observation};
use crate::exec::Exec;
use crate::render::render_screen_into;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionRule {
    /// Sample from the softmax policy.
    SamplePolicy,
    /// Argmax of the policy logits.
    GreedyPolicy,
    /// Argmax of the unweighted mean over Q heads.
    GreedyQ,
}

impl ActionRule {
    pub fn parse(text: &str) -> Option<Self> {
        match text.trim() {
            "sample_policy" => Some(ActionRule::SamplePolicy),
            "greedy_policy" => Some(ActionRule::GreedyPolicy),
            "greedy_q" => Some(ActionRule::GreedyQ),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionRule::SamplePolicy => "sample_policy",
            ActionRule::GreedyPolicy => "greedy_policy",
            ActionRule::GreedyQ => "greedy_q",
        }
    }

    /// Policy sampling for actor methods, greedy mean-Q for value methods.
    pub fn default_for(algo: Algorithm) -> Self {
        match algo {
            Algorithm::Bc | Algorithm::Iql | Algorithm::Awac => ActionRule::SamplePolicy,
            Algorithm::Cql | Algorithm::Rem => ActionRule::GreedyQ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub seed: u64,
    pub score: i64,
    pub death_level: u32,
    pub steps: usize,
    /// Steps where the chosen action equalled the reference policy's, when one was given.
    pub matched: Option<usize>,
}

impl EvalEpisode {
    pub fn match_rate(&self) -> Option<f64> {
        self.matched.map(|m| m as f64 / self.steps.max(1) as f64)
    }
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Action for step 0 of `out` under `rule`.
pub fn select_action<R: Rng>(out: &HeadOutputs, rule: ActionRule, rng: &mut R) -> Result<u8, AlgoError> {
    let missing = |h: &str| AlgoError::InvalidConfig(format!("action rule needs a {h} head"));
    let a = match rule {
        ActionRule::GreedyPolicy => {
            if out.policy.is_empty() {
                return Err(missing("policy"));
            }
            argmax(out.logits(0))
        }
        ActionRule::SamplePolicy => {
            if out.policy.is_empty() {
                return Err(missing("policy"));
            }
            let p = softmax(out.logits(0));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = p.len() - 1;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        }
        ActionRule::GreedyQ => {
            if out.q_heads == 0 {
                return Err(missing("Q"));
            }
            argmax(&out.mean_q(0))
        }
    };
    Ok(a as u8)
}

/// Plays one episode per seed with a fresh environment from `make_env`.
///
/// The recurrent state is carried across steps and reset per episode; the
/// previous action starts at 0. When `reference` is given, the episode also
/// counts how often the model's action equals `reference(observation)`.
/// Episodes run under `exec`, each with its own RNG stream.
pub fn evaluate<M, E, F>(
    model: &M,
    make_env: F,
    seeds: &[u64],
    rule: ActionRule,
    rng_seed: u64,
    reference: Option<fn(&Observation) -> u8>,
    exec: Exec,
) -> Result<Vec<EvalEpisode>, AlgoError>
where
    M: ModelContract,
    E: EnvAdapter,
    F: Fn() -> E + Sync + Send,
{
    let spec = &model.config().render;
    let img_len = spec.image_len();
    let run_one = |&seed: &u64| -> Result<EvalEpisode, AlgoError> {
        let mut env = make_env();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(seed);
        let mut state = model.initial_state();
        let mut image = vec![0.0f64; img_len];
        let mut prev = 0u8;
        let mut cur = env.reset(seed);
        let mut steps = 0;
        let mut matched = 0;
        while !cur.done {
            let obs = &cur.observation;
            render_screen_into(&obs.tty_chars, &obs.tty_colors, obs.tty_cursor, spec, &mut image);
            let (out, next_state) = model.forward(
                SeqInput {
                    images: &image,
                    prev_actions: &[prev],
                },
                &state,
            );
            state = next_state;
            let action = select_action(&out, rule, &mut rng)?;
            if let Some(r) = reference {
                matched += usize::from(r(obs) == action);
            }
            cur = env.step(action)?;
            prev = action;
            steps += 1;
        }
        Ok(EvalEpisode {
            seed,
            score: cur.info.score,
            death_level: cur.info.depth,
            steps,
            matched: reference.map(|_| matched),
        })
    };
    exec.map_slice(seeds, run_one).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{ModelConfig, RecurrentNet};
    use crate::env::{scripted_policy, GridHack, GridHackConfig};
    use crate::render::RenderSpec;

    fn small(algo: Algorithm) -> RecurrentNet {
        let cfg = ModelConfig {
            render: RenderSpec {
                glyph_width: 1,
                glyph_height: 1,
                ..RenderSpec::crop(5, 5)
            },
            num_actions: 19,
            ..ModelConfig::desk(algo, 2, 4)
        };
        RecurrentNet::new(cfg, 0).unwrap()
    }

    #[test]
    fn evaluation_is_deterministic_and_bounded() {
        let net = small(Algorithm::Iql);
        let env = || GridHack::new(GridHackConfig { horizon: 30, ..Default::default() });
        let a = evaluate(&net, env, &[1, 2, 3], ActionRule::SamplePolicy, 9, Some(scripted_policy), Exec::Parallel).unwrap();
        let b = evaluate(&net, env, &[1, 2, 3], ActionRule::SamplePolicy, 9, Some(scripted_policy), Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|e| e.steps == 30 && e.matched.unwrap() <= 30));
        for rule in [ActionRule::GreedyPolicy, ActionRule::GreedyQ] {
            assert_eq!(evaluate(&net, env, &[4], rule, 0, None, Exec::Sequential).unwrap().len(), 1);
        }
    }

    #[test]
    fn rule_without_head_fails() {
        let net = small(Algorithm::Bc);
        let env = || GridHack::new(GridHackConfig { horizon: 5, ..Default::default() });
        assert!(evaluate(&net, env, &[1], ActionRule::GreedyQ, 0, None, Exec::Sequential).is_err());
    }

    #[test]
    fn greedy_selection() {
        let out = HeadOutputs {
            steps: 1,
            num_actions: 3,
            q_heads: 2,
            policy: vec![0.0, 2.0, 1.0],
            q: vec![1.0, 0.0, 0.0, 1.0, 0.0, 5.0],
            value: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&out, ActionRule::GreedyPolicy, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&out, ActionRule::GreedyQ, &mut rng).unwrap(), 2);
        assert_eq!(ActionRule::default_for(Algorithm::Cql), ActionRule::GreedyQ);
    }
}
