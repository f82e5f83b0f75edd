use rand::Rng;

use super::{AgentConfig, Objective};
use crate::nn::{self, Adam, ForwardCache, GaussianPolicyHead, Mlp, Tensors};
use crate::{Error, Result};

/// Actor (Gaussian over increments, optionally plus a consumption-ratio
/// logit) and critic. The critic is passed through the positive transform
/// for the recursive objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub head: GaussianPolicyHead,
    pub critic: Mlp,
    pub positive_critic: bool,
    /// Positive critic scaled by wealth: `V = exp(w) * (softplus(raw) + floor)`.
    pub wealth_scaled: bool,
    pub n_assets: usize,
    pub learn_kappa: bool,
}

/// Gradients laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub actor: Vec<f64>,
    pub log_std: Vec<f64>,
    pub critic: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &ActorCritic) -> Self {
        Self {
            actor: vec![0.0; model.actor.n_params()],
            log_std: vec![0.0; model.head.log_std.len()],
            critic: vec![0.0; model.critic.n_params()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.actor.iter().chain(&self.log_std).chain(&self.critic).all(|g| *g == 0.0)
    }
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(n_assets: usize, cfg: &AgentConfig, rng: &mut R) -> Result<Self> {
        let obs_dim = n_assets + 1;
        let action_dim = n_assets + usize::from(cfg.learn_kappa);
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![obs_dim];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let mut actor = Mlp::orthogonal(&actor_sizes, 0.01, rng)?;
        let critic = Mlp::orthogonal(&critic_sizes, 1.0, rng)?;
        if cfg.learn_kappa {
            // start the consumption-ratio logit at the configured kappa
            let (_, b) = actor.output_layer_mut();
            let k = cfg.ez.kappa;
            b[n_assets] = (k / (1.0 - k)).ln();
        }
        let mut head = GaussianPolicyHead::new(action_dim, cfg.init_log_std);
        head.clamp();
        Ok(Self {
            actor,
            head,
            critic,
            positive_critic: cfg.objective == Objective::Recursive,
            wealth_scaled: cfg.objective == Objective::Recursive && cfg.wealth_scaled_critic,
            n_assets,
            learn_kappa: cfg.learn_kappa,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.head.log_std.len()
    }

    pub fn policy_mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(obs)
    }

    pub fn policy_mean_cached(&self, obs: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.actor.forward_cached(obs)
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        let raw = self.critic.forward(obs)?[0];
        Ok(self.map_value(obs, raw).0)
    }

    /// Value and its derivative with respect to the raw critic output.
    fn map_value(&self, obs: &[f64], raw: f64) -> (f64, f64) {
        if !self.positive_critic {
            return (raw, 1.0);
        }
        let scale = if self.wealth_scaled { obs[0].exp() } else { 1.0 };
        (scale * nn::positive_value(raw), scale * nn::positive_value_grad(raw))
    }

    /// Value, its derivative with respect to the raw output, and the cache.
    pub fn value_cached(&self, obs: &[f64]) -> Result<(f64, f64, ForwardCache)> {
        let (out, cache) = self.critic.forward_cached(obs)?;
        let (v, dv) = self.map_value(obs, out[0]);
        Ok((v, dv, cache))
    }

    /// Splits a sampled action into the weight increment and, when learned,
    /// the consumption ratio.
    pub fn split_action<'a>(&self, action: &'a [f64]) -> (&'a [f64], Option<f64>) {
        if self.learn_kappa {
            (&action[..self.n_assets], Some(nn::sigmoid(action[self.n_assets])))
        } else {
            (action, None)
        }
    }

    pub fn apply(&mut self, grads: &Gradients, opt: &mut Optimizers) -> Result<()> {
        opt.actor.step(self.actor.params_mut(), &grads.actor)?;
        opt.log_std.step(&mut self.head.log_std, &grads.log_std)?;
        opt.critic.step(self.critic.params_mut(), &grads.critic)?;
        self.head.clamp();
        if self
            .actor
            .params()
            .iter()
            .chain(self.critic.params())
            .chain(&self.head.log_std)
            .any(|p| !p.is_finite())
        {
            return Err(Error::Numerical("non-finite parameters after update".into()));
        }
        Ok(())
    }

    pub fn to_tensors(&self) -> Tensors {
        let sizes = |m: &Mlp| m.sizes().iter().map(|s| *s as f64).collect::<Vec<_>>();
        let mut t = Tensors::new();
        let a = sizes(&self.actor);
        let c = sizes(&self.critic);
        t.insert("actor.sizes".into(), (1, a.len(), a));
        t.insert("actor.params".into(), (1, self.actor.n_params(), self.actor.params().to_vec()));
        t.insert("critic.sizes".into(), (1, c.len(), c));
        t.insert("critic.params".into(), (1, self.critic.n_params(), self.critic.params().to_vec()));
        t.insert("policy.log_std".into(), (1, self.head.log_std.len(), self.head.log_std.clone()));
        t.insert(
            "meta".into(),
            (
                1,
                4,
                vec![
                    self.n_assets as f64,
                    f64::from(u8::from(self.positive_critic)),
                    f64::from(u8::from(self.learn_kappa)),
                    f64::from(u8::from(self.wealth_scaled)),
                ],
            ),
        );
        t
    }

    pub fn from_tensors(t: &Tensors) -> Result<Self> {
        let get = |k: &str| {
            t.get(k)
                .map(|(_, _, v)| v.clone())
                .ok_or_else(|| Error::invalid(format!("checkpoint is missing {k}")))
        };
        let sizes = |v: Vec<f64>| v.into_iter().map(|s| s as usize).collect::<Vec<_>>();
        let actor = Mlp::from_params(&sizes(get("actor.sizes")?), get("actor.params")?)?;
        let critic = Mlp::from_params(&sizes(get("critic.sizes")?), get("critic.params")?)?;
        let log_std = get("policy.log_std")?;
        let meta = get("meta")?;
        if meta.len() != 4 || log_std.len() != actor.output_dim() {
            return Err(Error::invalid("checkpoint metadata is inconsistent"));
        }
        Ok(Self {
            actor,
            head: GaussianPolicyHead {
                log_std,
                ..GaussianPolicyHead::new(0, 0.0)
            },
            critic,
            n_assets: meta[0] as usize,
            positive_critic: meta[1] != 0.0,
            learn_kappa: meta[2] != 0.0,
            wealth_scaled: meta[3] != 0.0,
        })
    }
}

/// One Adam state per parameter group.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub actor: Adam,
    pub log_std: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(model: &ActorCritic, lr: f64) -> Self {
        Self {
            actor: Adam::new(model.actor.n_params(), lr),
            log_std: Adam::new(model.head.log_std.len(), lr),
            critic: Adam::new(model.critic.n_params(), lr),
        }
    }
}
