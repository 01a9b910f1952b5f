use std::collections::HashMap;

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Records;
use crate::config::{EncoderMode, RunConfig};
use crate::degradation::{make_batch, ImageBuffer, TrainBatch};
use crate::encoder::{degradation_loss, momentum_update, DegradationEncoder, MomentumQueue};
use crate::error::{Error, Result};
use crate::network::{Conditioning, DsatNet};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::adam::Adam;
use super::data::{batch_config, phase_rng, Phase};
use super::loss::{sr_loss, total_loss};
use super::schedule::learning_rate;

/// Network, encoders and negative queue.
#[derive(Clone, Debug)]
pub struct Models<T> {
    pub net: DsatNet,
    pub net_params: ParamSet<T>,
    pub encoder: DegradationEncoder,
    /// Query encoder, the one trained by gradient descent.
    pub query: ParamSet<T>,
    /// Momentum (key) encoder.
    pub key: ParamSet<T>,
    pub queue: MomentumQueue<T>,
}

impl<T: Scalar> Models<T> {
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = phase_rng(cfg.seed, Phase::Init, 0);
        let mut net_params = ParamSet::new();
        let net = DsatNet::new(&cfg.model, &mut net_params, &mut rng)?;
        let mut query = ParamSet::new();
        let encoder = DegradationEncoder::new(&cfg.encoder, &mut query, &mut rng)?;
        let key = query.clone();
        let queue = MomentumQueue::random(cfg.contrastive.queue_size, cfg.encoder.embed_dim, &mut rng)?;
        Ok(Models {
            net,
            net_params,
            encoder,
            query,
            key,
            queue,
        })
    }

    /// Whether the network is conditioned on the encoder output rather than
    /// on a zero representation.
    pub fn uses_representation(&self) -> bool {
        self.net.config.ablation.degradation_learning
    }

    /// Query-encoder output for a `[3, H, W]` image of any size.
    pub fn represent(&self, lr: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let p = self.query.bind(&mut g, false);
        let x = g.constant(lr.clone());
        let enc = self.encoder.forward(&mut g, &p, x)?;
        Ok((g.value(enc.representation).clone(), g.value(enc.embedding).clone()))
    }

    /// Super-resolves one LR image; values are not clamped.
    pub fn super_resolve(&self, lr: &ImageBuffer) -> Result<ImageBuffer> {
        let x = lr.to_rgb().to_tensor::<T>();
        let d = if self.uses_representation() {
            self.represent(&x)?.0
        } else {
            Tensor::zeros(&[self.net.config.degradation_dim])
        };
        let mut g = Graph::new();
        let p = self.net_params.bind(&mut g, false);
        let xv = g.constant(x);
        let dv = g.constant(d);
        let y = self.net.forward(&mut g, &p, xv, Conditioning::Representation(dv))?;
        ImageBuffer::from_tensor(g.value(y))
    }

    /// Loads `net.*` and `encoder.*` records.
    pub fn load_inference(&mut self, records: &Records) -> Result<()> {
        let view = || records.iter().map(|(n, t)| (n.as_str(), t));
        self.net_params.load_from(view(), "net.")?;
        self.query.load_from(view(), "encoder.")
    }
}

/// Losses of one joint step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointStats {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub l_sr: f64,
    pub l_degrad: Option<f64>,
    pub l_total: f64,
}

/// Loss and similarity diagnostics of one encoder step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderStats {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub l_degrad: f64,
    /// Mean cosine between the two patches of each image.
    pub positive_cosine: f64,
    /// Mean cosine between patches of different images in the batch.
    pub cross_cosine: f64,
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub models: Models<T>,
    pub net_opt: Adam<T>,
    pub encoder_opt: Adam<T>,
    /// Completed joint steps.
    pub step: u64,
    /// Completed encoder pretraining steps.
    pub encoder_step: u64,
}

/// Parts of a [`TrainState`] written to a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parts {
    All,
    EncoderOnly,
}

const MAX_EXACT_COUNTER: u64 = 1 << 24;

fn check_finite(step: u64, what: &str, values: &[(&str, f64)]) -> Result<()> {
    if values.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let detail: Vec<String> = values.iter().map(|(n, v)| format!("{n}={v}")).collect();
    Err(Error::Numeric(format!("non-finite {what} at step {step}: {}", detail.join(", "))))
}

fn mean_cosines<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>) -> (f64, f64) {
    let (b, d) = (q.shape()[0], q.shape()[1]);
    let dot = |i: usize, j: usize| -> f64 {
        (0..d).map(|c| q.data()[i * d + c].as_f64() * k.data()[j * d + c].as_f64()).sum()
    };
    let pos = (0..b).map(|i| dot(i, i)).sum::<f64>() / b as f64;
    let cross = if b > 1 {
        let mut s = 0.0;
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    s += dot(i, j);
                }
            }
        }
        s / (b * (b - 1)) as f64
    } else {
        f64::NAN
    };
    (pos, cross)
}

impl<T: Scalar> TrainState<T> {
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        let models = Models::init(cfg)?;
        let t = &cfg.train;
        Ok(TrainState {
            net_opt: Adam::new(&models.net_params, t.beta1, t.beta2, t.eps),
            encoder_opt: Adam::new(&models.query, t.beta1, t.beta2, t.eps),
            models,
            step: 0,
            encoder_step: 0,
        })
    }

    /// Momentum-encoder embeddings of the second patch of every image.
    fn key_embeddings(&self, batch: &TrainBatch) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.models.key.bind(&mut g, false);
        let mut rows = Vec::new();
        for i in 0..batch.images() {
            let x = g.constant(batch.lr_tensor(2 * i + 1));
            let enc = self.models.encoder.forward(&mut g, &p, x)?;
            rows.extend_from_slice(g.value(enc.embedding).data());
        }
        Tensor::new(&[batch.images(), self.models.encoder.config.embed_dim], rows)
    }

    fn stack_rows(g: &mut Graph<T>, rows: &[Var]) -> Result<Var> {
        let rows: Vec<Var> = rows
            .iter()
            .map(|&r| {
                let d = g.shape(r)[0];
                g.reshape(r, &[1, d])
            })
            .collect::<Result<_>>()?;
        g.concat(&rows, 0)
    }

    /// Key-encoder update and queue refresh after the query encoder moved.
    fn contrastive_bookkeeping(&mut self, cfg: &RunConfig, keys: &Tensor<T>) -> Result<()> {
        momentum_update(&self.models.query, &mut self.models.key, cfg.contrastive.momentum)?;
        self.models.queue.enqueue(keys)
    }

    /// One contrastive step on the query encoder alone.
    pub fn encoder_step(&mut self, cfg: &RunConfig, pool: &[ImageBuffer]) -> Result<EncoderStats> {
        let step = self.encoder_step;
        let epoch = cfg.train.epoch_of(step);
        let lr = learning_rate(cfg.train.lr0, epoch, cfg.train.halving_period_epochs);
        let batch = make_batch(pool, &batch_config(cfg), &mut phase_rng(cfg.seed, Phase::Encoder, step))?;
        let keys = self.key_embeddings(&batch)?;

        let mut g = Graph::new();
        let p = self.models.query.bind(&mut g, true);
        let mut queries = Vec::with_capacity(batch.images());
        for i in 0..batch.images() {
            let x = g.constant(batch.lr_tensor(2 * i));
            queries.push(self.models.encoder.forward(&mut g, &p, x)?.embedding);
        }
        let q = Self::stack_rows(&mut g, &queries)?;
        let k = g.constant(keys.clone());
        let queue = g.constant(self.models.queue.to_tensor()?);
        let c = &cfg.contrastive;
        let loss = degradation_loss(&mut g, q, k, queue, c.temperature, c.denominator)?;
        let l = g.value(loss).item()?.as_f64();
        check_finite(step, "degradation loss", &[("l_degrad", l)])?;
        let (positive_cosine, cross_cosine) = mean_cosines(g.value(q), &keys);

        let grads = g.backward(loss)?;
        let grads = p.collect_grads(&grads, &self.models.query);
        self.encoder_opt.step(&mut self.models.query, &grads, lr)?;
        self.contrastive_bookkeeping(cfg, &keys)?;
        self.encoder_step += 1;
        Ok(EncoderStats {
            step,
            epoch,
            lr,
            l_degrad: l,
            positive_cosine,
            cross_cosine,
        })
    }

    /// One joint step: reconstruction loss over every patch plus, with
    /// degradation learning, the contrastive loss on the same batch.
    pub fn joint_step(&mut self, cfg: &RunConfig, pool: &[ImageBuffer]) -> Result<JointStats> {
        let step = self.step;
        let epoch = cfg.train.epoch_of(step);
        let lr = learning_rate(cfg.train.lr0, epoch, cfg.train.halving_period_epochs);
        let batch = make_batch(pool, &batch_config(cfg), &mut phase_rng(cfg.seed, Phase::Joint, step))?;
        let learn = self.models.uses_representation();
        let train_encoder = learn && cfg.train.encoder_mode == EncoderMode::Continued;

        let mut g = Graph::new();
        let np = self.models.net_params.bind(&mut g, true);
        let qp = self.models.query.bind(&mut g, train_encoder);
        let zero = g.constant(Tensor::zeros(&[self.models.net.config.degradation_dim]));
        let mut terms = Vec::with_capacity(batch.lr.len());
        let mut queries = Vec::with_capacity(batch.images());
        for j in 0..batch.lr.len() {
            let x = g.constant(batch.lr_tensor(j));
            let d = if learn {
                let enc = self.models.encoder.forward(&mut g, &qp, x)?;
                if j % 2 == 0 {
                    queries.push(enc.embedding);
                }
                enc.representation
            } else {
                zero
            };
            let sr = self.models.net.forward(&mut g, &np, x, Conditioning::Representation(d))?;
            let hr = g.constant(batch.hr_tensor(j));
            terms.push(sr_loss(&mut g, sr, hr)?);
        }
        let terms = g.concat(&terms, 0)?;
        let l_sr = g.mean(terms)?;

        let (l_degrad, keys) = if learn {
            let keys = self.key_embeddings(&batch)?;
            let q = Self::stack_rows(&mut g, &queries)?;
            let k = g.constant(keys.clone());
            let queue = g.constant(self.models.queue.to_tensor()?);
            let c = &cfg.contrastive;
            (Some(degradation_loss(&mut g, q, k, queue, c.temperature, c.denominator)?), Some(keys))
        } else {
            (None, None)
        };
        let total = total_loss(&mut g, l_degrad, l_sr)?;
        let stats = JointStats {
            step,
            epoch,
            lr,
            l_sr: g.value(l_sr).item()?.as_f64(),
            l_degrad: l_degrad.map(|v| g.value(v).item().map(|x| x.as_f64())).transpose()?,
            l_total: g.value(total).item()?.as_f64(),
        };
        check_finite(
            step,
            "loss",
            &[("l_sr", stats.l_sr), ("l_degrad", stats.l_degrad.unwrap_or(0.0)), ("l_total", stats.l_total)],
        )?;

        let grads = g.backward(total)?;
        let net_grads = np.collect_grads(&grads, &self.models.net_params);
        self.net_opt.step(&mut self.models.net_params, &net_grads, lr)?;
        if train_encoder {
            let enc_grads = qp.collect_grads(&grads, &self.models.query);
            self.encoder_opt.step(&mut self.models.query, &enc_grads, lr)?;
        }
        if let Some(keys) = keys {
            self.contrastive_bookkeeping(cfg, &keys)?;
        }
        self.step += 1;
        Ok(stats)
    }

    /// Named tensors for a checkpoint.
    pub fn records(&self, parts: Parts) -> Result<Vec<(String, Tensor<T>)>> {
        if self.step >= MAX_EXACT_COUNTER || self.encoder_step >= MAX_EXACT_COUNTER {
            return Err(Error::Checkpoint("step counter too large to store exactly".into()));
        }
        let mut out = Vec::new();
        let mut add_set = |prefix: &str, set: &ParamSet<T>| {
            out.extend(set.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
        };
        if parts == Parts::All {
            add_set("net.", &self.models.net_params);
            add_set("opt.net.m.", &self.net_opt.m);
            add_set("opt.net.v.", &self.net_opt.v);
        }
        add_set("encoder.", &self.models.query);
        add_set("key_encoder.", &self.models.key);
        add_set("opt.encoder.m.", &self.encoder_opt.m);
        add_set("opt.encoder.v.", &self.encoder_opt.v);
        out.push(("queue".into(), self.models.queue.to_tensor()?));
        let counter = |v: u64| Tensor::scalar(T::lit(v as f64));
        out.push(("state.encoder_step".into(), counter(self.encoder_step)));
        out.push(("state.opt.encoder.t".into(), counter(self.encoder_opt.t)));
        if parts == Parts::All {
            out.push(("state.step".into(), counter(self.step)));
            out.push(("state.opt.net.t".into(), counter(self.net_opt.t)));
        }
        Ok(out)
    }

    /// Restores the parts present in a checkpoint written by [`Self::records`].
    pub fn restore(&mut self, records: &Records, parts: Parts) -> Result<()> {
        let view = || records.iter().map(|(n, t)| (n.as_str(), t));
        let scalars: HashMap<&str, f64> = records
            .iter()
            .filter(|(n, t)| n.starts_with("state.") && t.numel() == 1)
            .map(|(n, t)| (n.as_str(), t.data()[0] as f64))
            .collect();
        let counter = |name: &str| -> Result<u64> {
            scalars
                .get(name)
                .map(|&v| v as u64)
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
        };
        if parts == Parts::All {
            self.models.net_params.load_from(view(), "net.")?;
            self.net_opt.m.load_from(view(), "opt.net.m.")?;
            self.net_opt.v.load_from(view(), "opt.net.v.")?;
            self.step = counter("state.step")?;
            self.net_opt.t = counter("state.opt.net.t")?;
        }
        self.models.query.load_from(view(), "encoder.")?;
        self.models.key.load_from(view(), "key_encoder.")?;
        self.encoder_opt.m.load_from(view(), "opt.encoder.m.")?;
        self.encoder_opt.v.load_from(view(), "opt.encoder.v.")?;
        self.encoder_step = counter("state.encoder_step")?;
        self.encoder_opt.t = counter("state.opt.encoder.t")?;
        let queue = records
            .iter()
            .find(|(n, _)| n == "queue")
            .ok_or_else(|| Error::Checkpoint("missing queue".into()))?;
        if queue.1.rank() != 2 || queue.1.shape()[1] != self.models.queue.dim() {
            return Err(Error::Checkpoint(format!("queue has shape {:?}", queue.1.shape())));
        }
        self.models.queue = MomentumQueue::from_tensor(self.models.queue.capacity(), &queue.1.cast())?;
        Ok(())
    }
}
