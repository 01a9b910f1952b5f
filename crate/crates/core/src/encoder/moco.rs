//! Momentum contrast: key encoder update, negative queue and the
//! InfoNCE-style degradation loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which terms the loss denominator sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Positive plus all negatives (standard InfoNCE).
    #[default]
    WithPositive,
    /// Negatives only.
    NegativesOnly,
}

/// `key <- m * key + (1 - m) * query`, elementwise.
pub fn momentum_update<T: Scalar>(query: &ParamSet<T>, key: &mut ParamSet<T>, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Parameter(format!("momentum {m} outside [0, 1]")));
    }
    query.check_congruent(key)?;
    let (m, one_minus) = (T::lit(m), T::lit(1.0 - m));
    for (k, q) in key.values_mut().iter_mut().zip(query.values()) {
        for (kv, &qv) in k.data_mut().iter_mut().zip(q.data()) {
            *kv = m * *kv + one_minus * qv;
        }
    }
    Ok(())
}

/// Fixed-capacity FIFO of unit-norm embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumQueue<T> {
    dim: usize,
    capacity: usize,
    /// Ring storage, `capacity * dim`.
    data: Vec<T>,
    head: usize,
    len: usize,
}

impl<T: Scalar> MomentumQueue<T> {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Parameter("queue capacity and dimension must be positive".into()));
        }
        Ok(MomentumQueue {
            dim,
            capacity,
            data: vec![T::zero(); capacity * dim],
            head: 0,
            len: 0,
        })
    }

    /// A full queue of random unit vectors.
    pub fn random<R: Rng + ?Sized>(capacity: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        for _ in 0..capacity {
            let v = Tensor::<f64>::randn(&[dim], 1.0, rng);
            let norm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            q.push(&v.data().iter().map(|&x| T::lit(x / norm)).collect::<Vec<_>>())?;
        }
        Ok(q)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn push(&mut self, v: &[T]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dim(format!("queue holds {}-vectors, got {}", self.dim, v.len())));
        }
        let norm = v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::Parameter(format!("queue entries must be unit-norm, got norm {norm}")));
        }
        let slot = (self.head + self.len) % self.capacity;
        self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(v);
        if self.len < self.capacity {
            self.len += 1;
        } else {
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Appends the rows of `embeddings` (`[n, dim]`), evicting the oldest
    /// entries once full.
    pub fn enqueue(&mut self, embeddings: &Tensor<T>) -> Result<()> {
        let n = match *embeddings.shape() {
            [n, d] if d == self.dim => n,
            ref s => return Err(Error::dim(format!("expected [n, {}] embeddings, got {s:?}", self.dim))),
        };
        for i in 0..n {
            self.push(&embeddings.data()[i * self.dim..(i + 1) * self.dim])?;
        }
        Ok(())
    }

    /// Entries oldest first, `[len, dim]`.
    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        if self.len == 0 {
            return Err(Error::Parameter("queue is empty".into()));
        }
        let mut out = Vec::with_capacity(self.len * self.dim);
        for i in 0..self.len {
            let slot = (self.head + i) % self.capacity;
            out.extend_from_slice(&self.data[slot * self.dim..(slot + 1) * self.dim]);
        }
        Tensor::new(&[self.len, self.dim], out)
    }

    /// Rebuilds a queue from entries listed oldest first.
    pub fn from_tensor(capacity: usize, entries: &Tensor<T>) -> Result<Self> {
        let dim = *entries.shape().last().unwrap_or(&0);
        let mut q = Self::new(capacity, dim)?;
        q.enqueue(entries)?;
        Ok(q)
    }
}

/// `sum_i -log(exp(q_i.k_i / tau) / Z_i)` where `Z_i` adds
/// `exp(q_i.n_j / tau)` over the queue and, by default, the positive term.
///
/// `queries` and `positives` are `[B, dim]`, `queue` is `[N, dim]`.
pub fn degradation_loss<T: Scalar>(
    g: &mut Graph<T>,
    queries: Var,
    positives: Var,
    queue: Var,
    tau: f64,
    denominator: Denominator,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let (b, d) = match *g.shape(queries) {
        [b, d] => (b, d),
        ref s => return Err(Error::dim(format!("queries must be [B, dim], got {s:?}"))),
    };
    if g.shape(positives) != [b, d] {
        return Err(Error::dim(format!("positives must be [{b}, {d}], got {:?}", g.shape(positives))));
    }
    let n = match *g.shape(queue) {
        [n, qd] if qd == d => n,
        ref s => return Err(Error::dim(format!("queue must be [N, {d}], got {s:?}"))),
    };
    let inv_tau = T::lit(1.0 / tau);
    let pos = g.mul(queries, positives)?;
    let pos = g.sum_last(pos)?;
    let pos = g.reshape(pos, &[b, 1])?;
    let q3 = g.reshape(queries, &[1, b, d])?;
    let k3 = g.reshape(queue, &[1, n, d])?;
    let neg = g.bmm(q3, k3, true)?;
    let neg = g.reshape(neg, &[b, n])?;
    let per_query = match denominator {
        Denominator::WithPositive => {
            let logits = g.concat(&[pos, neg], 1)?;
            let logits = g.scale(logits, inv_tau)?;
            let logp = g.log_softmax(logits)?;
            let first = g.narrow_last(logp, 0, 1)?;
            g.scale(first, -T::one())?
        }
        Denominator::NegativesOnly => {
            // log sum_j exp(n_j) = n_0 - log_softmax(n)_0
            let neg = g.scale(neg, inv_tau)?;
            let logp = g.log_softmax(neg)?;
            let lp0 = g.narrow_last(logp, 0, 1)?;
            let n0 = g.narrow_last(neg, 0, 1)?;
            let lse = g.sub(n0, lp0)?;
            let pos = g.scale(pos, inv_tau)?;
            g.sub(lse, pos)?
        }
    };
    g.sum(per_query)
}
