use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul, AutodiffError, Tape, Tensor, Var};

use super::dist::{ActionDist, CONT_ACTION_DIM, DISCRETE_ACTIONS, LOG_STD_MAX, LOG_STD_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Diagonal Gaussian over `(dx, dy, grip_logit)` with a state-independent
    /// log-std parameter vector.
    Gaussian,
    /// Six-way categorical over the fixed-step action set.
    Categorical,
}

impl HeadKind {
    pub fn action_dim(self) -> usize {
        match self {
            HeadKind::Gaussian => CONT_ACTION_DIM,
            HeadKind::Categorical => DISCRETE_ACTIONS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub head: HeadKind,
    pub log_std_init: f64,
}

impl PolicyConfig {
    pub fn new(input_dim: usize, head: HeadKind) -> Self {
        PolicyConfig { input_dim, hidden: 128, head, log_std_init: -2.0 }
    }
}

/// Two tanh layers feeding an action head and a value head. The value head is
/// the only "critic" parameter group; everything else belongs to the actor.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub cfg: PolicyConfig,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    wa: Tensor,
    ba: Tensor,
    log_std: Option<Tensor>,
    wv: Tensor,
    bv: Tensor,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize, gain: f64) -> Tensor {
    let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| (2.0 * rng.random::<f64>() - 1.0) * limit).collect();
    Tensor::from_vec(&[rows, cols], data).expect("xavier shape")
}

impl PolicyNet {
    pub fn init(cfg: PolicyConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let adim = cfg.head.action_dim();
        let w1 = xavier(rng, cfg.input_dim, h, 1.0);
        let w2 = xavier(rng, h, h, 1.0);
        // Small action head so the initial policy is near-uniform / near-zero
        // mean instead of inheriting input noise.
        let wa = xavier(rng, h, adim, 0.01);
        let wv = xavier(rng, h, 1, 1.0);
        let log_std = match cfg.head {
            HeadKind::Gaussian => {
                Some(Tensor::vector(vec![cfg.log_std_init; adim]))
            }
            HeadKind::Categorical => None,
        };
        PolicyNet {
            cfg,
            w1,
            b1: Tensor::vector(vec![0.0; h]),
            w2,
            b2: Tensor::vector(vec![0.0; h]),
            wa,
            ba: Tensor::vector(vec![0.0; adim]),
            log_std,
            wv,
            bv: Tensor::vector(vec![0.0; 1]),
        }
    }

    /// Zeroed parameters; handy for contract tests (mean 0, value 0).
    pub fn zeros(cfg: PolicyConfig) -> Self {
        let h = cfg.hidden;
        let adim = cfg.head.action_dim();
        let log_std = match cfg.head {
            HeadKind::Gaussian => Some(Tensor::vector(vec![cfg.log_std_init; adim])),
            HeadKind::Categorical => None,
        };
        PolicyNet {
            cfg,
            w1: Tensor::zeros(&[cfg.input_dim, h]),
            b1: Tensor::vector(vec![0.0; h]),
            w2: Tensor::zeros(&[h, h]),
            b2: Tensor::vector(vec![0.0; h]),
            wa: Tensor::zeros(&[h, adim]),
            ba: Tensor::vector(vec![0.0; adim]),
            log_std,
            wv: Tensor::zeros(&[h, 1]),
            bv: Tensor::vector(vec![0.0; 1]),
        }
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            ("trunk.w1", &self.w1),
            ("trunk.b1", &self.b1),
            ("trunk.w2", &self.w2),
            ("trunk.b2", &self.b2),
            ("act.w", &self.wa),
            ("act.b", &self.ba),
        ];
        if let Some(ls) = &self.log_std {
            out.push(("act.log_std", ls));
        }
        out.push(("val.w", &self.wv));
        out.push(("val.b", &self.bv));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![
            ("trunk.w1", &mut self.w1),
            ("trunk.b1", &mut self.b1),
            ("trunk.w2", &mut self.w2),
            ("trunk.b2", &mut self.b2),
            ("act.w", &mut self.wa),
            ("act.b", &mut self.ba),
        ];
        if let Some(ls) = &mut self.log_std {
            out.push(("act.log_std", ls));
        }
        out.push(("val.w", &mut self.wv));
        out.push(("val.b", &mut self.bv));
        out
    }

    /// Only the value head trains at the critic learning rate.
    pub fn is_critic_param(name: &str) -> bool {
        name.starts_with("val.")
    }

    /// Rebuild a net from checkpoint tensors. The head kind and sizes are
    /// recovered from the stored names and shapes.
    pub fn from_named(tensors: Vec<(String, Tensor)>) -> Result<Self, String> {
        let mut lookup: std::collections::BTreeMap<String, Tensor> = tensors.into_iter().collect();
        fn take(
            lookup: &mut std::collections::BTreeMap<String, Tensor>,
            name: &str,
        ) -> Result<Tensor, String> {
            lookup.remove(name).ok_or_else(|| format!("missing {name}"))
        }
        let w1 = take(&mut lookup, "trunk.w1")?;
        let b1 = take(&mut lookup, "trunk.b1")?;
        let w2 = take(&mut lookup, "trunk.w2")?;
        let b2 = take(&mut lookup, "trunk.b2")?;
        let wa = take(&mut lookup, "act.w")?;
        let ba = take(&mut lookup, "act.b")?;
        let log_std = lookup.remove("act.log_std");
        let wv = take(&mut lookup, "val.w")?;
        let bv = take(&mut lookup, "val.b")?;
        if !lookup.is_empty() {
            return Err(format!("unexpected tensors: {:?}", lookup.keys().collect::<Vec<_>>()));
        }
        if w1.shape().len() != 2 || wa.shape().len() != 2 {
            return Err("weights must be rank 2".into());
        }
        let input_dim = w1.shape()[0];
        let hidden = w1.shape()[1];
        let adim = wa.shape()[1];
        let head = match (&log_std, adim) {
            (Some(_), d) if d == CONT_ACTION_DIM => HeadKind::Gaussian,
            (None, d) if d == DISCRETE_ACTIONS => HeadKind::Categorical,
            _ => return Err(format!("inconsistent head: adim {adim}, log_std {}", log_std.is_some())),
        };
        for (name, t, want) in [
            ("trunk.b1", &b1, vec![hidden]),
            ("trunk.w2", &w2, vec![hidden, hidden]),
            ("trunk.b2", &b2, vec![hidden]),
            ("act.b", &ba, vec![adim]),
            ("val.w", &wv, vec![hidden, 1]),
            ("val.b", &bv, vec![1]),
        ] {
            if t.shape() != want.as_slice() {
                return Err(format!("{name}: shape {:?}, want {:?}", t.shape(), want));
            }
        }
        let cfg = PolicyConfig { input_dim, hidden, head, log_std_init: -2.0 };
        Ok(PolicyNet { cfg, w1, b1, w2, b2, wa, ba, log_std, wv, bv })
    }

    /// Batched plain forward: `xs` is `rows` stacked inputs. Returns the raw
    /// action-head rows, the clamped log-std (Gaussian only), and values.
    pub fn forward_batch_plain(&self, xs: &[f64], rows: usize) -> PlainBatch {
        let ind = self.cfg.input_dim;
        let h = self.cfg.hidden;
        let adim = self.cfg.head.action_dim();
        assert_eq!(xs.len(), rows * ind, "input length");

        let mut h1 = vec![0.0; rows * h];
        matmul(xs, self.w1.data(), rows, ind, h, &mut h1);
        for i in 0..rows {
            for j in 0..h {
                h1[i * h + j] = (h1[i * h + j] + self.b1.data()[j]).tanh();
            }
        }
        let mut h2 = vec![0.0; rows * h];
        matmul(&h1, self.w2.data(), rows, h, h, &mut h2);
        for i in 0..rows {
            for j in 0..h {
                h2[i * h + j] = (h2[i * h + j] + self.b2.data()[j]).tanh();
            }
        }
        let mut act = vec![0.0; rows * adim];
        matmul(&h2, self.wa.data(), rows, h, adim, &mut act);
        for i in 0..rows {
            for j in 0..adim {
                act[i * adim + j] += self.ba.data()[j];
            }
        }
        let mut value = vec![0.0; rows];
        let mut v = vec![0.0; rows];
        matmul(&h2, self.wv.data(), rows, h, 1, &mut v);
        for i in 0..rows {
            value[i] = v[i] + self.bv.data()[0];
        }
        let log_std = self
            .log_std
            .as_ref()
            .map(|ls| ls.data().iter().map(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect());
        PlainBatch { act, log_std, value, rows, adim }
    }

    pub fn forward_single(&self, x: &[f64]) -> (ActionDist, f64) {
        let b = self.forward_batch_plain(x, 1);
        (b.dist_at(0), b.value[0])
    }

    /// Register every parameter on a tape.
    pub fn bind(&self, tape: &Tape) -> crate::autodiff::Result<BoundNet> {
        Ok(BoundNet {
            input_dim: self.cfg.input_dim,
            hidden: self.cfg.hidden,
            head: self.cfg.head,
            w1: tape.param(self.w1.clone())?,
            b1: tape.param(self.b1.clone())?,
            w2: tape.param(self.w2.clone())?,
            b2: tape.param(self.b2.clone())?,
            wa: tape.param(self.wa.clone())?,
            ba: tape.param(self.ba.clone())?,
            log_std: match &self.log_std {
                Some(ls) => Some(tape.param(ls.clone())?),
                None => None,
            },
            wv: tape.param(self.wv.clone())?,
            bv: tape.param(self.bv.clone())?,
        })
    }
}

pub struct PlainBatch {
    pub act: Vec<f64>,
    pub log_std: Option<Vec<f64>>,
    pub value: Vec<f64>,
    rows: usize,
    adim: usize,
}

impl PlainBatch {
    pub fn dist_at(&self, row: usize) -> ActionDist {
        assert!(row < self.rows);
        let slice = self.act[row * self.adim..(row + 1) * self.adim].to_vec();
        match &self.log_std {
            Some(ls) => ActionDist::Gaussian { mean: slice, log_std: ls.clone() },
            None => ActionDist::Categorical { logits: slice },
        }
    }
}

/// Tape-registered parameters plus the forward builder.
pub struct BoundNet {
    pub(crate) input_dim: usize,
    pub(crate) hidden: usize,
    pub(crate) head: HeadKind,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub wa: Var,
    pub ba: Var,
    pub log_std: Option<Var>,
    pub wv: Var,
    pub bv: Var,
}

/// Output of one taped batch forward.
pub struct BatchHeads {
    /// `[rows, adim]`: Gaussian means or categorical logits.
    pub act: Var,
    /// Clamped log-std vector `[adim]` (Gaussian only).
    pub log_std: Option<Var>,
    /// `[rows, 1]`.
    pub value: Var,
    pub rows: usize,
}

impl BoundNet {
    /// Rebuild a bound net from named parameter `Var`s (the inverse of
    /// [`BoundNet::named_vars`]), for callers that register parameters on the
    /// tape themselves, such as gradient checking.
    pub fn from_named_vars(
        input_dim: usize,
        hidden: usize,
        head: HeadKind,
        vars: &[(&str, Var)],
    ) -> crate::autodiff::Result<BoundNet> {
        let find = |name: &str| -> crate::autodiff::Result<Var> {
            vars.iter()
                .find(|(n, _)| *n == name)
                .map(|&(_, v)| v)
                .ok_or_else(|| AutodiffError::Shape {
                    op: "from_named_vars",
                    msg: format!("missing parameter {name}"),
                })
        };
        let log_std = match head {
            HeadKind::Gaussian => Some(find("act.log_std")?),
            HeadKind::Categorical => None,
        };
        Ok(BoundNet {
            input_dim,
            hidden,
            head,
            w1: find("trunk.w1")?,
            b1: find("trunk.b1")?,
            w2: find("trunk.w2")?,
            b2: find("trunk.b2")?,
            wa: find("act.w")?,
            ba: find("act.b")?,
            log_std,
            wv: find("val.w")?,
            bv: find("val.b")?,
        })
    }

    pub fn named_vars(&self) -> Vec<(&'static str, Var)> {
        let mut out = vec![
            ("trunk.w1", self.w1),
            ("trunk.b1", self.b1),
            ("trunk.w2", self.w2),
            ("trunk.b2", self.b2),
            ("act.w", self.wa),
            ("act.b", self.ba),
        ];
        if let Some(ls) = self.log_std {
            out.push(("act.log_std", ls));
        }
        out.push(("val.w", self.wv));
        out.push(("val.b", self.bv));
        out
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    /// Taped mirror of [`PolicyNet::forward_batch_plain`]: same kernels, same
    /// op order, bit-identical outputs.
    pub fn forward_batch(
        &self,
        tape: &Tape,
        x: Var,
        rows: usize,
    ) -> crate::autodiff::Result<BatchHeads> {
        debug_assert_eq!(tape.shape_of(x), vec![rows, self.input_dim]);
        let _ = self.hidden;
        let h1 = tape.tanh(tape.add(
            tape.matmul(x, self.w1)?,
            tape.broadcast_rows(self.b1, rows)?,
        )?)?;
        let h2 = tape.tanh(tape.add(
            tape.matmul(h1, self.w2)?,
            tape.broadcast_rows(self.b2, rows)?,
        )?)?;
        let act = tape.add(
            tape.matmul(h2, self.wa)?,
            tape.broadcast_rows(self.ba, rows)?,
        )?;
        let value = tape.add(
            tape.matmul(h2, self.wv)?,
            tape.broadcast_rows(self.bv, rows)?,
        )?;
        let log_std = match self.log_std {
            Some(ls) => Some(tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)?),
            None => None,
        };
        Ok(BatchHeads { act, log_std, value, rows })
    }
}
