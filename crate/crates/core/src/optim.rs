//! Parameter-update rules with per-parameter persistent state.
//!
//! All rules are element-wise. Adagrad accumulates squared gradients; Adam and
//! Nadam keep bias-corrected first and second moments. Nadam applies the
//! Nesterov look-ahead to the first moment: the next-step moment
//! `b1 * m + (1 - b1) * g` is bias-corrected with `1 - b1^(t+1)`, so at
//! `t = 1` from zero state it coincides with Adam.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NamedTensors = BTreeMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
    Nadam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adagrad,
        OptimizerKind::Adam,
        OptimizerKind::Nadam,
    ];

    /// Learning rate used when a run does not name one.
    pub fn default_lr(self) -> f32 {
        match self {
            OptimizerKind::Sgd => 0.1,
            OptimizerKind::Adagrad => 0.1,
            OptimizerKind::Adam | OptimizerKind::Nadam => 0.01,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Nadam => "nadam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adam" => Ok(OptimizerKind::Adam),
            "nadam" => Ok(OptimizerKind::Nadam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub lr: f32,
    pub eps: f32,
    pub beta1: f32,
    pub beta2: f32,
}

impl Hyper {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

fn same_shape(param: &Tensor, other: &Tensor, what: &str) -> Result<()> {
    if param.shape() == other.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} {:?} does not match parameter {:?}",
            other.shape(),
            param.shape()
        )))
    }
}

/// `param -= lr * grad`.
pub fn step_sgd(param: &mut Tensor, grad: &Tensor, lr: f32) -> Result<()> {
    same_shape(param, grad, "gradient")?;
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// `G += grad^2; param -= lr * grad / (sqrt(G) + eps)`.
pub fn step_adagrad(param: &mut Tensor, grad: &Tensor, accum: &mut Tensor, hyper: &Hyper) -> Result<()> {
    same_shape(param, grad, "gradient")?;
    same_shape(param, accum, "accumulator")?;
    for ((p, &g), a) in param.data_mut().iter_mut().zip(grad.data()).zip(accum.data_mut()) {
        *a += g * g;
        *p -= hyper.lr * g / (a.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Adam update at step `t` (already advanced, so `t >= 1`).
pub fn step_adam(param: &mut Tensor, grad: &Tensor, m: &mut Tensor, v: &mut Tensor, t: u64, hyper: &Hyper) -> Result<()> {
    moment_step(param, grad, m, v, t, hyper, false)
}

/// Nadam update at step `t` (already advanced, so `t >= 1`).
pub fn step_nadam(param: &mut Tensor, grad: &Tensor, m: &mut Tensor, v: &mut Tensor, t: u64, hyper: &Hyper) -> Result<()> {
    moment_step(param, grad, m, v, t, hyper, true)
}

fn moment_step(
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    t: u64,
    hyper: &Hyper,
    nesterov: bool,
) -> Result<()> {
    same_shape(param, grad, "gradient")?;
    same_shape(param, m, "first moment")?;
    same_shape(param, v, "second moment")?;
    if t == 0 {
        return Err(Error::Contract("moment step requires t >= 1".into()));
    }
    let (b1, b2) = (hyper.beta1 as f64, hyper.beta2 as f64);
    let t = t.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - b1.powi(t);
    let c1_next = 1.0 - b1.powi(t + 1);
    let c2 = 1.0 - b2.powi(t);
    let lr = hyper.lr as f64;
    let eps = hyper.eps as f64;
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        let g = g as f64;
        let m_new = b1 * *m as f64 + (1.0 - b1) * g;
        let v_new = b2 * *v as f64 + (1.0 - b2) * g * g;
        *m = m_new as f32;
        *v = v_new as f32;
        let direction = if nesterov {
            (b1 * m_new + (1.0 - b1) * g) / c1_next
        } else {
            m_new / c1
        };
        let v_hat = v_new / c2;
        *p = (*p as f64 - lr * direction / (v_hat.sqrt() + eps)) as f32;
    }
    Ok(())
}

#[derive(Clone, Debug)]
enum Slot {
    Adagrad { accum: Tensor },
    Moments { m: Tensor, v: Tensor },
}

/// Optimizer state for one training run.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hyper: Hyper,
    t: u64,
    slots: BTreeMap<String, Slot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32) -> Self {
        Self {
            kind,
            hyper: Hyper::new(lr),
            t: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn with_default_lr(kind: OptimizerKind) -> Self {
        Self::new(kind, kind.default_lr())
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Updates every parameter not in `frozen` from its gradient and advances
    /// the step counter once. Frozen parameters are never written.
    pub fn apply<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor)>,
        grads: &NamedTensors,
        frozen: &BTreeSet<String>,
    ) -> Result<()> {
        let mut params: Vec<(String, &'a mut Tensor)> = params
            .into_iter()
            .filter(|(name, _)| !frozen.contains(name))
            .collect();
        if let Some((name, _)) = params.iter().find(|(name, _)| !grads.contains_key(name)) {
            return Err(Error::Contract(format!("no gradient for trainable parameter '{name}'")));
        }
        for (name, param) in &params {
            same_shape(param, &grads[name], &format!("gradient for '{name}'"))?;
        }
        self.t += 1;
        let t = self.t;
        for (name, param) in params.iter_mut() {
            let grad = &grads[name.as_str()];
            match self.kind {
                OptimizerKind::Sgd => step_sgd(param, grad, self.hyper.lr)?,
                OptimizerKind::Adagrad => {
                    let slot = self.slots.entry(name.clone()).or_insert_with(|| Slot::Adagrad {
                        accum: Tensor::zeros(param.shape()).expect("parameter shape is valid"),
                    });
                    let Slot::Adagrad { accum } = slot else { unreachable!("slot kind fixed per optimizer") };
                    step_adagrad(param, grad, accum, &self.hyper)?;
                }
                OptimizerKind::Adam | OptimizerKind::Nadam => {
                    let slot = self.slots.entry(name.clone()).or_insert_with(|| Slot::Moments {
                        m: Tensor::zeros(param.shape()).expect("parameter shape is valid"),
                        v: Tensor::zeros(param.shape()).expect("parameter shape is valid"),
                    });
                    let Slot::Moments { m, v } = slot else { unreachable!("slot kind fixed per optimizer") };
                    if self.kind == OptimizerKind::Adam {
                        step_adam(param, grad, m, v, t, &self.hyper)?;
                    } else {
                        step_nadam(param, grad, m, v, t, &self.hyper)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn scalar(v: f32) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let mut p = scalar(1.0);
        step_sgd(&mut p, &scalar(0.5), 0.1).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-6);

        let mut p = scalar(1.0);
        step_sgd(&mut p, &scalar(0.0), 0.1).unwrap();
        assert_eq!(p.data()[0], 1.0);

        let mut theta = scalar(1.0);
        let mut seen = vec![];
        for _ in 0..2 {
            let g = theta.scale(2.0);
            step_sgd(&mut theta, &g, 0.1).unwrap();
            seen.push(theta.data()[0]);
        }
        assert!((seen[0] - 0.8).abs() < 1e-6 && (seen[1] - 0.64).abs() < 1e-6);
    }

    #[test]
    fn adagrad_first_step() {
        let mut p = scalar(1.0);
        let mut g_acc = scalar(0.0);
        step_adagrad(&mut p, &scalar(0.5), &mut g_acc, &Hyper::new(0.1)).unwrap();
        assert_eq!(g_acc.data()[0], 0.25);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adagrad_zero_grad_is_fixed_point() {
        let mut p = scalar(0.3);
        let mut acc = scalar(0.7);
        step_adagrad(&mut p, &scalar(0.0), &mut acc, &Hyper::new(0.1)).unwrap();
        assert_eq!((p.data()[0], acc.data()[0]), (0.3, 0.7));
    }

    #[test]
    fn adagrad_steps_shrink() {
        let mut p = scalar(0.0);
        let mut acc = scalar(0.0);
        let mut last = f32::INFINITY;
        for _ in 0..20 {
            let before = p.data()[0];
            step_adagrad(&mut p, &scalar(1.0), &mut acc, &Hyper::new(0.1)).unwrap();
            let step = (p.data()[0] - before).abs();
            assert!(step < last);
            last = step;
        }
    }

    #[test]
    fn adam_first_step() {
        let mut p = scalar(1.0);
        let (mut m, mut v) = (scalar(0.0), scalar(0.0));
        step_adam(&mut p, &scalar(0.5), &mut m, &mut v, 1, &Hyper::new(0.001)).unwrap();
        assert!((p.data()[0] - 0.999).abs() < 1e-6);

        // displacement ~ lr * sign(g) for any g
        for g in [-3.0f32, 0.01, 250.0] {
            let mut p = scalar(0.0);
            let (mut m, mut v) = (scalar(0.0), scalar(0.0));
            step_adam(&mut p, &scalar(g), &mut m, &mut v, 1, &Hyper::new(0.01)).unwrap();
            assert!((p.data()[0] + 0.01 * g.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_grad_fixed_point_for_moment_rules() {
        for nadam in [false, true] {
            let mut p = scalar(0.42);
            let (mut m, mut v) = (scalar(0.0), scalar(0.0));
            let h = Hyper::new(0.01);
            if nadam {
                step_nadam(&mut p, &scalar(0.0), &mut m, &mut v, 1, &h).unwrap();
            } else {
                step_adam(&mut p, &scalar(0.0), &mut m, &mut v, 1, &h).unwrap();
            }
            assert_eq!(p.data()[0], 0.42);
        }
    }

    #[test]
    fn nadam_matches_adam_at_first_step() {
        for g in [0.5f32, -2.0, 1e-3] {
            let h = Hyper::new(0.001);
            let (mut pa, mut pn) = (scalar(1.0), scalar(1.0));
            let (mut ma, mut va, mut mn, mut vn) = (scalar(0.0), scalar(0.0), scalar(0.0), scalar(0.0));
            step_adam(&mut pa, &scalar(g), &mut ma, &mut va, 1, &h).unwrap();
            step_nadam(&mut pn, &scalar(g), &mut mn, &mut vn, 1, &h).unwrap();
            assert!((pa.data()[0] - pn.data()[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn nadam_quadratic_from_five() {
        let mut theta = scalar(5.0);
        let (mut m, mut v) = (scalar(0.0), scalar(0.0));
        for t in 1..=100 {
            let g = theta.scale(2.0);
            step_nadam(&mut theta, &g, &mut m, &mut v, t, &Hyper::new(0.1)).unwrap();
        }
        assert!(theta.data()[0].abs() < 0.5, "theta {}", theta.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::zeros(&[2]).unwrap();
        assert!(matches!(step_sgd(&mut p, &scalar(1.0), 0.1), Err(Error::ShapeMismatch(_))));
    }

    fn quadratic_run(kind: OptimizerKind, seed: u64) -> f32 {
        let mut theta = Tensor::uniform(&[8], -1.0, 1.0, &mut Rng::new(seed)).unwrap();
        let mut opt = Optimizer::with_default_lr(kind);
        let frozen = BTreeSet::new();
        for _ in 0..1000 {
            let grads: NamedTensors = [("theta".to_string(), theta.scale(2.0))].into();
            opt.apply([("theta".to_string(), &mut theta)], &grads, &frozen).unwrap();
        }
        theta.data().iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    #[test]
    fn all_rules_converge_on_quadratic() {
        for kind in OptimizerKind::ALL {
            for seed in 0..5 {
                let norm = quadratic_run(kind, seed);
                assert!(norm < 1e-2, "{kind} seed {seed}: |theta| = {norm}");
            }
        }
    }

    #[test]
    fn apply_respects_frozen_and_advances_t() {
        let mut a = scalar(1.0);
        let mut b = scalar(1.0);
        let grads: NamedTensors = [("a".to_string(), scalar(0.5)), ("b".to_string(), scalar(0.5))].into();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        let all: BTreeSet<String> = ["a".to_string(), "b".to_string()].into();
        opt.apply([("a".to_string(), &mut a), ("b".to_string(), &mut b)], &grads, &all).unwrap();
        assert_eq!(opt.step_count(), 1);
        assert_eq!((a.data()[0], b.data()[0]), (1.0, 1.0));

        let only_a: BTreeSet<String> = ["a".to_string()].into();
        opt.apply([("a".to_string(), &mut a), ("b".to_string(), &mut b)], &grads, &only_a).unwrap();
        assert_eq!(a.data()[0], 1.0);
        assert!(b.data()[0] < 1.0);
    }

    #[test]
    fn apply_with_empty_frozen_equals_manual_steps() {
        let mut via_apply = scalar(1.0);
        let mut manual = scalar(1.0);
        let mut acc = scalar(0.0);
        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 0.1);
        for _ in 0..3 {
            let g = via_apply.scale(2.0);
            let grads: NamedTensors = [("w".to_string(), g)].into();
            opt.apply([("w".to_string(), &mut via_apply)], &grads, &BTreeSet::new()).unwrap();
            let g = manual.scale(2.0);
            step_adagrad(&mut manual, &g, &mut acc, &Hyper::new(0.1)).unwrap();
        }
        assert!(via_apply.bit_eq(&manual));
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut a = scalar(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        let r = opt.apply([("a".to_string(), &mut a)], &NamedTensors::new(), &BTreeSet::new());
        assert!(matches!(r, Err(Error::Contract(_))));
        assert_eq!(opt.step_count(), 0);
    }
}
