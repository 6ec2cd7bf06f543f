//! Adam and the cyclical learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CyclePolicy {
    /// Triangle whose peak decays linearly to `min_lr` over the run.
    DecayingTriangular,
    /// Fixed triangle between `min_lr` and `max_lr`.
    Triangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicalSchedule {
    pub min_lr: Float,
    pub max_lr: Float,
    /// Iterations from trough to peak.
    pub step_size: usize,
    pub total_iters: usize,
    pub policy: CyclePolicy,
}

impl Default for CyclicalSchedule {
    fn default() -> Self {
        Self {
            min_lr: 1e-4,
            max_lr: 1e-3,
            step_size: 2000,
            total_iters: 60_000,
            policy: CyclePolicy::DecayingTriangular,
        }
    }
}

impl CyclicalSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.min_lr && self.min_lr <= self.max_lr) || self.step_size == 0 || self.total_iters == 0 {
            return Err(Error::Config(format!(
                "schedule needs 0 < min_lr <= max_lr and positive step_size/total_iters, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Triangular wave in `[0, 1]`: 0 at multiples of `2·step_size`, 1 at odd
    /// multiples of `step_size`.
    pub fn triangle(&self, t: usize) -> Float {
        let x = t as Float / self.step_size as Float;
        let phase = x - 2.0 * (x / 2.0).floor() - 1.0;
        (1.0 - phase.abs()).max(0.0)
    }

    pub fn ceiling(&self, t: usize) -> Float {
        match self.policy {
            CyclePolicy::Triangular => self.max_lr,
            CyclePolicy::DecayingTriangular => {
                self.max_lr - (self.max_lr - self.min_lr) * t as Float / self.total_iters as Float
            }
        }
    }

    pub fn lr_at(&self, t: usize) -> Result<Float> {
        if t >= self.total_iters {
            return Err(Error::InvalidArgument(format!(
                "iteration {t} outside schedule of {} iterations",
                self.total_iters
            )));
        }
        let tri = self.triangle(t);
        Ok(self.min_lr * (1.0 - tri) + self.ceiling(t) * tri)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: Float,
    pub beta2: Float,
    pub eps: Float,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Moment tensors `(m, v)` in parameter order.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Restores a saved state; shapes must mirror the current moments.
    pub fn restore(&mut self, m: Vec<Tensor>, v: Vec<Tensor>, t: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::InvalidArgument("optimizer state has the wrong number of tensors".into()));
        }
        for ((old, new_m), new_v) in self.m.iter().zip(&m).zip(&v) {
            old.check_same_shape(new_m, "adam_restore")?;
            old.check_same_shape(new_v, "adam_restore")?;
        }
        (self.m, self.v, self.t) = (m, v, t);
        Ok(())
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: Float) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            m.check_same_shape(p, "adam_step")?;
            m.check_same_shape(g, "adam_step")?;
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let pd = p.data_mut();
            for (((w, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_examples() {
        let s = CyclicalSchedule::default();
        assert_eq!(s.lr_at(0).unwrap(), 1e-4);
        let peak = s.lr_at(2000).unwrap();
        assert!((peak - 9.7e-4).abs() < 1e-15, "{peak}");
        assert_eq!(s.lr_at(4000).unwrap(), 1e-4);
        assert!((s.lr_at(1000).unwrap() - 0.5 * (1e-4 + s.ceiling(1000))).abs() < 1e-15);
        assert!(matches!(s.lr_at(60_000), Err(Error::InvalidArgument(_))));

        let flat = CyclicalSchedule { policy: CyclePolicy::Triangular, ..s };
        assert_eq!(flat.lr_at(2000).unwrap(), 1e-3);
        assert_eq!(flat.lr_at(58_000).unwrap(), 1e-3);
        assert!((s.lr_at(58_000).unwrap() - 1.3e-4).abs() < 1e-15);
        assert_eq!(s.lr_at(56_000).unwrap(), 1e-4);
    }

    #[test]
    fn schedule_validation() {
        assert!(CyclicalSchedule::default().validate().is_ok());
        let bad = CyclicalSchedule { min_lr: 1e-2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = CyclicalSchedule { step_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::full(&[3], 2.0);
        let g = Tensor::ones(&[3]);
        let mut adam = Adam::new(&[&p]);
        adam.step(&mut [&mut p], &[&g], 0.01).unwrap();
        for &x in p.data() {
            assert!((x - (2.0 - 0.01)).abs() < 1e-9);
        }
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::new(&[2], vec![0.5, -3.0]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(&[&p]);
        adam.step(&mut [&mut p], &[&Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn converges_on_parabola() {
        let mut x = Tensor::scalar(1.0);
        let mut adam = Adam::new(&[&x]);
        for _ in 0..100 {
            let g = x.scale(2.0);
            adam.step(&mut [&mut x], &[&g], 0.1).unwrap();
        }
        assert!(x.data()[0].abs() < 0.1, "{}", x.data()[0]);
    }

    #[test]
    fn shape_errors() {
        let mut p = Tensor::zeros(&[2]);
        let mut adam = Adam::new(&[&p]);
        let err = adam.step(&mut [&mut p], &[&Tensor::zeros(&[3])], 0.1);
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
        assert!(adam.step(&mut [], &[], 0.1).is_err());
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let mut p = Tensor::new(&[3], vec![0.1, 0.2, -0.3]).unwrap();
            let mut adam = Adam::new(&[&p]);
            for k in 0..5 {
                let g = p.map(|x| x * k as Float + 0.01);
                adam.step(&mut [&mut p], &[&g], 1e-3).unwrap();
            }
            (p, adam)
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn lr_is_bounded_and_continuous(t in 0usize..59_999, flat in any::<bool>()) {
            let s = CyclicalSchedule {
                policy: if flat { CyclePolicy::Triangular } else { CyclePolicy::DecayingTriangular },
                ..Default::default()
            };
            let (a, b) = (s.lr_at(t).unwrap(), s.lr_at(t + 1).unwrap());
            prop_assert!(a >= s.min_lr - 1e-18 && a <= s.max_lr + 1e-18);
            let slope = (s.max_lr - s.min_lr) / s.step_size as Float
                + (s.max_lr - s.min_lr) / s.total_iters as Float;
            prop_assert!((a - b).abs() <= slope * (1.0 + 1e-9));
        }
    }
}
