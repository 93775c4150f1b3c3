use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Staircase exponential decay: `lr(step) = lr0 * rate^floor(step / steps)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub steps: usize,
    pub rate: f64,
}

/// Learning rate as a function of the optimizer step counter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: Option<LrDecay>,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match self.decay {
            Some(LrDecay { steps, rate }) if steps > 0 => {
                self.initial * rate.powi((step / steps) as i32)
            }
            _ => self.initial,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    schedule: LrSchedule,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: usize,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(schedule: LrSchedule) -> Self {
        Adam {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: Vec<&Tensor>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count");
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        let lr = self.schedule.at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len());
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gr;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gr * gr;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Plain stochastic gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    schedule: LrSchedule,
    step: usize,
}

impl Sgd {
    pub fn new(schedule: LrSchedule) -> Self {
        Sgd { schedule, step: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: Vec<&Tensor>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count");
        let lr = self.schedule.at(self.step);
        self.step += 1;
        for (p, g) in params.into_iter().zip(grads) {
            for (w, &gr) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * gr;
            }
        }
    }
}
