use crate::numerics::ParamSet;

/// Adam with bias correction and optional decoupled weight decay.
///
/// Decay applies to matrices only, not to biases or normalization vectors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    steps: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, params: &mut dyn ParamSet) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let mut slot = 0;
        params.visit_mut(&mut |p| {
            if self.first.len() == slot {
                self.first.push(vec![0.0; p.value.len()]);
                self.second.push(vec![0.0; p.value.len()]);
            }
            let decay = if p.value.shape().len() >= 2 {
                self.weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            let grads = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
                *w -= self.learning_rate * (update + decay * *w);
            }
            slot += 1;
        });
    }
}
