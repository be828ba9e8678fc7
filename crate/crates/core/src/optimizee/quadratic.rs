use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_theta, Optimizee, OptimizeeError, StepData, TaskFamily};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::datasets::Split;
use crate::rng::rng_from_seed;

/// `L(theta) = ||W theta - y||^2` with fixed `W` (k x k) and `y` (k).
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask {
    pub w: Tensor,
    pub y: Tensor,
}

impl QuadraticTask {
    /// Entries of `W` and `y` drawn i.i.d. from the standard normal.
    pub fn sample(seed: u64, k: usize) -> Self {
        assert!(k >= 1, "quadratic dimension must be positive");
        let mut rng = rng_from_seed(seed);
        let w = (0..k * k).map(|_| rng.sample(StandardNormal)).collect();
        let y = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        QuadraticTask {
            w: Tensor::new(vec![k, k], w).expect("W shape"),
            y: Tensor::new(vec![k, 1], y).expect("y shape"),
        }
    }

    pub fn new(w: Tensor, y: Vec<f64>) -> Self {
        let k = y.len();
        assert_eq!(w.shape(), &[k, k], "W must be k x k");
        QuadraticTask {
            w,
            y: Tensor::new(vec![k, 1], y).expect("y shape"),
        }
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }
}

impl Optimizee for QuadraticTask {
    fn param_count(&self) -> usize {
        self.dim()
    }

    /// Standard normal entries.
    fn init_theta(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn next_step_data(&mut self) -> StepData {
        StepData::Full
    }

    fn loss_node(&self, tape: &mut Tape, theta: NodeId, _data: &StepData) -> Result<NodeId, OptimizeeError> {
        let k = self.dim();
        check_theta(tape, theta, k)?;
        let col = tape.view(theta, 0, &[k, 1])?;
        let w = tape.leaf(self.w.clone())?;
        let y = tape.leaf(self.y.clone())?;
        let wx = tape.matmul(w, col)?;
        let r = tape.sub(wx, y)?;
        let sq = tape.mul(r, r)?;
        Ok(tape.sum(sq)?)
    }
}

/// Random quadratics of a fixed dimension.
#[derive(Clone, Debug)]
pub struct QuadraticFamily {
    pub dim: usize,
    name: String,
}

impl QuadraticFamily {
    pub fn new(dim: usize) -> Self {
        QuadraticFamily {
            dim,
            name: format!("quadratic-{dim}"),
        }
    }
}

impl TaskFamily for QuadraticFamily {
    fn name(&self) -> &str {
        &self.name
    }

    fn param_count(&self) -> usize {
        self.dim
    }

    fn instance(&self, seed: u64, _split: Split) -> Box<dyn Optimizee> {
        Box::new(QuadraticTask::sample(seed, self.dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(k: usize) -> Tensor {
        let mut d = vec![0.0; k * k];
        (0..k).for_each(|i| d[i * k + i] = 1.0);
        Tensor::new(vec![k, k], d).unwrap()
    }

    #[test]
    fn identity_unit_vector_has_unit_loss() {
        let task = QuadraticTask::new(identity(3), vec![0.0; 3]);
        assert_eq!(task.loss(&[1.0, 0.0, 0.0], &StepData::Full).unwrap(), 1.0);
    }

    #[test]
    fn exact_minimizer_has_zero_loss() {
        let w = Tensor::new(vec![2, 2], vec![2.0, 1.0, 0.0, 4.0]).unwrap();
        let task = QuadraticTask::new(w, vec![3.0, 8.0]);
        // W^-1 y = (0.5, 2)
        assert!(task.loss(&[0.5, 2.0], &StepData::Full).unwrap() <= 1e-20);
    }

    #[test]
    fn gradient_matches_analytic_form() {
        let task = QuadraticTask::sample(4, 10);
        let theta = task.init_theta(5);
        let (_, grad) = task.loss_and_grad(&theta, &StepData::Full).unwrap();
        let (w, y) = (task.w.data(), task.y.data());
        let r: Vec<f64> = (0..10)
            .map(|i| (0..10).map(|j| w[i * 10 + j] * theta[j]).sum::<f64>() - y[i])
            .collect();
        for j in 0..10 {
            let expect: f64 = 2.0 * (0..10).map(|i| w[i * 10 + j] * r[i]).sum::<f64>();
            assert!((grad[j] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(QuadraticTask::sample(8, 4), QuadraticTask::sample(8, 4));
        assert_ne!(QuadraticTask::sample(8, 4), QuadraticTask::sample(9, 4));
        let t = QuadraticTask::sample(1, 4);
        assert_eq!(t.init_theta(3), t.init_theta(3));
    }

    #[test]
    fn wrong_theta_length_is_rejected() {
        let task = QuadraticTask::sample(1, 4);
        assert_eq!(
            task.loss(&[0.0; 3], &StepData::Full),
            Err(OptimizeeError::ThetaLength { expected: 4, got: 3 })
        );
    }
}
