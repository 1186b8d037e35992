//! AdaBelief optimizer on flat parameter vectors.

/// First/second-moment state for one parameter group.
#[derive(Debug, Clone)]
pub struct AdaBeliefState {
    m: Vec<f64>,
    s: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdaBeliefState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            s: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-16,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One AdaBelief update:
/// `m <- b1 m + (1-b1) g`, `s <- b2 s + (1-b2)(g - m)^2`, bias-corrected,
/// `p -= lr * m_hat / (sqrt(s_hat) + eps)`.
pub fn adabelief_step(params: &mut [f64], grads: &[f64], state: &mut AdaBeliefState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        let diff = g - state.m[i];
        state.s[i] = b2 * state.s[i] + (1.0 - b2) * diff * diff;
        let m_hat = state.m[i] / bc1;
        let s_hat = state.s[i] / bc2;
        params[i] -= lr * m_hat / (s_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![1.0, -2.0, 3.5];
        let mut state = AdaBeliefState::new(3);
        adabelief_step(&mut params, &[0.0, 0.0, 0.0], &mut state, 0.1);
        assert_eq!(params, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn single_step_moves_against_gradient_sign() {
        let mut params = vec![0.0, 0.0];
        let mut state = AdaBeliefState::new(2);
        adabelief_step(&mut params, &[2.0, -0.3], &mut state, 0.01);
        assert!(params[0] < 0.0);
        assert!(params[1] > 0.0);
    }

    #[test]
    fn matches_hand_computed_two_step_trace() {
        // scalar quadratic f(p) = p^2 / 2, gradient g = p; hand-trace the
        // published update equations for two steps.
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-16, 0.1);
        let p0: f64 = 1.0;

        // step 1, g1 = 1.0
        let g1 = p0;
        let m1 = (1.0 - b1) * g1;
        let s1 = (1.0 - b2) * (g1 - m1) * (g1 - m1);
        let m1_hat = m1 / (1.0 - b1);
        let s1_hat = s1 / (1.0 - b2);
        let p1 = p0 - lr * m1_hat / (s1_hat.sqrt() + eps);

        // step 2, g2 = p1
        let g2 = p1;
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let s2 = b2 * s1 + (1.0 - b2) * (g2 - m2) * (g2 - m2);
        let m2_hat = m2 / (1.0 - b1 * b1);
        let s2_hat = s2 / (1.0 - b2 * b2);
        let p2 = p1 - lr * m2_hat / (s2_hat.sqrt() + eps);

        let mut params = vec![p0];
        let mut state = AdaBeliefState::new(1);
        let g = params[0];
        adabelief_step(&mut params, &[g], &mut state, lr);
        assert!((params[0] - p1).abs() < 1e-15, "{} vs {p1}", params[0]);
        let g = params[0];
        adabelief_step(&mut params, &[g], &mut state, lr);
        assert!((params[0] - p2).abs() < 1e-15, "{} vs {p2}", params[0]);
    }

    #[test]
    fn constant_gradient_reaches_unit_step_scale() {
        // with a constant gradient the belief term (g - m)^2 decays, so the
        // step magnitude approaches lr * g / eps-regularized scale; we only
        // assert the direction stays constant and the magnitude grows
        let mut params = vec![0.0];
        let mut state = AdaBeliefState::new(1);
        let mut last = 0.0;
        let mut last_step = 0.0;
        for _ in 0..50 {
            adabelief_step(&mut params, &[1.0], &mut state, 1e-3);
            let step = last - params[0];
            assert!(step > 0.0);
            assert!(step >= last_step * 0.99);
            last_step = step;
            last = params[0];
        }
    }
}
