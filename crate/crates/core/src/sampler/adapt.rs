//! Warmup adaptation: dual-averaging step size and windowed diagonal
//! metric estimation.

use rand::Rng;

use crate::sampler::nuts::PhasePoint;
use crate::sampler::LogDensity;

/// Smallest allowed inverse-metric entry.
pub const MASS_FLOOR: f64 = 1e-8;

/// Nesterov dual averaging toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(target: f64, initial_step: f64) -> Self {
        let mut da = Self {
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        da.restart(initial_step);
        da
    }

    pub fn restart(&mut self, step: f64) {
        self.mu = (10.0 * step).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let w = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    /// Step size to freeze at the end of warmup.
    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for per-coordinate variance.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|s| s / (n - 1.0)).collect()
    }
}

/// Stan-style warmup schedule: an initial fast buffer, slow windows that
/// double in length, and a terminal fast buffer.
#[derive(Debug, Clone)]
pub struct WindowedAdaptation {
    n_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window_end: usize,
    counter: usize,
    estimator: Welford,
    enabled: bool,
}

impl WindowedAdaptation {
    pub fn new(dim: usize, n_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        let enabled = n_warmup >= 20;
        if enabled && init_buffer + term_buffer + base_window > n_warmup {
            init_buffer = (0.15 * n_warmup as f64) as usize;
            term_buffer = (0.1 * n_warmup as f64) as usize;
            base_window = n_warmup - (init_buffer + term_buffer);
        }
        Self {
            n_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window_end: init_buffer + base_window - 1,
            counter: 0,
            estimator: Welford::new(dim),
            enabled,
        }
    }

    fn in_window(&self) -> bool {
        self.enabled
            && self.counter >= self.init_buffer
            && self.counter < self.n_warmup - self.term_buffer
            && self.counter != self.n_warmup
    }

    fn window_closes(&self) -> bool {
        self.enabled && self.counter == self.next_window_end && self.counter != self.n_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.n_warmup - self.term_buffer - 1;
        if self.next_window_end == last {
            return;
        }
        self.window_size *= 2;
        self.next_window_end = self.counter + self.window_size;
        if self.next_window_end != last
            && self.next_window_end + 2 * self.window_size >= self.n_warmup - self.term_buffer
        {
            self.next_window_end = last;
        }
    }

    /// Records a warmup position. Returns an updated inverse metric when a
    /// slow window closes.
    pub fn observe(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if self.in_window() {
            self.estimator.add(q);
        }
        let mut out = None;
        if self.window_closes() {
            self.compute_next_window();
            let n = self.estimator.n as f64;
            if n >= 2.0 {
                let var = self.estimator.variance();
                out = Some(
                    var.into_iter()
                        .map(|v| {
                            let reg = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
                            if reg.is_finite() {
                                reg.max(MASS_FLOOR)
                            } else {
                                1.0
                            }
                        })
                        .collect(),
                );
            }
            self.estimator = Welford::new(self.estimator.mean.len());
        }
        self.counter += 1;
        out
    }
}

/// Doubles or halves `step` until a single leapfrog's acceptance crosses 0.8.
pub fn find_reasonable_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    point: &PhasePoint,
    inv_mass: &[f64],
    mut step: f64,
    rng: &mut R,
) -> f64 {
    let log_target = 0.8f64.ln();
    let trial = |step: f64, rng: &mut R| {
        let mut z = point.clone();
        z.resample_momentum(inv_mass, rng);
        let h0 = z.hamiltonian(inv_mass);
        z.leapfrog(target, step, inv_mass);
        h0 - z.hamiltonian(inv_mass)
    };
    let direction = if trial(step, rng) > log_target { 1 } else { -1 };
    for _ in 0..100 {
        let dh = trial(step, rng);
        if direction == 1 && !(dh > log_target) {
            break;
        }
        if direction == -1 && !(dh < log_target) {
            break;
        }
        step = if direction == 1 { 2.0 * step } else { 0.5 * step };
        if !(step > 1e-12 && step < 1e7) {
            break;
        }
    }
    step.clamp(1e-12, 1e7)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_schedule_matches_default_layout() {
        let mut w = WindowedAdaptation::new(1, 1000);
        let mut closes = Vec::new();
        for t in 0..1000 {
            if w.observe(&[t as f64]).is_some() {
                closes.push(t);
            }
        }
        assert_eq!(closes, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn short_warmup_still_produces_metric() {
        let mut w = WindowedAdaptation::new(2, 40);
        let mut got = None;
        for t in 0..40 {
            if let Some(m) = w.observe(&[t as f64, -(t as f64) * 2.0]) {
                got = Some(m);
            }
        }
        let m = got.expect("one window");
        assert!(m.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn degenerate_variance_is_floored() {
        let mut w = WindowedAdaptation::new(1, 40);
        let mut got = None;
        for _ in 0..40 {
            if let Some(m) = w.observe(&[1.0]) {
                got = Some(m);
            }
        }
        assert!(got.unwrap()[0] >= MASS_FLOOR);
    }

    #[test]
    fn dual_averaging_moves_toward_target() {
        let mut da = DualAveraging::new(0.8, 1.0);
        let shrink = da.update(0.2);
        let mut da2 = DualAveraging::new(0.8, 1.0);
        let grow = da2.update(1.0);
        assert!(shrink < grow);
    }
}
