//! Multinomial No-U-Turn transition with a diagonal Euclidean metric.
//!
//! Trajectories are built by repeated doubling in a random direction.
//! Proposals are drawn within subtrees in proportion to `exp(−H)`; at the top
//! level the new subtree replaces the current sample with probability
//! `min(1, W_new / W_old)`. The U-turn check uses summed momenta and is also
//! applied across the seams of merged subtrees.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::sampler::LogDensity;

/// Energy error beyond which a trajectory is flagged divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.logp_grad(&q, &mut grad);
        let p = vec![0.0; q.len()];
        Self { q, p, grad, logp }
    }

    fn kinetic(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        let h = -self.logp + self.kinetic(inv_mass);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, inv_mass: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_mass).map(|(p, m)| p * m).collect()
    }

    pub fn resample_momentum<R: Rng + ?Sized>(&mut self, inv_mass: &[f64], rng: &mut R) {
        for (p, m) in self.p.iter_mut().zip(inv_mass) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }

    pub fn leapfrog<T: LogDensity + ?Sized>(&mut self, target: &T, eps: f64, inv_mass: &[f64]) {
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in self.q.iter_mut().zip(&self.p).zip(inv_mass) {
            *q += eps * m * p;
        }
        self.logp = target.logp_grad(&self.q, &mut self.grad);
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

/// Per-transition statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
    pub step_size: f64,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(v_minus: &[f64], v_plus: &[f64], rho: &[f64]) -> bool {
    dot(v_plus, rho) > 0.0 && dot(v_minus, rho) > 0.0
}

/// Boundary momenta and velocities of a (sub)trajectory, in integration order.
struct Edges {
    p_beg: Vec<f64>,
    v_beg: Vec<f64>,
    p_end: Vec<f64>,
    v_end: Vec<f64>,
}

struct TreeBuilder<'a, T: ?Sized, R: ?Sized> {
    target: &'a T,
    rng: &'a mut R,
    inv_mass: &'a [f64],
    eps: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

impl<T: LogDensity + ?Sized, R: Rng + ?Sized> TreeBuilder<'_, T, R> {
    /// Extends `frontier` by `2^depth` leapfrog steps. Returns the subtree's
    /// proposal, momentum sum, log-weight and edges, or `None` when the
    /// subtree diverged or turned back on itself.
    fn build(
        &mut self,
        frontier: &mut PhasePoint,
        depth: usize,
        log_sum_weight: &mut f64,
    ) -> Option<(PhasePoint, Vec<f64>, Edges)> {
        if depth == 0 {
            frontier.leapfrog(self.target, self.eps, self.inv_mass);
            self.n_leapfrog += 1;
            let h = frontier.hamiltonian(self.inv_mass);
            if h - self.h0 > DIVERGENCE_THRESHOLD {
                self.divergent = true;
            }
            let dh = self.h0 - h;
            *log_sum_weight = log_sum_exp(*log_sum_weight, dh);
            self.sum_metro += if dh > 0.0 { 1.0 } else { dh.exp() };
            if self.divergent {
                return None;
            }
            let v = frontier.velocity(self.inv_mass);
            let edges = Edges {
                p_beg: frontier.p.clone(),
                v_beg: v.clone(),
                p_end: frontier.p.clone(),
                v_end: v,
            };
            return Some((frontier.clone(), frontier.p.clone(), edges));
        }

        let mut lsw_init = f64::NEG_INFINITY;
        let (proposal_init, rho_init, edges_init) = self.build(frontier, depth - 1, &mut lsw_init)?;
        let mut lsw_final = f64::NEG_INFINITY;
        let (proposal_final, rho_final, edges_final) = self.build(frontier, depth - 1, &mut lsw_final)?;

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        let take_final = if lsw_final > lsw_subtree {
            true
        } else {
            self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp()
        };
        let proposal = if take_final { proposal_final } else { proposal_init };

        let rho = add(&rho_init, &rho_final);
        let mut persist = no_u_turn(&edges_init.v_beg, &edges_final.v_end, &rho);
        let rho_ext = add(&rho_init, &edges_final.p_beg);
        persist &= no_u_turn(&edges_init.v_beg, &edges_final.v_beg, &rho_ext);
        let rho_ext = add(&rho_final, &edges_init.p_end);
        persist &= no_u_turn(&edges_init.v_end, &edges_final.v_end, &rho_ext);

        if !persist {
            return None;
        }
        let edges = Edges {
            p_beg: edges_init.p_beg,
            v_beg: edges_init.v_beg,
            p_end: edges_final.p_end,
            v_end: edges_final.v_end,
        };
        Some((proposal, rho, edges))
    }
}

/// One NUTS transition from `current`. The returned point carries the new
/// position, log-density and gradient.
pub fn nuts_step<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &PhasePoint,
    rng: &mut R,
    step_size: f64,
    inv_mass: &[f64],
    max_depth: usize,
) -> (PhasePoint, TransitionStats) {
    let mut start = current.clone();
    start.resample_momentum(inv_mass, rng);
    let h0 = start.hamiltonian(inv_mass);

    let v0 = start.velocity(inv_mass);
    // Backward and forward frontiers, and their edge momenta/velocities.
    let mut bck = start.clone();
    let mut fwd = start.clone();
    let (mut p_bck, mut v_bck) = (start.p.clone(), v0.clone());
    let (mut p_fwd, mut v_fwd) = (start.p.clone(), v0);
    // Momenta/velocities just inside each edge of the current trajectory,
    // needed for the seam checks.
    let mut rho = start.p.clone();
    let mut sample = start.clone();
    let mut log_sum_weight = 0.0;
    let mut depth = 0;

    let mut builder = TreeBuilder {
        target,
        rng,
        inv_mass,
        eps: step_size,
        h0,
        n_leapfrog: 0,
        sum_metro: 0.0,
        divergent: false,
    };

    while depth < max_depth {
        let forward = builder.rng.random::<f64>() > 0.5;
        let mut lsw_subtree = f64::NEG_INFINITY;
        let (result, old_inner_p, old_inner_v) = if forward {
            builder.eps = step_size;
            let r = builder.build(&mut fwd, depth, &mut lsw_subtree);
            (r, p_fwd.clone(), v_fwd.clone())
        } else {
            builder.eps = -step_size;
            let r = builder.build(&mut bck, depth, &mut lsw_subtree);
            (r, p_bck.clone(), v_bck.clone())
        };
        let Some((proposal, rho_subtree, edges)) = result else {
            break;
        };
        depth += 1;

        if lsw_subtree > log_sum_weight || builder.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            sample = proposal;
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        // Orient everything from the backward end to the forward end.
        let (rho_bck, rho_fwd, p_bck_inner, v_bck_inner, p_fwd_inner, v_fwd_inner);
        let old_rho = rho.clone();
        if forward {
            rho_bck = old_rho;
            rho_fwd = rho_subtree;
            p_bck_inner = old_inner_p;
            v_bck_inner = old_inner_v;
            p_fwd_inner = edges.p_beg;
            v_fwd_inner = edges.v_beg;
            p_fwd = edges.p_end;
            v_fwd = edges.v_end;
        } else {
            rho_fwd = old_rho;
            rho_bck = rho_subtree;
            p_fwd_inner = old_inner_p;
            v_fwd_inner = old_inner_v;
            p_bck_inner = edges.p_beg;
            v_bck_inner = edges.v_beg;
            p_bck = edges.p_end;
            v_bck = edges.v_end;
        }
        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&v_bck, &v_fwd, &rho);
        let rho_ext = add(&rho_bck, &p_fwd_inner);
        persist &= no_u_turn(&v_bck, &v_fwd_inner, &rho_ext);
        let rho_ext = add(&rho_fwd, &p_bck_inner);
        persist &= no_u_turn(&v_bck_inner, &v_fwd, &rho_ext);
        if !persist {
            break;
        }
    }

    let n = builder.n_leapfrog.max(1);
    let stats = TransitionStats {
        accept_stat: builder.sum_metro / n as f64,
        depth,
        n_leapfrog: builder.n_leapfrog,
        divergent: builder.divergent,
        energy: sample.hamiltonian(inv_mass),
        step_size,
    };
    (sample, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn logp_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
            for (g, v) in grad.iter_mut().zip(z) {
                *g = -v;
            }
            -0.5 * z.iter().map(|v| v * v).sum::<f64>()
        }
    }

    struct Flat;

    impl LogDensity for Flat {
        fn dim(&self) -> usize {
            2
        }
        fn logp_grad(&self, _z: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            0.0
        }
    }

    #[test]
    fn flat_target_accepts_with_probability_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pt = PhasePoint::new(&Flat, vec![0.0, 0.0]);
        for _ in 0..20 {
            let (next, st) = nuts_step(&Flat, &pt, &mut rng, 0.3, &[1.0, 1.0], 6);
            assert_eq!(st.accept_stat, 1.0);
            assert!(!st.divergent);
            pt = next;
        }
    }

    #[test]
    fn depth_cap_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pt = PhasePoint::new(&StdNormal(1), vec![0.5]);
        // tiny steps never turn around within 2^3 leapfrogs
        let (_, st) = nuts_step(&StdNormal(1), &pt, &mut rng, 1e-4, &[1.0], 3);
        assert_eq!(st.depth, 3);
        assert_eq!(st.n_leapfrog, 7);
    }

    #[test]
    fn one_dimensional_normal_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target = StdNormal(1);
        let mut pt = PhasePoint::new(&target, vec![0.0]);
        let n = 20_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let (next, _) = nuts_step(&target, &pt, &mut rng, 0.9, &[1.0], 10);
            pt = next;
            xs.push(pt.q[0]);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn divergence_flagged_for_huge_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = StdNormal(3);
        let pt = PhasePoint::new(&target, vec![1.0, -1.0, 0.5]);
        let (next, st) = nuts_step(&target, &pt, &mut rng, 200.0, &[1.0; 3], 10);
        assert!(st.divergent);
        assert_eq!(next.q, pt.q);
    }
}
