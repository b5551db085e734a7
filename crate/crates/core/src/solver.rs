//! Tolerance optimization: maximize the per-coordinate tolerances `tau_i`
//! (minimize `sum phi_hat_i(tau_i)`) subject to `G . T <= headroom` and
//! `0 <= tau_i <= min(tau_cap, dist_to_min_i)`.
//!
//! The KKT system gives `phi_hat_i'(tau_i) = -lambda g_i` on interior
//! coordinates. [`solve_general`] bisects on `lambda` with a per-coordinate
//! bisection inside; [`solve_logform`] and [`solve_quadform`] are the exact
//! closed forms for the log and quadratic families.

use crate::complexity::{ComplexityKind, ComplexityModel, CoordinatePhi, DescentInfo};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-9;
/// Cap on doublings and on bisection steps of any single search.
pub const MAX_STEPS: usize = 64;

#[derive(Debug, Clone)]
pub struct ToleranceProblem<'a> {
    pub g: &'a [f64],
    pub headroom: f64,
    pub cm: &'a ComplexityModel,
    pub descent: &'a DescentInfo,
    pub tau_cap: f64,
    pub eps_lambda: f64,
    /// Bound on the relative change of every tolerance between outer steps.
    pub eps_tau: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub bracket_doublings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceResult {
    pub tau: Vec<f64>,
    pub lambda: f64,
    pub active: bool,
    pub signs: Vec<f64>,
    pub headroom: f64,
    pub stats: SolveStats,
}

impl<'a> ToleranceProblem<'a> {
    pub fn new(
        g: &'a [f64],
        headroom: f64,
        cm: &'a ComplexityModel,
        descent: &'a DescentInfo,
        tau_cap: f64,
    ) -> Self {
        Self {
            g,
            headroom,
            cm,
            descent,
            tau_cap,
            eps_lambda: DEFAULT_EPS,
            eps_tau: DEFAULT_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.g.len();
        if self.descent.signs.len() != n || self.descent.dist_to_min.len() != n {
            return Err(Error::Shape(format!(
                "gradient has {n} entries, descent info {}",
                self.descent.len()
            )));
        }
        if let Some(i) = self.g.iter().position(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Precondition(format!(
                "g[{i}] = {} is not a finite nonnegative value",
                self.g[i]
            )));
        }
        if !(self.headroom > 0.0 && self.headroom.is_finite()) {
            return Err(Error::Precondition(format!(
                "headroom must be positive and finite, got {}",
                self.headroom
            )));
        }
        if !(self.tau_cap > 0.0) {
            return Err(Error::Precondition(format!(
                "tau cap must be positive, got {}",
                self.tau_cap
            )));
        }
        if !(self.eps_lambda > 0.0 && self.eps_tau > 0.0) {
            return Err(Error::Precondition("solver tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn cap(&self, i: usize) -> f64 {
        self.tau_cap.min(self.descent.dist_to_min[i])
    }

    fn caps(&self) -> Vec<f64> {
        (0..self.g.len()).map(|i| self.cap(i)).collect()
    }

    /// Coordinates that take part in the multiplier system.
    fn free(&self, caps: &[f64]) -> Vec<usize> {
        (0..self.g.len())
            .filter(|&i| self.g[i] > 0.0 && caps[i] > 0.0)
            .collect()
    }

    fn finish(&self, tau: Vec<f64>, lambda: f64, stats: SolveStats) -> ToleranceResult {
        ToleranceResult {
            tau,
            lambda,
            active: lambda > 0.0,
            signs: self.descent.signs.clone(),
            headroom: self.headroom,
            stats,
        }
    }

    /// The loss-free answer when `sum g_i cap_i` fits in the headroom.
    fn slack(&self, caps: &[f64], free: &[usize]) -> Option<ToleranceResult> {
        let used: f64 = free.iter().map(|&i| self.g[i] * caps[i]).sum();
        (used <= self.headroom).then(|| self.finish(caps.to_vec(), 0.0, SolveStats::default()))
    }
}

/// Root of `phi'(tau) = target` (target < 0) inside `[lo, hi]` clipped to
/// `[0, cap]`. Returns `(lower, upper, steps)`; the root lies in between.
/// An infinite `hi` is first expanded by doubling from `scale`.
fn inner_root(
    phi: CoordinatePhi,
    target: f64,
    cap: f64,
    mut lo: f64,
    mut hi: f64,
    scale: f64,
) -> (f64, f64, usize) {
    if cap.is_finite() && phi.derivative(cap) <= target {
        return (cap, cap, 0);
    }
    if phi.derivative(0.0) >= target {
        return (0.0, 0.0, 0);
    }
    hi = hi.min(cap);
    let mut steps = 0;
    if !hi.is_finite() {
        hi = (2.0 * lo).max(scale);
        while phi.derivative(hi) < target {
            steps += 1;
            if steps > MAX_STEPS {
                return (hi, f64::INFINITY, steps);
            }
            lo = hi;
            hi *= 2.0;
        }
    }
    let mut iters = 0;
    while iters < MAX_STEPS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        iters += 1;
        if phi.derivative(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi, steps.max(iters))
}

struct Sweep {
    lower: Vec<f64>,
    upper: Vec<f64>,
    load: f64,
    steps: usize,
}

/// Per-coordinate tolerances at a fixed `lambda`, searched inside the given
/// bounds. `load` is `G . T` evaluated at the lower endpoints.
fn sweep(
    p: &ToleranceProblem,
    caps: &[f64],
    free: &[usize],
    lambda: f64,
    lo_bound: &[f64],
    hi_bound: &[f64],
) -> Sweep {
    let scale = p.headroom / free.iter().map(|&i| p.g[i]).sum::<f64>();
    let mut out = Sweep {
        lower: Vec::with_capacity(free.len()),
        upper: Vec::with_capacity(free.len()),
        load: 0.0,
        steps: 0,
    };
    for (k, &i) in free.iter().enumerate() {
        let phi = p.cm.coordinate(p.descent, i);
        let (l, u, s) = inner_root(phi, -lambda * p.g[i], caps[i], lo_bound[k], hi_bound[k], scale);
        out.load += p.g[i] * l;
        out.lower.push(l);
        out.upper.push(u);
        out.steps = out.steps.max(s);
    }
    out
}

fn lambda_start(p: &ToleranceProblem, free: &[usize]) -> f64 {
    let g1: f64 = free.iter().map(|&i| p.g[i]).sum();
    let iota = free
        .iter()
        .copied()
        .max_by(|&a, &b| p.g[a].total_cmp(&p.g[b]))
        .expect("free set is nonempty");
    let slope = p.cm.coordinate(p.descent, iota).derivative(p.headroom / g1);
    let start = slope.abs() / p.g[iota];
    if start > 0.0 && start.is_finite() {
        start
    } else {
        1.0
    }
}

/// Smallest doubling of the initial multiplier guess at which `G . T` fits
/// in the headroom. Also returns the doubling count and the sweep there.
fn bracket(p: &ToleranceProblem, caps: &[f64], free: &[usize]) -> Result<(f64, usize, Sweep)> {
    let zeros = vec![0.0; free.len()];
    let infs = vec![f64::INFINITY; free.len()];
    let mut lambda = lambda_start(p, free);
    let mut prev_load = f64::INFINITY;
    for doublings in 0..=MAX_STEPS {
        let s = sweep(p, caps, free, lambda, &zeros, &infs);
        if s.load > prev_load * (1.0 + 1e-12) {
            return Err(Error::ConvexityViolation(format!(
                "G.T grew from {prev_load} to {} when lambda doubled to {lambda}",
                s.load
            )));
        }
        if s.load <= p.headroom {
            return Ok((lambda, doublings, s));
        }
        prev_load = s.load;
        lambda *= 2.0;
    }
    Err(Error::Bracket(format!(
        "G.T still exceeds {} after {MAX_STEPS} doublings",
        p.headroom
    )))
}

/// Upper end of the multiplier search: a `lambda` whose tolerances satisfy
/// the loss constraint.
pub fn lambda_bracket(p: &ToleranceProblem) -> Result<f64> {
    p.validate()?;
    let caps = p.caps();
    let free = p.free(&caps);
    if free.is_empty() {
        return Err(Error::Precondition("no coordinate has a positive gradient".into()));
    }
    Ok(bracket(p, &caps, &free)?.0)
}

/// Nested bisection valid for any strictly convex `phi_hat`.
pub fn solve_general(p: &ToleranceProblem) -> Result<ToleranceResult> {
    p.validate()?;
    let caps = p.caps();
    let free = p.free(&caps);
    let mut tau: Vec<f64> = (0..p.g.len())
        .map(|i| if p.g[i] > 0.0 { 0.0 } else { caps[i] })
        .collect();
    if let Some(r) = p.slack(&caps, &free) {
        return Ok(r);
    }

    let (mut hi, doublings, hi_sweep) = bracket(p, &caps, &free)?;
    let mut lo = 0.0;
    let mut stats = SolveStats {
        bracket_doublings: doublings,
        max_inner_iterations: hi_sweep.steps,
        ..SolveStats::default()
    };
    // tolerances shrink as lambda grows: T(hi) bounds T from below, T(lo) from above
    let mut floor = hi_sweep.lower;
    let mut ceiling: Vec<f64> = free.iter().map(|&i| caps[i]).collect();
    let mut prev_lambda = hi;
    let mut prev_mid: Option<Vec<f64>> = None;

    while stats.outer_iterations < MAX_STEPS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        stats.outer_iterations += 1;
        let s = sweep(p, &caps, &free, mid, &floor, &ceiling);
        stats.max_inner_iterations = stats.max_inner_iterations.max(s.steps);
        let tau_step = prev_mid.as_ref().map_or(f64::INFINITY, |prev| {
            prev.iter()
                .zip(&s.lower)
                .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() / a.max(*b) })
                .fold(0.0, f64::max)
        });
        // tolerances span many decades, so their step is measured relatively
        let lambda_step = (mid - prev_lambda).abs();
        if s.load > p.headroom {
            lo = mid;
            ceiling = s.upper;
            prev_mid = Some(s.lower);
        } else {
            hi = mid;
            floor = s.lower.clone();
            prev_mid = Some(s.lower);
        }
        prev_lambda = mid;
        let used: f64 = free.iter().zip(&floor).map(|(&i, t)| p.g[i] * t).sum();
        let slackness = hi * (p.headroom - used);
        if lambda_step < p.eps_lambda && tau_step < p.eps_tau && slackness <= p.eps_lambda * p.headroom {
            break;
        }
    }

    for (k, &i) in free.iter().enumerate() {
        tau[i] = floor[k];
    }
    Ok(p.finish(tau, hi, stats))
}

/// Closed form for `-ln tau`: `tau_i = r / (m g_i)` over the `m` unclipped
/// coordinates with remaining headroom `r`, clipping to `caps` and
/// redistributing until no coordinate exceeds its cap. Every `g_i` must be
/// positive. Returns the tolerances and `lambda = m / r` (zero if everything
/// clipped).
pub fn logform_kernel(g: &[f64], headroom: f64, caps: &[f64]) -> Result<(Vec<f64>, f64)> {
    if g.len() != caps.len() {
        return Err(Error::Shape(format!("{} gradients for {} caps", g.len(), caps.len())));
    }
    if let Some(i) = g.iter().position(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::Precondition(format!(
            "closed form needs g[{i}] > 0, got {}",
            g[i]
        )));
    }
    let mut tau = vec![0.0; g.len()];
    let mut free: Vec<usize> = (0..g.len()).collect();
    let mut remaining = headroom;
    loop {
        if free.is_empty() {
            return Ok((tau, 0.0));
        }
        let m = free.len() as f64;
        let (clipped, kept): (Vec<usize>, Vec<usize>) =
            free.iter().partition(|&&i| remaining / (m * g[i]) > caps[i]);
        if clipped.is_empty() {
            for &i in &free {
                tau[i] = remaining / (m * g[i]);
            }
            return Ok((tau, m / remaining));
        }
        for &i in &clipped {
            tau[i] = caps[i];
            remaining -= g[i] * caps[i];
        }
        free = kept;
    }
}

pub fn solve_logform(p: &ToleranceProblem) -> Result<ToleranceResult> {
    p.validate()?;
    if p.cm.kind() != ComplexityKind::LogTolerance {
        return Err(Error::Precondition("log closed form needs a LogTolerance model".into()));
    }
    let caps = p.caps();
    let free = p.free(&caps);
    if let Some(r) = p.slack(&caps, &free) {
        return Ok(r);
    }
    let g: Vec<f64> = free.iter().map(|&i| p.g[i]).collect();
    let c: Vec<f64> = free.iter().map(|&i| caps[i]).collect();
    let (t, lambda) = logform_kernel(&g, p.headroom, &c)?;
    let mut tau = caps;
    for (k, &i) in free.iter().enumerate() {
        tau[i] = t[k];
    }
    Ok(p.finish(tau, lambda, SolveStats::default()))
}

enum Event {
    /// Coordinate leaves its cap and starts moving.
    Release(usize),
    /// Coordinate reaches zero.
    Vanish(usize),
}

/// Exact solution for `h (tau - d)^2`: `tau_i = clamp(d_i - lambda g_i / (2 h_i))`,
/// with `lambda` found by sweeping the clip breakpoints of the piecewise
/// linear `G . T(lambda)`.
pub fn solve_quadform(p: &ToleranceProblem) -> Result<ToleranceResult> {
    p.validate()?;
    if p.cm.kind() == ComplexityKind::LogTolerance {
        return Err(Error::Precondition("quadratic closed form needs a quadratic model".into()));
    }
    let caps = p.caps();
    let free = p.free(&caps);
    if let Some(r) = p.slack(&caps, &free) {
        return Ok(r);
    }
    let parts: Vec<(f64, f64)> = free
        .iter()
        .map(|&i| match p.cm.coordinate(p.descent, i) {
            CoordinatePhi::Quadratic { curvature, dist } => (curvature, dist),
            CoordinatePhi::NegLog => unreachable!("checked kind above"),
        })
        .collect();

    // G.T(lambda) = capped + affine - lambda * slope on each segment
    let mut capped = 0.0;
    let mut affine = 0.0;
    let mut slope = 0.0;
    let mut events: Vec<(f64, Event)> = Vec::with_capacity(2 * free.len());
    for (k, &i) in free.iter().enumerate() {
        let (h, d) = parts[k];
        let g = p.g[i];
        let release = 2.0 * h * (d - caps[i]) / g;
        if release > 0.0 {
            capped += g * caps[i];
            events.push((release, Event::Release(k)));
        } else {
            affine += g * d;
            slope += g * g / (2.0 * h);
        }
        events.push((2.0 * h * d / g, Event::Vanish(k)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut lambda = f64::NAN;
    for (at, event) in &events {
        if capped + affine - at * slope <= p.headroom {
            lambda = (capped + affine - p.headroom) / slope;
            break;
        }
        let (h, d) = parts[match event {
            Event::Release(k) | Event::Vanish(k) => *k,
        }];
        let i = free[match event {
            Event::Release(k) | Event::Vanish(k) => *k,
        }];
        let g = p.g[i];
        match event {
            Event::Release(_) => {
                capped -= g * caps[i];
                affine += g * d;
                slope += g * g / (2.0 * h);
            }
            Event::Vanish(_) => {
                affine -= g * d;
                slope -= g * g / (2.0 * h);
            }
        }
    }

    if !(lambda >= 0.0 && lambda.is_finite()) {
        log::warn!("quadratic closed form gave lambda = {lambda}; using the general solver");
        return solve_general(p);
    }
    let tau_at = |lambda: f64| {
        let mut tau = caps.clone();
        for (k, &i) in free.iter().enumerate() {
            let (h, d) = parts[k];
            tau[i] = (d - lambda * p.g[i] / (2.0 * h)).clamp(0.0, caps[i]);
        }
        let used: f64 = free.iter().map(|&i| p.g[i] * tau[i]).sum();
        (tau, used)
    };
    // cancellation in d - lambda g / 2h can overshoot the headroom by a few
    // ulps; nudge lambda up until the constraint holds
    let (mut tau, mut used) = tau_at(lambda);
    let mut bump = f64::EPSILON;
    let mut steps = 0;
    while used > p.headroom && steps < MAX_STEPS {
        lambda *= 1.0 + bump;
        bump *= 2.0;
        steps += 1;
        (tau, used) = tau_at(lambda);
    }
    let stats = SolveStats {
        outer_iterations: steps,
        ..SolveStats::default()
    };
    Ok(p.finish(tau, lambda, stats))
}

/// Closed form where one exists, otherwise the nested bisection.
pub fn solve(p: &ToleranceProblem) -> Result<ToleranceResult> {
    match p.cm.kind() {
        ComplexityKind::LogTolerance => solve_logform(p),
        ComplexityKind::QuadraticToCodeword | ComplexityKind::MagnitudePrune => solve_quadform(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_problem<'a>(
        g: &'a [f64],
        headroom: f64,
        cm: &'a ComplexityModel,
        d: &'a DescentInfo,
    ) -> ToleranceProblem<'a> {
        ToleranceProblem::new(g, headroom, cm, d, f64::INFINITY)
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn general_log_two_equal_gradients() {
        let cm = ComplexityModel::log_tolerance();
        let d = cm.descent_info(&[0.5, -0.5]).unwrap();
        let r = solve_general(&log_problem(&[1.0, 1.0], 2.0, &cm, &d)).unwrap();
        assert!(close(r.tau[0], 1.0, 1e-9) && close(r.tau[1], 1.0, 1e-9), "{:?}", r.tau);
        assert!(close(r.lambda, 1.0, 1e-9));
        assert!(r.active);
    }

    #[test]
    fn general_log_unequal_gradients() {
        let cm = ComplexityModel::log_tolerance();
        let d = cm.descent_info(&[0.5, -0.5]).unwrap();
        let r = solve_general(&log_problem(&[1.0, 2.0], 4.0, &cm, &d)).unwrap();
        assert!(close(r.tau[0], 2.0, 1e-9) && close(r.tau[1], 1.0, 1e-9), "{:?}", r.tau);
        assert!(close(r.lambda, 0.5, 1e-9));
        assert!(r.stats.outer_iterations <= MAX_STEPS);
        assert!(r.stats.max_inner_iterations <= MAX_STEPS);
    }

    #[test]
    fn slack_problem_takes_caps() {
        let cm = ComplexityModel::magnitude_prune();
        let d = cm.descent_info(&[0.5, -0.01, 0.2]).unwrap();
        let p = ToleranceProblem::new(&[1.0, 1.0, 1.0], 10.0, &cm, &d, 0.1);
        for r in [solve_general(&p).unwrap(), solve_quadform(&p).unwrap()] {
            assert_eq!(r.tau, vec![0.1, 0.01, 0.1]);
            assert_eq!(r.lambda, 0.0);
            assert!(!r.active);
        }
    }

    #[test]
    fn logform_examples() {
        let cm = ComplexityModel::log_tolerance();
        let d = cm.descent_info(&[0.5, -0.5]).unwrap();
        let r = solve_logform(&log_problem(&[1.0, 2.0], 4.0, &cm, &d)).unwrap();
        assert_eq!(r.tau, vec![2.0, 1.0]);
        assert_eq!(r.lambda, 0.5);
        let d1 = cm.descent_info(&[0.1]).unwrap();
        let r = solve_logform(&log_problem(&[4.0], 1.0, &cm, &d1)).unwrap();
        assert_eq!(r.tau, vec![0.25]);
    }

    #[test]
    fn logform_kernel_rejects_zero_gradient() {
        assert!(matches!(
            logform_kernel(&[1.0, 0.0], 1.0, &[1.0, 1.0]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn logform_redistributes_clipped_headroom() {
        // unclipped: [2, 1]; cap 1.5 clips the first, leaving 4 - 1.5 for g=2
        let (t, lambda) = logform_kernel(&[1.0, 2.0], 4.0, &[1.5, 1.5]).unwrap();
        assert_eq!(t, vec![1.5, 1.25]);
        assert_eq!(lambda, 1.0 / 2.5);
    }

    #[test]
    fn zero_gradient_coordinate_gets_cap() {
        let cm = ComplexityModel::log_tolerance();
        let d = cm.descent_info(&[0.5, -0.5, 0.1]).unwrap();
        let p = ToleranceProblem::new(&[1.0, 0.0, 2.0], 4.0, &cm, &d, 3.0);
        let r = solve_logform(&p).unwrap();
        assert_eq!(r.tau[1], 3.0);
        assert_eq!((r.tau[0], r.tau[2]), (2.0, 1.0));
        let r = solve_general(&p).unwrap();
        assert_eq!(r.tau[1], 3.0);
    }

    #[test]
    fn quadform_hand_example() {
        let cm = ComplexityModel::quadratic_to_codeword(vec![1.0], vec![1.0]).unwrap();
        let d = cm.descent_info(&[0.0]).unwrap();
        let p = ToleranceProblem::new(&[1.0], 0.5, &cm, &d, f64::INFINITY);
        let r = solve_quadform(&p).unwrap();
        assert!(close(r.lambda, 1.0, 1e-12));
        assert!(close(r.tau[0], 0.5, 1e-12));
        let phi = cm.coordinate(&d, 0);
        assert!((phi.derivative(r.tau[0]) + r.lambda).abs() < 1e-12);
        let r = solve_general(&p).unwrap();
        assert!(close(r.tau[0], 0.5, 1e-9), "{:?}", r);
    }

    #[test]
    fn quadform_on_codeword_gives_zero() {
        let cm = ComplexityModel::quadratic_to_codeword(vec![-1.0, 0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let d = cm.descent_info(&[1.0, 0.3]).unwrap();
        let p = ToleranceProblem::new(&[1.0, 1.0], 0.1, &cm, &d, f64::INFINITY);
        let r = solve_quadform(&p).unwrap();
        assert_eq!(r.tau[0], 0.0);
        assert!(r.tau[1] > 0.0 && r.tau[1] < 0.3);
    }

    #[test]
    fn bracket_starts_at_lemma_guess() {
        let cm = ComplexityModel::log_tolerance();
        let d = cm.descent_info(&[0.5, -0.5]).unwrap();
        let p = log_problem(&[1.0, 1.0], 2.0, &cm, &d);
        assert_eq!(lambda_bracket(&p).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cm = ComplexityModel::log_tolerance();
        let d = cm.descent_info(&[0.5]).unwrap();
        assert!(solve_general(&log_problem(&[1.0], 0.0, &cm, &d)).is_err());
        assert!(solve_general(&log_problem(&[-1.0], 1.0, &cm, &d)).is_err());
        assert!(solve_general(&log_problem(&[f64::NAN], 1.0, &cm, &d)).is_err());
        assert!(solve_general(&log_problem(&[1.0, 1.0], 1.0, &cm, &d)).is_err());
    }

    fn instance(kind: u8, w: &[f64], h: &[f64]) -> ComplexityModel {
        match kind {
            0 => ComplexityModel::log_tolerance(),
            1 => ComplexityModel::magnitude_prune(),
            _ => ComplexityModel::quadratic_to_codeword(
                vec![-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0],
                h[..w.len()].to_vec(),
            )
            .unwrap(),
        }
    }

    proptest! {
        #[test]
        fn lambda_bracket_bounds_closed_form(
            g in prop::collection::vec(0.01f64..=1.0, 1..50),
            headroom in 0.1f64..=10.0,
        ) {
            let cm = ComplexityModel::log_tolerance();
            let d = cm.descent_info(&vec![0.5; g.len()]).unwrap();
            let lmax = lambda_bracket(&log_problem(&g, headroom, &cm, &d)).unwrap();
            prop_assert!(lmax >= g.len() as f64 / headroom * (1.0 - 1e-12));
        }

        #[test]
        fn more_headroom_never_shrinks_tolerances(
            kind in 0u8..3,
            w in prop::collection::vec(-1.0f64..1.0, 1..30),
            g in prop::collection::vec(0.0f64..1.0, 30),
            h in prop::collection::vec(0.1f64..3.0, 30),
            headroom in 0.001f64..1.0,
            extra in 1.0f64..4.0,
            cap in 0.01f64..2.0,
        ) {
            let cm = instance(kind, &w, &h);
            let d = cm.descent_info(&w).unwrap();
            let g = &g[..w.len()];
            let a = solve(&ToleranceProblem::new(g, headroom, &cm, &d, cap)).unwrap();
            let b = solve(&ToleranceProblem::new(g, headroom * extra, &cm, &d, cap)).unwrap();
            for (x, y) in a.tau.iter().zip(&b.tau) {
                prop_assert!(y >= x, "{} < {}", y, x);
            }
        }

        #[test]
        fn general_matches_closed_forms(
            kind in 0u8..3,
            w in prop::collection::vec(-1.0f64..1.0, 1..40),
            g in prop::collection::vec(0.0f64..1.0, 40),
            h in prop::collection::vec(0.1f64..3.0, 40),
            headroom in 0.001f64..1.0,
            cap in 0.01f64..2.0,
        ) {
            let cm = instance(kind, &w, &h);
            let d = cm.descent_info(&w).unwrap();
            let p = ToleranceProblem::new(&g[..w.len()], headroom, &cm, &d, cap);
            let exact = solve(&p).unwrap();
            let general = solve_general(&p).unwrap();
            for (x, y) in general.tau.iter().zip(&exact.tau) {
                prop_assert!((x - y).abs() <= 1e-6f64.max(1e-5 * y.abs()), "{} vs {}", x, y);
            }
        }
    }
}
