//! Explicit integrators for `dx/dt = f(t, x)`: fixed-step Euler and RK4, and
//! adaptive Dormand–Prince 5(4).

use std::convert::Infallible;
use std::fmt::Display;

use thiserror::Error;

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_RTOL: f64 = 1e-4;
pub const DEFAULT_ATOL: f64 = 1e-4;
pub const DEFAULT_MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    Euler { steps: usize },
    Rk4 { steps: usize },
    Dopri5 { rtol: f64, atol: f64, max_steps: usize },
}

impl SolverKind {
    pub fn euler() -> Self {
        SolverKind::Euler { steps: DEFAULT_STEPS }
    }

    pub fn rk4() -> Self {
        SolverKind::Rk4 { steps: DEFAULT_STEPS }
    }

    pub fn dopri5() -> Self {
        SolverKind::Dopri5 { rtol: DEFAULT_RTOL, atol: DEFAULT_ATOL, max_steps: DEFAULT_MAX_STEPS }
    }

    /// Parses `euler`, `rk4` or `dopri5` with default settings.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "euler" => Some(Self::euler()),
            "rk4" => Some(Self::rk4()),
            "dopri5" => Some(Self::dopri5()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Euler { .. } => "euler",
            SolverKind::Rk4 { .. } => "rk4",
            SolverKind::Dopri5 { .. } => "dopri5",
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let ok = match *self {
            SolverKind::Euler { steps } | SolverKind::Rk4 { steps } => steps >= 1,
            SolverKind::Dopri5 { rtol, atol, max_steps } => rtol > 0.0 && atol > 0.0 && max_steps >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(OdeError::InvalidSolver(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OdeError {
    #[error("invalid solver settings: {0}")]
    InvalidSolver(String),
    #[error("non-finite state or derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("derivative failed at t = {t}: {message}")]
    Derivative { t: f64, message: String },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxSteps { max_steps: usize, t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrace {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub final_state: Vec<f64>,
    pub f_evals: usize,
}

/// Integrates from `t_span.0` to `t_span.1` (either direction).
pub fn integrate(
    mut f: impl FnMut(f64, &[f64]) -> Vec<f64>,
    state0: &[f64],
    t_span: (f64, f64),
    solver: SolverKind,
) -> Result<OdeTrace, OdeError> {
    try_integrate(|t, x| Ok::<_, Infallible>(f(t, x)), state0, t_span, solver)
}

/// [`integrate`] with a fallible derivative.
pub fn try_integrate<E: Display>(
    f: impl FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    state0: &[f64],
    t_span: (f64, f64),
    solver: SolverKind,
) -> Result<OdeTrace, OdeError> {
    solver.validate()?;
    if !state0.iter().all(|v| v.is_finite()) || !t_span.0.is_finite() || !t_span.1.is_finite() {
        return Err(OdeError::NonFinite { t: t_span.0 });
    }
    let mut rhs = Rhs { f, evals: 0 };
    match solver {
        SolverKind::Euler { steps } => fixed(&mut rhs, state0, t_span, steps, euler_step),
        SolverKind::Rk4 { steps } => fixed(&mut rhs, state0, t_span, steps, rk4_step),
        SolverKind::Dopri5 { rtol, atol, max_steps } => dopri5(&mut rhs, state0, t_span, rtol, atol, max_steps),
    }
}

struct Rhs<F> {
    f: F,
    evals: usize,
}

impl<F, E> Rhs<F>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: Display,
{
    fn eval(&mut self, t: f64, x: &[f64]) -> Result<Vec<f64>, OdeError> {
        self.evals += 1;
        let d = (self.f)(t, x).map_err(|e| OdeError::Derivative { t, message: e.to_string() })?;
        if d.len() != x.len() {
            return Err(OdeError::Derivative { t, message: format!("derivative has {} components, state {}", d.len(), x.len()) });
        }
        if !d.iter().all(|v| v.is_finite()) {
            return Err(OdeError::NonFinite { t });
        }
        Ok(d)
    }
}

/// `x + h * sum(c_i * k_i)`.
fn axpy(x: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = x.to_vec();
    for &(c, k) in terms {
        if c != 0.0 {
            for (o, kv) in out.iter_mut().zip(k) {
                *o += h * c * kv;
            }
        }
    }
    out
}

type StepFn<F> = fn(&mut Rhs<F>, f64, &[f64], f64) -> Result<Vec<f64>, OdeError>;

fn fixed<F, E>(rhs: &mut Rhs<F>, x0: &[f64], (t0, t1): (f64, f64), steps: usize, step: StepFn<F>) -> Result<OdeTrace, OdeError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: Display,
{
    let h = (t1 - t0) / steps as f64;
    let mut x = x0.to_vec();
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        x = step(rhs, t, &x, h)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(OdeError::NonFinite { t: t + h });
        }
    }
    Ok(OdeTrace { accepted_steps: steps, rejected_steps: 0, final_state: x, f_evals: rhs.evals })
}

fn euler_step<F, E>(rhs: &mut Rhs<F>, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, OdeError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: Display,
{
    let k = rhs.eval(t, x)?;
    Ok(axpy(x, h, &[(1.0, &k)]))
}

fn rk4_step<F, E>(rhs: &mut Rhs<F>, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, OdeError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: Display,
{
    let k1 = rhs.eval(t, x)?;
    let k2 = rhs.eval(t + 0.5 * h, &axpy(x, h, &[(0.5, &k1)]))?;
    let k3 = rhs.eval(t + 0.5 * h, &axpy(x, h, &[(0.5, &k2)]))?;
    let k4 = rhs.eval(t + h, &axpy(x, h, &[(1.0, &k3)]))?;
    Ok(axpy(x, h, &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)]))
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights (row 7 of `A`, hence first-same-as-last).
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

fn err_norm(e: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    if e.is_empty() {
        return 0.0;
    }
    let s: f64 = e
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(ei, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (ei / sc).powi(2)
        })
        .sum();
    (s / e.len() as f64).sqrt()
}

fn dopri5<F, E>(rhs: &mut Rhs<F>, x0: &[f64], (t0, t1): (f64, f64), rtol: f64, atol: f64, max_steps: usize) -> Result<OdeTrace, OdeError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: Display,
{
    let span = t1 - t0;
    let mut x = x0.to_vec();
    let (mut accepted, mut rejected) = (0, 0);
    if span == 0.0 {
        return Ok(OdeTrace { accepted_steps: 0, rejected_steps: 0, final_state: x, f_evals: 0 });
    }
    let dir = span.signum();
    let mut k1 = rhs.eval(t0, &x)?;
    let mut h = dir * initial_step(rhs, t0, &x, &k1, rtol, atol)?.min(span.abs());
    let mut t = t0;
    let mut last_rejected = false;
    while dir * (t1 - t) > 0.0 {
        if accepted + rejected >= max_steps {
            return Err(OdeError::MaxSteps { max_steps, t });
        }
        let remaining = t1 - t;
        let clipped = dir * h >= dir * remaining;
        if clipped {
            h = remaining;
        }
        if t + h == t {
            return Err(OdeError::StepUnderflow { t });
        }
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 1..7 {
            let terms: Vec<(f64, &[f64])> = (0..s).map(|j| (A[s][j], k[j].as_slice())).collect();
            let xs = axpy(&x, h, &terms);
            k.push(rhs.eval(t + C[s] * h, &xs)?);
        }
        let terms5: Vec<(f64, &[f64])> = (0..6).map(|j| (A[6][j], k[j].as_slice())).collect();
        let x5 = axpy(&x, h, &terms5);
        let e: Vec<f64> = (0..x.len()).map(|i| h * (0..7).map(|j| (B5[j] - B4[j]) * k[j][i]).sum::<f64>()).collect();
        let err = err_norm(&e, &x, &x5, rtol, atol);
        if !err.is_finite() || !x5.iter().all(|v| v.is_finite()) {
            return Err(OdeError::NonFinite { t: t + h });
        }
        let fac = if err == 0.0 { FAC_MAX } else { (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX) };
        if err <= 1.0 {
            accepted += 1;
            t = if clipped { t1 } else { t + h };
            x = x5;
            k1 = k.pop().expect("seven stages");
            h *= if last_rejected { fac.min(1.0) } else { fac };
            last_rejected = false;
        } else {
            rejected += 1;
            h *= fac.min(1.0);
            last_rejected = true;
        }
    }
    Ok(OdeTrace { accepted_steps: accepted, rejected_steps: rejected, final_state: x, f_evals: rhs.evals })
}

/// Starting step magnitude from the local scale of `x` and its derivatives.
fn initial_step<F, E>(rhs: &mut Rhs<F>, t0: f64, x0: &[f64], f0: &[f64], rtol: f64, atol: f64) -> Result<f64, OdeError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: Display,
{
    let n = x0.len().max(1) as f64;
    let scale: Vec<f64> = x0.iter().map(|v| atol + rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt();
    let d0 = rms(x0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let x1 = axpy(x0, h0, &[(1.0, f0)]);
    let f1 = rhs.eval(t0 + h0, &x1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    Ok((100.0 * h0).min(h1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedStepFamily {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub error_n: f64,
    pub error_2n: f64,
    /// `log2(error_n / error_2n)`; `None` when either error is zero.
    pub order: Option<f64>,
}

/// Measures the empirical order of a fixed-step family on `[0, 1]` against a
/// known final state, by halving the step from `1/n` to `1/(2n)`.
pub fn convergence_order(
    mut f: impl FnMut(f64, &[f64]) -> Vec<f64>,
    x0: &[f64],
    exact_final: &[f64],
    family: FixedStepFamily,
    n: usize,
) -> Result<ConvergenceReport, OdeError> {
    let mut error = |steps: usize| -> Result<f64, OdeError> {
        let solver = match family {
            FixedStepFamily::Euler => SolverKind::Euler { steps },
            FixedStepFamily::Rk4 => SolverKind::Rk4 { steps },
        };
        let tr = integrate(&mut f, x0, (0.0, 1.0), solver)?;
        Ok(tr.final_state.iter().zip(exact_final).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    };
    let error_n = error(n)?;
    let error_2n = error(2 * n)?;
    let order = (error_n > 0.0 && error_2n > 0.0).then(|| (error_n / error_2n).log2());
    Ok(ConvergenceReport { error_n, error_2n, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exp_rhs(_t: f64, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    #[test]
    fn zero_field_is_identity() {
        let x0 = [1.5, -2.0, 0.0];
        for s in [SolverKind::euler(), SolverKind::rk4(), SolverKind::dopri5()] {
            let tr = integrate(|_, x| vec![0.0; x.len()], &x0, (0.0, 1.0), s).unwrap();
            assert_eq!(tr.final_state, x0);
        }
    }

    #[test]
    fn euler_compound_product() {
        let tr = integrate(exp_rhs, &[1.0], (0.0, 1.0), SolverKind::euler()).unwrap();
        assert!((tr.final_state[0] - 1.01f64.powi(100)).abs() < 1e-12);
        assert!((tr.final_state[0] - 2.704814).abs() < 1e-6);
        assert_eq!((tr.accepted_steps, tr.f_evals), (100, 100));
    }

    #[test]
    fn rk4_counts() {
        let tr = integrate(exp_rhs, &[1.0], (0.0, 1.0), SolverKind::Rk4 { steps: 10 }).unwrap();
        assert_eq!(tr.f_evals, 40);
        assert!((tr.final_state[0] - std::f64::consts::E).abs() < 1e-5);
    }

    #[test]
    fn dopri5_hits_e() {
        let s = SolverKind::Dopri5 { rtol: 1e-6, atol: 1e-6, max_steps: 10_000 };
        let tr = integrate(exp_rhs, &[1.0], (0.0, 1.0), s).unwrap();
        assert!((tr.final_state[0] - std::f64::consts::E).abs() < 1e-6, "{}", tr.final_state[0]);
        // Two evaluations to size the first step, then six per attempt.
        assert_eq!(tr.f_evals, 2 + 6 * (tr.accepted_steps + tr.rejected_steps));
    }

    #[test]
    fn tighter_tolerance_never_hurts() {
        let mut prev = f64::INFINITY;
        for k in 2..=10 {
            let tol = 10f64.powi(-k);
            let s = SolverKind::Dopri5 { rtol: tol, atol: tol, max_steps: 100_000 };
            let tr = integrate(exp_rhs, &[1.0], (0.0, 1.0), s).unwrap();
            let err = (tr.final_state[0] - std::f64::consts::E).abs();
            assert!(err <= prev, "tol {tol}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn harmonic_oscillator_reverses() {
        let osc = |_t: f64, x: &[f64]| vec![x[1], -x[0]];
        let x0 = [1.0, 0.0];
        let fwd = integrate(osc, &x0, (0.0, 1.0), SolverKind::dopri5()).unwrap();
        let back = integrate(|t, x| osc(t, x).iter().map(|v| -v).collect(), &fwd.final_state, (0.0, 1.0), SolverKind::dopri5()).unwrap();
        for (a, b) in back.final_state.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-3);
        }
        let rev = integrate(osc, &fwd.final_state, (1.0, 0.0), SolverKind::dopri5()).unwrap();
        for (a, b) in rev.final_state.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn measured_orders() {
        let e = [std::f64::consts::E];
        let eu = convergence_order(exp_rhs, &[1.0], &e, FixedStepFamily::Euler, 100).unwrap();
        assert!((eu.order.unwrap() - 1.0).abs() <= 0.1, "{eu:?}");
        let rk = convergence_order(exp_rhs, &[1.0], &e, FixedStepFamily::Rk4, 16).unwrap();
        assert!((rk.order.unwrap() - 4.0).abs() <= 0.3, "{rk:?}");
        let zero = convergence_order(|_, x| vec![0.0; x.len()], &[2.0], &[2.0], FixedStepFamily::Rk4, 8).unwrap();
        assert_eq!((zero.error_n, zero.error_2n, zero.order), (0.0, 0.0, None));
    }

    #[test]
    fn errors() {
        assert!(matches!(integrate(exp_rhs, &[1.0], (0.0, 1.0), SolverKind::Euler { steps: 0 }), Err(OdeError::InvalidSolver(_))));
        let blowup = integrate(|_, x| vec![x[0] * x[0]], &[1.0], (0.0, 2.0), SolverKind::dopri5());
        assert!(blowup.is_err());
        let tight = SolverKind::Dopri5 { rtol: 1e-12, atol: 1e-12, max_steps: 3 };
        assert!(matches!(integrate(exp_rhs, &[1.0], (0.0, 1.0), tight), Err(OdeError::MaxSteps { .. })));
        let nan = integrate(|t, x| vec![if t > 0.5 { f64::NAN } else { x[0] }], &[1.0], (0.0, 1.0), SolverKind::euler());
        assert!(matches!(nan, Err(OdeError::NonFinite { t }) if t > 0.5));
        let failing = try_integrate(|_, _| Err::<Vec<f64>, _>("boom"), &[1.0], (0.0, 1.0), SolverKind::rk4());
        assert!(matches!(failing, Err(OdeError::Derivative { t, .. }) if t == 0.0));
    }

    proptest! {
        #[test]
        fn constant_field_transports_exactly(
            x0 in prop::collection::vec(-10.0f64..10.0, 1..6),
            c in -5.0f64..5.0,
            steps in 1usize..200,
        ) {
            for s in [SolverKind::Euler { steps }, SolverKind::Rk4 { steps }, SolverKind::dopri5()] {
                let tr = integrate(|_, x| vec![c; x.len()], &x0, (0.0, 1.0), s).unwrap();
                for (a, b) in tr.final_state.iter().zip(&x0) {
                    prop_assert!((a - (b + c)).abs() < 1e-9);
                }
            }
        }
    }
}
