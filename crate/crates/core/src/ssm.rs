//! Exact SISO linear time-varying state-space recurrence on irregularly
//! spaced pulse inputs, with diagonal (complex) dynamics.
//!
//! The recurrence advances one pulse at a time,
//! `h_k = exp(A * delta_k) .* h_{k-1} + b_k * u_k`, `y_k = Re(c_k . h_k)`,
//! where `delta_k` is the gap between consecutive input coordinates. The
//! pairwise interaction kernel `phi(k, i) = Re(c_k . exp(A * sum delta) . b_i)`
//! applied as an O(N^2) double loop is the ground-truth oracle every faster
//! path is tested against.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

/// Errors from recurrence and kernel evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SsmError {
    /// State dimension of an operand disagrees with the dynamics.
    DimensionMismatch { expected: usize, found: usize },
    /// A non-finite value was found in an input (`what` names which).
    NonFinite { what: &'static str, index: usize },
    /// Coordinate gaps must be nonnegative.
    NegativeDelta { index: usize },
    /// Diagonal entry with positive real part at construction.
    UnstableEntry { index: usize },
    /// Empty state or step sequence where at least one element is required.
    Empty,
    /// Kernel indices must satisfy i <= k (the kernel is causal).
    KernelOrder { k: usize, i: usize },
    /// Step index out of range.
    OutOfRange { index: usize, len: usize },
}

impl core::fmt::Display for SsmError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SsmError::DimensionMismatch { expected, found } => {
                write!(f, "state dimension mismatch: expected {expected}, found {found}")
            }
            SsmError::NonFinite { what, index } => {
                write!(f, "non-finite value in {what} at index {index}")
            }
            SsmError::NegativeDelta { index } => {
                write!(f, "negative coordinate gap at step {index}")
            }
            SsmError::UnstableEntry { index } => {
                write!(f, "diagonal entry {index} has positive real part")
            }
            SsmError::Empty => write!(f, "empty sequence"),
            SsmError::KernelOrder { k, i } => {
                write!(f, "kernel indices out of causal order: i={i} > k={k}")
            }
            SsmError::OutOfRange { index, len } => {
                write!(f, "step index {index} out of range for {len} steps")
            }
        }
    }
}

impl core::error::Error for SsmError {}

/// Diagonal transition matrix with every entry in the closed left half-plane,
/// so `|exp(A * delta)| <= 1` for any nonnegative gap.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMatrixA {
    entries: Vec<Complex64>,
}

impl DiagonalMatrixA {
    /// Validates stability (`Re <= 0`), finiteness, and nonzero dimension.
    pub fn new(entries: Vec<Complex64>) -> Result<Self, SsmError> {
        if entries.is_empty() {
            return Err(SsmError::Empty);
        }
        for (i, e) in entries.iter().enumerate() {
            if !e.re.is_finite() || !e.im.is_finite() {
                return Err(SsmError::NonFinite { what: "A", index: i });
            }
            if e.re > 0.0 {
                return Err(SsmError::UnstableEntry { index: i });
            }
        }
        Ok(Self { entries })
    }

    /// Stable-by-construction parameterization: `Re = -softplus(raw.re)`,
    /// `Im = raw.im`. This is how learned dynamics are stored.
    pub fn from_raw_stable(raw: &[Complex64]) -> Self {
        let entries = raw
            .iter()
            .map(|r| Complex64::new(-crate::math::softplus(r.re), r.im))
            .collect();
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }
}

/// One pulse of the recurrence: the gap to the previous coordinate, the
/// input/output projections at this step, and the scalar input value.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoStep {
    pub delta: f64,
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
    pub u: f64,
}

impl SisoStep {
    pub fn new(delta: f64, b: Vec<Complex64>, c: Vec<Complex64>, u: f64) -> Self {
        Self { delta, b, c, u }
    }

    /// Real-valued projections, the common case for learned parameters.
    pub fn from_real(delta: f64, b: &[f64], c: &[f64], u: f64) -> Self {
        Self {
            delta,
            b: b.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            c: c.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            u,
        }
    }
}

/// Hidden state of one SISO channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoState {
    pub h: Vec<Complex64>,
}

impl SisoState {
    pub fn zeros(m: usize) -> Self {
        Self {
            h: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }
}

fn check_step(a: &DiagonalMatrixA, s: &SisoStep, index: usize) -> Result<(), SsmError> {
    let m = a.dim();
    if s.b.len() != m {
        return Err(SsmError::DimensionMismatch { expected: m, found: s.b.len() });
    }
    if s.c.len() != m {
        return Err(SsmError::DimensionMismatch { expected: m, found: s.c.len() });
    }
    if !s.delta.is_finite() {
        return Err(SsmError::NonFinite { what: "delta", index });
    }
    if s.delta < 0.0 {
        return Err(SsmError::NegativeDelta { index });
    }
    if !s.u.is_finite() {
        return Err(SsmError::NonFinite { what: "u", index });
    }
    for (j, z) in s.b.iter().enumerate() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(SsmError::NonFinite { what: "b", index: j });
        }
    }
    for (j, z) in s.c.iter().enumerate() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(SsmError::NonFinite { what: "c", index: j });
        }
    }
    Ok(())
}

fn check_state(a: &DiagonalMatrixA, state: &SisoState) -> Result<(), SsmError> {
    if state.dim() != a.dim() {
        return Err(SsmError::DimensionMismatch { expected: a.dim(), found: state.dim() });
    }
    for (j, z) in state.h.iter().enumerate() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(SsmError::NonFinite { what: "h", index: j });
        }
    }
    Ok(())
}

/// One step of the recurrence. A zero gap makes the transition factor
/// exactly one in every entry, so coincident pulses accumulate.
pub fn step(state: &SisoState, a: &DiagonalMatrixA, s: &SisoStep) -> Result<SisoState, SsmError> {
    check_state(a, state)?;
    check_step(a, s, 0)?;
    let h = state
        .h
        .iter()
        .zip(a.entries())
        .zip(&s.b)
        .map(|((&h, &aj), &bj)| (aj * s.delta).exp() * h + bj * s.u)
        .collect();
    Ok(SisoState { h })
}

/// Runs the full recurrence and reads out `y_k = Re(c_k . h_k)` at every
/// step, in O(N) sequential time. With conjugate-pair dynamics the imaginary
/// parts cancel and the real part is the exact output.
pub fn run_sequential(
    a: &DiagonalMatrixA,
    steps: &[SisoStep],
    h0: &SisoState,
) -> Result<Vec<f64>, SsmError> {
    if steps.is_empty() {
        return Err(SsmError::Empty);
    }
    check_state(a, h0)?;
    for (k, s) in steps.iter().enumerate() {
        check_step(a, s, k)?;
    }
    let mut h = h0.h.clone();
    let mut out = Vec::with_capacity(steps.len());
    for s in steps {
        for ((hj, &aj), &bj) in h.iter_mut().zip(a.entries()).zip(&s.b) {
            *hj = (aj * s.delta).exp() * *hj + bj * s.u;
        }
        let y: Complex64 = s.c.iter().zip(&h).map(|(&cj, &hj)| cj * hj).sum();
        out.push(y.re);
    }
    Ok(out)
}

/// Pairwise interaction kernel `phi(t_k, t_i)`: the response at step k to a
/// unit pulse at step i. The product of transition factors over the empty
/// index range (i = k) is the identity, giving `Re(c_k . b_i)`.
pub fn kernel_value(
    a: &DiagonalMatrixA,
    steps: &[SisoStep],
    k: usize,
    i: usize,
) -> Result<f64, SsmError> {
    if i > k {
        return Err(SsmError::KernelOrder { k, i });
    }
    if k >= steps.len() {
        return Err(SsmError::OutOfRange { index: k, len: steps.len() });
    }
    // Gaps accumulate: prod_j exp(A delta_j) = exp(A * sum delta_j).
    let gap: f64 = steps[i + 1..=k].iter().map(|s| s.delta).sum();
    let phi: Complex64 = steps[k]
        .c
        .iter()
        .zip(a.entries())
        .zip(&steps[i].b)
        .map(|((&cj, &aj), &bj)| cj * (aj * gap).exp() * bj)
        .sum();
    Ok(phi.re)
}

/// Ground-truth oracle: materializes every pairwise interaction,
/// `y_k = sum_{i<=k} phi(t_k, t_i) * u_i`, as an O(N^2) double loop.
pub fn apply_kernel_oracle(a: &DiagonalMatrixA, steps: &[SisoStep]) -> Result<Vec<f64>, SsmError> {
    if steps.is_empty() {
        return Err(SsmError::Empty);
    }
    for (k, s) in steps.iter().enumerate() {
        check_step(a, s, k)?;
    }
    let mut out = Vec::with_capacity(steps.len());
    for k in 0..steps.len() {
        let mut y = 0.0;
        for i in 0..=k {
            y += kernel_value(a, steps, k, i)? * steps[i].u;
        }
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;

    fn a_of(res: &[f64]) -> DiagonalMatrixA {
        DiagonalMatrixA::new(res.iter().map(|&r| Complex64::new(r, 0.0)).collect()).unwrap()
    }

    #[test]
    fn zero_dynamics_is_a_running_sum() {
        let a = a_of(&[0.0]);
        let mut state = SisoState::zeros(1);
        let mut outputs = Vec::new();
        for (u, delta) in [(1.0, 0.4), (2.0, 0.0), (3.0, 2.5)] {
            state = step(&state, &a, &SisoStep::from_real(delta, &[1.0], &[1.0], u)).unwrap();
            outputs.push(state.h[0].re);
        }
        assert_eq!(outputs, vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn zero_gap_transition_is_identity() {
        let a = a_of(&[-1.0]);
        let state = SisoState {
            h: vec![Complex64::new(5.0, 0.0)],
        };
        let next = step(&state, &a, &SisoStep::from_real(0.0, &[1.0], &[1.0], 2.0)).unwrap();
        assert_eq!(next.h[0], Complex64::new(7.0, 0.0));
    }

    #[test]
    fn step_matches_independent_scalar_formula() {
        // Per-entry closed form evaluated with scalar math, not Complex64::exp.
        let a = DiagonalMatrixA::new(vec![
            Complex64::new(-1.0, 0.9),
            Complex64::new(-0.5, -0.3),
        ])
        .unwrap();
        let h = vec![Complex64::new(0.3, -0.1), Complex64::new(-0.8, 0.2)];
        let b = vec![Complex64::new(1.1, 0.4), Complex64::new(-0.2, 0.0)];
        let delta = 0.3;
        let u = 1.7;
        let next = step(
            &SisoState { h: h.clone() },
            &a,
            &SisoStep::new(delta, b.clone(), b.clone(), u),
        )
        .unwrap();
        for j in 0..2 {
            let (re, im) = (a.entries()[j].re * delta, a.entries()[j].im * delta);
            let scale = math::exp(re);
            let rot = Complex64::new(scale * math::cos(im), scale * math::sin(im));
            let want = rot * h[j] + b[j] * u;
            assert!((next.h[j] - want).norm() < 1e-14);
        }
    }

    #[test]
    fn single_step_output_is_cb_u() {
        let a = a_of(&[0.0]);
        let y = run_sequential(
            &a,
            &[SisoStep::from_real(0.7, &[1.0], &[1.0], 4.0)],
            &SisoState::zeros(1),
        )
        .unwrap();
        assert_eq!(y, vec![4.0]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let a = a_of(&[-0.3, -1.2]);
        let steps: Vec<SisoStep> = (0..8)
            .map(|k| SisoStep::from_real(0.1 * k as f64, &[0.5, -0.7], &[1.0, 2.0], 0.0))
            .collect();
        let y = run_sequential(&a, &steps, &SisoState::zeros(2)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_empty_product_is_identity() {
        let a = DiagonalMatrixA::new(vec![
            Complex64::new(-2.0, 1.0),
            Complex64::new(-0.1, -3.0),
        ])
        .unwrap();
        let steps = vec![SisoStep::from_real(0.8, &[1.0, 1.0], &[1.0, 1.0], 1.0)];
        assert_eq!(kernel_value(&a, &steps, 0, 0).unwrap(), 2.0);
    }

    #[test]
    fn kernel_is_causal() {
        let a = a_of(&[-1.0]);
        let steps = vec![
            SisoStep::from_real(0.0, &[1.0], &[1.0], 1.0),
            SisoStep::from_real(0.5, &[1.0], &[1.0], 1.0),
        ];
        assert_eq!(
            kernel_value(&a, &steps, 0, 1),
            Err(SsmError::KernelOrder { k: 0, i: 1 })
        );
    }

    #[test]
    fn lti_kernel_depends_only_on_gap() {
        let a = DiagonalMatrixA::new(vec![Complex64::new(-0.7, 2.0)]).unwrap();
        let b = [0.9];
        let c = [1.3];
        // Two schedules with the same total gap between the probed indices.
        let s1 = vec![
            SisoStep::from_real(0.0, &b, &c, 1.0),
            SisoStep::from_real(0.25, &b, &c, 1.0),
            SisoStep::from_real(0.75, &b, &c, 1.0),
        ];
        let s2 = vec![
            SisoStep::from_real(0.0, &b, &c, 1.0),
            SisoStep::from_real(0.9, &b, &c, 1.0),
            SisoStep::from_real(0.1, &b, &c, 1.0),
        ];
        let k1 = kernel_value(&a, &s1, 2, 0).unwrap();
        let k2 = kernel_value(&a, &s2, 2, 0).unwrap();
        assert!((k1 - k2).abs() < 1e-15);
    }

    #[test]
    fn oracle_single_pulse() {
        let a = a_of(&[-0.4]);
        let steps = vec![SisoStep::from_real(0.0, &[2.0], &[3.0], 0.5)];
        let y = apply_kernel_oracle(&a, &steps).unwrap();
        assert_eq!(y, vec![3.0]);
    }

    #[test]
    fn rejects_unstable_construction() {
        assert_eq!(
            DiagonalMatrixA::new(vec![Complex64::new(0.1, 0.0)]),
            Err(SsmError::UnstableEntry { index: 0 })
        );
    }

    #[test]
    fn from_raw_stable_is_stable_for_any_raw() {
        let raw = vec![Complex64::new(25.0, -3.0), Complex64::new(-40.0, 7.0)];
        let a = DiagonalMatrixA::from_raw_stable(&raw);
        assert!(a.entries().iter().all(|e| e.re <= 0.0));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let a = a_of(&[-1.0, -2.0]);
        let bad = SisoStep::from_real(0.1, &[1.0], &[1.0, 1.0], 1.0);
        assert!(matches!(
            step(&SisoState::zeros(2), &a, &bad),
            Err(SsmError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn rejects_non_finite_input() {
        let a = a_of(&[-1.0]);
        let bad = SisoStep::from_real(0.1, &[1.0], &[1.0], f64::NAN);
        assert_eq!(
            step(&SisoState::zeros(1), &a, &bad),
            Err(SsmError::NonFinite { what: "u", index: 0 })
        );
    }
}
