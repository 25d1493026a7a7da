//! Fixed-step RK4 integration and exact differentiation of the RK4 map.

use nalgebra::DMatrix;

use std::cell::RefCell;

thread_local! {
    // Stage buffers reused across calls; rollouts hit this millions of times
    // per control step, so per-call allocation is off the table.
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// One RK4 step of `dx/dt = f(x)` over `dt`. `f` captures control and
/// parameters; `next` may not alias `x`.
pub fn rk4_step<F>(f: F, x: &[f64], dt: f64, next: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x.len();
    // Take the buffer out for the duration of the call so a re-entrant use
    // of rk4_step inside `f` falls back to a fresh allocation.
    let mut buf = SCRATCH.with(|cell| std::mem::take(&mut *cell.borrow_mut()));
    if buf.len() < 5 * n {
        buf.resize(5 * n, 0.0);
    }
    {
        let (k1, rest) = buf.split_at_mut(n);
        let (k2, rest) = rest.split_at_mut(n);
        let (k3, rest) = rest.split_at_mut(n);
        let (k4, tmp) = rest.split_at_mut(n);
        let tmp = &mut tmp[..n];

        f(x, k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        f(tmp, k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        f(tmp, k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        f(tmp, k4);
        for i in 0..n {
            next[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    SCRATCH.with(|cell| *cell.borrow_mut() = buf);
}

/// Exact `∂/∂θ` of the RK4 map, propagated through the stages by the chain
/// rule. `jac` must evaluate the continuous-time Jacobians `A = ∂g/∂x`
/// (n_x × n_x) and `G = ∂g/∂θ` (n_x × n_θ) at a given state.
pub fn rk4_param_jacobian<F, J>(f: F, jac: J, x: &[f64], dt: f64, n_theta: usize) -> DMatrix<f64>
where
    F: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64]) -> (DMatrix<f64>, DMatrix<f64>),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(x, &mut k1);
    let (_, g1) = jac(x);
    let d1 = g1;

    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    let mut k2 = vec![0.0; n];
    f(&tmp, &mut k2);
    let (a2, g2) = jac(&tmp);
    let d2 = g2 + a2 * (&d1 * (0.5 * dt));

    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    let mut k3 = vec![0.0; n];
    f(&tmp, &mut k3);
    let (a3, g3) = jac(&tmp);
    let d3 = g3 + a3 * (&d2 * (0.5 * dt));

    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    let (a4, g4) = jac(&tmp);
    let d4 = g4 + a4 * (&d3 * dt);

    let mut out = DMatrix::zeros(n, n_theta);
    out += &d1;
    out += &d2 * 2.0;
    out += &d3 * 2.0;
    out += d4;
    out * (dt / 6.0)
}

/// Adaptive-substep RK4 used as an independent high-accuracy oracle in tests:
/// integrates the same vector field with `substeps` uniform RK4 sub-intervals.
pub fn rk4_refined<F>(f: F, x: &[f64], dt: f64, substeps: usize, next: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]) + Copy,
{
    let mut cur = x.to_vec();
    let mut nxt = vec![0.0; x.len()];
    let h = dt / substeps as f64;
    for _ in 0..substeps {
        rk4_step(f, &cur, h, &mut nxt);
        std::mem::swap(&mut cur, &mut nxt);
    }
    next.copy_from_slice(&cur);
}
