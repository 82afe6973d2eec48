//! Reduced Ginzburg-Landau energy, its gradient with respect to the conjugate
//! field, and the discrete equation residual.
//!
//! The kinetic term is the gauge-invariant link stencil
//! `b * |u(x+a e) exp(-i theta_e) - u(x)|^2 / a^2` with cell weight `a^dim`;
//! the potential terms are node-based sums. Dirichlet node weights are
//! trapezoidal (half weight per boundary face) so that the total quadrature
//! weight is exactly `side^dim`; since Dirichlet fields vanish on the
//! boundary this does not change any energy value, but it makes the b = 0
//! completing-the-square identity exact at the discrete level.

use crate::grid::{Bc, GaugeLinks, GridError, GridSpec, OrderParameter};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EnergyBreakdown {
    /// `b * sum` of the covariant-difference quadratic term.
    pub kinetic: f64,
    /// `-sum |u|^2` term.
    pub condensation: f64,
    /// `(1/2) sum |u|^4` term.
    pub quartic: f64,
    pub total: f64,
    pub b: f64,
}

/// Quadrature weight of the node `idx` (trapezoidal on Dirichlet boundaries).
pub fn node_weight(grid: &GridSpec, idx: usize) -> f64 {
    let mut w = grid.cell_weight();
    if grid.bc == Bc::Dirichlet {
        let m = grid.nodes_per_side();
        let c = grid.coords(idx);
        for d in 0..grid.dim {
            if c[d] == 0 || c[d] == m - 1 {
                w *= 0.5;
            }
        }
    }
    w
}

// Deterministic pairwise summation over 0..n; fixed reduction order makes the
// result bit-reproducible regardless of caller-side parallelism.
pub(crate) fn pairwise_sum(n: usize, f: &dyn Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &dyn Fn(usize) -> f64) -> f64 {
        if hi - lo <= 64 {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    if n == 0 {
        0.0
    } else {
        rec(0, n, f)
    }
}

fn check_same_grid(u: &OrderParameter, links: &GaugeLinks) -> Result<(), GridError> {
    if u.grid != links.grid {
        return Err(GridError::GridMismatch);
    }
    Ok(())
}

/// Covariant forward difference quadratic sum at node `idx` (all positive
/// directions), without the `b` factor or weights.
#[inline]
fn kinetic_at(u: &[Complex64], links: &GaugeLinks, idx: usize) -> f64 {
    let mut s = 0.0;
    for d in 0..links.grid.dim {
        if let Some(j) = links.neighbor(idx, d) {
            let hop = u[j] * Complex64::from_polar(1.0, -links.theta[d][idx]);
            s += (hop - u[idx]).norm_sqr();
        }
    }
    s
}

pub fn eval_energy(
    u: &OrderParameter,
    links: &GaugeLinks,
    b: f64,
) -> Result<EnergyBreakdown, GridError> {
    check_same_grid(u, links)?;
    if b < 0.0 {
        return Err(GridError::Invalid("b must be nonnegative".into()));
    }
    let grid = &u.grid;
    let n = grid.total_nodes();
    let edge_w = grid.cell_weight() / (grid.spacing * grid.spacing);
    let vals = &u.values;

    let kin_raw = pairwise_sum(n, &|i| kinetic_at(vals, links, i));
    let cond = pairwise_sum(n, &|i| -vals[i].norm_sqr() * node_weight(grid, i));
    let quart = pairwise_sum(n, &|i| {
        let m2 = vals[i].norm_sqr();
        0.5 * m2 * m2 * node_weight(grid, i)
    });

    let kinetic = b * edge_w * kin_raw;
    Ok(EnergyBreakdown { kinetic, condensation: cond, quartic: quart, total: kinetic + cond + quart, b })
}

/// Gradient of the energy with respect to the conjugate field, nodewise.
///
/// Convention: `E(u + h v) - E(u - h v) = 2 h * inner(grad, v) + O(h^3)` with
/// `inner(g, v) = 2 sum Re(conj(g) v)`; steepest descent is `u -= t * grad`.
/// Dirichlet boundary nodes report zero (pinned).
pub fn eval_gradient(
    u: &OrderParameter,
    links: &GaugeLinks,
    b: f64,
) -> Result<OrderParameter, GridError> {
    check_same_grid(u, links)?;
    let grid = &u.grid;
    let edge_w = grid.cell_weight() / (grid.spacing * grid.spacing);
    let mut g = OrderParameter::zeros(grid);
    let vals = &u.values;
    for idx in 0..vals.len() {
        if grid.is_boundary(idx) {
            continue;
        }
        let mut acc = Complex64::ZERO;
        for d in 0..grid.dim {
            if let Some(j) = links.neighbor(idx, d) {
                // forward edge idx -> j
                acc += vals[idx] - vals[j] * Complex64::from_polar(1.0, -links.theta[d][idx]);
            }
            if let Some(j) = backward_neighbor(grid, idx, d) {
                acc += vals[idx] - vals[j] * Complex64::from_polar(1.0, links.theta[d][j]);
            }
        }
        let m2 = vals[idx].norm_sqr();
        g.values[idx] = b * edge_w * acc + node_weight(grid, idx) * (m2 - 1.0) * vals[idx];
    }
    Ok(g)
}

fn backward_neighbor(grid: &GridSpec, idx: usize, d: usize) -> Option<usize> {
    let mut c = grid.coords(idx);
    if c[d] > 0 {
        c[d] -= 1;
        Some(grid.index(&c[..grid.dim]))
    } else {
        match grid.bc {
            Bc::Dirichlet => None,
            Bc::MagneticPeriodic => {
                c[d] = grid.nodes_per_side() - 1;
                Some(grid.index(&c[..grid.dim]))
            }
        }
    }
}

/// `inner(g, v) = 2 sum Re(conj(g) v)`, the pairing under which
/// `eval_gradient` is the directional derivative.
pub fn inner(g: &OrderParameter, v: &OrderParameter) -> f64 {
    2.0 * pairwise_sum(g.values.len(), &|i| {
        g.values[i].re * v.values[i].re + g.values[i].im * v.values[i].im
    })
}

/// Max-norm of the discrete Ginzburg-Landau equation residual
/// `-b D_links u - (1 - |u|^2) u` over free nodes.
pub fn eval_residual(u: &OrderParameter, links: &GaugeLinks, b: f64) -> Result<f64, GridError> {
    let g = eval_gradient(u, links, b)?;
    Ok(residual_from_gradient(&g))
}

/// The residual is the gradient stripped of its quadrature weight.
pub fn residual_from_gradient(g: &OrderParameter) -> f64 {
    let grid = &g.grid;
    let mut r: f64 = 0.0;
    for idx in 0..g.values.len() {
        if grid.is_boundary(idx) {
            continue;
        }
        r = r.max(g.values[idx].norm() / node_weight(grid, idx));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_gauge_links, wrap_quasi_periodic};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn random_field(grid: &GridSpec, seed: u64, amp: f64) -> OrderParameter {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut u = OrderParameter::zeros(grid);
        for v in u.values.iter_mut() {
            *v = Complex64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp));
        }
        u.pin_boundary();
        u
    }

    #[test]
    fn zero_field_zero_energy() {
        let grid = GridSpec::dirichlet(2, 6.0, 0.25).unwrap();
        let links = build_gauge_links(&grid).unwrap();
        let u = OrderParameter::zeros(&grid);
        let e = eval_energy(&u, &links, 0.7).unwrap();
        assert_eq!(e.total, 0.0);
        let g = eval_gradient(&u, &links, 0.7).unwrap();
        assert!(g.values.iter().all(|v| v.norm() == 0.0));
        assert_eq!(eval_residual(&u, &links, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn constant_one_periodic_b0_exact() {
        // b = 0, u = 1 on a periodic torus: total = -R^2/2 exactly
        let grid = GridSpec::periodic(4, 0.25).unwrap();
        let links = build_gauge_links(&grid).unwrap();
        let u = OrderParameter::constant(&grid, Complex64::ONE);
        let e = eval_energy(&u, &links, 0.0).unwrap();
        let r2 = grid.side * grid.side;
        assert_abs_diff_eq!(e.total, -0.5 * r2, epsilon = 1e-12 * r2);
    }

    #[test]
    fn constant_amplitude_b0_closed_form() {
        let grid = GridSpec::periodic(4, 0.25).unwrap();
        let links = build_gauge_links(&grid).unwrap();
        for t in [0.3, 0.8, 1.4] {
            let u = OrderParameter::constant(&grid, Complex64::new(t, 0.0));
            let e = eval_energy(&u, &links, 0.0).unwrap();
            let r2 = grid.side * grid.side;
            let expect = (-t * t + 0.5 * t.powi(4)) * r2;
            assert_abs_diff_eq!(e.total, expect, epsilon = 1e-11 * r2);
        }
    }

    #[test]
    fn breakdown_consistency_and_signs() {
        let grid = GridSpec::dirichlet(2, 5.0, 0.25).unwrap();
        let links = build_gauge_links(&grid).unwrap();
        let u = random_field(&grid, 7, 1.0);
        let e = eval_energy(&u, &links, 0.9).unwrap();
        assert!(e.kinetic >= 0.0);
        assert!(e.quartic >= 0.0);
        assert!(e.condensation <= 0.0);
        assert_abs_diff_eq!(
            e.total,
            e.kinetic + e.condensation + e.quartic,
            epsilon = 1e-12 * e.total.abs().max(1.0)
        );
    }

    #[test]
    fn completing_the_square_identity_b0() {
        // total(b=0) = (1/2) sum (|u|^2-1)^2 w - side^dim / 2, exactly
        for grid in [GridSpec::dirichlet(2, 5.0, 0.25).unwrap(), GridSpec::periodic(4, 0.25).unwrap()] {
            let links = build_gauge_links(&grid).unwrap();
            let u = random_field(&grid, 11, 1.2);
            let e = eval_energy(&u, &links, 0.0).unwrap();
            let sq: f64 = (0..grid.total_nodes())
                .map(|i| {
                    let d = u.values[i].norm_sqr() - 1.0;
                    0.5 * d * d * node_weight(&grid, i)
                })
                .sum();
            let expect = sq - 0.5 * grid.side.powi(grid.dim as i32);
            assert_abs_diff_eq!(e.total, expect, epsilon = 1e-10 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (grid, b) in [
            (GridSpec::dirichlet(2, 4.0, 0.25).unwrap(), 0.8),
            (GridSpec::periodic(2, 0.25).unwrap(), 0.6),
            (GridSpec::dirichlet(3, 2.0, 0.25).unwrap(), 1.1),
        ] {
            let links = build_gauge_links(&grid).unwrap();
            let u = random_field(&grid, 13, 0.8);
            let v = random_field(&grid, 17, 0.8);
            let g = eval_gradient(&u, &links, b).unwrap();
            let analytic = inner(&g, &v);
            for h in [1e-4, 1e-5] {
                let mut up = u.clone();
                let mut um = u.clone();
                for i in 0..u.values.len() {
                    up.values[i] += h * v.values[i];
                    um.values[i] -= h * v.values[i];
                }
                up.pin_boundary();
                um.pin_boundary();
                let ep = eval_energy(&up, &links, b).unwrap().total;
                let em = eval_energy(&um, &links, b).unwrap().total;
                let fd = (ep - em) / (2.0 * h);
                assert!(
                    (analytic - fd).abs() / analytic.abs().max(1e-12) < 1e-6,
                    "grad mismatch: analytic {analytic}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn global_phase_covariance() {
        let grid = GridSpec::periodic(4, 0.25).unwrap();
        let links = build_gauge_links(&grid).unwrap();
        let u = random_field(&grid, 19, 0.9);
        let phi = Complex64::from_polar(1.0, 1.234);
        let mut up = u.clone();
        for v in up.values.iter_mut() {
            *v *= phi;
        }
        let b = 0.7;
        let e0 = eval_energy(&u, &links, b).unwrap().total;
        let e1 = eval_energy(&up, &links, b).unwrap().total;
        assert_abs_diff_eq!(e0, e1, epsilon = 1e-12 * e0.abs().max(1.0));
        let g0 = eval_gradient(&u, &links, b).unwrap();
        let g1 = eval_gradient(&up, &links, b).unwrap();
        for (a, c) in g0.values.iter().zip(&g1.values) {
            assert!((a * phi - c).norm() < 1e-12);
        }
    }

    #[test]
    fn residual_of_constant_one_b0() {
        // u = 1 with b = 0: the equation degenerates to (1-1)*1 = 0
        let grid = GridSpec::periodic(4, 0.25).unwrap();
        let links = build_gauge_links(&grid).unwrap();
        let u = OrderParameter::constant(&grid, Complex64::ONE);
        assert_abs_diff_eq!(eval_residual(&u, &links, 0.0).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn wrap_covariance_with_shifted_links() {
        // The wrap phase is a gauge shift A0 -> A0 + (s2 R, -s1 R)/2 * (-1, 1):
        // E_links[wrap(u, s)] = E_links'[u] with every direction-0 phase moved
        // by +s2*R*a/2 and every direction-1 phase by -s1*R*a/2 (the seam
        // discrepancy s*R^2/2 is a multiple of 2 pi for even flux number).
        let grid = GridSpec::periodic(4, 0.25).unwrap();
        let links = build_gauge_links(&grid).unwrap();
        let (s1, s2) = (1.0f64, 1.0f64);
        let u = random_field(&grid, 23, 0.9);
        let w = wrap_quasi_periodic(&u, (s1 as i64, s2 as i64)).unwrap();
        let ra = grid.side * grid.spacing;
        let mut shifted = links.clone();
        for t in shifted.theta[0].iter_mut() {
            *t += 0.5 * s2 * ra;
        }
        for t in shifted.theta[1].iter_mut() {
            *t -= 0.5 * s1 * ra;
        }
        let e0 = eval_energy(&w, &links, 0.8).unwrap().total;
        let e1 = eval_energy(&u, &shifted, 0.8).unwrap().total;
        assert_abs_diff_eq!(e0, e1, epsilon = 1e-10 * e0.abs().max(1.0));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g1 = GridSpec::dirichlet(2, 4.0, 0.25).unwrap();
        let g2 = GridSpec::dirichlet(2, 5.0, 0.25).unwrap();
        let links = build_gauge_links(&g2).unwrap();
        let u = OrderParameter::zeros(&g1);
        assert!(matches!(eval_energy(&u, &links, 1.0), Err(GridError::GridMismatch)));
    }
}
