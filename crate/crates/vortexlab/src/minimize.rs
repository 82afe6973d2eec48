//! Ground-state energies m0(b,R), mp(b,R) and M0(b,R) by nonlinear conjugate
//! gradient minimization, plus Richardson continuum extrapolation in the
//! spacing.
//!
//! The energy restricted to a line `u + t d` is an exact quartic polynomial
//! in `t`, so the line search minimizes that polynomial in closed form; no
//! backtracking loop is needed and every accepted step is a true 1D minimum.

use crate::energy::{
    eval_energy, eval_gradient, inner, node_weight, residual_from_gradient,
    EnergyBreakdown,
};
use crate::grid::{build_gauge_links, Bc, GaugeLinks, GridError, GridSpec, OrderParameter};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MinimizeError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("3D grid with {0} nodes exceeds the memory cap of {1} nodes")]
    MemoryCap(usize, usize),
    #[error("energy {energy} violates the lower bound {bound}; discretization bug")]
    BoundViolation { energy: f64, bound: f64 },
    #[error("extrapolation needs at least 2 spacings with identical (b, side, bc)")]
    BadSeries,
    #[error("non-monotone energy sequence in the spacing; inputs look unconverged")]
    NonMonotoneSeries,
}

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    /// Residual max-norm target.
    pub tol: f64,
    /// Number of independent starts (>= 1).
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Cap on total 3D nodes.
    pub node_cap: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { tol: 1e-6, restarts: 4, seed: 0, max_iters: 50_000, node_cap: 30_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub energy: f64,
    pub breakdown: EnergyBreakdown,
    pub field: OrderParameter,
    pub residual: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub b: f64,
    pub side: f64,
    pub spacing: f64,
    pub bc: Bc,
    pub seed: u64,
    pub converged: bool,
}

/// m0(b,R): Dirichlet ground state on the square of side `side`.
pub fn minimize_dirichlet_2d(
    b: f64,
    side: f64,
    spacing: f64,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult, MinimizeError> {
    check_common(b, opts)?;
    let grid = GridSpec::dirichlet_adjusted(2, side, spacing)?;
    let res = minimize_on_grid(&grid, b, opts, None)?;
    assert_rough_bounds(&res, opts)?;
    Ok(res)
}

/// mp(b,R): magnetic-periodic ground state on the quantized torus with
/// `n_flux` flux quanta. The spacing is adjusted downward to divide the side.
pub fn minimize_periodic_2d(
    b: f64,
    n_flux: usize,
    spacing: f64,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult, MinimizeError> {
    check_common(b, opts)?;
    if n_flux == 0 {
        return Err(MinimizeError::Invalid("flux quantum count must be positive".into()));
    }
    let grid = GridSpec::periodic(n_flux, spacing)?;
    let res = minimize_on_grid(&grid, b, opts, None)?;
    assert_rough_bounds(&res, opts)?;
    Ok(res)
}

/// M0(b,R): Dirichlet ground state on the cube of side `side`.
pub fn minimize_dirichlet_3d(
    b: f64,
    side: f64,
    spacing: f64,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult, MinimizeError> {
    check_common(b, opts)?;
    let grid = GridSpec::dirichlet_adjusted(3, side, spacing)?;
    if grid.total_nodes() > opts.node_cap {
        return Err(MinimizeError::MemoryCap(grid.total_nodes(), opts.node_cap));
    }
    let res = minimize_on_grid(&grid, b, opts, None)?;
    // rough 2D bound extended: energy <= 0 and >= -[1-b]_+^2 side^3/2
    assert_rough_bounds(&res, opts)?;
    Ok(res)
}

fn check_common(b: f64, opts: &MinimizeOptions) -> Result<(), MinimizeError> {
    if b < 0.0 {
        return Err(MinimizeError::Invalid("b must be nonnegative".into()));
    }
    if opts.restarts == 0 {
        return Err(MinimizeError::Invalid("restarts must be >= 1".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(MinimizeError::Invalid("tolerance must be positive".into()));
    }
    Ok(())
}

// Internal sanity check against the continuum bracket -[1-b]_+^2 vol/2 <= E
// <= 0. The lattice kinetic operator undershoots the continuum lowest Landau
// level by O(a^2), so the lower bound gets an a^2 allowance; the sharp bound
// is asserted on extrapolated values only.
fn assert_rough_bounds(res: &MinimizeResult, opts: &MinimizeOptions) -> Result<(), MinimizeError> {
    let vol = res.side.powi(res.field.grid.dim as i32);
    let a2 = res.spacing * res.spacing;
    let eff = ((1.0 - res.b) + 0.25 * res.b * a2).max(0.0);
    let lower = -0.5 * eff * eff * vol;
    let slack = 10.0 * opts.tol * vol.max(1.0);
    if res.energy < lower - slack || res.energy > slack {
        return Err(MinimizeError::BoundViolation { energy: res.energy, bound: lower });
    }
    Ok(())
}

/// Runs all restarts on one grid, keeping the best result under the
/// deterministic tie-break (energy, then residual, then restart index).
/// `warm` supplies an extra starting field (e.g. prolongated from a coarser
/// grid); it runs in addition to the configured restarts.
pub fn minimize_on_grid(
    grid: &GridSpec,
    b: f64,
    opts: &MinimizeOptions,
    warm: Option<&OrderParameter>,
) -> Result<MinimizeResult, MinimizeError> {
    let links = build_gauge_links(grid)?;
    let mut best: Option<MinimizeResult> = None;
    let mut total_iters = 0usize;
    let starts = opts.restarts + usize::from(warm.is_some());
    for r in 0..starts {
        let init = if let (0, Some(w)) = (r, warm) {
            w.clone()
        } else {
            let ri = r - usize::from(warm.is_some());
            initial_field(grid, b, opts.seed, ri as u64)
        };
        let run = ncg_minimize(&init, &links, b, opts);
        total_iters += run.iterations;
        let better = match &best {
            None => true,
            Some(cur) => {
                // ties only need to absorb solver noise; a volume-scaled
                // window can swallow genuinely distinct shallow minima (the
                // near-critical condensate sits within tol*vol of zero)
                let tol = opts.tol;
                if (run.energy - cur.energy).abs() <= tol {
                    run.residual < cur.residual
                } else {
                    run.energy < cur.energy
                }
            }
        };
        if better {
            best = Some(MinimizeResult {
                energy: run.energy,
                breakdown: run.breakdown,
                field: run.field,
                residual: run.residual,
                iterations: 0,
                restarts_used: starts,
                b,
                side: grid.side,
                spacing: grid.spacing,
                bc: grid.bc,
                seed: opts.seed,
                converged: run.converged,
            });
        }
    }
    let mut best = best.expect("at least one restart");
    best.iterations = total_iters;
    Ok(best)
}

/// Restart 0 is the deterministic Meissner-like branch: constant amplitude
/// `[1-b]_+^(1/2)` with seeded random nodewise phases. Later restarts are
/// complex white noise of amplitude 0.5. The two families probe the constant
/// and the vortex basins separately.
fn initial_field(grid: &GridSpec, b: f64, seed: u64, restart: u64) -> OrderParameter {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(restart));
    let mut u = OrderParameter::zeros(grid);
    if restart == 0 {
        let amp = (1.0 - b).max(0.0).sqrt();
        for v in u.values.iter_mut() {
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            *v = Complex64::from_polar(amp, phi);
        }
    } else {
        for v in u.values.iter_mut() {
            *v = Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        }
    }
    u.pin_boundary();
    u
}

struct SingleRun {
    energy: f64,
    breakdown: EnergyBreakdown,
    field: OrderParameter,
    residual: f64,
    iterations: usize,
    converged: bool,
}

// Polak-Ribiere+ nonlinear CG with exact quartic line minimization.
// Convergence: residual < tol AND relative energy change over the trailing 50
// iterations < tol/10.
fn ncg_minimize(
    init: &OrderParameter,
    links: &GaugeLinks,
    b: f64,
    opts: &MinimizeOptions,
) -> SingleRun {
    let mut u = init.clone();
    let mut g = eval_gradient(&u, links, b).expect("grid checked");
    let mut d = negate(&g);
    let mut energy = eval_energy(&u, links, b).expect("grid checked").total;
    let mut g_dot = inner(&g, &g);
    let window = 50usize;
    let mut energy_window: Vec<f64> = vec![energy];
    let mut converged = false;
    let mut iters = 0usize;

    for it in 0..opts.max_iters {
        iters = it + 1;
        // descent check; fall back to steepest descent
        if inner(&g, &d) >= 0.0 {
            d = negate(&g);
        }
        let mut poly = line_poly(&u, &d, links, b);
        let mut t = minimize_quartic(&poly);
        if t == 0.0 {
            // no descent along d; retry along steepest descent once
            d = negate(&g);
            poly = line_poly(&u, &d, links, b);
            t = minimize_quartic(&poly);
        }
        if t == 0.0 {
            // the line search cannot improve in floating point, so the
            // energy criterion holds trivially; converged iff the residual
            // criterion does too
            converged = residual_from_gradient(&g) < opts.tol;
            break;
        }
        axpy(&mut u, t, &d);
        u.pin_boundary();
        energy = poly_eval(&poly, t);
        let g_new = eval_gradient(&u, links, b).expect("grid checked");
        let residual = residual_from_gradient(&g_new);

        energy_window.push(energy);
        if energy_window.len() > window + 1 {
            energy_window.remove(0);
        }
        let rel_change = {
            let first = energy_window[0];
            (first - energy).abs() / energy.abs().max(1.0)
        };
        if residual < opts.tol && rel_change < opts.tol / 10.0 {
            converged = true;
            break;
        }

        // Polak-Ribiere+ beta
        let g_new_dot = inner(&g_new, &g_new);
        let mixed = inner(&g_new, &g) // Re<g_new, g>
            ;
        let beta = ((g_new_dot - mixed) / g_dot).max(0.0);
        for i in 0..d.values.len() {
            d.values[i] = -g_new.values[i] + beta * d.values[i];
        }
        g = g_new;
        g_dot = g_new_dot;
    }

    let breakdown = eval_energy(&u, links, b).expect("grid checked");
    let g_final = eval_gradient(&u, links, b).expect("grid checked");
    SingleRun {
        energy: breakdown.total,
        breakdown,
        residual: residual_from_gradient(&g_final),
        field: u,
        iterations: iters,
        converged,
    }
}

fn negate(g: &OrderParameter) -> OrderParameter {
    let mut d = g.clone();
    for v in d.values.iter_mut() {
        *v = -*v;
    }
    d
}

fn axpy(u: &mut OrderParameter, t: f64, d: &OrderParameter) {
    for (a, b) in u.values.iter_mut().zip(&d.values) {
        *a += t * b;
    }
}

/// Coefficients `[c0, c1, c2, c3, c4]` of `t -> E(u + t d)`, computed in one
/// pass from the expansions of the quadratic and quartic terms.
fn line_poly(u: &OrderParameter, d: &OrderParameter, links: &GaugeLinks, b: f64) -> [f64; 5] {
    let grid = &u.grid;
    let n = grid.total_nodes();
    let edge_w = b * grid.cell_weight() / (grid.spacing * grid.spacing);
    let mut c = [0.0f64; 5];
    // kinetic: per edge |Du + t Dd|^2 = |Du|^2 + 2 t Re(conj(Du) Dd) + t^2 |Dd|^2
    let (mut k0, mut k1, mut k2) = (0.0, 0.0, 0.0);
    for idx in 0..n {
        for dir in 0..grid.dim {
            if let Some(j) = links.neighbor(idx, dir) {
                let ph = Complex64::from_polar(1.0, -links.theta[dir][idx]);
                let du = u.values[j] * ph - u.values[idx];
                let dd = d.values[j] * ph - d.values[idx];
                k0 += du.norm_sqr();
                k1 += 2.0 * (du.conj() * dd).re;
                k2 += dd.norm_sqr();
            }
        }
    }
    c[0] += edge_w * k0;
    c[1] += edge_w * k1;
    c[2] += edge_w * k2;
    // potential: with m = |u|^2 + 2 t p + t^2 q, p = Re(conj(u) d), q = |d|^2:
    //   -m + m^2/2
    let (mut p1, mut p2, mut p3, mut p4, mut p0) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for idx in 0..n {
        let w = node_weight(grid, idx);
        let m0 = u.values[idx].norm_sqr();
        let p = (u.values[idx].conj() * d.values[idx]).re;
        let q = d.values[idx].norm_sqr();
        // m(t) = m0 + 2 p t + q t^2
        // -m contributes (-m0, -2p, -q)
        // m^2/2 contributes:
        //   t^0: m0^2/2
        //   t^1: 2 m0 p
        //   t^2: m0 q + 2 p^2
        //   t^3: 2 p q
        //   t^4: q^2 / 2
        p0 += w * (-m0 + 0.5 * m0 * m0);
        p1 += w * (-2.0 * p + 2.0 * m0 * p);
        p2 += w * (-q + m0 * q + 2.0 * p * p);
        p3 += w * (2.0 * p * q);
        p4 += w * (0.5 * q * q);
    }
    c[0] += p0;
    c[1] += p1;
    c[2] += p2;
    c[3] += p3;
    c[4] += p4;
    c
}

fn poly_eval(c: &[f64; 5], t: f64) -> f64 {
    (((c[4] * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0]
}

/// Global minimizer of the quartic with coefficients `c` (c4 >= 0), restricted
/// to the root of its derivative with the lowest value; returns 0 when no
/// descent exists.
fn minimize_quartic(c: &[f64; 5]) -> f64 {
    // derivative: 4 c4 t^3 + 3 c3 t^2 + 2 c2 t + c1
    let roots = solve_cubic_real(4.0 * c[4], 3.0 * c[3], 2.0 * c[2], c[1]);
    let mut best_t = 0.0;
    let mut best_e = c[0];
    for &t in &roots {
        if t.is_finite() {
            let e = poly_eval(c, t);
            if e < best_e {
                best_e = e;
                best_t = t;
            }
        }
    }
    best_t
}

/// Real roots of `a t^3 + b t^2 + c t + d = 0`, handling the degenerate
/// quadratic/linear cases.
fn solve_cubic_real(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    if scale == 0.0 {
        return vec![];
    }
    if a.abs() < 1e-14 * scale {
        // quadratic b t^2 + c t + d
        if b.abs() < 1e-14 * scale {
            if c.abs() < 1e-14 * scale {
                return vec![];
            }
            return vec![-d / c];
        }
        let disc = c * c - 4.0 * b * d;
        if disc < 0.0 {
            return vec![];
        }
        let s = disc.sqrt();
        return vec![(-c + s) / (2.0 * b), (-c - s) / (2.0 * b)];
    }
    // depressed cubic t = y - b/(3a): y^3 + p y + q = 0
    let p = (3.0 * a * c - b * b) / (3.0 * a * a);
    let q = (2.0 * b * b * b - 9.0 * a * b * c + 27.0 * a * a * d) / (27.0 * a * a * a);
    let shift = -b / (3.0 * a);
    let disc = 0.25 * q * q + p * p * p / 27.0;
    let mut roots = Vec::with_capacity(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        let u = cbrt(-0.5 * q + s);
        let v = cbrt(-0.5 * q - s);
        roots.push(u + v + shift);
    } else if p.abs() < 1e-300 {
        roots.push(shift);
    } else {
        // three real roots (trigonometric form)
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        for k in 0..3 {
            roots.push(m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift);
        }
    }
    // one Newton polish per root
    for r in roots.iter_mut() {
        let f = ((a * *r + b) * *r + c) * *r + d;
        let df = (3.0 * a * *r + 2.0 * b) * *r + c;
        if df.abs() > 0.0 {
            let step = f / df;
            if step.is_finite() {
                *r -= step;
            }
        }
    }
    roots
}

fn cbrt(x: f64) -> f64 {
    x.signum() * x.abs().powf(1.0 / 3.0)
}

/// Prolongates a solution to a finer grid of the same side and bc by
/// (bi/tri)linear interpolation; used to warm-start refined solves.
pub fn prolongate(u: &OrderParameter, fine: &GridSpec) -> Result<OrderParameter, MinimizeError> {
    let coarse = &u.grid;
    if coarse.bc != Bc::Dirichlet || fine.bc != Bc::Dirichlet {
        return Err(MinimizeError::Invalid("prolongation is Dirichlet-only".into()));
    }
    if coarse.dim != fine.dim || (coarse.side - fine.side).abs() > 1e-9 * fine.side {
        return Err(MinimizeError::Invalid("prolongation requires the same side".into()));
    }
    let mut out = OrderParameter::zeros(fine);
    for idx in 0..out.values.len() {
        let c = fine.coords(idx);
        out.values[idx] = match fine.dim {
            2 => bilinear_sample(u, fine.pos(c[0]), fine.pos(c[1])),
            3 => trilinear_sample(u, fine.pos(c[0]), fine.pos(c[1]), fine.pos(c[2])),
            _ => unreachable!(),
        };
    }
    out.pin_boundary();
    Ok(out)
}

fn clamp_cell(coarse: &GridSpec, x: f64) -> (usize, f64) {
    let a = coarse.spacing;
    let max_cell = coarse.nodes_per_side() - 2;
    let i = ((x / a).floor() as isize).clamp(0, max_cell as isize) as usize;
    let frac = (x / a - i as f64).clamp(0.0, 1.0);
    (i, frac)
}

fn bilinear_sample(u: &OrderParameter, x: f64, y: f64) -> Complex64 {
    let g = &u.grid;
    let (i, fx) = clamp_cell(g, x);
    let (j, fy) = clamp_cell(g, y);
    let v = |ii: usize, jj: usize| u.values[g.index(&[ii, jj])];
    v(i, j) * ((1.0 - fx) * (1.0 - fy))
        + v(i + 1, j) * (fx * (1.0 - fy))
        + v(i, j + 1) * ((1.0 - fx) * fy)
        + v(i + 1, j + 1) * (fx * fy)
}

fn trilinear_sample(u: &OrderParameter, x: f64, y: f64, z: f64) -> Complex64 {
    let g = &u.grid;
    let (i, fx) = clamp_cell(g, x);
    let (j, fy) = clamp_cell(g, y);
    let (k, fz) = clamp_cell(g, z);
    let v = |ii: usize, jj: usize, kk: usize| u.values[g.index(&[ii, jj, kk])];
    let c00 = v(i, j, k) * (1.0 - fx) + v(i + 1, j, k) * fx;
    let c10 = v(i, j + 1, k) * (1.0 - fx) + v(i + 1, j + 1, k) * fx;
    let c01 = v(i, j, k + 1) * (1.0 - fx) + v(i + 1, j, k + 1) * fx;
    let c11 = v(i, j + 1, k + 1) * (1.0 - fx) + v(i + 1, j + 1, k + 1) * fx;
    (c00 * (1.0 - fy) + c10 * fy) * (1.0 - fz) + (c01 * (1.0 - fy) + c11 * fy) * fz
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Extrapolation {
    pub value: f64,
    /// Fitted convergence order, or None for a degenerate (constant) series.
    pub order: Option<f64>,
    pub residual: f64,
    /// Set when the fitted order falls outside [1.5, 2.5] or the fit is
    /// degenerate.
    pub flagged: bool,
}

/// Richardson extrapolation of energies computed at spacings a, a/2, a/4
/// (ratio-2 refinement), assuming a leading O(a^p) error with p fitted from
/// the data when three or more levels are available.
pub fn continuum_extrapolate(results: &[&MinimizeResult]) -> Result<Extrapolation, MinimizeError> {
    if results.len() < 2 {
        return Err(MinimizeError::BadSeries);
    }
    let first = results[0];
    for r in results {
        if (r.b - first.b).abs() > 1e-12
            || (r.side - first.side).abs() > 1e-9
            || r.bc != first.bc
            || r.field.grid.dim != first.field.grid.dim
        {
            return Err(MinimizeError::BadSeries);
        }
    }
    let mut sorted: Vec<&MinimizeResult> = results.to_vec();
    sorted.sort_by(|x, y| y.spacing.partial_cmp(&x.spacing).unwrap());
    let energies: Vec<f64> = sorted.iter().map(|r| r.energy).collect();
    let scale = energies.iter().fold(0.0f64, |m, e| m.max(e.abs())).max(1e-30);

    // degenerate: all identical
    if energies.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15 * scale) {
        return Ok(Extrapolation { value: energies[0], order: None, residual: 0.0, flagged: true });
    }
    if energies.len() == 2 {
        // assume second order for the link discretization
        let value = energies[1] + (energies[1] - energies[0]) / 3.0;
        return Ok(Extrapolation { value, order: Some(2.0), residual: (energies[1] - energies[0]).abs() / 3.0, flagged: false });
    }
    let k = energies.len();
    let d1 = energies[k - 3] - energies[k - 2];
    let d2 = energies[k - 2] - energies[k - 1];
    if d2.abs() < 1e-15 * scale {
        return Ok(Extrapolation { value: energies[k - 1], order: None, residual: d1.abs(), flagged: true });
    }
    // refinement must approach the limit from one side with shrinking steps
    // (sign of the approach depends on b: the b = 0 boundary layer converges
    // from above, while the lattice kinetic deficit makes b > 0 energies
    // converge from below); alternating or growing differences mean the
    // series is noise-dominated
    let ratio = d1 / d2;
    if !(ratio > 1.0) {
        // no convergence visible (alternating signs or growing steps);
        // report the finest level with a flag
        return Ok(Extrapolation { value: energies[k - 1], order: None, residual: d2.abs(), flagged: true });
    }
    let order = ratio.ln() / 2.0f64.ln();
    let value = energies[k - 1] - d2 / (ratio - 1.0);
    let flagged = !(1.5..=2.5).contains(&order);
    Ok(Extrapolation { value, order: Some(order), residual: (d2 / (ratio - 1.0)).abs(), flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quick_opts() -> MinimizeOptions {
        MinimizeOptions { tol: 1e-7, restarts: 2, seed: 0, max_iters: 20_000, ..Default::default() }
    }

    #[test]
    fn cubic_roots() {
        // (t-1)(t-2)(t-3) = t^3 - 6 t^2 + 11 t - 6
        let mut r = solve_cubic_real(1.0, -6.0, 11.0, -6.0);
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(r.len(), 3);
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r[1], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r[2], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn quartic_line_minimum() {
        // E(t) = (t^2-1)^2 = t^4 - 2 t^2 + 1, minima at t = +-1
        let c = [1.0, 0.0, -2.0, 0.0, 1.0];
        let t = minimize_quartic(&c);
        assert_abs_diff_eq!(t.abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(poly_eval(&c, t), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_state_dirichlet() {
        // b >= 1: minimum is exactly 0 with u = 0
        let res = minimize_dirichlet_2d(1.5, 6.0, 0.5, &quick_opts()).unwrap();
        assert!(res.converged);
        assert!(res.energy.abs() < 1e-8);
        assert!(res.field.max_abs() < 1e-4);
    }

    #[test]
    fn b0_energy_approaches_exact_value() {
        // b = 0, side 8: continuum value -32, approached from above as a -> 0
        let opts = quick_opts();
        let r1 = minimize_dirichlet_2d(0.0, 8.0, 0.5, &opts).unwrap();
        let r2 = minimize_dirichlet_2d(0.0, 8.0, 0.25, &opts).unwrap();
        assert!(r1.energy > -32.0 - 1e-9);
        assert!(r2.energy > -32.0 - 1e-9);
        assert!(r2.energy < r1.energy, "refinement must lower the energy");
        assert!(r2.energy < -30.0);
    }

    #[test]
    fn superconducting_state_negative_energy() {
        let res = minimize_dirichlet_2d(0.5, 6.0, 0.25, &quick_opts()).unwrap();
        assert!(res.converged, "residual {}", res.residual);
        assert!(res.energy < -0.1);
        // rough bounds
        assert!(res.energy >= -0.5 * 0.25 * 36.0 - 1e-6);
        // maximum principle
        assert!(res.field.max_abs() <= 1.0 + 10.0 * quick_opts().tol);
        // critical-point identity: E = -1/2 int |u|^4
        let quart_sum = 2.0 * res.breakdown.quartic;
        assert_abs_diff_eq!(res.energy, -0.5 * quart_sum, epsilon = 1e-5 * quart_sum.abs().max(1.0));
    }

    #[test]
    fn periodic_normal_state() {
        let res = minimize_periodic_2d(1.1, 4, 0.3, &quick_opts()).unwrap();
        assert!(res.energy.abs() < 1e-8);
        assert!(res.field.max_abs() < 1e-4);
    }

    #[test]
    fn periodic_below_dirichlet() {
        // mp(b,R) <= m0(b,R)
        let opts = quick_opts();
        let b = 0.9;
        let mp = minimize_periodic_2d(b, 4, 0.25, &opts).unwrap();
        let side = mp.side;
        let m0 = minimize_dirichlet_2d(b, side, 0.25, &opts).unwrap();
        assert!(mp.energy <= m0.energy + 1e-6, "mp {} m0 {}", mp.energy, m0.energy);
        assert!(mp.energy < 0.0);
    }

    #[test]
    fn richardson_recovers_quadratic_error() {
        // synthetic series e(a) = -32 + 3 a^2
        let grid = GridSpec::dirichlet(2, 8.0, 0.25).unwrap();
        let mk = |a: f64| MinimizeResult {
            energy: -32.0 + 3.0 * a * a,
            breakdown: EnergyBreakdown { kinetic: 0.0, condensation: 0.0, quartic: 0.0, total: 0.0, b: 0.0 },
            field: OrderParameter::zeros(&grid),
            residual: 0.0,
            iterations: 0,
            restarts_used: 1,
            b: 0.0,
            side: 8.0,
            spacing: a,
            bc: Bc::Dirichlet,
            seed: 0,
            converged: true,
        };
        let (r1, r2, r3) = (mk(0.25), mk(0.125), mk(0.0625));
        let ex = continuum_extrapolate(&[&r1, &r2, &r3]).unwrap();
        assert!(!ex.flagged);
        assert_abs_diff_eq!(ex.order.unwrap(), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ex.value, -32.0, epsilon = 1e-9);
    }

    #[test]
    fn richardson_degenerate_series_is_flagged() {
        let grid = GridSpec::dirichlet(2, 8.0, 0.25).unwrap();
        let mk = |a: f64| MinimizeResult {
            energy: -5.0,
            breakdown: EnergyBreakdown { kinetic: 0.0, condensation: 0.0, quartic: 0.0, total: 0.0, b: 0.0 },
            field: OrderParameter::zeros(&grid),
            residual: 0.0,
            iterations: 0,
            restarts_used: 1,
            b: 0.5,
            side: 8.0,
            spacing: a,
            bc: Bc::Dirichlet,
            seed: 0,
            converged: true,
        };
        let (r1, r2, r3) = (mk(0.25), mk(0.125), mk(0.0625));
        let ex = continuum_extrapolate(&[&r1, &r2, &r3]).unwrap();
        assert!(ex.flagged);
        assert!(ex.order.is_none());
        assert_eq!(ex.value, -5.0);
    }

    #[test]
    fn tiled_minimizer_energy_scales_exactly() {
        // magnetic-periodic tiling: energy of the k-tiled field is exactly
        // k^2 times the base energy
        let opts = quick_opts();
        let base = minimize_periodic_2d(0.9, 4, 0.3, &opts).unwrap();
        let tiled = crate::grid::tile_field(&base.field, 2).unwrap();
        let links = build_gauge_links(&tiled.grid).unwrap();
        let e = eval_energy(&tiled, &links, 0.9).unwrap();
        assert_abs_diff_eq!(e.total, 4.0 * base.energy, epsilon = 1e-9 * base.energy.abs().max(1.0));
    }
}
