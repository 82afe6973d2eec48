//! Thermodynamic-limit estimates: the bulk density g(b), the universal
//! constant E2 by two independent routes, the 3D bulk trial configuration on
//! a box, and the global property suite.

use crate::energy::pairwise_sum;
use crate::grid::{GridError, GridSpec, OrderParameter};
use crate::landau::{lowest_band, minimize_abrikosov, LandauError};
use crate::minimize::{
    continuum_extrapolate, minimize_on_grid, prolongate, Extrapolation, MinimizeError,
    MinimizeOptions, MinimizeResult,
};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ThermoError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Minimize(#[from] MinimizeError),
    #[error(transparent)]
    Landau(#[from] LandauError),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// A sequence of energy densities with a fitted limit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ThermoSeries {
    /// The field-strength ratio for the g route, absent for the c(R) route.
    pub b: Option<f64>,
    /// `(scale, density)` pairs; scale is `R` (or `1-b` for the b -> 1 route).
    pub points: Vec<(f64, f64)>,
    /// Fitted limit; absent when the series is flagged non-monotone.
    pub limit: Option<f64>,
    /// Coefficient of the correction term in the fit model.
    pub fit_constant: f64,
    /// Exponent of the correction model (fixed at -1: e = g + C/R).
    pub fit_exponent: f64,
    /// Root-mean-square misfit of the model.
    pub residual: f64,
    /// Standard error of the fitted limit.
    pub limit_stderr: f64,
    /// Set when monotonicity or range diagnostics fail beyond noise.
    pub flagged: bool,
}

struct LineFit {
    intercept: f64,
    slope: f64,
    rms: f64,
    intercept_stderr: f64,
}

// Least squares y = intercept + slope * x with intercept standard error.
fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - xm) * (v - xm)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - xm) * (b - ym)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = ym - slope * xm;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let rms = (rss / n).sqrt();
    let dof = (x.len() as i64 - 2).max(1) as f64;
    let s2 = rss / dof;
    let stderr = if sxx > 0.0 { (s2 * (1.0 / n + xm * xm / sxx)).sqrt() } else { s2.sqrt() };
    LineFit { intercept, slope, rms, intercept_stderr: stderr }
}

/// Dirichlet ground energy at `side`, continuum-extrapolated from `spacing`
/// and `spacing/2` with a prolongation warm start on the fine grid.
pub fn m0_extrapolated(
    b: f64,
    side: f64,
    spacing: f64,
    opts: &MinimizeOptions,
) -> Result<(MinimizeResult, Extrapolation), ThermoError> {
    // three levels a, a/2, a/4 so the convergence order is fitted from the
    // data; b = 0 has a first-order boundary-layer error while b > 0 interior
    // states converge second order, and a fixed-order two-level formula gets
    // the degenerate case wrong
    let coarse_grid = GridSpec::dirichlet_adjusted(2, side, spacing)?;
    let coarse = minimize_on_grid(&coarse_grid, b, opts, None)?;
    let mut warm_opts = *opts;
    warm_opts.restarts = 0;
    let mid_grid = GridSpec::dirichlet_adjusted(2, side, coarse_grid.spacing * 0.5)?;
    let warm_mid = prolongate(&coarse.field, &mid_grid)?;
    let mid = minimize_on_grid(&mid_grid, b, &warm_opts, Some(&warm_mid))?;
    let fine_grid = GridSpec::dirichlet_adjusted(2, side, coarse_grid.spacing * 0.25)?;
    let warm_fine = prolongate(&mid.field, &fine_grid)?;
    let fine = minimize_on_grid(&fine_grid, b, &warm_opts, Some(&warm_fine))?;
    let ex = continuum_extrapolate(&[&coarse, &mid, &fine])?;
    Ok((fine, ex))
}

/// Same for the magnetic-periodic energy at flux number `n_flux`.
pub fn mp_extrapolated(
    b: f64,
    n_flux: usize,
    spacing: f64,
    opts: &MinimizeOptions,
) -> Result<(MinimizeResult, Extrapolation), ThermoError> {
    let coarse_grid = GridSpec::periodic(n_flux, spacing)?;
    let coarse = minimize_on_grid(&coarse_grid, b, opts, None)?;
    let fine_grid = GridSpec::periodic_from_side(coarse_grid.side, coarse_grid.spacing * 0.5)?;
    let fine = minimize_on_grid(&fine_grid, b, opts, None)?;
    let ex = continuum_extrapolate(&[&coarse, &fine])?;
    Ok((fine, ex))
}

/// Estimates `g(b) = lim m0(b,R)/R^2` from a series of box sides, fitting
/// `e(R) = g + C/R`.
pub fn estimate_g(
    b: f64,
    sides: &[f64],
    spacing: f64,
    opts: &MinimizeOptions,
) -> Result<ThermoSeries, ThermoError> {
    if sides.len() < 3 {
        return Err(ThermoError::Invalid("need at least 3 sides".into()));
    }
    let mut sorted = sides.to_vec();
    sorted.sort_by(|a, c| a.partial_cmp(c).unwrap());
    if sorted[0] < 4.0 {
        return Err(ThermoError::Invalid("each side must be >= 4".into()));
    }
    let densities: Vec<Result<(f64, f64), ThermoError>> = sorted
        .par_iter()
        .map(|&side| {
            let (_res, ex) = m0_extrapolated(b, side, spacing, opts)?;
            Ok((side, ex.value / (side * side)))
        })
        .collect();
    let mut points = Vec::with_capacity(sorted.len());
    for d in densities {
        points.push(d?);
    }
    finish_series(Some(b), points, opts.tol)
}

fn finish_series(
    b: Option<f64>,
    points: Vec<(f64, f64)>,
    tol: f64,
) -> Result<ThermoSeries, ThermoError> {
    // increasing R must not raise the density beyond solver plus
    // extrapolation noise; the latter scales with the density magnitude
    let scale = points.iter().fold(0.0f64, |m, &(_, e)| m.max(e.abs()));
    let noise = (100.0 * tol).max(1e-3 * scale);
    let mut monotone = true;
    for w in points.windows(2) {
        if w[1].1 > w[0].1 + noise {
            monotone = false;
        }
    }
    let in_range = points.iter().all(|&(_, e)| (-0.5 - noise..=noise).contains(&e));
    let x: Vec<f64> = points.iter().map(|&(r, _)| 1.0 / r).collect();
    let y: Vec<f64> = points.iter().map(|&(_, e)| e).collect();
    let fit = fit_line(&x, &y);
    let flagged = !monotone || !in_range;
    Ok(ThermoSeries {
        b,
        points,
        limit: if monotone { Some(fit.intercept) } else { None },
        fit_constant: fit.slope,
        fit_exponent: -1.0,
        residual: fit.rms,
        limit_stderr: fit.intercept_stderr,
        flagged,
    })
}

/// E2 by the lattice route: the Abrikosov density `c(R)/R^2` over a series of
/// flux numbers, extrapolated in `1/R`.
pub fn estimate_e2_lattice(
    ns: &[usize],
    spacing: f64,
    restarts: usize,
    seed: u64,
) -> Result<ThermoSeries, ThermoError> {
    if ns.len() < 3 {
        return Err(ThermoError::Invalid("need at least 3 flux numbers".into()));
    }
    let mut sorted = ns.to_vec();
    sorted.sort_unstable();
    let densities: Vec<Result<(f64, f64), ThermoError>> = sorted
        .par_iter()
        .map(|&n| {
            let grid = GridSpec::periodic(n, spacing)?;
            let band = lowest_band(&grid, 1e-8)?;
            let res = minimize_abrikosov(&band, restarts, seed)?;
            Ok((grid.side, res.c_per_area))
        })
        .collect();
    let mut points = Vec::with_capacity(sorted.len());
    for d in densities {
        points.push(d?);
    }
    // the c(R) route has no proven monotonicity; fit without the flag
    let x: Vec<f64> = points.iter().map(|&(r, _)| 1.0 / r).collect();
    let y: Vec<f64> = points.iter().map(|&(_, e)| e).collect();
    let fit = fit_line(&x, &y);
    let in_range = points.iter().all(|&(_, e)| (-0.5..0.0).contains(&e));
    Ok(ThermoSeries {
        b: None,
        points,
        limit: Some(fit.intercept),
        fit_constant: fit.slope,
        fit_exponent: -1.0,
        residual: fit.rms,
        limit_stderr: fit.intercept_stderr,
        flagged: !in_range,
    })
}

/// E2 by the Ginzburg-Landau route: `g(b)/(1-b)^2` as `b -> 1-`, fitted
/// linearly in `1-b`.
///
/// The box must outgrow the vortex spacing scale as `b -> 1`; each side list
/// is rescaled so its smallest entry is at least `(1-b)^(-4/5)`.
pub fn estimate_e2_gl(
    bs: &[f64],
    sides: &[f64],
    spacing: f64,
    opts: &MinimizeOptions,
) -> Result<ThermoSeries, ThermoError> {
    if bs.iter().any(|&b| !(0.0..1.0).contains(&b)) {
        return Err(ThermoError::Invalid("b values must lie in (0,1)".into()));
    }
    let mut sorted = bs.to_vec();
    sorted.sort_by(|a, c| a.partial_cmp(c).unwrap());
    let mut points = Vec::with_capacity(sorted.len());
    let mut worst_stderr = 0.0f64;
    for &b in &sorted {
        let min_side = (1.0 - b).powf(-0.8);
        let smallest = sides.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale = if smallest < min_side { min_side / smallest } else { 1.0 };
        let scaled: Vec<f64> = sides.iter().map(|&s| s * scale).collect();
        let series = estimate_g(b, &scaled, spacing, opts)?;
        let g = series
            .limit
            .ok_or_else(|| ThermoError::Invalid(format!("g series at b={b} is non-monotone")))?;
        let denom = (1.0 - b) * (1.0 - b);
        points.push((1.0 - b, g / denom));
        worst_stderr = worst_stderr.max(series.limit_stderr / denom);
    }
    // extrapolate the ratio to b = 1 (smallest 1-b first)
    points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let x: Vec<f64> = points.iter().map(|&(s, _)| s).collect();
    let y: Vec<f64> = points.iter().map(|&(_, e)| e).collect();
    let fit = fit_line(&x, &y);
    let in_range = points.iter().all(|&(_, e)| (-0.5..0.0).contains(&e));
    Ok(ThermoSeries {
        b: None,
        points,
        limit: Some(fit.intercept),
        fit_constant: fit.slope,
        fit_exponent: 1.0,
        residual: fit.rms,
        limit_stderr: fit.intercept_stderr.max(worst_stderr),
        flagged: !in_range,
    })
}

/// Energy report for the bulk trial configuration on a box domain.
///
/// The domain is an axis-aligned box rather than a smooth set; every report
/// carries the `box_domain_adaptation` marker for that reason.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrialConfigReport {
    pub kappa: f64,
    pub h_field: f64,
    pub eta: f64,
    pub ell: f64,
    pub r_cell: f64,
    pub domain_volume: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub condensation: f64,
    pub quartic: f64,
    /// `E2 |Omega| [kappa - H]_+^2` with E2 taken from the Abrikosov energy
    /// of the same cell.
    pub bound: f64,
    pub slack: f64,
    pub e2_used: f64,
    /// Largest trial-field modulus; bounded by `C [1-b]_+^(1/2)`.
    pub max_modulus: f64,
    pub box_domain_adaptation: bool,
}

/// Quasi-periodic bilinear sample of a magnetic-periodic field at the plane
/// point `(y1, y2)`, using the extension relations across cell boundaries.
pub fn sample_quasi_periodic(u: &OrderParameter, y1: f64, y2: f64) -> Complex64 {
    let grid = &u.grid;
    let r = grid.side;
    let a = grid.spacing;
    let n = grid.points_per_side;
    let p = (y1 / r).floor();
    let q = (y2 / r).floor();
    let yb1 = y1 - p * r;
    let yb2 = y2 - q * r;
    let i = ((yb1 / a).floor() as usize).min(n - 1);
    let j = ((yb2 / a).floor() as usize).min(n - 1);
    let fx = (yb1 / a - i as f64).clamp(0.0, 1.0);
    let fy = (yb2 / a - j as f64).clamp(0.0, 1.0);
    // node of the extension at (ii, jj) with ii, jj possibly equal to n
    let ext = |ii: usize, jj: usize| -> Complex64 {
        let mut phase = 0.0;
        let (mut i2, mut j2) = (ii, jj);
        if i2 == n {
            phase += 0.5 * r * (j2 as f64 * a);
            i2 = 0;
        }
        if j2 == n {
            phase -= 0.5 * r * (i2 as f64 * a);
            j2 = 0;
        }
        u.values[grid.index(&[i2, j2])] * Complex64::from_polar(1.0, phase)
    };
    let interp = ext(i, j) * ((1.0 - fx) * (1.0 - fy))
        + ext(i + 1, j) * (fx * (1.0 - fy))
        + ext(i, j + 1) * ((1.0 - fx) * fy)
        + ext(i + 1, j + 1) * (fx * fy);
    let block_phase = 0.5 * (p * r * yb2 - q * r * yb1 + p * q * r * r);
    interp * Complex64::from_polar(1.0, block_phase)
}

/// The boundary cutoff: 0 within distance `eta` of the box boundary, 1 beyond
/// `2 eta`, quintic smoothstep between.
pub fn cutoff_h_eta(x: &[f64; 3], box_side: f64, eta: f64) -> f64 {
    let mut dist = f64::INFINITY;
    for &xi in x {
        dist = dist.min(xi).min(box_side - xi);
    }
    let t = dist / eta;
    if t <= 1.0 {
        0.0
    } else if t >= 2.0 {
        1.0
    } else {
        let y = t - 1.0;
        y * y * y * (10.0 + y * (-15.0 + 6.0 * y))
    }
}

/// Evaluates the 3D bulk trial configuration on the box `[0, L]^3`:
/// `psi(x) = h_eta(x) u(sqrt(kappa H) x_perp)` with `u` the magnetic-periodic
/// minimizer at `b = H/kappa` and flux number `n_flux`, against the frozen
/// potential `kappa H F`, `F = (-x2/2, x1/2, 0)`.
///
/// The grid resolves the scaled cell (in-plane spacing `~ u`'s spacing over
/// `sqrt(kappa H)`) and the cutoff layer (vertical spacing `<= eta/5`);
/// evaluation streams over z-slabs so memory stays at two slabs.
pub fn bulk_trial_energy(
    kappa: f64,
    h_field: f64,
    n_flux: usize,
    eta: f64,
    box_side: f64,
    spacing: f64,
    opts: &MinimizeOptions,
) -> Result<TrialConfigReport, ThermoError> {
    if kappa <= 0.0 || h_field <= 0.0 {
        return Err(ThermoError::Invalid("kappa and H must be positive".into()));
    }
    let b = h_field / kappa;
    if h_field < 0.8 * kappa {
        return Err(ThermoError::Invalid("requires H >= 0.8 kappa (near-critical regime)".into()));
    }
    if !(eta > 1.0 / kappa && eta < 0.3 * box_side) {
        return Err(ThermoError::Invalid("eta must lie in (1/kappa, 0.3 box_side)".into()));
    }
    let s = (kappa * h_field).sqrt();

    // periodic minimizer and the matching Abrikosov constant for the bound
    let grid2 = GridSpec::periodic(n_flux, spacing)?;
    let u = minimize_on_grid(&grid2, b, opts, None)?;
    let band = lowest_band(&grid2, 1e-8)?;
    let ab = minimize_abrikosov(&band, opts.restarts.max(1), opts.seed)?;
    let r_cell = grid2.side;
    let ell = r_cell / s;

    let l = box_side;
    // in-plane spacing ties to the scaled 2D lattice; vertical to the cutoff
    let nx = ((l * s / grid2.spacing).ceil() as usize).max(16);
    let nz = ((5.0 * l / eta).ceil() as usize).max(16);
    let hx = l / nx as f64;
    let hz = l / nz as f64;
    let kh = kappa * h_field;
    let k2 = kappa * kappa;

    // psi on one z-slab
    let plane: Vec<Complex64> = {
        let mut v = vec![Complex64::ZERO; (nx + 1) * (nx + 1)];
        for j in 0..=nx {
            for i in 0..=nx {
                v[j * (nx + 1) + i] = sample_quasi_periodic(&u.field, s * i as f64 * hx, s * j as f64 * hx);
            }
        }
        v
    };
    let slab = |k: usize| -> Vec<Complex64> {
        let z = k as f64 * hz;
        let mut v = vec![Complex64::ZERO; (nx + 1) * (nx + 1)];
        for j in 0..=nx {
            for i in 0..=nx {
                let x = [i as f64 * hx, j as f64 * hx, z];
                let h = cutoff_h_eta(&x, l, eta);
                if h > 0.0 {
                    v[j * (nx + 1) + i] = h * plane[j * (nx + 1) + i];
                }
            }
        }
        v
    };

    let cell = hx * hx * hz;
    let w_xy = cell / (hx * hx);
    let w_z = cell / (hz * hz);
    // per-slab contributions, summed in fixed slab order
    let slab_energy = |k: usize, cur: &[Complex64], next: Option<&[Complex64]>| -> (f64, f64, f64, f64) {
        let mut kin = 0.0f64;
        let mut cond = 0.0f64;
        let mut quart = 0.0f64;
        let mut maxmod = 0.0f64;
        let zb = if k == 0 || k == nz { 0.5 } else { 1.0 };
        for j in 0..=nx {
            let x2 = j as f64 * hx;
            for i in 0..=nx {
                let x1 = i as f64 * hx;
                let idx = j * (nx + 1) + i;
                let psi = cur[idx];
                let m2 = psi.norm_sqr();
                maxmod = maxmod.max(m2);
                // node weight: trapezoidal on all six faces
                let mut w = zb;
                if i == 0 || i == nx {
                    w *= 0.5;
                }
                if j == 0 || j == nx {
                    w *= 0.5;
                }
                cond += w * cell * (-k2 * m2);
                quart += w * cell * (0.5 * k2 * m2 * m2);
                // x edge
                if i < nx {
                    let theta = -0.5 * kh * hx * x2;
                    let hop = cur[idx + 1] * Complex64::from_polar(1.0, -theta);
                    kin += zb * w_xy * (hop - psi).norm_sqr();
                }
                // y edge
                if j < nx {
                    let theta = 0.5 * kh * hx * x1;
                    let hop = cur[idx + nx + 1] * Complex64::from_polar(1.0, -theta);
                    kin += zb * w_xy * (hop - psi).norm_sqr();
                }
                // z edge (zero phase)
                if let Some(nx_slab) = next {
                    kin += w_z * (nx_slab[idx] - psi).norm_sqr();
                }
            }
        }
        (kin, cond, quart, maxmod)
    };

    let mut kinetic = 0.0f64;
    let mut condensation = 0.0f64;
    let mut quartic = 0.0f64;
    let mut max_m2 = 0.0f64;
    let mut cur = slab(0);
    for k in 0..=nz {
        let next = if k < nz { Some(slab(k + 1)) } else { None };
        let (kin, cond, quart, m) = slab_energy(k, &cur, next.as_deref());
        kinetic += kin;
        condensation += cond;
        quartic += quart;
        max_m2 = max_m2.max(m);
        if let Some(n) = next {
            cur = n;
        }
    }
    let energy = kinetic + condensation + quartic;

    let volume = l * l * l;
    let excess = (kappa - h_field).max(0.0);
    let e2 = ab.c_per_area;
    let bound = e2 * volume * excess * excess;
    Ok(TrialConfigReport {
        kappa,
        h_field,
        eta,
        ell,
        r_cell,
        domain_volume: volume,
        energy,
        kinetic,
        condensation,
        quartic,
        bound,
        slack: energy - bound,
        e2_used: e2,
        max_modulus: max_m2.sqrt(),
        box_domain_adaptation: true,
    })
}

/// One verified inequality with its measured slack.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    pub slack: f64,
}

impl PropertyCheck {
    fn leq(name: String, lhs: f64, rhs: f64, tol: f64) -> Self {
        PropertyCheck { name, lhs, rhs, pass: lhs <= rhs + tol, slack: rhs - lhs }
    }
}

/// Configuration of the property suite grid.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PropertyConfig {
    pub bs: Vec<f64>,
    pub sides: Vec<f64>,
    pub n_fluxes: Vec<usize>,
    pub sides_3d: Vec<f64>,
    pub spacing: f64,
    pub include_3d: bool,
}

impl Default for PropertyConfig {
    fn default() -> Self {
        PropertyConfig {
            bs: vec![0.3, 0.5, 0.7, 0.9],
            sides: vec![6.0, 8.0, 10.0, 12.0],
            n_fluxes: vec![4, 16, 36],
            sides_3d: vec![5.0],
            spacing: 0.25,
            include_3d: true,
        }
    }
}

/// Maximum-principle check on a single field: `|u| <= 1 + tol` everywhere.
pub fn check_maximum_principle(u: &OrderParameter, tol: f64) -> PropertyCheck {
    PropertyCheck::leq("maximum_principle".into(), u.max_abs(), 1.0, tol)
}

/// Evaluates the theorem-level inequalities on a configured grid of
/// parameters. Failures are data, never panics.
pub fn property_suite(
    cfg: &PropertyConfig,
    opts: &MinimizeOptions,
) -> Result<Vec<PropertyCheck>, ThermoError> {
    let tol10 = 10.0 * opts.tol;
    let mut checks = Vec::new();

    // Dirichlet energies over the (b, side) grid, in parallel
    let grid_points: Vec<(f64, f64)> = cfg
        .bs
        .iter()
        .flat_map(|&b| cfg.sides.iter().map(move |&s| (b, s)))
        .collect();
    let m0: Vec<((f64, f64), MinimizeResult)> = grid_points
        .par_iter()
        .map(|&(b, side)| {
            let grid = GridSpec::dirichlet_adjusted(2, side, cfg.spacing)?;
            let res = minimize_on_grid(&grid, b, opts, None)?;
            Ok(((b, side), res))
        })
        .collect::<Result<_, ThermoError>>()?;
    let m0_at = |b: f64, side: f64| -> &MinimizeResult {
        &m0.iter()
            .find(|((bb, ss), _)| (bb - b).abs() < 1e-12 && (ss - side).abs() < 1e-9)
            .expect("computed above")
            .1
    };

    for &(b, side) in &grid_points {
        let res = m0_at(b, side);
        let r = res.side;
        let a2 = res.spacing * res.spacing;
        // rough bracket with the lattice eigenvalue allowance
        let eff = ((1.0 - b) + 0.25 * b * a2).max(0.0);
        checks.push(PropertyCheck::leq(
            format!("rough_lower b={b} R={side}"),
            -0.5 * eff * eff * r * r,
            res.energy,
            tol10 * r * r,
        ));
        checks.push(PropertyCheck::leq(
            format!("rough_upper b={b} R={side}"),
            res.energy,
            0.0,
            tol10 * r * r,
        ));
        checks.push(check_maximum_principle(&res.field, 100.0 * opts.tol));
    }

    // monotonicity in R
    for &b in &cfg.bs {
        let mut sides = cfg.sides.clone();
        sides.sort_by(|a, c| a.partial_cmp(c).unwrap());
        for w in sides.windows(2) {
            let e_small = m0_at(b, w[0]).energy;
            let e_large = m0_at(b, w[1]).energy;
            checks.push(PropertyCheck::leq(
                format!("monotone_in_R b={b} {}->{}", w[0], w[1]),
                e_large,
                e_small,
                tol10 * w[1] * w[1],
            ));
        }
    }

    // periodic chain on the quantized tori
    let mut gap_ratios: Vec<f64> = Vec::new();
    for &b in &cfg.bs {
        for &n in &cfg.n_fluxes {
            let grid = GridSpec::periodic(n, cfg.spacing)?;
            let side = grid.side;
            let mp_res = minimize_on_grid(&grid, b, opts, None)?;
            let m0_grid = GridSpec::dirichlet_adjusted(2, side, cfg.spacing)?;
            let m0_res = minimize_on_grid(&m0_grid, b, opts, None)?;
            checks.push(PropertyCheck::leq(
                format!("mp_le_m0 b={b} N={n}"),
                mp_res.energy,
                m0_res.energy,
                tol10 * side * side,
            ));
            let gap = m0_res.energy - mp_res.energy;
            let scale = (1.0 - b).max(0.0) * side;
            if scale > 1e-9 && gap > 100.0 * opts.tol {
                gap_ratios.push(gap / scale);
            }
            // band route bound
            let band = lowest_band(&grid, 1e-8)?;
            let ab = minimize_abrikosov(&band, opts.restarts.max(1), opts.seed)?;
            let onemb = (1.0 - b).max(0.0);
            checks.push(PropertyCheck::leq(
                format!("mp_le_c b={b} N={n}"),
                mp_res.energy,
                onemb * onemb * ab.c_value,
                tol10 * side * side,
            ));
        }
    }
    // linear-in-R gap scaling: fitted constant positive, ratios within 2x
    if !gap_ratios.is_empty() {
        let c_hat = gap_ratios.iter().sum::<f64>() / gap_ratios.len() as f64;
        let spread_ok =
            gap_ratios.iter().all(|&r| r >= 0.5 * c_hat - tol10 && r <= 1.5 * c_hat + tol10);
        checks.push(PropertyCheck {
            name: "gap_linear_in_R".into(),
            lhs: c_hat,
            rhs: 0.0,
            pass: c_hat > 0.0 && spread_ok,
            slack: c_hat,
        });
    }

    // tiling subadditivity m0(2R) <= 4 m0(R)
    for &b in &cfg.bs {
        let small = cfg.sides[0];
        let g1 = GridSpec::dirichlet_adjusted(2, small, cfg.spacing)?;
        let r1 = minimize_on_grid(&g1, b, opts, None)?;
        let g2 = GridSpec::dirichlet_adjusted(2, 2.0 * small, g1.spacing)?;
        let r2 = minimize_on_grid(&g2, b, opts, None)?;
        checks.push(PropertyCheck::leq(
            format!("subadditive b={b} R={small}"),
            r2.energy,
            4.0 * r1.energy,
            tol10 * 4.0 * small * small,
        ));
    }

    // 3D sandwich
    if cfg.include_3d {
        for &b in &cfg.bs {
            for &side in &cfg.sides_3d {
                let g3 = GridSpec::dirichlet_adjusted(3, side, cfg.spacing)?;
                let m3 = minimize_on_grid(&g3, b, opts, None)?;
                let g2 = GridSpec::dirichlet_adjusted(2, side, cfg.spacing)?;
                let m2 = minimize_on_grid(&g2, b, opts, None)?;
                let r = side;
                checks.push(PropertyCheck::leq(
                    format!("sandwich_lower b={b} R={side}"),
                    r * m2.energy,
                    m3.energy,
                    tol10 * r * r * r,
                ));
                // upper direction with a universal additive constant: the
                // fitted constant is reported in the slack, only the sign of
                // the trend is asserted (M_hat >= 0)
                let m_hat = m3.energy - (r - 2.0) * m2.energy;
                checks.push(PropertyCheck {
                    name: format!("sandwich_upper_fit b={b} R={side}"),
                    lhs: m3.energy,
                    rhs: (r - 2.0) * m2.energy + m_hat,
                    pass: m_hat >= -tol10 * r * r,
                    slack: m_hat,
                });
            }
        }
    }

    Ok(checks)
}

/// Total quartic integral `int |u|^4` of a field, for critical-point checks.
pub fn quartic_integral(u: &OrderParameter) -> f64 {
    let w = u.grid.cell_weight();
    w * pairwise_sum(u.values.len(), &|i| {
        let m = u.values[i].norm_sqr();
        m * m
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quick_opts() -> MinimizeOptions {
        MinimizeOptions { tol: 1e-7, restarts: 2, seed: 0, max_iters: 20_000, ..Default::default() }
    }

    #[test]
    fn fit_line_recovers_exact_model() {
        let x = [0.1, 0.2, 0.5, 1.0];
        let y: Vec<f64> = x.iter().map(|&v| -0.5 + 2.0 * v).collect();
        let f = fit_line(&x, &y);
        assert_abs_diff_eq!(f.intercept, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-12);
        assert!(f.rms < 1e-12);
    }

    #[test]
    fn g_of_zero_field_is_minus_half() {
        let s = estimate_g(0.0, &[6.0, 8.0, 10.0], 0.25, &quick_opts()).unwrap();
        assert!(!s.flagged);
        let g = s.limit.unwrap();
        assert_abs_diff_eq!(g, -0.5, epsilon = 5e-3);
        for &(_, e) in &s.points {
            // per-side extrapolated densities carry an O(1e-4) fitted-order
            // artifact below the exact -1/2
            assert!(e >= -0.5 - 1e-3 && e <= 0.0);
        }
    }

    #[test]
    fn g_above_critical_is_zero() {
        let s = estimate_g(1.2, &[6.0, 8.0, 10.0], 0.4, &quick_opts()).unwrap();
        assert!(s.limit.unwrap().abs() < 1e-6);
        for &(_, e) in &s.points {
            assert!(e.abs() < 1e-8);
        }
    }

    #[test]
    fn e2_lattice_in_range() {
        let s = estimate_e2_lattice(&[2, 4, 8], 0.25, 3, 0).unwrap();
        let e2 = s.limit.unwrap();
        assert!((-0.5..0.0).contains(&e2), "E2 {e2}");
        assert!(e2 < -0.40, "E2 {e2}");
        assert!(!s.flagged);
    }

    #[test]
    fn cutoff_shape() {
        let l = 1.0;
        let eta = 0.1;
        assert_eq!(cutoff_h_eta(&[0.05, 0.5, 0.5], l, eta), 0.0);
        assert_eq!(cutoff_h_eta(&[0.5, 0.5, 0.5], l, eta), 1.0);
        let mid = cutoff_h_eta(&[0.15, 0.5, 0.5], l, eta);
        assert!(mid > 0.0 && mid < 1.0);
        // continuity at the knots
        assert!(cutoff_h_eta(&[0.1001, 0.5, 0.5], l, eta) < 1e-6);
        assert!(cutoff_h_eta(&[0.1999, 0.5, 0.5], l, eta) > 1.0 - 1e-6);
    }

    #[test]
    fn quasi_periodic_sample_matches_nodes() {
        let grid = GridSpec::periodic(4, 0.3).unwrap();
        let opts = quick_opts();
        let u = minimize_on_grid(&grid, 0.8, &opts, None).unwrap().field;
        // at the nodes of the base cell the sample is the node value
        for j in 0..grid.points_per_side {
            for i in 0..grid.points_per_side {
                let v = sample_quasi_periodic(&u, i as f64 * grid.spacing, j as f64 * grid.spacing);
                let expect = u.values[grid.index(&[i, j])];
                assert!((v - expect).norm() < 1e-12);
            }
        }
        // one period over preserves the modulus
        let r = grid.side;
        let v0 = sample_quasi_periodic(&u, 0.7, 1.1);
        let v1 = sample_quasi_periodic(&u, 0.7 + r, 1.1);
        let v2 = sample_quasi_periodic(&u, 0.7, 1.1 + r);
        assert_abs_diff_eq!(v0.norm(), v1.norm(), epsilon = 1e-12);
        assert_abs_diff_eq!(v0.norm(), v2.norm(), epsilon = 1e-12);
    }

    #[test]
    fn trial_energy_sane_at_moderate_kappa() {
        let opts = quick_opts();
        let rep = bulk_trial_energy(40.0, 36.0, 4, 0.1, 1.0, 0.25, &opts).unwrap();
        assert!(rep.box_domain_adaptation);
        assert!(rep.bound < 0.0);
        // the leading term is negative; the cutoff-layer cost at kappa = 40
        // keeps the total small relative to max(kappa, [kappa-H]^2)
        let scale = rep.kappa.max((rep.kappa - rep.h_field).powi(2));
        assert!(rep.slack / scale < 0.5, "slack {} scale {}", rep.slack, scale);
        assert!(rep.energy < rep.kappa, "trial energy {}", rep.energy);
        assert!(rep.max_modulus <= 1.0 + 1e-6);
        // the cutoff forces psi = 0 in the eta-layer; probe via the field
        // modulus bound rather than grid introspection
        assert!(rep.ell > 0.0 && rep.ell < 1.0);
        assert_abs_diff_eq!(rep.slack, rep.energy - rep.bound, epsilon = 1e-9);
    }

    #[test]
    fn trial_rejects_bad_parameters() {
        let opts = quick_opts();
        assert!(bulk_trial_energy(40.0, 10.0, 4, 0.1, 1.0, 0.25, &opts).is_err());
        assert!(bulk_trial_energy(40.0, 36.0, 4, 0.5, 1.0, 0.25, &opts).is_err());
    }

    #[test]
    fn property_suite_small_grid_passes() {
        let cfg = PropertyConfig {
            bs: vec![0.5, 0.9],
            sides: vec![5.0133, 6.0, 8.0],
            n_fluxes: vec![4],
            sides_3d: vec![4.0],
            spacing: 0.3,
            include_3d: true,
        };
        let checks = property_suite(&cfg, &quick_opts()).unwrap();
        let failures: Vec<&PropertyCheck> = checks.iter().filter(|c| !c.pass).collect();
        assert!(failures.is_empty(), "failed checks: {failures:?}");
    }

    #[test]
    fn property_suite_catches_corruption() {
        let grid = GridSpec::periodic(4, 0.3).unwrap();
        let mut u = minimize_on_grid(&grid, 0.5, &quick_opts(), None).unwrap().field;
        for v in u.values.iter_mut() {
            *v *= 2.0;
        }
        let check = check_maximum_principle(&u, 1e-5);
        assert!(!check.pass);
    }

    #[test]
    fn normal_state_suite_trivial() {
        let cfg = PropertyConfig {
            bs: vec![1.05],
            sides: vec![5.0, 6.0],
            n_fluxes: vec![4],
            sides_3d: vec![],
            spacing: 0.4,
            include_3d: false,
        };
        let checks = property_suite(&cfg, &quick_opts()).unwrap();
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
    }
}
