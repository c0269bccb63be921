//! Asymptotic diagnostics over tracked branch sets.
//!
//! Everything here operationalizes limit statements about `t → ∞` on a
//! finite window, so each quantity comes with the window it was measured
//! on. The valid window of a branch set ends at the validity horizon of
//! the family (beyond it the grid no longer resolves the localized
//! eigensections and numbers are flagged, not trusted):
//!
//! * `λ(t)/t²` tail values and a least-squares fit `λ ≈ μt² + ωt + c` on
//!   the tail window give the limit `μ` and the well frequency `ω`,
//! * the corrected series `λ(t)/t² + C/t` with `C = sup‖A‖₂` must be
//!   nonincreasing on the upper part of the valid window,
//! * the kinetic series `t⁻²⟨Lψ,ψ⟩` selects the sequence `t_n` along
//!   which localization and Sobolev decay are measured,
//! * `‖(V−μ)ψ‖`, masses outside neighborhoods of the degeneracy locus
//!   `Σ_μ = {x : det(V(x)−μ) = 0}`, and for scalar potentials
//!   `‖|v′|²ψ‖` and the distance from `μ` to the critical values of `v`,
//! * five bounded-ratio series whose boundedness is reported, never
//!   asserted.
//!
//! All quantities are quadratic forms in `ψ`, so every output is exactly
//! invariant under sign flips of the tracked eigenvectors.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::branchtrack::BranchSet;
use crate::eigensolve::eigendecompose;
use crate::grid::{CircleGrid, ScalarFunctionSamples};
use crate::operators::{MatrixField, OperatorFamily};
use crate::{Error, Result};

/// Samples at `t` below this are excluded from scaled series.
pub const DEFAULT_T_FLOOR: f64 = 1.0;

/// Fraction of the valid window used by the asymptotic fit.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;

/// Neighborhood radii swept by the localization report.
pub const DEFAULT_RADII: [f64; 3] = [0.25, 0.5, 1.0];

/// An increase of the corrected scaled-energy series counts as a
/// violation above `MONOTONICITY_TOL·(1+|g|)`.
pub const MONOTONICITY_TOL: f64 = 1e-8;

/// `|v′|` below this counts as an exact critical point.
pub const CRITICAL_D1_TOL: f64 = 1e-10;

/// Minimum number of samples the asymptotic fit needs.
pub const MIN_FIT_SAMPLES: usize = 5;

/// A growth ratio above this between window halves flags a series as
/// unbounded.
const UNBOUNDED_GROWTH_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesSample {
    pub t: f64,
    pub value: f64,
}

/// Report parameters; defaults follow the crate-wide constants.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsConfig {
    pub t_floor: f64,
    pub tail_fraction: f64,
    pub radii: Vec<f64>,
    /// Number of `t_n` samples; `None` keeps every sample in the upper
    /// half of the valid window.
    pub tn_count: Option<usize>,
    pub sobolev_orders: Vec<u32>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            t_floor: DEFAULT_T_FLOOR,
            tail_fraction: DEFAULT_TAIL_FRACTION,
            radii: DEFAULT_RADII.to_vec(),
            tn_count: None,
            sobolev_orders: vec![1, 2],
        }
    }
}

// ---------------------------------------------------------------------
// scalar series over a branch
// ---------------------------------------------------------------------

/// `λ(t)/t²` over nodes with `t ≥ t_floor`.
pub fn scaled_energy_series(bs: &BranchSet, branch: usize, t_floor: f64) -> Vec<SeriesSample> {
    bs.nodes()
        .iter()
        .filter(|n| n.t >= t_floor)
        .map(|n| SeriesSample {
            t: n.t,
            value: n.lambda[branch] / (n.t * n.t),
        })
        .collect()
}

/// Least-squares fit `λ(t) ≈ μt² + ωt + c` over the tail window.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MuOmegaFit {
    pub mu: f64,
    pub omega: f64,
    pub constant: f64,
    /// RMS misfit normalized by `1 + |μ|·T²`.
    pub fit_residual: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Fits the tail of a branch. The window is the last `tail_fraction` of
/// the valid range `[t_first, min(t_last, horizon)]`; fewer than
/// [`MIN_FIT_SAMPLES`] samples there is an error.
pub fn estimate_mu_omega(
    bs: &BranchSet,
    branch: usize,
    tail_fraction: f64,
    horizon: f64,
) -> Result<MuOmegaFit> {
    let nodes = bs.nodes();
    let t_first = nodes.first().map(|n| n.t).unwrap_or(0.0);
    let t_end = valid_end(bs, horizon).ok_or(Error::InsufficientSamples {
        needed: MIN_FIT_SAMPLES,
        got: 0,
        context: "no samples below the validity horizon",
    })?;
    let start = t_end - tail_fraction * (t_end - t_first);
    let pts: Vec<(f64, f64)> = nodes
        .iter()
        .filter(|n| n.t >= start && n.t <= t_end)
        .map(|n| (n.t, n.lambda[branch]))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            got: pts.len(),
            context: "asymptotic fit window",
        });
    }
    let design = DMatrix::from_fn(pts.len(), 3, |r, c| match c {
        0 => pts[r].0 * pts[r].0,
        1 => pts[r].0,
        _ => 1.0,
    });
    let rhs = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let svd = design.clone().svd(true, true);
    let coeffs = svd.solve(&rhs, 1e-14).map_err(|_| Error::SolverFailure {
        worst_residual: f64::INFINITY,
    })?;
    let misfit = design * &coeffs - rhs;
    let rms = (misfit.norm_squared() / pts.len() as f64).sqrt();
    let mu = coeffs[0];
    Ok(MuOmegaFit {
        mu,
        omega: coeffs[1],
        constant: coeffs[2],
        fit_residual: rms / (1.0 + mu.abs() * t_end * t_end),
        window: (start, t_end),
        samples: pts.len(),
    })
}

/// Flags every increase of a series exceeding
/// `MONOTONICITY_TOL·(1 + |g|)`; returns `(t, excess)` pairs at the
/// offending right-hand samples.
pub fn flag_increases(series: &[SeriesSample]) -> Vec<SeriesSample> {
    let mut out = Vec::new();
    for w in series.windows(2) {
        let scale = 1.0 + w[0].value.abs().max(w[1].value.abs());
        let rise = w[1].value - w[0].value;
        if rise > MONOTONICITY_TOL * scale {
            out.push(SeriesSample {
                t: w[1].t,
                value: rise,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityAudit {
    /// `sup‖A‖₂`, enlarged by `2|λ_min|/t_floor` if the Laplacian floor
    /// dips below zero.
    pub c_used: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub violations: Vec<SeriesSample>,
}

/// Audits `g(t) = λ(t)/t² + C/t` for increases on the upper 80% of the
/// valid window.
pub fn monotonicity_check(
    bs: &BranchSet,
    branch: usize,
    family: &OperatorFamily,
    laplacian_min: f64,
    t_floor: f64,
) -> MonotonicityAudit {
    let mut c_used = family.sup_a_norm();
    if laplacian_min < 0.0 {
        c_used += 2.0 * laplacian_min.abs() / t_floor;
    }
    let horizon = family.validity_horizon();
    let t_first = bs.nodes().first().map(|n| n.t).unwrap_or(0.0);
    let t_end = valid_end(bs, horizon).unwrap_or(t_first);
    let start = (t_first + 0.2 * (t_end - t_first)).max(t_floor);
    let series: Vec<SeriesSample> = bs
        .nodes()
        .iter()
        .filter(|n| n.t >= start && n.t <= t_end)
        .map(|n| SeriesSample {
            t: n.t,
            value: n.lambda[branch] / (n.t * n.t) + c_used / n.t,
        })
        .collect();
    MonotonicityAudit {
        c_used,
        window: (start, t_end),
        samples: series.len(),
        violations: flag_increases(&series),
    }
}

/// `t⁻²⟨Lψ,ψ⟩` over nodes with `t ≥ t_floor`.
pub fn laplace_energy_series(
    bs: &BranchSet,
    branch: usize,
    laplacian: &DMatrix<f64>,
    t_floor: f64,
) -> Vec<SeriesSample> {
    let w = bs.weight();
    bs.nodes()
        .iter()
        .filter(|n| n.t >= t_floor)
        .map(|n| {
            let psi = n.psi.column(branch);
            let kin = w * (laplacian * psi).dot(&psi);
            SeriesSample {
                t: n.t,
                value: kin / (n.t * n.t),
            }
        })
        .collect()
}

/// Picks the `count` samples with the smallest values among those in the
/// upper half of `[t_lo, t_hi]`, ties broken toward larger `t`; returned
/// ascending in `t`.
pub fn select_tn(series: &[SeriesSample], count: usize, t_lo: f64, t_hi: f64) -> Result<Vec<f64>> {
    let half = t_lo + 0.5 * (t_hi - t_lo);
    let mut eligible: Vec<&SeriesSample> = series
        .iter()
        .filter(|s| s.t >= half && s.t <= t_hi)
        .collect();
    if count > eligible.len() {
        return Err(Error::InsufficientSamples {
            needed: count,
            got: eligible.len(),
            context: "t_n selection",
        });
    }
    eligible.sort_by(|a, b| {
        a.value
            .partial_cmp(&b.value)
            .unwrap()
            .then(b.t.partial_cmp(&a.t).unwrap())
    });
    let mut ts: Vec<f64> = eligible[..count].iter().map(|s| s.t).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ts)
}

// ---------------------------------------------------------------------
// Sobolev calculus
// ---------------------------------------------------------------------

/// Spectral calculus of the discrete Laplacian: powers of `(I + L)`
/// evaluated through its full eigendecomposition, computed once per
/// family.
pub struct SobolevCalculus {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    weight: f64,
}

impl SobolevCalculus {
    pub fn new(laplacian: &DMatrix<f64>, weight: f64) -> Result<Self> {
        let snap = eigendecompose(laplacian, laplacian.nrows(), 0.0, weight)?;
        Ok(SobolevCalculus {
            eigenvalues: snap.eigenvalues,
            eigenvectors: snap.eigenvectors,
            weight,
        })
    }

    /// Measured lower bound of the discrete Laplacian.
    pub fn laplacian_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `⟨(I+L)^s ψ, ψ⟩^{1/2}` for a unit section `ψ`.
    pub fn norm(&self, psi: &DVector<f64>, s: u32) -> f64 {
        let coeffs = self.eigenvectors.transpose() * psi * self.weight;
        let mut acc = 0.0;
        for (c, &lam) in coeffs.iter().zip(&self.eigenvalues) {
            acc += (1.0 + lam).max(0.0).powi(s as i32) * c * c;
        }
        acc.max(0.0).sqrt()
    }
}

/// `⟨(I+L)^s ψ, ψ⟩^{1/2}` through the precomputed spectral calculus.
pub fn sobolev_norm(calc: &SobolevCalculus, psi: &DVector<f64>, s: u32) -> f64 {
    calc.norm(psi, s)
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolevDecay {
    pub s: u32,
    pub samples: Vec<SeriesSample>,
    /// Last value below half the first.
    pub decaying: bool,
}

/// `t⁻ˢ‖ψ_t‖_{H^s}` at the selected `t_n`.
pub fn sobolev_decay_series(
    bs: &BranchSet,
    branch: usize,
    calc: &SobolevCalculus,
    s: u32,
    tn: &[f64],
) -> SobolevDecay {
    let samples: Vec<SeriesSample> = tn
        .iter()
        .filter_map(|&t| {
            node_at(bs, t).map(|node| {
                let psi = node.psi.column(branch).clone_owned();
                SeriesSample {
                    t,
                    value: calc.norm(&psi, s) / t.powi(s as i32),
                }
            })
        })
        .collect();
    let decaying = match (samples.first(), samples.last()) {
        (Some(first), Some(last)) if samples.len() >= 2 => last.value < 0.5 * first.value,
        _ => false,
    };
    SobolevDecay {
        s,
        samples,
        decaying,
    }
}

fn node_at(bs: &BranchSet, t: f64) -> Option<&crate::branchtrack::BranchNode> {
    bs.nodes().iter().find(|n| n.t == t)
}

// ---------------------------------------------------------------------
// localization
// ---------------------------------------------------------------------

/// `‖(V−μ)ψ_t‖` over nodes with `t ≥ t_floor`.
pub fn potential_residual_series(
    bs: &BranchSet,
    branch: usize,
    field_v: &MatrixField,
    mu: f64,
    t_floor: f64,
) -> Vec<SeriesSample> {
    let w = bs.weight();
    bs.nodes()
        .iter()
        .filter(|n| n.t >= t_floor)
        .map(|n| {
            let psi = n.psi.column(branch).clone_owned();
            let vpsi = field_v.apply(&psi);
            let r = &vpsi - &psi * mu;
            SeriesSample {
                t: n.t,
                value: w.sqrt() * r.norm(),
            }
        })
        .collect()
}

/// Arc neighborhood of a set of center points.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub inside: Vec<bool>,
    pub centers: Vec<f64>,
    pub radius: f64,
}

impl RegionMask {
    pub fn from_centers(grid: &CircleGrid, centers: Vec<f64>, radius: f64) -> Self {
        let inside = grid
            .points()
            .iter()
            .map(|&x| {
                centers
                    .iter()
                    .any(|&c| CircleGrid::arc_distance(x, c) <= radius)
            })
            .collect();
        RegionMask {
            inside,
            centers,
            radius,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Radius-`r` neighborhood of the degeneracy locus
/// `Σ_μ = {x : det(V(x)−μ) = 0}`, detected as local minima of
/// `|det(V−μ)|` below `10⁻⁶·(1+|μ|)^m`. An empty locus yields an empty
/// mask and the associated diagnostics become vacuous.
pub fn sigma_mu_mask(field_v: &MatrixField, grid: &CircleGrid, mu: f64, radius: f64) -> RegionMask {
    let det: Vec<f64> = field_v.det_shifted(mu).iter().map(|d| d.abs()).collect();
    let tol = 1e-6 * (1.0 + mu.abs()).powi(field_v.rank() as i32);
    let n = det.len();
    let mut centers = Vec::new();
    for j in 0..n {
        let prev = det[(j + n - 1) % n];
        let next = det[(j + 1) % n];
        if det[j] <= prev && det[j] <= next && det[j] < tol {
            centers.push(grid.point(j));
        }
    }
    RegionMask::from_centers(grid, centers, radius)
}

/// Weighted L² mass of `ψ` on the complement of a mask.
pub fn mass_outside(psi: &DVector<f64>, mask: &RegionMask, weight: f64, rank: usize) -> f64 {
    let mut acc = 0.0;
    for (j, &inside) in mask.inside.iter().enumerate() {
        if !inside {
            for c in 0..rank {
                let v = psi[j * rank + c];
                acc += v * v;
            }
        }
    }
    (weight * acc).sqrt()
}

/// `‖(v′)²ψ_t‖` for a scalar potential, over nodes with `t ≥ t_floor`.
pub fn gradient_localization_series(
    bs: &BranchSet,
    branch: usize,
    scalar_v: &ScalarFunctionSamples,
    rank: usize,
    t_floor: f64,
) -> Vec<SeriesSample> {
    let w = bs.weight();
    let weights: Vec<f64> = scalar_v.d1.iter().map(|d| d * d).collect();
    bs.nodes()
        .iter()
        .filter(|n| n.t >= t_floor)
        .map(|n| {
            let psi = n.psi.column(branch);
            let mut acc = 0.0;
            for (j, &g) in weights.iter().enumerate() {
                for c in 0..rank {
                    let v = g * psi[j * rank + c];
                    acc += v * v;
                }
            }
            SeriesSample {
                t: n.t,
                value: (w * acc).sqrt(),
            }
        })
        .collect()
}

/// Critical points of a sampled scalar function: grid intervals where
/// `v′` changes sign (or `|v′|` drops below [`CRITICAL_D1_TOL`]), refined
/// by one secant step; values by local quadratic interpolation.
pub fn critical_values(v: &ScalarFunctionSamples, grid: &CircleGrid) -> Vec<(f64, f64)> {
    let n = grid.n_points();
    let h = grid.spacing();
    if v.d1.iter().all(|d| d.abs() < CRITICAL_D1_TOL) {
        // constant function: every point is critical, report one value
        return vec![(grid.point(0), v.values[0])];
    }
    let mut found: Vec<(f64, f64)> = Vec::new();
    for j in 0..n {
        let a = v.d1[j];
        let b = v.d1[(j + 1) % n];
        if a.abs() < CRITICAL_D1_TOL {
            found.push((grid.point(j), v.values[j]));
        } else if b.abs() >= CRITICAL_D1_TOL && a.signum() != b.signum() {
            let frac = a / (a - b);
            let x = grid.point(j) + frac * h;
            found.push((x.rem_euclid(crate::grid::TAU), interpolate(v, grid, x)));
        }
    }
    // merge detections closer than one grid step
    found.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::new();
    for cand in found {
        let dup = out
            .iter()
            .any(|p| CircleGrid::arc_distance(p.0, cand.0) < 0.75 * h);
        if !dup {
            out.push(cand);
        }
    }
    out
}

fn interpolate(v: &ScalarFunctionSamples, grid: &CircleGrid, x: f64) -> f64 {
    let n = grid.n_points();
    let h = grid.spacing();
    let j0 = ((x / h).round() as i64).rem_euclid(n as i64) as usize;
    // offset measured cyclically so wraparound interpolation stays local
    let mut delta = (x - grid.point(j0)) / h;
    delta -= (delta / n as f64).round() * n as f64;
    let vm = v.values[(j0 + n - 1) % n];
    let v0 = v.values[j0];
    let vp = v.values[(j0 + 1) % n];
    vm * delta * (delta - 1.0) * 0.5 + v0 * (1.0 - delta * delta) + vp * delta * (delta + 1.0) * 0.5
}

// ---------------------------------------------------------------------
// equivalence ratios
// ---------------------------------------------------------------------

/// One of the bounded-ratio series from the equivalent-statement list;
/// boundedness is reported, not asserted.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceSeries {
    pub label: &'static str,
    pub tail_max_abs: f64,
    pub unbounded: bool,
    #[serde(skip)]
    pub samples: Vec<SeriesSample>,
}

fn equivalence_entry(label: &'static str, samples: Vec<SeriesSample>) -> EquivalenceSeries {
    // growth between window halves marks divergence
    let (t_lo, t_hi) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => {
            return EquivalenceSeries {
                label,
                tail_max_abs: 0.0,
                unbounded: false,
                samples,
            }
        }
    };
    let mid = 0.5 * (t_lo + t_hi);
    let m1 = samples
        .iter()
        .filter(|s| s.t <= mid)
        .map(|s| s.value.abs())
        .fold(0.0_f64, f64::max);
    let m2 = samples
        .iter()
        .filter(|s| s.t > mid)
        .map(|s| s.value.abs())
        .fold(0.0_f64, f64::max);
    let tail_start = t_lo + 0.5 * (t_hi - t_lo);
    let tail_max_abs = samples
        .iter()
        .filter(|s| s.t >= tail_start)
        .map(|s| s.value.abs())
        .fold(0.0_f64, f64::max);
    EquivalenceSeries {
        label,
        tail_max_abs,
        unbounded: m2 > UNBOUNDED_GROWTH_FACTOR * m1 + 1e-9,
        samples,
    }
}

/// The five ratio series tied to `λ(t)/t² = μ + O(1/t)`:
/// `⟨Lψ,ψ⟩/t`, `t·⟨(V−μ)ψ,ψ⟩`, `t²·Δ(λ/t²)/Δt`, `λ̇ − 2tμ`, and
/// `t·(λ/t² − μ)`.
pub fn equivalence_ratios(
    bs: &BranchSet,
    branch: usize,
    laplacian: &DMatrix<f64>,
    field_v: &MatrixField,
    mu: f64,
    t_floor: f64,
    t_end: f64,
) -> Vec<EquivalenceSeries> {
    let w = bs.weight();
    let nodes: Vec<&crate::branchtrack::BranchNode> = bs
        .nodes()
        .iter()
        .filter(|n| n.t >= t_floor && n.t <= t_end)
        .collect();

    let mut lap_over_t = Vec::with_capacity(nodes.len());
    let mut v_ratio = Vec::with_capacity(nodes.len());
    let mut hf_ratio = Vec::with_capacity(nodes.len());
    let mut signed_gap = Vec::with_capacity(nodes.len());
    for n in &nodes {
        let psi = n.psi.column(branch);
        let kin = w * (laplacian * psi).dot(&psi);
        let vq = w * (field_v.apply(&psi.clone_owned())).dot(&psi);
        let lam = n.lambda[branch];
        lap_over_t.push(SeriesSample {
            t: n.t,
            value: kin / n.t,
        });
        v_ratio.push(SeriesSample {
            t: n.t,
            value: n.t * (vq - mu),
        });
        hf_ratio.push(SeriesSample {
            t: n.t,
            value: n.hf[branch] - 2.0 * n.t * mu,
        });
        signed_gap.push(SeriesSample {
            t: n.t,
            value: n.t * (lam / (n.t * n.t) - mu),
        });
    }
    let mut derivative = Vec::new();
    for pair in nodes.windows(2) {
        let (n0, n1) = (pair[0], pair[1]);
        let g0 = n0.lambda[branch] / (n0.t * n0.t);
        let g1 = n1.lambda[branch] / (n1.t * n1.t);
        let tm = 0.5 * (n0.t + n1.t);
        derivative.push(SeriesSample {
            t: tm,
            value: tm * tm * (g1 - g0) / (n1.t - n0.t),
        });
    }

    vec![
        equivalence_entry("lap_over_t", lap_over_t),
        equivalence_entry("t_times_v_minus_mu", v_ratio),
        equivalence_entry("scaled_energy_derivative", derivative),
        equivalence_entry("hf_minus_2t_mu", hf_ratio),
        equivalence_entry("t_times_scaled_gap", signed_gap),
    ]
}

// ---------------------------------------------------------------------
// report assembly
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationRow {
    pub radius: f64,
    /// Mass outside the Σ_μ neighborhood at the largest `t_n`; `None`
    /// when the locus is empty.
    pub sigma_mass_tail: Option<f64>,
    /// Mass outside the critical-set neighborhood at the largest `t_n`;
    /// scalar potentials only.
    pub critical_mass_tail: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MuInterpretations {
    /// `⟨Vψ,ψ⟩` at the end of the valid window.
    pub v_expectation_tail: f64,
    /// `λ̇/(2t)` at the end of the valid window.
    pub hf_over_2t_tail: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchDiagnostics {
    pub branch: usize,
    pub cluster_tracked: bool,
    pub lambda_initial: f64,
    pub lambda_final: f64,
    pub mu_est: f64,
    pub omega_est: f64,
    pub fit_constant: f64,
    pub fit_residual: f64,
    pub fit_window: (f64, f64),
    pub c_used: f64,
    pub monotonicity_window: (f64, f64),
    pub monotonicity_violations: Vec<SeriesSample>,
    pub lambda_growth_bound: f64,
    pub tn: Vec<f64>,
    pub scaled_energy_tail: f64,
    pub laplace_energy_tail_min: f64,
    pub laplace_energy_nonnegative: bool,
    pub potential_residual_tail: f64,
    pub potential_residual_tail_mu_plus: f64,
    pub potential_residual_tail_mu_minus: f64,
    pub localization: Vec<LocalizationRow>,
    pub sobolev: Vec<SobolevDecay>,
    pub gradient_localization_tail: Option<f64>,
    pub critical_value_gap: Option<f64>,
    pub conjecture_gap: f64,
    pub mu_interpretations: MuInterpretations,
    pub equivalence: Vec<EquivalenceSeries>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub x: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub n_points: usize,
    pub rank: usize,
    pub k: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub nodes: usize,
    pub refined_points: usize,
    pub validity_horizon: f64,
    /// True when the requested window reaches beyond the horizon;
    /// diagnostics are then clipped to the horizon.
    pub horizon_clipped: bool,
    pub t_floor: f64,
    pub min_step_quality: f64,
    pub flagged_branches: Vec<usize>,
    pub critical_points: Option<Vec<CriticalPoint>>,
    pub potential_minimum: f64,
    pub branches: Vec<BranchDiagnostics>,
    pub incomplete: bool,
    pub errors: Vec<String>,
}

fn valid_end(bs: &BranchSet, horizon: f64) -> Option<f64> {
    bs.nodes().iter().rev().find(|n| n.t <= horizon).map(|n| n.t)
}

/// Full diagnostics for every tracked branch of a scenario.
///
/// Per-branch failures (for example, an asymptotic fit without enough
/// valid samples) are collected into `errors` and mark the report
/// incomplete rather than aborting the remaining branches.
pub fn diagnose(
    bs: &BranchSet,
    family: &OperatorFamily,
    cfg: &DiagnosticsConfig,
    scenario_name: &str,
) -> Result<ScenarioReport> {
    let calc = SobolevCalculus::new(family.laplacian(), family.weight())?;
    let horizon = family.validity_horizon();
    let (t_min, t_max) = {
        let ts = bs.t_values();
        (ts[0], ts[ts.len() - 1])
    };

    let scalar_v: Option<ScalarFunctionSamples> = family.scalar_potential().cloned().or_else(|| {
        family
            .field_v()
            .as_scalar()
            .and_then(|vals| ScalarFunctionSamples::from_values(family.grid(), vals).ok())
    });
    let crit = scalar_v.as_ref().map(|v| critical_values(v, family.grid()));
    let potential_minimum = family.field_v().min_eigenvalue();

    let mut branches = Vec::new();
    let mut errors = Vec::new();
    for b in 0..bs.k() {
        match diagnose_branch(
            bs,
            b,
            family,
            &calc,
            cfg,
            horizon,
            scalar_v.as_ref(),
            crit.as_deref(),
            potential_minimum,
        ) {
            Ok(d) => branches.push(d),
            Err(e) => errors.push(format!("branch {b}: {e}")),
        }
    }

    Ok(ScenarioReport {
        scenario: scenario_name.to_string(),
        n_points: family.grid().n_points(),
        rank: family.rank(),
        k: bs.k(),
        t_min,
        t_max,
        nodes: bs.n_nodes(),
        refined_points: bs.refined_points().len(),
        validity_horizon: horizon,
        horizon_clipped: t_max > horizon,
        t_floor: cfg.t_floor,
        min_step_quality: bs.min_step_quality(),
        flagged_branches: (0..bs.k()).filter(|&b| bs.branch_flagged(b)).collect(),
        critical_points: crit.map(|pts| {
            pts.into_iter()
                .map(|(x, value)| CriticalPoint { x, value })
                .collect()
        }),
        potential_minimum,
        incomplete: !errors.is_empty(),
        errors,
        branches,
    })
}

#[allow(clippy::too_many_arguments)]
fn diagnose_branch(
    bs: &BranchSet,
    branch: usize,
    family: &OperatorFamily,
    calc: &SobolevCalculus,
    cfg: &DiagnosticsConfig,
    horizon: f64,
    scalar_v: Option<&ScalarFunctionSamples>,
    crit: Option<&[(f64, f64)]>,
    potential_minimum: f64,
) -> Result<BranchDiagnostics> {
    let fit = estimate_mu_omega(bs, branch, cfg.tail_fraction, horizon)?;
    let mu = fit.mu;
    let t_first = bs.nodes()[0].t;
    let t_end = valid_end(bs, horizon).expect("fit succeeded, so a valid node exists");

    let audit = monotonicity_check(bs, branch, family, calc.laplacian_min(), cfg.t_floor);

    let scaled = scaled_energy_series(bs, branch, cfg.t_floor);
    let scaled_tail = scaled
        .iter()
        .rev()
        .find(|s| s.t <= t_end)
        .map(|s| s.value)
        .unwrap_or(0.0);
    let lambda_growth_bound = bs
        .nodes()
        .iter()
        .filter(|n| n.t <= t_end)
        .map(|n| n.lambda[branch].abs() / (1.0 + n.t * n.t))
        .fold(0.0_f64, f64::max);

    let laplace = laplace_energy_series(bs, branch, family.laplacian(), cfg.t_floor);
    let laplace_nonneg = laplace.iter().all(|s| s.value >= -1e-10);
    let tail_start = t_first + 0.5 * (t_end - t_first);
    let laplace_tail_min = laplace
        .iter()
        .filter(|s| s.t >= tail_start && s.t <= t_end)
        .map(|s| s.value)
        .fold(f64::INFINITY, f64::min);

    let tn_count = cfg.tn_count.unwrap_or_else(|| {
        laplace
            .iter()
            .filter(|s| s.t >= tail_start && s.t <= t_end)
            .count()
    });
    let tn = select_tn(&laplace, tn_count, t_first, t_end)?;
    let tn_max = *tn.last().expect("tn nonempty");

    let sobolev: Vec<SobolevDecay> = cfg
        .sobolev_orders
        .iter()
        .map(|&s| sobolev_decay_series(bs, branch, calc, s, &tn))
        .collect();

    let tail_value = |series: &[SeriesSample]| {
        series
            .iter()
            .find(|s| s.t == tn_max)
            .map(|s| s.value)
            .unwrap_or(0.0)
    };
    let pot = potential_residual_series(bs, branch, family.field_v(), mu, cfg.t_floor);
    let pot_plus = potential_residual_series(
        bs,
        branch,
        family.field_v(),
        mu + fit.fit_residual,
        cfg.t_floor,
    );
    let pot_minus = potential_residual_series(
        bs,
        branch,
        family.field_v(),
        mu - fit.fit_residual,
        cfg.t_floor,
    );

    let tail_node = node_at(bs, tn_max).expect("tn comes from node t values");
    let tail_psi = tail_node.psi.column(branch).clone_owned();
    let localization: Vec<LocalizationRow> = cfg
        .radii
        .iter()
        .map(|&radius| {
            let sigma = sigma_mu_mask(family.field_v(), family.grid(), mu, radius);
            let sigma_mass_tail = if sigma.is_empty() {
                None
            } else {
                Some(mass_outside(&tail_psi, &sigma, bs.weight(), family.rank()))
            };
            let critical_mass_tail = crit.map(|pts| {
                let mask = RegionMask::from_centers(
                    family.grid(),
                    pts.iter().map(|p| p.0).collect(),
                    radius,
                );
                mass_outside(&tail_psi, &mask, bs.weight(), family.rank())
            });
            LocalizationRow {
                radius,
                sigma_mass_tail,
                critical_mass_tail,
            }
        })
        .collect();

    let gradient_localization_tail = scalar_v.map(|v| {
        let series = gradient_localization_series(bs, branch, v, family.rank(), cfg.t_floor);
        tail_value(&series)
    });

    let critical_value_gap = crit.map(|pts| {
        pts.iter()
            .map(|p| (mu - p.1).abs())
            .fold(f64::INFINITY, f64::min)
    });

    let equivalence = equivalence_ratios(
        bs,
        branch,
        family.laplacian(),
        family.field_v(),
        mu,
        cfg.t_floor,
        t_end,
    );

    let end_node = bs
        .nodes()
        .iter()
        .rev()
        .find(|n| n.t <= t_end)
        .expect("valid end node");
    let psi_end = end_node.psi.column(branch).clone_owned();
    let v_expectation_tail = bs.weight() * family.field_v().apply(&psi_end).dot(&psi_end);
    let hf_over_2t_tail = end_node.hf[branch] / (2.0 * end_node.t);

    Ok(BranchDiagnostics {
        branch,
        cluster_tracked: bs.branch_flagged(branch),
        lambda_initial: bs.nodes()[0].lambda[branch],
        lambda_final: end_node.lambda[branch],
        mu_est: mu,
        omega_est: fit.omega,
        fit_constant: fit.constant,
        fit_residual: fit.fit_residual,
        fit_window: fit.window,
        c_used: audit.c_used,
        monotonicity_window: audit.window,
        monotonicity_violations: audit.violations,
        lambda_growth_bound,
        tn,
        scaled_energy_tail: scaled_tail,
        laplace_energy_tail_min: laplace_tail_min,
        laplace_energy_nonnegative: laplace_nonneg,
        potential_residual_tail: tail_value(&pot),
        potential_residual_tail_mu_plus: tail_value(&pot_plus),
        potential_residual_tail_mu_minus: tail_value(&pot_minus),
        localization,
        sobolev,
        gradient_localization_tail,
        critical_value_gap,
        conjecture_gap: mu - potential_minimum,
        mu_interpretations: MuInterpretations {
            v_expectation_tail,
            hf_over_2t_tail,
        },
        equivalence,
    })
}
