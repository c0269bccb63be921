//! Branch continuation: turning per-`t` spectra into labeled eigenbranches.
//!
//! Sorting eigenvalues at each `t` produces curves with kinks wherever two
//! branches cross; the smooth labeling is recovered by matching
//! eigenvectors between consecutive `t` values. The sweep is:
//!
//! 1. decompose the family at every base grid point (this phase may run in
//!    parallel; the fold below is sequential in ascending `t`),
//! 2. between consecutive snapshots, build the weighted overlap matrix
//!    `|⟨ψ_i(t), ψ_j(t')⟩|` and pick the permutation maximizing the total
//!    overlap (minimum-cost assignment on `−log` overlaps),
//! 3. where eigenvalues cluster within `ε_deg·(1+|λ|)`, individual
//!    overlaps lose meaning; matched groups are scored by principal
//!    angles between the spanned subspaces instead, and labels inside a
//!    group are decided by closeness of the derivative `⟨Ḣψ,ψ⟩`, which is
//!    what distinguishes branches passing through a crossing,
//! 4. a step whose worst group score falls below `τ` is bisected, down to
//!    `min_step`; if ambiguity persists there, the affected branches are
//!    force-accepted and flagged (labeled only up to the cluster) rather
//!    than silently mislabeled,
//! 5. accepted eigenvectors are sign-fixed so consecutive overlaps along
//!    a branch are nonnegative, and every node records the derivative
//!    `⟨(A + 2tV)ψ, ψ⟩` of its branch.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assignment::min_cost_assignment;
use crate::eigensolve::{eigendecompose, weighted_norm, SpectrumSnapshot};
use crate::operators::MatrixFamily;
use crate::{Error, Result};

/// Default matching threshold; anything below 1/√2 would accept an
/// arbitrary rotation within a 2-dimensional cluster, so the default
/// forces refinement before ambiguity.
pub const DEFAULT_TAU: f64 = 0.75;

/// Default degenerate-cluster gap coefficient; the gap threshold is
/// `eps_deg·(1 + |λ|)`.
pub const DEFAULT_EPS_DEG: f64 = 1e-6;

/// Default minimum refinement step as a fraction of the grid span.
pub const DEFAULT_MIN_STEP_FRACTION: f64 = 1e-4;

/// Overlaps are floored here before taking logs in the assignment cost.
pub const OVERLAP_FLOOR: f64 = 1e-300;

/// Ascending parameter grid with a refinement floor.
#[derive(Debug, Clone)]
pub struct TGrid {
    base: Vec<f64>,
    min_step: f64,
}

impl TGrid {
    /// Uniform grid of `steps` intervals over `[t0, t1]`.
    pub fn uniform(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t1 > t0) {
            return Err(Error::InvalidTGrid(format!(
                "need t1 > t0 and at least one step, got [{t0}, {t1}] with {steps}"
            )));
        }
        let pts = (0..=steps)
            .map(|i| t0 + (t1 - t0) * i as f64 / steps as f64)
            .collect();
        TGrid::from_points(pts, None)
    }

    /// Explicit base points; `min_step` defaults to a fixed fraction of
    /// the span.
    pub fn from_points(base: Vec<f64>, min_step: Option<f64>) -> Result<Self> {
        if base.len() < 2 {
            return Err(Error::InvalidTGrid("need at least two base points".into()));
        }
        if base[0] < 0.0 {
            return Err(Error::InvalidTGrid(format!(
                "grid must start at t ≥ 0, got {}",
                base[0]
            )));
        }
        if !base.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidTGrid("base points must be strictly ascending".into()));
        }
        let span = base[base.len() - 1] - base[0];
        let min_step = min_step.unwrap_or(DEFAULT_MIN_STEP_FRACTION * span);
        if min_step <= 0.0 {
            return Err(Error::InvalidTGrid("min_step must be positive".into()));
        }
        if base.windows(2).any(|w| w[1] - w[0] < min_step) {
            return Err(Error::InvalidTGrid(format!(
                "a base step is below min_step = {min_step}"
            )));
        }
        Ok(TGrid { base, min_step })
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn min_step(&self) -> f64 {
        self.min_step
    }

    pub fn span(&self) -> (f64, f64) {
        (self.base[0], self.base[self.base.len() - 1])
    }
}

/// Outcome of matching two snapshots.
#[derive(Debug, Clone)]
pub struct OverlapReport {
    /// `|⟨ψ_i(a), ψ_j(b)⟩|` in the weighted product.
    pub matrix: DMatrix<f64>,
    /// `assignment[i] = j`: branch `i` of side `a` continues as state `j`
    /// of side `b`.
    pub assignment: Vec<usize>,
    /// Worst group score: plain overlap for singletons, smallest
    /// principal cosine for clusters.
    pub min_overlap: f64,
    /// Matched groups of size ≥ 2 (b-side indices).
    pub clusters: Vec<Vec<usize>>,
    /// Per-branch score of the group the branch belongs to.
    pub branch_quality: Vec<f64>,
    /// True when `min_overlap < τ`.
    pub ambiguous: bool,
}

/// Weighted absolute overlap matrix between two snapshots.
pub fn overlap_matrix(a: &SpectrumSnapshot, b: &SpectrumSnapshot) -> Result<DMatrix<f64>> {
    Ok(signed_gram_views(a.weight, &a.eigenvectors, &b.eigenvectors)?.abs())
}

fn signed_gram_views(
    weight: f64,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: "overlap matrix sections",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            context: "overlap matrix branch count",
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    Ok(a.transpose() * b * weight)
}

/// Groups indices of an ascending eigenvalue list into clusters whose
/// consecutive gaps fall below `eps_deg·(1 + |λ|)`. Input need not be
/// sorted; returned cluster ids refer to input positions.
fn cluster_ids(lambdas: &[f64], eps_deg: f64) -> Vec<usize> {
    let k = lambdas.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| lambdas[i].partial_cmp(&lambdas[j]).expect("NaN eigenvalue"));
    let mut ids = vec![0_usize; k];
    let mut current = 0_usize;
    for w in 0..k {
        if w > 0 {
            let prev = lambdas[order[w - 1]];
            let here = lambdas[order[w]];
            let gap = here - prev;
            if gap >= eps_deg * (1.0 + prev.abs().max(here.abs())) {
                current += 1;
            }
        }
        ids[order[w]] = current;
    }
    ids
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Matches the branches of snapshot `a` to the states of snapshot `b`.
///
/// Without slope data, ties inside degenerate clusters fall back to the
/// overlap preference alone; the tracker supplies `⟨Ḣψ,ψ⟩` slopes on both
/// sides.
pub fn match_branches(
    a: &SpectrumSnapshot,
    b: &SpectrumSnapshot,
    tau: f64,
    eps_deg: f64,
) -> Result<OverlapReport> {
    match_step(
        a.weight,
        &a.eigenvalues,
        &a.eigenvectors,
        None,
        &b.eigenvalues,
        &b.eigenvectors,
        None,
        tau,
        eps_deg,
    )
}

#[allow(clippy::too_many_arguments)]
fn match_step(
    weight: f64,
    lambda_a: &[f64],
    psi_a: &DMatrix<f64>,
    slopes_a: Option<&[f64]>,
    lambda_b: &[f64],
    psi_b: &DMatrix<f64>,
    slopes_b: Option<&[f64]>,
    tau: f64,
    eps_deg: f64,
) -> Result<OverlapReport> {
    let k = lambda_a.len();
    let gram = signed_gram_views(weight, psi_a, psi_b)?;
    let overlaps = gram.abs();

    // provisional permutation from individual overlaps
    let cost = DMatrix::from_fn(k, k, |i, j| -overlaps[(i, j)].max(OVERLAP_FLOOR).ln());
    let provisional = min_cost_assignment(&cost);

    // joint group structure: clusters on either side plus the provisional
    // matching edges; nodes 0..k are a-branches, k..2k are b-states
    let ids_a = cluster_ids(lambda_a, eps_deg);
    let ids_b = cluster_ids(lambda_b, eps_deg);
    let mut dsu = DisjointSet::new(2 * k);
    for i in 1..k {
        for i2 in 0..i {
            if ids_a[i] == ids_a[i2] {
                dsu.union(i, i2);
            }
            if ids_b[i] == ids_b[i2] {
                dsu.union(k + i, k + i2);
            }
        }
    }
    for (i, &j) in provisional.iter().enumerate() {
        dsu.union(i, k + j);
    }

    let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> =
        std::collections::BTreeMap::new();
    for i in 0..k {
        groups.entry(dsu.find(i)).or_default().0.push(i);
    }
    for j in 0..k {
        groups.entry(dsu.find(k + j)).or_default().1.push(j);
    }

    let mut assignment = vec![0_usize; k];
    let mut branch_quality = vec![0.0_f64; k];
    let mut clusters = Vec::new();
    let mut min_overlap = f64::INFINITY;

    for (_, (rows, cols)) in groups {
        debug_assert_eq!(rows.len(), cols.len(), "group sides must balance");
        let p = rows.len();
        if p == 1 {
            let (i, j) = (rows[0], cols[0]);
            assignment[i] = j;
            let q = overlaps[(i, j)];
            branch_quality[i] = q;
            min_overlap = min_overlap.min(q);
            continue;
        }

        // subspace fidelity across the step: principal cosines of the
        // cross-Gram block
        let block = DMatrix::from_fn(p, p, |r, c| gram[(rows[r], cols[c])]);
        let sv = block.clone().singular_values();
        let sigma_min = sv.iter().fold(f64::INFINITY, |acc, &s| acc.min(s)).min(1.0 + 1e-10);

        // labels inside the group: overlap preference where overlaps are
        // decisive, slope closeness where they are not (that is what
        // distinguishes branches passing through a crossing)
        let slope_scale = match (slopes_a, slopes_b) {
            (Some(sa), Some(sb)) => {
                let m = rows
                    .iter()
                    .map(|&i| sa[i].abs())
                    .chain(cols.iter().map(|&j| sb[j].abs()))
                    .fold(0.0_f64, f64::max);
                Some(1.0 + m)
            }
            _ => None,
        };
        let group_cost = DMatrix::from_fn(p, p, |r, c| {
            let o = overlaps[(rows[r], cols[c])];
            let mut cost = 1.0 - o * o;
            if let (Some(scale), Some(sa), Some(sb)) = (slope_scale, slopes_a, slopes_b) {
                cost += (sa[rows[r]] - sb[cols[c]]).abs() / scale;
            }
            cost
        });
        let sub = min_cost_assignment(&group_cost);
        for (r, &c) in sub.iter().enumerate() {
            assignment[rows[r]] = cols[c];
            branch_quality[rows[r]] = sigma_min;
        }
        min_overlap = min_overlap.min(sigma_min);
        let mut cols_sorted = cols.clone();
        cols_sorted.sort_unstable();
        clusters.push(cols_sorted);
    }

    Ok(OverlapReport {
        matrix: overlaps,
        assignment,
        min_overlap,
        clusters,
        branch_quality,
        ambiguous: min_overlap < tau,
    })
}

/// Derivative of an eigenbranch through its eigenvector:
/// `⟨(A + 2tV)ψ, ψ⟩` in the weighted product. Rejects input that is not
/// unit-normalized.
pub fn hf_derivative<F: MatrixFamily + ?Sized>(
    family: &F,
    t: f64,
    psi: &DVector<f64>,
) -> Result<f64> {
    let w = family.weight();
    let norm = weighted_norm(w, psi);
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized { norm });
    }
    let d = family.matrix_derivative(t);
    Ok(w * (&d * psi).dot(psi))
}

fn slopes_from_derivative(deriv: &DMatrix<f64>, psi: &DMatrix<f64>, weight: f64) -> Vec<f64> {
    (0..psi.ncols())
        .map(|j| {
            let col = psi.column(j);
            weight * (deriv * col).dot(&col)
        })
        .collect()
}

/// One accepted node of a tracked branch set. `lambda`, `psi`, `hf` and
/// `residual` are in branch order (column `b` belongs to branch `b`).
#[derive(Debug, Clone)]
pub struct BranchNode {
    pub t: f64,
    pub lambda: Vec<f64>,
    pub psi: DMatrix<f64>,
    pub hf: Vec<f64>,
    pub residual: Vec<f64>,
    /// Worst matching score of the step into this node (1 for the first).
    pub step_quality: f64,
    /// Branches labeled only up to a degenerate cluster at this node.
    pub flagged: Vec<bool>,
}

/// A set of `k` branches tracked over a refined grid.
#[derive(Debug, Clone)]
pub struct BranchSet {
    k: usize,
    weight: f64,
    nodes: Vec<BranchNode>,
    refined: Vec<f64>,
}

impl BranchSet {
    /// Assembles a branch set from prepared nodes; intended for synthetic
    /// series in tests and for external data.
    pub fn from_nodes(k: usize, weight: f64, nodes: Vec<BranchNode>) -> Self {
        BranchSet {
            k,
            weight,
            nodes,
            refined: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn nodes(&self) -> &[BranchNode] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Adaptively inserted refinement points.
    pub fn refined_points(&self) -> &[f64] {
        &self.refined
    }

    pub fn t_values(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.t).collect()
    }

    pub fn lambda_series(&self, branch: usize) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|n| (n.t, n.lambda[branch])).collect()
    }

    /// True when any node labels this branch only up to a cluster.
    pub fn branch_flagged(&self, branch: usize) -> bool {
        self.nodes.iter().any(|n| n.flagged[branch])
    }

    pub fn min_step_quality(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.step_quality)
            .fold(f64::INFINITY, f64::min)
    }

    /// Flips the sign of a branch's eigenvector at the masked nodes.
    /// Physical diagnostics must be invariant under this.
    pub fn flip_gauge(&mut self, branch: usize, mask: &[bool]) {
        for (node, &flip) in self.nodes.iter_mut().zip(mask) {
            if flip {
                let col = -node.psi.column(branch).clone_owned();
                node.psi.set_column(branch, &col);
            }
        }
    }
}

/// Tracking parameters; defaults follow the crate-wide constants.
#[derive(Debug, Clone)]
pub struct TrackOptions {
    pub k: usize,
    pub tau: f64,
    pub eps_deg: f64,
    /// Overrides the grid's refinement floor when set.
    pub min_step: Option<f64>,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions {
            k: 6,
            tau: DEFAULT_TAU,
            eps_deg: DEFAULT_EPS_DEG,
            min_step: None,
        }
    }
}

/// Tracks the `k` lowest eigenbranches of `family` over `grid`.
///
/// Base-grid decompositions run in parallel; the matching fold is
/// sequential in ascending `t` and its result does not depend on how the
/// snapshot phase was scheduled.
pub fn track<F: MatrixFamily + ?Sized>(
    family: &F,
    grid: &TGrid,
    opts: &TrackOptions,
) -> Result<BranchSet> {
    let dim = family.dim();
    let k = opts.k;
    if k == 0 || k > dim {
        return Err(Error::DimensionMismatch {
            context: "tracked branch count",
            expected: dim,
            got: k,
        });
    }
    let weight = family.weight();
    let min_step = opts.min_step.unwrap_or(grid.min_step());

    let base: Vec<SpectrumSnapshot> = grid
        .base()
        .par_iter()
        .map(|&t| eigendecompose(&family.matrix(t), k, t, weight))
        .collect::<Result<_>>()?;

    let mut tracker = Tracker {
        family,
        opts,
        min_step,
        nodes: Vec::with_capacity(base.len()),
        refined: Vec::new(),
    };

    let mut base_iter = base.into_iter();
    let first = base_iter.next().expect("grid has at least two points");
    tracker.push_first(first);
    for snapshot in base_iter {
        tracker.advance(snapshot)?;
    }

    Ok(BranchSet {
        k,
        weight,
        nodes: tracker.nodes,
        refined: tracker.refined,
    })
}

struct Tracker<'a, F: MatrixFamily + ?Sized> {
    family: &'a F,
    opts: &'a TrackOptions,
    min_step: f64,
    nodes: Vec<BranchNode>,
    refined: Vec<f64>,
}

impl<'a, F: MatrixFamily + ?Sized> Tracker<'a, F> {
    fn slopes(&self, snapshot: &SpectrumSnapshot) -> Vec<f64> {
        let deriv = self.family.matrix_derivative(snapshot.t);
        slopes_from_derivative(&deriv, &snapshot.eigenvectors, snapshot.weight)
    }

    fn push_first(&mut self, snapshot: SpectrumSnapshot) {
        let hf = self.slopes(&snapshot);
        let k = snapshot.k();
        self.nodes.push(BranchNode {
            t: snapshot.t,
            lambda: snapshot.eigenvalues,
            psi: snapshot.eigenvectors,
            hf,
            residual: snapshot.residuals,
            step_quality: 1.0,
            flagged: vec![false; k],
        });
    }

    /// Extends the branch set to `target`, bisecting while the matching
    /// stays ambiguous or a branch jumps more than its derivatives allow.
    fn advance(&mut self, target: SpectrumSnapshot) -> Result<()> {
        let prev = self.nodes.last().expect("advance needs a previous node");
        let width = target.t - prev.t;
        let slopes_b = self.slopes(&target);
        let report = match_step(
            target.weight,
            &prev.lambda,
            &prev.psi,
            Some(&prev.hf),
            &target.eigenvalues,
            &target.eigenvectors,
            Some(&slopes_b),
            self.opts.tau,
            self.opts.eps_deg,
        )?;

        let forced = width <= 2.0 * self.min_step;
        let mut accept = !report.ambiguous || forced;
        let mut continuity_bad = vec![false; prev.lambda.len()];
        if accept {
            for (i, &j) in report.assignment.iter().enumerate() {
                let bound =
                    (prev.hf[i].abs() + slopes_b[j].abs() + 1.0) * width;
                if (target.eigenvalues[j] - prev.lambda[i]).abs() > bound {
                    continuity_bad[i] = true;
                    if !forced {
                        accept = false;
                    }
                }
            }
        }

        if accept {
            self.push_matched(target, slopes_b, report, forced, &continuity_bad);
            return Ok(());
        }

        let mid = 0.5 * (self.nodes.last().unwrap().t + target.t);
        let snap_mid = eigendecompose(
            &self.family.matrix(mid),
            target.k(),
            mid,
            target.weight,
        )?;
        self.refined.push(mid);
        self.advance(snap_mid)?;
        self.advance(target)
    }

    fn push_matched(
        &mut self,
        target: SpectrumSnapshot,
        slopes_b: Vec<f64>,
        report: OverlapReport,
        forced: bool,
        continuity_bad: &[bool],
    ) {
        let prev = self.nodes.last().expect("push_matched needs a previous node");
        let k = target.k();
        let dim = target.dim();
        let mut lambda = vec![0.0; k];
        let mut hf = vec![0.0; k];
        let mut residual = vec![0.0; k];
        let mut psi = DMatrix::zeros(dim, k);
        let mut flagged = vec![false; k];
        for (i, &j) in report.assignment.iter().enumerate() {
            lambda[i] = target.eigenvalues[j];
            hf[i] = slopes_b[j];
            residual[i] = target.residuals[j];
            let mut col = target.eigenvectors.column(j).clone_owned();
            let dot = target.weight * prev.psi.column(i).dot(&col);
            if dot < 0.0 {
                col = -col;
            }
            psi.set_column(i, &col);
            flagged[i] = forced
                && (report.branch_quality[i] < self.opts.tau || continuity_bad[i]);
        }
        self.nodes.push(BranchNode {
            t: target.t,
            lambda,
            psi,
            hf,
            residual,
            step_quality: report.min_overlap,
            flagged,
        });
    }
}
