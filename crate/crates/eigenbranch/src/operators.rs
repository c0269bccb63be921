//! Discretized self-adjoint operator families `H(t) = L + t·A + t²·V`.
//!
//! `L` is the periodic second-order central-difference Laplacian applied
//! blockwise to each of the `m` bundle coordinates; `A` and `V` are
//! pointwise symmetric `m×m` matrix fields acting as block-diagonal
//! multiplication operators. The assembled matrices are symmetric by
//! construction and `L` is positive semi-definite with the constant
//! section of each bundle coordinate in its kernel.
//!
//! Vector layout: the component of grid point `j` and bundle coordinate
//! `c` sits at index `j·m + c`.

use nalgebra::{DMatrix, DVector};

use crate::grid::{CircleGrid, ScalarFunctionSamples};
use crate::{Error, Result};

/// Asymmetry allowed in generator output before `sample_matrix_field`
/// rejects it; anything below is symmetrized away.
pub const FIELD_ASYMMETRY_TOL: f64 = 1e-8;

/// Grid points required across a localized eigensection before the
/// discrete model stops resolving it; sets the validity horizon
/// `t_valid = (p·h)⁻²`.
pub const POINTS_PER_WELL: f64 = 8.0;

/// A pointwise symmetric `m×m` matrix field sampled on a grid.
#[derive(Debug, Clone)]
pub struct MatrixField {
    rank: usize,
    values: Vec<DMatrix<f64>>,
}

impl MatrixField {
    /// Samples `generator` at every grid point, rejecting output whose
    /// asymmetry exceeds [`FIELD_ASYMMETRY_TOL`] and symmetrizing the rest
    /// as `(B + Bᵀ)/2`.
    pub fn sample(
        grid: &CircleGrid,
        rank: usize,
        generator: impl Fn(f64) -> DMatrix<f64>,
    ) -> Result<Self> {
        assert!(rank >= 1, "rank must be positive");
        let mut values = Vec::with_capacity(grid.n_points());
        for (j, &x) in grid.points().iter().enumerate() {
            let b = generator(x);
            if b.nrows() != rank || b.ncols() != rank {
                return Err(Error::DimensionMismatch {
                    context: "matrix field generator output",
                    expected: rank,
                    got: b.nrows(),
                });
            }
            let asym = (&b - b.transpose()).abs().max();
            if asym > FIELD_ASYMMETRY_TOL {
                return Err(Error::AsymmetricField {
                    index: j,
                    asymmetry: asym,
                    tolerance: FIELD_ASYMMETRY_TOL,
                });
            }
            values.push((&b + b.transpose()) * 0.5);
        }
        Ok(MatrixField { rank, values })
    }

    /// Rank-1 field from scalar samples.
    pub fn from_scalar(samples: &ScalarFunctionSamples) -> Self {
        MatrixField {
            rank: 1,
            values: samples
                .values
                .iter()
                .map(|&v| DMatrix::from_element(1, 1, v))
                .collect(),
        }
    }

    pub fn zero(grid: &CircleGrid, rank: usize) -> Self {
        MatrixField {
            rank,
            values: vec![DMatrix::zeros(rank, rank); grid.n_points()],
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, j: usize) -> &DMatrix<f64> {
        &self.values[j]
    }

    /// `sup_x ‖B(x)‖₂` over the grid (largest singular value of the
    /// symmetric blocks, i.e. largest absolute eigenvalue).
    pub fn sup_spectral_norm(&self) -> f64 {
        let mut sup = 0.0_f64;
        for b in &self.values {
            if self.rank == 1 {
                sup = sup.max(b[(0, 0)].abs());
            } else {
                let eig = b.clone().symmetric_eigenvalues();
                for ev in eig.iter() {
                    sup = sup.max(ev.abs());
                }
            }
        }
        sup
    }

    /// Smallest eigenvalue of any block over the grid.
    pub fn min_eigenvalue(&self) -> f64 {
        let mut min = f64::INFINITY;
        for b in &self.values {
            if self.rank == 1 {
                min = min.min(b[(0, 0)]);
            } else {
                let eig = b.clone().symmetric_eigenvalues();
                for ev in eig.iter() {
                    min = min.min(*ev);
                }
            }
        }
        min
    }

    /// If the field is `v(x)·id` within tolerance, returns the scalar
    /// samples `v(x_j)`.
    pub fn as_scalar(&self) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.values.len());
        for b in &self.values {
            let v = b[(0, 0)];
            let tol = 1e-12 * (1.0 + v.abs());
            for r in 0..self.rank {
                for c in 0..self.rank {
                    let expect = if r == c { v } else { 0.0 };
                    if (b[(r, c)] - expect).abs() > tol {
                        return None;
                    }
                }
            }
            out.push(v);
        }
        Some(out)
    }

    /// `det(B(x_j) − shift·id)` per grid point.
    pub fn det_shifted(&self, shift: f64) -> Vec<f64> {
        self.values
            .iter()
            .map(|b| {
                let mut s = b.clone();
                for d in 0..self.rank {
                    s[(d, d)] -= shift;
                }
                s.determinant()
            })
            .collect()
    }

    /// Adds `scale · blockdiag(B)` into `target`.
    pub fn add_block_diagonal(&self, target: &mut DMatrix<f64>, scale: f64) {
        let m = self.rank;
        for (j, b) in self.values.iter().enumerate() {
            for r in 0..m {
                for c in 0..m {
                    target[(j * m + r, j * m + c)] += scale * b[(r, c)];
                }
            }
        }
    }

    /// Applies `blockdiag(B)` to a section.
    pub fn apply(&self, psi: &DVector<f64>) -> DVector<f64> {
        let m = self.rank;
        let mut out = DVector::zeros(psi.len());
        for (j, b) in self.values.iter().enumerate() {
            for r in 0..m {
                let mut acc = 0.0;
                for c in 0..m {
                    acc += b[(r, c)] * psi[j * m + c];
                }
                out[j * m + r] = acc;
            }
        }
        out
    }
}

/// Periodic second-order central-difference discretization of `−d²/dx²`,
/// applied blockwise to each of the `rank` bundle coordinates.
///
/// Stencil per point: `(1/h²)·(−1, 2, −1)` with wraparound. Row sums
/// vanish exactly, so constant sections are in the kernel, and Gershgorin
/// bounds the spectrum inside `[0, 4/h²]`.
pub fn build_laplacian(grid: &CircleGrid, rank: usize) -> DMatrix<f64> {
    let n = grid.n_points();
    let m = rank;
    let dim = n * m;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut lap = DMatrix::zeros(dim, dim);
    for j in 0..n {
        let jp = (j + 1) % n;
        let jm = (j + n - 1) % n;
        for c in 0..m {
            lap[(j * m + c, j * m + c)] = 2.0 * inv_h2;
            lap[(j * m + c, jp * m + c)] = -inv_h2;
            lap[(j * m + c, jm * m + c)] = -inv_h2;
        }
    }
    lap
}

/// Degree of the form bundle for the gradient-deformed Laplacian on the
/// circle: `0` acts on functions, `1` on one-forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WittenDegree {
    Functions,
    OneForms,
}

impl WittenDegree {
    pub fn from_index(degree: u8) -> Result<Self> {
        match degree {
            0 => Ok(WittenDegree::Functions),
            1 => Ok(WittenDegree::OneForms),
            d => Err(Error::scenario(
                "witten.degree",
                format!("degree must be 0 or 1, got {d}"),
            )),
        }
    }
}

/// A discretized family `H(t) = L + t·A + t²·V` on the circle.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    grid: CircleGrid,
    rank: usize,
    laplacian: DMatrix<f64>,
    field_a: MatrixField,
    field_v: MatrixField,
    label: String,
    scalar_potential: Option<ScalarFunctionSamples>,
}

impl OperatorFamily {
    pub fn new(
        grid: CircleGrid,
        field_a: MatrixField,
        field_v: MatrixField,
        label: impl Into<String>,
    ) -> Result<Self> {
        if field_a.rank() != field_v.rank() {
            return Err(Error::DimensionMismatch {
                context: "field ranks",
                expected: field_a.rank(),
                got: field_v.rank(),
            });
        }
        if field_a.n_points() != grid.n_points() || field_v.n_points() != grid.n_points() {
            return Err(Error::DimensionMismatch {
                context: "field length vs grid",
                expected: grid.n_points(),
                got: field_a.n_points().min(field_v.n_points()),
            });
        }
        let rank = field_a.rank();
        let laplacian = build_laplacian(&grid, rank);
        Ok(OperatorFamily {
            grid,
            rank,
            laplacian,
            field_a,
            field_v,
            label: label.into(),
            scalar_potential: None,
        })
    }

    /// Rank-1 family from scalar potential and drift samples. Keeps the
    /// potential samples (with derivatives) for localization diagnostics.
    pub fn from_scalar(
        grid: CircleGrid,
        v: ScalarFunctionSamples,
        a: &ScalarFunctionSamples,
        label: impl Into<String>,
    ) -> Result<Self> {
        let field_a = MatrixField::from_scalar(a);
        let field_v = MatrixField::from_scalar(&v);
        let mut fam = OperatorFamily::new(grid, field_a, field_v, label)?;
        fam.scalar_potential = Some(v);
        Ok(fam)
    }

    /// Gradient deformation by a function `f`: `V = (f′)²` and `A = −f″`
    /// on functions, `A = +f″` on one-forms.
    pub fn witten(grid: CircleGrid, f: &ScalarFunctionSamples, degree: WittenDegree) -> Result<Self> {
        f.check_consistency(&grid)?;
        let sign = match degree {
            WittenDegree::Functions => -1.0,
            WittenDegree::OneForms => 1.0,
        };
        let n = grid.n_points();
        let h = grid.spacing();
        let v_values: Vec<f64> = (0..n).map(|j| f.d1[j] * f.d1[j]).collect();
        let v_d1: Vec<f64> = (0..n).map(|j| 2.0 * f.d1[j] * f.d2[j]).collect();
        let v_d2: Vec<f64> = (0..n)
            .map(|j| (v_d1[(j + 1) % n] - v_d1[(j + n - 1) % n]) / (2.0 * h))
            .collect();
        let v = ScalarFunctionSamples {
            values: v_values,
            d1: v_d1,
            d2: v_d2,
        };
        let a_values: Vec<f64> = (0..n).map(|j| sign * f.d2[j]).collect();
        let a = ScalarFunctionSamples {
            values: a_values,
            d1: vec![0.0; n],
            d2: vec![0.0; n],
        };
        let label = match degree {
            WittenDegree::Functions => "witten-0",
            WittenDegree::OneForms => "witten-1",
        };
        OperatorFamily::from_scalar(grid, v, &a, label)
    }

    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.grid.n_points() * self.rank
    }

    /// Weight of the discrete L² product: `⟨u,w⟩ = h·Σ_j u_jᵀw_j`.
    pub fn weight(&self) -> f64 {
        self.grid.spacing()
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn field_a(&self) -> &MatrixField {
        &self.field_a
    }

    pub fn field_v(&self) -> &MatrixField {
        &self.field_v
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Scalar potential samples with derivatives, when `V` is scalar.
    pub fn scalar_potential(&self) -> Option<&ScalarFunctionSamples> {
        self.scalar_potential.as_ref()
    }

    /// `H(t) = L + t·blockdiag(A) + t²·blockdiag(V)`.
    ///
    /// At `t = 0` this returns the Laplacian bit-for-bit.
    pub fn assemble(&self, t: f64) -> DMatrix<f64> {
        let mut m = self.laplacian.clone();
        if t == 0.0 {
            return m;
        }
        self.field_a.add_block_diagonal(&mut m, t);
        self.field_v.add_block_diagonal(&mut m, t * t);
        m
    }

    /// `∂H/∂t = blockdiag(A) + 2t·blockdiag(V)`.
    pub fn assemble_derivative(&self, t: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        self.field_a.add_block_diagonal(&mut m, 1.0);
        self.field_v.add_block_diagonal(&mut m, 2.0 * t);
        m
    }

    /// Largest `t` at which the grid still resolves eigensections whose
    /// width shrinks like `t^{-1/2}`: `t_valid = (p·h)⁻²`.
    pub fn validity_horizon(&self) -> f64 {
        let ph = POINTS_PER_WELL * self.grid.spacing();
        1.0 / (ph * ph)
    }

    /// `sup_x ‖A(x)‖₂`, the drift bound entering the monotonicity audit.
    pub fn sup_a_norm(&self) -> f64 {
        self.field_a.sup_spectral_norm()
    }
}

/// Abstract symmetric family `t ↦ M(t)`; lets the branch tracker run on
/// closed-form matrix families as well as assembled grid operators.
pub trait MatrixFamily: Sync {
    fn dim(&self) -> usize;

    /// Weight of the inner product in which eigenvectors are normalized.
    fn weight(&self) -> f64 {
        1.0
    }

    fn matrix(&self, t: f64) -> DMatrix<f64>;

    fn matrix_derivative(&self, t: f64) -> DMatrix<f64>;
}

impl MatrixFamily for OperatorFamily {
    fn dim(&self) -> usize {
        OperatorFamily::dim(self)
    }

    fn weight(&self) -> f64 {
        OperatorFamily::weight(self)
    }

    fn matrix(&self, t: f64) -> DMatrix<f64> {
        self.assemble(t)
    }

    fn matrix_derivative(&self, t: f64) -> DMatrix<f64> {
        self.assemble_derivative(t)
    }
}

/// Plain quadratic family `C₀ + t·C₁ + t²·C₂` of symmetric matrices.
#[derive(Debug, Clone)]
pub struct QuadraticFamily {
    c0: DMatrix<f64>,
    c1: DMatrix<f64>,
    c2: DMatrix<f64>,
}

impl QuadraticFamily {
    pub fn new(c0: DMatrix<f64>, c1: DMatrix<f64>, c2: DMatrix<f64>) -> Result<Self> {
        let dim = c0.nrows();
        for m in [&c0, &c1, &c2] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    context: "quadratic family coefficients",
                    expected: dim,
                    got: m.nrows().max(m.ncols()),
                });
            }
            let asym = (m - m.transpose()).abs().max();
            if asym > 1e-12 {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
        }
        Ok(QuadraticFamily { c0, c1, c2 })
    }

    /// Family with no quadratic part, `C₀ + t·C₁`.
    pub fn linear(c0: DMatrix<f64>, c1: DMatrix<f64>) -> Result<Self> {
        let dim = c0.nrows();
        QuadraticFamily::new(c0, c1, DMatrix::zeros(dim, dim))
    }
}

impl MatrixFamily for QuadraticFamily {
    fn dim(&self) -> usize {
        self.c0.nrows()
    }

    fn matrix(&self, t: f64) -> DMatrix<f64> {
        &self.c0 + &self.c1 * t + &self.c2 * (t * t)
    }

    fn matrix_derivative(&self, t: f64) -> DMatrix<f64> {
        &self.c1 + &self.c2 * (2.0 * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BuiltinScalar;

    fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    #[test]
    fn laplacian_circulant_spectrum() {
        // Fourier diagonalization of the periodic stencil:
        // eigenvalues (2/h²)(1 − cos(2πk/n)).
        let grid = CircleGrid::new(8).unwrap();
        let lap = build_laplacian(&grid, 1);
        let h = grid.spacing();
        let mut expected: Vec<f64> = (0..8)
            .map(|k| 2.0 / (h * h) * (1.0 - (crate::grid::TAU * k as f64 / 8.0).cos()))
            .collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = sorted_eigenvalues(&lap);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-9 * (1.0 + e.abs()), "{g} vs {e}");
        }
    }

    #[test]
    fn laplacian_kills_constants_exactly() {
        let grid = CircleGrid::new(32).unwrap();
        for rank in [1, 2] {
            let lap = build_laplacian(&grid, rank);
            for c in 0..rank {
                let mut v = DVector::zeros(32 * rank);
                for j in 0..32 {
                    v[j * rank + c] = 1.0;
                }
                assert_eq!((lap.clone() * v).abs().max(), 0.0);
            }
            // row sums vanish
            for r in 0..32 * rank {
                let s: f64 = lap.row(r).iter().sum();
                assert!(s.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_rank2_doubles_spectrum() {
        let grid = CircleGrid::new(8).unwrap();
        let e1 = sorted_eigenvalues(&build_laplacian(&grid, 1));
        let e2 = sorted_eigenvalues(&build_laplacian(&grid, 2));
        for (i, ev) in e1.iter().enumerate() {
            assert!((e2[2 * i] - ev).abs() < 1e-8);
            assert!((e2[2 * i + 1] - ev).abs() < 1e-8);
        }
    }

    #[test]
    fn laplacian_positive_semidefinite() {
        let grid = CircleGrid::new(16).unwrap();
        let ev = sorted_eigenvalues(&build_laplacian(&grid, 2));
        assert!(ev[0] >= -1e-10);
    }

    #[test]
    fn sample_field_scalar_and_identity() {
        let grid = CircleGrid::new(16).unwrap();
        let f = MatrixField::sample(&grid, 1, |x| {
            DMatrix::from_element(1, 1, x.sin() * x.sin())
        })
        .unwrap();
        for (j, &x) in grid.points().iter().enumerate() {
            assert!((f.value(j)[(0, 0)] - x.sin() * x.sin()).abs() < 1e-15);
        }
        let id = MatrixField::sample(&grid, 2, |_| DMatrix::identity(2, 2)).unwrap();
        assert_eq!(id.sup_spectral_norm(), 1.0);
        assert_eq!(id.as_scalar().unwrap(), vec![1.0; 16]);
    }

    #[test]
    fn sample_field_rejects_asymmetry() {
        let grid = CircleGrid::new(8).unwrap();
        let r = MatrixField::sample(&grid, 2, |_| {
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])
        });
        assert!(matches!(r, Err(Error::AsymmetricField { .. })));
        // tiny asymmetry is symmetrized away
        let f = MatrixField::sample(&grid, 2, |_| {
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5 + 1e-10, 0.5, 1.0])
        })
        .unwrap();
        let b = f.value(0);
        assert!((b[(0, 1)] - b[(1, 0)]).abs() == 0.0);
    }

    /// Rotation-conjugated diagonal field: per-point eigenvalues must be
    /// the generating diagonal entries.
    #[test]
    fn rotation_conjugated_field_eigenvalues() {
        let grid = CircleGrid::new(32).unwrap();
        let f = MatrixField::sample(&grid, 2, |x| {
            let r = DMatrix::from_row_slice(2, 2, &[x.cos(), -x.sin(), x.sin(), x.cos()]);
            let d = DMatrix::from_diagonal(&DVector::from_vec(vec![
                x.sin() * x.sin(),
                2.0 + x.cos(),
            ]));
            &r * d * r.transpose()
        })
        .unwrap();
        for (j, &x) in grid.points().iter().enumerate() {
            let mut ev: Vec<f64> = f.value(j).clone().symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expect = [x.sin() * x.sin(), 2.0 + x.cos()];
            expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((ev[0] - expect[0]).abs() < 1e-12);
            assert!((ev[1] - expect[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn assemble_at_zero_is_laplacian_bitwise() {
        let grid = CircleGrid::new(16).unwrap();
        let v = BuiltinScalar::Sin2.sample(&grid);
        let a = BuiltinScalar::Const(0.0).sample(&grid);
        let fam = OperatorFamily::from_scalar(grid, v, &a, "t").unwrap();
        let m = fam.assemble(0.0);
        assert_eq!(m, *fam.laplacian());
    }

    #[test]
    fn assemble_constant_potential_shifts_diagonal() {
        let grid = CircleGrid::new(16).unwrap();
        let v = BuiltinScalar::Const(1.0).sample(&grid);
        let a = BuiltinScalar::Const(0.0).sample(&grid);
        let fam = OperatorFamily::from_scalar(grid, v, &a, "t").unwrap();
        let m = fam.assemble(3.0);
        let expect = fam.laplacian() + DMatrix::<f64>::identity(16, 16) * 9.0;
        assert!((m - expect).abs().max() < 1e-12);
    }

    #[test]
    fn assemble_derivative_is_exact_difference_quotient() {
        // the family is quadratic in t, so central differences are exact
        let grid = CircleGrid::new(8).unwrap();
        let v = BuiltinScalar::Sin2.sample(&grid);
        let a = BuiltinScalar::Cos.sample(&grid);
        let fam = OperatorFamily::from_scalar(grid, v, &a, "t").unwrap();
        for (t, eps) in [(0.0, 0.5), (2.0, 1.0), (5.0, 0.25)] {
            let fd = (fam.assemble(t + eps) - fam.assemble(t - eps)) / (2.0 * eps);
            let d = fam.assemble_derivative(t);
            assert!((fd - d).abs().max() < 1e-9);
        }
    }

    #[test]
    fn assemble_derivative_constant_potential() {
        let grid = CircleGrid::new(8).unwrap();
        let v = BuiltinScalar::Const(1.0).sample(&grid);
        let a = BuiltinScalar::Const(0.0).sample(&grid);
        let fam = OperatorFamily::from_scalar(grid, v, &a, "t").unwrap();
        let d = fam.assemble_derivative(5.0);
        let expect = DMatrix::<f64>::identity(8, 8) * 10.0;
        assert!((d - expect).abs().max() < 1e-12);
    }

    #[test]
    fn witten_fields_for_cosine() {
        let grid = CircleGrid::new(64).unwrap();
        let f = BuiltinScalar::Cos.sample(&grid);
        let w0 = OperatorFamily::witten(grid.clone(), &f, WittenDegree::Functions).unwrap();
        let w1 = OperatorFamily::witten(grid.clone(), &f, WittenDegree::OneForms).unwrap();
        for (j, &x) in grid.points().iter().enumerate() {
            let s2 = x.sin() * x.sin();
            assert!((w0.field_v().value(j)[(0, 0)] - s2).abs() < 1e-14);
            assert!((w1.field_v().value(j)[(0, 0)] - s2).abs() < 1e-14);
            // f = cos x: f″ = −cos x, so A = −f″ = cos x on functions
            assert!((w0.field_a().value(j)[(0, 0)] - x.cos()).abs() < 1e-14);
            assert!((w1.field_a().value(j)[(0, 0)] + x.cos()).abs() < 1e-14);
        }
        assert!((w0.sup_a_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn witten_constant_function_is_static() {
        let grid = CircleGrid::new(16).unwrap();
        let f = BuiltinScalar::Const(2.5).sample(&grid);
        let w = OperatorFamily::witten(grid, &f, WittenDegree::Functions).unwrap();
        assert_eq!(w.field_v().sup_spectral_norm(), 0.0);
        assert_eq!(w.field_a().sup_spectral_norm(), 0.0);
        assert_eq!(w.assemble(7.0), *w.laplacian());
    }

    /// The degree-0 and degree-1 deformed Laplacians are isospectral away
    /// from their one-dimensional kernels up to discretization error.
    #[test]
    fn witten_near_supersymmetry() {
        let grid = CircleGrid::new(64).unwrap();
        let h = grid.spacing();
        let f = BuiltinScalar::Cos.sample(&grid);
        let w0 = OperatorFamily::witten(grid.clone(), &f, WittenDegree::Functions).unwrap();
        let w1 = OperatorFamily::witten(grid, &f, WittenDegree::OneForms).unwrap();
        for t in [1.0, 2.0] {
            let e0 = sorted_eigenvalues(&w0.assemble(t));
            let e1 = sorted_eigenvalues(&w1.assemble(t));
            let tol = 50.0 * h * h * (1.0 + t * t);
            // drop the near-zero ground state of each complex
            for i in 1..12 {
                assert!(
                    (e0[i] - e1[i]).abs() < tol,
                    "t={t} i={i}: {} vs {} (tol {tol})",
                    e0[i],
                    e1[i]
                );
            }
        }
    }

    #[test]
    fn quadratic_family_matches_hand_assembly() {
        let c0 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let c1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let fam = QuadraticFamily::linear(c0, c1).unwrap();
        let m = fam.matrix(0.3);
        assert!((m[(0, 0)] - 0.3).abs() < 1e-15);
        assert!((m[(1, 1)] - 0.7).abs() < 1e-15);
        assert_eq!(fam.matrix_derivative(0.3)[(0, 0)], 1.0);
    }

    #[test]
    fn validity_horizon_scales_with_grid() {
        let fam = |n: usize| {
            let grid = CircleGrid::new(n).unwrap();
            let v = BuiltinScalar::Sin2.sample(&grid);
            let a = BuiltinScalar::Const(0.0).sample(&grid);
            OperatorFamily::from_scalar(grid, v, &a, "t").unwrap()
        };
        let t512 = fam(512).validity_horizon();
        let t256 = fam(256).validity_horizon();
        assert!(t512 > 100.0 && t512 < 110.0, "{t512}");
        assert!((t512 / t256 - 4.0).abs() < 1e-9);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            /// H(t₁) − H(t₀) = (t₁−t₀)·blockdiag(A) + (t₁²−t₀²)·blockdiag(V)
            #[test]
            fn polynomial_consistency(t0 in -5.0..5.0f64, t1 in -5.0..5.0f64) {
                let grid = CircleGrid::new(8).unwrap();
                let v = BuiltinScalar::Sin2.sample(&grid);
                let a = BuiltinScalar::Cos.sample(&grid);
                let fam = OperatorFamily::from_scalar(grid, v, &a, "t").unwrap();
                let lhs = fam.assemble(t1) - fam.assemble(t0);
                let mut rhs = DMatrix::zeros(8, 8);
                fam.field_a().add_block_diagonal(&mut rhs, t1 - t0);
                fam.field_v().add_block_diagonal(&mut rhs, t1 * t1 - t0 * t0);
                prop_assert!((lhs - rhs).abs().max() < 1e-12 * (1.0 + t1.abs() + t0.abs()).powi(2));
            }

            /// assembled matrices stay symmetric for any t
            #[test]
            fn assembled_symmetry(t in -20.0..20.0f64) {
                let grid = CircleGrid::new(8).unwrap();
                let f = BuiltinScalar::Cos.sample(&grid);
                let fam = OperatorFamily::witten(grid, &f, WittenDegree::Functions).unwrap();
                let m = fam.assemble(t);
                prop_assert!((&m - m.transpose()).abs().max() <= 1e-12);
            }
        }
    }
}
