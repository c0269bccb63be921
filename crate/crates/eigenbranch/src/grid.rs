//! Uniform periodic grids on the circle and sampled scalar functions.
//!
//! All geometry lives on `[0, 2π)` with `n` equispaced points. The discrete
//! L² product carries the weight `h = 2π/n`, so norms approximate their
//! continuum counterparts and are comparable across resolutions.

use crate::{Error, Result};

pub const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Smallest admissible grid; coarser grids cannot resolve a second
/// derivative stencil meaningfully.
pub const MIN_GRID_POINTS: usize = 8;

/// Uniform periodic grid `x_j = j·h`, `h = 2π/n`.
#[derive(Debug, Clone)]
pub struct CircleGrid {
    n_points: usize,
    spacing: f64,
    points: Vec<f64>,
}

impl CircleGrid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < MIN_GRID_POINTS {
            return Err(Error::GridTooCoarse {
                n: n_points,
                min: MIN_GRID_POINTS,
            });
        }
        let spacing = TAU / n_points as f64;
        let points = (0..n_points).map(|j| j as f64 * spacing).collect();
        Ok(CircleGrid {
            n_points,
            spacing,
            points,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Grid spacing `h`; also the weight of the discrete L² product.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, j: usize) -> f64 {
        self.points[j]
    }

    /// Geodesic distance on the circle.
    pub fn arc_distance(x: f64, y: f64) -> f64 {
        let d = (x - y).rem_euclid(TAU);
        d.min(TAU - d)
    }
}

/// A scalar function sampled on a grid together with its first two
/// derivatives. Built-in functions carry analytic derivatives; tabulated
/// data falls back to centered differences.
#[derive(Debug, Clone)]
pub struct ScalarFunctionSamples {
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl ScalarFunctionSamples {
    pub fn from_functions(
        grid: &CircleGrid,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        d2f: impl Fn(f64) -> f64,
    ) -> Self {
        let values = grid.points().iter().map(|&x| f(x)).collect();
        let d1 = grid.points().iter().map(|&x| df(x)).collect();
        let d2 = grid.points().iter().map(|&x| d2f(x)).collect();
        ScalarFunctionSamples { values, d1, d2 }
    }

    /// Tabulated samples; derivatives by periodic centered differences.
    pub fn from_values(grid: &CircleGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::DimensionMismatch {
                context: "tabulated scalar function",
                expected: grid.n_points(),
                got: values.len(),
            });
        }
        let d1 = centered_differences(&values, grid.spacing());
        let d2 = centered_differences(&d1, grid.spacing());
        Ok(ScalarFunctionSamples { values, d1, d2 })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks that the stored derivatives agree with centered differences
    /// of the stored values to second order in the spacing.
    pub fn check_consistency(&self, grid: &CircleGrid) -> Result<()> {
        if self.len() != grid.n_points() {
            return Err(Error::DimensionMismatch {
                context: "scalar samples vs grid",
                expected: grid.n_points(),
                got: self.len(),
            });
        }
        let h = grid.spacing();
        let max_abs = self
            .values
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
            .max(1.0);
        let tol = 10.0 * h * h * max_abs;
        let fd1 = centered_differences(&self.values, h);
        let fd2 = centered_differences(&self.d1, h);
        for j in 0..self.len() {
            if (self.d1[j] - fd1[j]).abs() > tol || (self.d2[j] - fd2[j]).abs() > tol {
                return Err(Error::scenario(
                    "scalar samples",
                    format!(
                        "derivative at point {j} deviates from centered differences beyond {tol:.3e}"
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn centered_differences(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|j| (values[(j + 1) % n] - values[(j + n - 1) % n]) / (2.0 * h))
        .collect()
}

/// Closed vocabulary of built-in scalar functions used by scenarios.
///
/// Spec strings: `cos`, `sin2`, `zero`, `const:c`, `cos_shift:phi`,
/// `poly_trig:a0,a1,b1,a2` (meaning `a0 + a1·cos x + b1·sin x + a2·cos 2x`).
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinScalar {
    Cos,
    Sin2,
    Const(f64),
    CosShift(f64),
    PolyTrig { a0: f64, a1: f64, b1: f64, a2: f64 },
}

impl BuiltinScalar {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut parts = spec.splitn(2, ':');
        let name = parts.next().unwrap_or("").trim();
        let args = parts.next().map(str::trim);
        let parse_args = |s: Option<&str>, count: usize| -> Result<Vec<f64>> {
            let raw = s.ok_or_else(|| Error::UnknownFunction(spec.to_string()))?;
            let vals: Vec<f64> = raw
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::UnknownFunction(spec.to_string()))?;
            if vals.len() != count {
                return Err(Error::UnknownFunction(spec.to_string()));
            }
            Ok(vals)
        };
        match name {
            "cos" if args.is_none() => Ok(BuiltinScalar::Cos),
            "sin2" if args.is_none() => Ok(BuiltinScalar::Sin2),
            "zero" if args.is_none() => Ok(BuiltinScalar::Const(0.0)),
            "const" => Ok(BuiltinScalar::Const(parse_args(args, 1)?[0])),
            "cos_shift" => Ok(BuiltinScalar::CosShift(parse_args(args, 1)?[0])),
            "poly_trig" => {
                let a = parse_args(args, 4)?;
                Ok(BuiltinScalar::PolyTrig {
                    a0: a[0],
                    a1: a[1],
                    b1: a[2],
                    a2: a[3],
                })
            }
            _ => Err(Error::UnknownFunction(spec.to_string())),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            BuiltinScalar::Cos => x.cos(),
            BuiltinScalar::Sin2 => x.sin() * x.sin(),
            BuiltinScalar::Const(c) => c,
            BuiltinScalar::CosShift(phi) => (x - phi).cos(),
            BuiltinScalar::PolyTrig { a0, a1, b1, a2 } => {
                a0 + a1 * x.cos() + b1 * x.sin() + a2 * (2.0 * x).cos()
            }
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            BuiltinScalar::Cos => -x.sin(),
            BuiltinScalar::Sin2 => (2.0 * x).sin(),
            BuiltinScalar::Const(_) => 0.0,
            BuiltinScalar::CosShift(phi) => -(x - phi).sin(),
            BuiltinScalar::PolyTrig { a1, b1, a2, .. } => {
                -a1 * x.sin() + b1 * x.cos() - 2.0 * a2 * (2.0 * x).sin()
            }
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            BuiltinScalar::Cos => -x.cos(),
            BuiltinScalar::Sin2 => 2.0 * (2.0 * x).cos(),
            BuiltinScalar::Const(_) => 0.0,
            BuiltinScalar::CosShift(phi) => -(x - phi).cos(),
            BuiltinScalar::PolyTrig { a1, b1, a2, .. } => {
                -a1 * x.cos() - b1 * x.sin() - 4.0 * a2 * (2.0 * x).cos()
            }
        }
    }

    pub fn sample(&self, grid: &CircleGrid) -> ScalarFunctionSamples {
        ScalarFunctionSamples::from_functions(
            grid,
            |x| self.eval(x),
            |x| self.d1(x),
            |x| self.d2(x),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basic_layout() {
        let g = CircleGrid::new(8).unwrap();
        assert_eq!(g.n_points(), 8);
        assert!((g.spacing() - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((g.spacing() * 8.0 - TAU).abs() < 1e-15);
        for (j, &x) in g.points().iter().enumerate() {
            assert!((x - j as f64 * g.spacing()).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_spacing_512() {
        let g = CircleGrid::new(512).unwrap();
        assert!((g.spacing() - 0.012_271_846_303_085_129).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_too_coarse() {
        assert!(matches!(
            CircleGrid::new(4),
            Err(Error::GridTooCoarse { n: 4, .. })
        ));
    }

    #[test]
    fn arc_distance_wraps() {
        assert!((CircleGrid::arc_distance(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((CircleGrid::arc_distance(1.0, 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn builtin_parse_and_eval() {
        let f = BuiltinScalar::parse("const:1.5").unwrap();
        assert_eq!(f, BuiltinScalar::Const(1.5));
        assert_eq!(f.eval(0.3), 1.5);

        let f = BuiltinScalar::parse("cos_shift:0.5").unwrap();
        assert!((f.eval(0.5) - 1.0).abs() < 1e-15);

        let f = BuiltinScalar::parse("poly_trig:2,1,0,0").unwrap();
        assert!((f.eval(0.0) - 3.0).abs() < 1e-15);
        assert!((f.eval(std::f64::consts::PI) - 1.0).abs() < 1e-15);

        assert!(BuiltinScalar::parse("tanh").is_err());
        assert!(BuiltinScalar::parse("const").is_err());
        assert!(BuiltinScalar::parse("poly_trig:1,2").is_err());
    }

    #[test]
    fn builtin_derivatives_match_finite_differences() {
        let grid = CircleGrid::new(128).unwrap();
        for spec in ["cos", "sin2", "cos_shift:0.7", "poly_trig:0.5,1,0.25,0.1"] {
            let f = BuiltinScalar::parse(spec).unwrap();
            let s = f.sample(&grid);
            s.check_consistency(&grid)
                .unwrap_or_else(|e| panic!("{spec}: {e}"));
        }
    }

    #[test]
    fn tabulated_derivatives_are_centered_differences() {
        let grid = CircleGrid::new(64).unwrap();
        let values: Vec<f64> = grid.points().iter().map(|&x| x.cos()).collect();
        let s = ScalarFunctionSamples::from_values(&grid, values).unwrap();
        let h = grid.spacing();
        for j in 0..64 {
            let x = grid.point(j);
            // centered difference of cos is -sin·(1 + O(h²))
            assert!((s.d1[j] + x.sin() * (h.sin() / h)).abs() < 1e-12);
        }
    }
}
