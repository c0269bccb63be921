use eigenbranch::eigensolve::eigendecompose;
use eigenbranch::grid::{BuiltinScalar, CircleGrid};
use eigenbranch::operators::{MatrixFamily, OperatorFamily};
use std::time::Instant;

fn main() {
    for n in [128usize, 256, 512] {
        let grid = CircleGrid::new(n).unwrap();
        let v = BuiltinScalar::Sin2.sample(&grid);
        let zero = BuiltinScalar::Const(0.0).sample(&grid);
        let fam = OperatorFamily::from_scalar(grid, v, &zero, "dw").unwrap();
        let w = fam.weight();
        let t0 = Instant::now();
        let s = eigendecompose(&fam.matrix(10.0), 6, 10.0, w).unwrap();
        println!(
            "n={n}: {:?}  lambda0={:.6e}  worst resid {:.3e}",
            t0.elapsed(),
            s.eigenvalues[0],
            s.residuals.iter().cloned().fold(0.0_f64, f64::max)
        );
    }
    // degenerate constant-potential family across a fine sweep
    let grid = CircleGrid::new(256).unwrap();
    let v = BuiltinScalar::Const(1.0).sample(&grid);
    let zero = BuiltinScalar::Const(0.0).sample(&grid);
    let fam = OperatorFamily::from_scalar(grid, v, &zero, "c").unwrap();
    let w = fam.weight();
    let t0 = Instant::now();
    let mut worst = 0.0_f64;
    for i in 0..=80 {
        let t = 40.0 * i as f64 / 80.0;
        let s = eigendecompose(&fam.matrix(t), 6, t, w).unwrap();
        worst = worst.max(
            s.residuals
                .iter()
                .zip(&s.eigenvalues)
                .map(|(r, l)| r / (1.0 + l.abs()))
                .fold(0.0_f64, f64::max),
        );
    }
    println!("constant n=256 sweep (81 pts): {:?}, worst rel resid {worst:.3e}", t0.elapsed());
}
