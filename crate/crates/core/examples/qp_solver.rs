//! The simplex QP solver on an indefinite problem, checked against a lattice search.

use nalgebra::{DMatrix, DVector};
use noma_opt::qp::{brute_force_simplex_search, solve_qp, QpProblem};
use noma_opt::scenario::PowerLevelGrid;

fn main() -> noma_opt::Result<()> {
    let grid = PowerLevelGrid::from_endpoints(15.0, 27.0, 4)?;
    let h = DMatrix::from_row_slice(4, 4, &[
        1.0, -0.4, 0.2, 0.0,
        -0.4, -2.0, 0.1, 0.3,
        0.2, 0.1, 0.8, -0.2,
        0.0, 0.3, -0.2, -0.1,
    ]);
    let c = DVector::from_vec(vec![0.1, -0.2, 0.05, 0.0]);
    let problem = QpProblem::on_grid(h, c, &grid)?;
    println!("convex on constraints: {}", problem.is_convex_on_constraints());

    let report = solve_qp(&problem, None, 500)?;
    print!("{}", report.dump());
    println!("certified global: {}", report.certified_global);

    let lattice = brute_force_simplex_search(&|x: &[f64]| problem.objective(x), &grid, 1e-3)?;
    println!("lattice objective: {:.9}", problem.objective(&lattice));
    Ok(())
}
