//! The straight-line probability path and the two ODE solvers on a field
//! with a known solution, showing Euler's first-order and midpoint's
//! second-order error decay.
//!
//!     cargo run --release --example flow_solvers

use sepflow::flow::{self, Solver};
use sepflow_tensor::Tensor;

fn main() -> sepflow::Result<()> {
    let x0 = Tensor::<f64>::row(vec![0.5, -1.0]);
    let x1 = Tensor::<f64>::row(vec![2.0, 3.0]);
    for t in [0.0, 0.25, 1.0] {
        let (xt, u) = flow::sample_path(&x0, &x1, t, 1e-4)?;
        println!("t={t:<4} x_t {:?}  u {:?}", xt.data(), u.data());
    }

    // dx/dt = -x has x(1) = x(0)/e
    let start = Tensor::<f64>::row(vec![1.0]);
    let exact = (-1f64).exp();
    for solver in [Solver::Euler, Solver::Midpoint] {
        let mut prev = None;
        for steps in [8, 16, 32, 64] {
            let x = flow::ode_solve(&start, steps, solver, |x: &Tensor<f64>, _t| {
                Ok(x.scale(-1.0))
            })?;
            let err = (x.data()[0] - exact).abs();
            let ratio = prev.map_or(String::new(), |p: f64| format!("  ratio {:.2}", p / err));
            println!("{solver:?} {steps:>3} steps  error {err:.3e}{ratio}");
            prev = Some(err);
        }
    }
    Ok(())
}
