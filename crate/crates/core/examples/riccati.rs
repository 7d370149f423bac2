//! Solves the linear-quadratic Riccati system backwards from the horizon
//! and prints the feedback gains along the way.
//!
//! `cargo run --example riccati`

use flowexec::experts::riccati::DEFAULT_GRID;
use flowexec::experts::{lq_riccati_solve, LqParams};

fn main() -> flowexec::Result<()> {
    let lq = LqParams {
        sigma: 0.3,
        gamma_perm: 2.5e-5,
        eta_temp: 1e-4,
        horizon: 1.0,
        q0: 10_000.0,
    };
    let sol = lq_riccati_solve(&lq, DEFAULT_GRID)?;
    println!("max ODE residual: {:.2e}", sol.max_residual(1000));
    println!("{:>5} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}", "t", "A", "B", "C", "D", "gain q", "gain S");
    let stride = (sol.len() - 1) / 10;
    for i in (0..sol.len()).step_by(stride) {
        let [a, b, c, d] = sol.coefficients(i);
        let (gq, gs) = sol.gains_at(sol.t[i]);
        println!("{:>5.2} {a:>12.4e} {b:>12.4e} {c:>12.4e} {d:>12.4e} {gq:>12.4e} {gs:>12.4e}", sol.t[i]);
    }
    Ok(())
}
