//! A small finite-horizon problem over hand-written affine models, solved
//! as a condensed QP.

use lrmpc::linearizer::AffineModel;
use lrmpc::mpc::{build_ftocp, solve_ftocp, CostWeights, InitialState};
use lrmpc::set_algebra::BoxSet;
use nalgebra::{DMatrix, DVector};

fn main() -> lrmpc::Result<()> {
    let s = |v: f64| DVector::from_element(1, v);
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let b1 = |c: f64, r: f64| BoxSet::from_slices(&[c], &[r]);

    // secant-like models of the cube root along a descending path
    let models = vec![
        AffineModel::exact(s(0.95), m(0.16), m(1.0), b1(4.0, 0.8)?)?,
        AffineModel::exact(s(0.76), m(0.27), m(1.0), b1(1.5, 0.5)?)?,
        AffineModel::exact(s(-0.67), m(0.33), m(1.0), b1(-1.0, 0.4)?)?,
    ];
    let state_sets = models.iter().map(|md| Some(md.region.clone())).collect();
    let p = build_ftocp(
        models,
        state_sets,
        b1(-1.0, 0.1)?,
        b1(0.0, 2.0)?,
        InitialState::Fixed(s(4.0)),
        s(-1.0),
        s(0.0),
        CostWeights::diagonal(1, 1, 1.0, 100.0, 1.0)?,
    )?;
    let d = p.dimensions();
    println!("states {}, inputs {}, equalities {}, box rows {}", d.state_vars, d.input_vars, d.equalities, d.box_rows);
    let sol = solve_ftocp(&p)?;
    println!("feasible {}, cost {:.3}, iterations {}", sol.feasible, sol.cost, sol.stats.iterations);
    for (k, x) in sol.x_seq.iter().enumerate() {
        let u = sol.u_seq.get(k).map_or(String::new(), |u| format!("u={:+.4}", u[0]));
        println!("k={k} x={:+.4} {u}", x[0]);
    }
    Ok(())
}
