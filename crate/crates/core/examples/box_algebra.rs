//! Box arithmetic: sums, erosions, linear images and membership.

use lrmpc::set_algebra::BoxSet;
use nalgebra::{dmatrix, dvector};

fn show(name: &str, b: &BoxSet) {
    if b.is_empty() {
        println!("{name:>12}: empty");
    } else {
        println!("{name:>12}: [{:?}, {:?}]", b.lower().as_slice(), b.upper().as_slice());
    }
}

fn main() -> lrmpc::Result<()> {
    let state = BoxSet::from_slices(&[1.25, 0.0], &[3.25, 1.0])?;
    let tube = BoxSet::from_slices(&[0.0, 0.0], &[0.3, 0.2])?;
    show("X", &state);
    show("E", &tube);
    show("X + E", &state.minkowski_sum(&tube)?);
    show("X - E", &state.pontryagin_diff(&tube)?);
    show("(X-E)+E", &state.pontryagin_diff(&tube)?.minkowski_sum(&tube)?);

    let too_wide = BoxSet::from_slices(&[0.0, 0.0], &[5.0, 0.1])?;
    show("X - wide", &state.pontryagin_diff(&too_wide)?);

    let a = dmatrix![0.8, -0.5; 0.3, 1.1];
    show("|A| E", &tube.affine_image(&a)?);

    let goal = BoxSet::from_slices(&[-1.0, 0.0], &[0.1, 0.1])?;
    for p in [dvector![-1.05, 0.02], dvector![-0.85, 0.0]] {
        println!("{:?} in goal: {}", p.as_slice(), goal.contains(&p));
    }
    Ok(())
}
