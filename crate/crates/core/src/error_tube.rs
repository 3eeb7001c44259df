//! Cumulative error sets and constraint tightening.
//!
//! `E_0 = {0}` and `E_{k+1} = |A_k| E_k ⊕ W ⊕ S_k ⊕ L_k`. The affine offset of
//! each model is not applied to the error set: it appears identically in the
//! true and nominal dynamics and cancels in `x - x̄`.

use std::io::Write;

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linearizer::AffineModel;
use crate::plant::fmt_real;
use crate::set_algebra::BoxSet;

/// Ingredients of one recursion step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeStep {
    /// `|A_k| E_k`.
    pub propagated: BoxSet,
    pub disturbance: BoxSet,
    pub estimation: BoxSet,
    pub linearization: BoxSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTube {
    /// `E_0 .. E_T`.
    pub sets: Vec<BoxSet>,
    pub alpha: f64,
    /// `components[k]` produced `sets[k + 1]`.
    pub components: Vec<TubeStep>,
}

impl ErrorTube {
    pub fn horizon(&self) -> usize {
        self.components.len()
    }

    /// Tube with every set a point at the origin.
    pub fn zero(dim: usize, horizon: usize, alpha: f64) -> Self {
        let z = BoxSet::zero(dim);
        Self {
            sets: vec![z.clone(); horizon + 1],
            alpha,
            components: (0..horizon)
                .map(|_| TubeStep {
                    propagated: z.clone(),
                    disturbance: z.clone(),
                    estimation: z.clone(),
                    linearization: z.clone(),
                })
                .collect(),
        }
    }

    /// The same tube seen from one step later: drops `E_0`.
    pub fn shifted(&self) -> Result<Self> {
        if self.components.is_empty() {
            return Err(Error::usage("cannot shift a tube of horizon 0"));
        }
        Ok(Self {
            sets: self.sets[1..].to_vec(),
            alpha: self.alpha,
            components: self.components[1..].to_vec(),
        })
    }
}

pub fn propagate_tube(models: &[AffineModel], disturbance: &BoxSet, alpha: f64) -> Result<ErrorTube> {
    let n = disturbance.dim();
    let mut sets = vec![BoxSet::zero(n)];
    let mut components = Vec::with_capacity(models.len());
    for m in models {
        check_dim("propagate_tube model", n, m.state_dim())?;
        let prev = sets.last().expect("tube starts non-empty");
        let propagated = prev.affine_image(&m.matrix)?;
        let next = propagated
            .minkowski_sum(disturbance)?
            .minkowski_sum(&m.estimation_set)?
            .minkowski_sum(&m.linearization_set)?;
        components.push(TubeStep {
            propagated,
            disturbance: disturbance.clone(),
            estimation: m.estimation_set.clone(),
            linearization: m.linearization_set.clone(),
        });
        sets.push(next);
    }
    Ok(ErrorTube {
        sets,
        alpha,
        components,
    })
}

/// Tightened state regions and terminal set.
#[derive(Debug, Clone, PartialEq)]
pub struct Tightened {
    pub regions: Vec<BoxSet>,
    pub terminal: BoxSet,
}

impl Tightened {
    pub fn any_empty(&self) -> bool {
        self.terminal.is_empty() || self.regions.iter().any(BoxSet::is_empty)
    }
}

/// `X_k ⊖ E_k` for each region and `O ⊖ E_T` for the terminal set. Empty
/// results are passed through.
pub fn tighten_constraints(regions: &[BoxSet], terminal: &BoxSet, tube: &ErrorTube) -> Result<Tightened> {
    if tube.sets.len() != regions.len() + 1 {
        return Err(Error::usage(format!(
            "tube has {} sets but {} regions were given",
            tube.sets.len(),
            regions.len()
        )));
    }
    let regions = regions
        .iter()
        .zip(&tube.sets)
        .map(|(r, e)| r.pontryagin_diff(e))
        .collect::<Result<_>>()?;
    let terminal = terminal.pontryagin_diff(tube.sets.last().expect("non-empty"))?;
    Ok(Tightened { regions, terminal })
}

/// Writes `k, center_i.., radius_i.., W_r_i.., S_r_i.., L_r_i..` rows.
pub fn write_tube_csv<W: Write>(out: W, tube: &ErrorTube) -> Result<()> {
    let n = tube.sets.first().map(BoxSet::dim).unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    for prefix in ["center", "radius", "W_r", "S_r", "L_r"] {
        header.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    w.write_record(&header)?;
    for (k, set) in tube.sets.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(set.center().iter().map(|v| fmt_real(*v)));
        row.extend(set.radius().iter().map(|v| fmt_real(*v)));
        // the step that produced set k; E_0 has no ingredients
        match k.checked_sub(1).and_then(|j| tube.components.get(j)) {
            Some(c) => {
                for b in [&c.disturbance, &c.estimation, &c.linearization] {
                    row.extend(b.radius().iter().map(|v| fmt_real(*v)));
                }
            }
            None => row.extend((0..3 * n).map(|_| fmt_real(0.0))),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("tube csv", e))?;
    Ok(())
}
