//! Tensor fields on lattice patches, diffeomorphisms and pullbacks,
//! Christoffel symbols and Lorentzian frames.

pub mod diffeo;
pub mod frame;
pub mod tensor;

use std::collections::BTreeMap;

pub use diffeo::{Diffeo, LatticeMap, QuadraticMap};
pub use frame::{
    christoffel, christoffel_from_derivatives, is_lorentzian, minkowski, minkowski_frame,
    Christoffel, MetricJet, MinkowskiMetric,
};
pub use tensor::{contract_components, transform_components, TensorField, Variance};

use crate::configuration::FieldConfig;
use crate::error::Result;

/// Pulls a field configuration through `phi`: the support moves with the
/// map and every tensor picks up one Jacobian factor per index.
pub fn pullback_config(phi: &Diffeo, u: &FieldConfig) -> Result<FieldConfig> {
    if phi.is_identity() {
        return Ok(u.clone());
    }
    let names: Vec<&String> = u.matter().keys().collect();
    let mut fields = vec![u.metric()];
    fields.extend(u.matter().values());
    let (patch, mut out) = phi.pullback_fields(u.support(), &fields)?;
    let matter_out = out.split_off(1);
    let matter: BTreeMap<String, TensorField> =
        names.into_iter().cloned().zip(matter_out).collect();
    let metric = out.pop().expect("metric is always pulled back");
    Ok(FieldConfig::from_parts_unchecked(patch, metric, matter))
}
