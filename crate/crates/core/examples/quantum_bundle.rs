//! A quantum fibre bundle built from a random field state, validated, then
//! broken on purpose.

use qequiv::configuration::ConfigId;
use qequiv::generators::{random_field_state, FieldStateSpec};
use qequiv::quantum_coords::verify_consistency;
use qequiv::quantum_manifold::{chart_identification_family, validate_full, QuantumFibreBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qequiv::Result<()> {
    let state = random_field_state(&mut ChaCha8Rng::seed_from_u64(4), &FieldStateSpec { terms: 3, ..Default::default() })?;
    let mut bundle = QuantumFibreBundle::from_field_state(&state)?;
    println!("{} branches, {} points, {} charts", bundle.base.len(), bundle.point_map.len(), bundle.charts.len());
    println!("valid: {}", validate_full(&bundle).is_valid());
    for i in 0..bundle.charts.len() {
        let family = chart_identification_family(&bundle, i)?;
        println!("chart {i}: identification family consistent {}", verify_consistency(&family).is_clean());
    }
    let u = bundle.base.iter().next().cloned().unwrap();
    bundle.order.push((u, ConfigId::new("missing")));
    for f in validate_full(&bundle).hard {
        println!("violation {:?}: {}", f.axiom, f.detail);
    }
    Ok(())
}
