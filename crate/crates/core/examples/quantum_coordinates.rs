//! A quantum coordinate system over three translated branches: identified
//! points, the cocycle check, and a per-branch transformation that breaks
//! the identification.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_rational::Rational64;
use qequiv::configuration::ConfigId;
use qequiv::geometry::{Diffeo, LatticeMap};
use qequiv::lattice::IndexBox;
use qequiv::quantum_coords::{quantum_coord_transform, verify_consistency, IdentificationFamily, QuantumCoordinateSystem};

fn main() -> qequiv::Result<()> {
    let ids: Vec<ConfigId> = ["a", "b", "c"].into_iter().map(ConfigId::new).collect();
    let seeds: BTreeMap<ConfigId, Diffeo> = ids
        .iter()
        .zip([[0, 0], [4, 0], [0, -3]])
        .map(|(u, s)| (u.clone(), Diffeo::translation(s.to_vec())))
        .collect();
    let reference = IndexBox::new([0, 0], [2, 2]).sites().into_iter().collect();
    let fam = IdentificationFamily::seeded(vec![Rational64::new(1, 2); 2], reference, seeds)?;
    let report = verify_consistency(&fam);
    println!("triples checked {}, consistent {}", report.triples_checked, report.is_clean());

    let qcs = QuantumCoordinateSystem::with_lattice_chart(Arc::new(fam), ids[0].clone())?;
    let p = qcs.point(&[0.5, 0.5])?;
    println!("x = {:?} identifies {:?}", p.x, p.branch_points);

    let twist = BTreeMap::from([(ids[1].clone(), Diffeo::Lattice(LatticeMap::new(vec![1, 0], vec![1, 1], vec![0, 0])?))]);
    let moved = quantum_coord_transform(&qcs, &twist)?;
    let q = moved.point(&[0.5, 0.0])?;
    println!("after a transformation on b, x = {:?} identifies {:?}", q.x, q.branch_points);
    println!("pairings unchanged: {}", moved.pairings()? == qcs.pairings()?);
    Ok(())
}
