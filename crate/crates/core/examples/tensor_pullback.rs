//! Pulling a field configuration through a reflection and through a small
//! quadratic map, and contracting tensors on a bundle.

use nalgebra::DMatrix;
use qequiv::generators::{random_field_config, FieldStateSpec};
use qequiv::geometry::{contract_components, pullback_config, Diffeo, LatticeMap, QuadraticMap, Variance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qequiv::Result<()> {
    let u = random_field_config(&mut ChaCha8Rng::seed_from_u64(5), &FieldStateSpec::default())?;
    let s = u.support().sites()[0].clone();
    let reflect = Diffeo::Lattice(LatticeMap::new(vec![0, 1], vec![-1, 1], vec![0, 0])?);
    let moved = pullback_config(&reflect, &u)?;
    let image = LatticeMap::new(vec![0, 1], vec![-1, 1], vec![0, 0])?.apply(&s);
    println!("g at {:?}: {:?}", s.0, u.metric().get(&s).unwrap());
    println!("g' at {:?}: {:?}", image.0, moved.metric().get(&image).unwrap());

    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 1.0]);
    let shear = Diffeo::Quadratic(QuadraticMap::linear_about(&[0.0, 0.0], &a)?);
    let sheared = pullback_config(&shear, &u)?;
    println!("sites kept after resampling: {} of {}", sheared.support().num_sites(), u.support().num_sites());

    let g = u.metric().get(&s).unwrap();
    let v = u.matter()["v"].get(&s).unwrap();
    let (_, lowered) = contract_components(&[Variance::Down, Variance::Down], g, &[Variance::Up], v, 2, &[(1, 0)])?;
    println!("v lowered by g: {lowered:?}");
    Ok(())
}
