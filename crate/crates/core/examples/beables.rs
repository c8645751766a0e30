//! Sampled invariance of functionals under quantum diffeomorphisms: the
//! topology signature survives, a fixed-site value does not. Also region
//! selection in operational space.

use qequiv::beables::{is_beable_sampled, select_region, BeableFn, QdSampler, RealBox, Region, ScalarList, ScalarSpec};
use qequiv::generators::{random_field_state, FieldStateSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qequiv::Result<()> {
    let state = random_field_state(&mut ChaCha8Rng::seed_from_u64(3), &FieldStateSpec::default())?;
    let sampler = QdSampler::LatticeExact { max_shift: 3, reflect: true };
    for b in [BeableFn::TopologySignature, BeableFn::FixedSiteValue { site: vec![1, 1], component: 3 }] {
        let report = is_beable_sampled(&b, &state, &sampler, 50, 3)?;
        println!("{}: {} violations in {} samples", report.beable, report.violations.len(), report.samples);
    }
    let scalars = ScalarList(vec![ScalarSpec::MatterScalar { name: "phi".into() }]);
    let region = Region::Boxes(vec![RealBox { lo: vec![-1.0], hi: vec![1.0] }]);
    let kept = select_region(&state, &scalars, &region);
    println!("terms with phi in [-1, 1] everywhere: {} of {}", kept.len(), state.len());
    Ok(())
}
