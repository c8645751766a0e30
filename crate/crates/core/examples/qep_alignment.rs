//! First-order alignment of three branch metrics at a point: residuals,
//! the decay of pairwise differences with radius, and the lightcone test
//! before and after.

use qequiv::qep_alignment::{align_conformal, random_task, TaskFamily};
use qequiv::scenario::align_with_lightcones;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qequiv::Result<()> {
    let task = random_task(&mut ChaCha8Rng::seed_from_u64(2), &TaskFamily::standard(2))?;
    let (out, before, after) = align_with_lightcones(&task)?;
    let r = &out.report;
    println!("eta residual {:.2e}, first-order residual {:.2e}", r.eta_residual, r.first_residual);
    for (radius, d) in r.radii.iter().zip(&r.pairwise_max) {
        println!("  r = {radius:.0e}: largest pairwise difference {d:.3e}");
    }
    println!("slope {:?}, passed {}", r.slope, r.passed);
    println!("lightcones coincide before {before}, after {after}");
    let (_, strong) = align_conformal(&out.aligned)?;
    let s = strong.check(task.radius)?;
    println!("after conformal rescaling: eta residual {:.2e}", s.eta_residual);
    Ok(())
}
