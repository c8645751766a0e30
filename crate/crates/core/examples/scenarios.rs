//! Runs every bundled scenario through the library entry point used by the
//! command-line tool and lists the files it writes.

use std::path::Path;

use qequiv::scenario::{run, Scenario};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let out = std::env::temp_dir().join("qequiv-scenarios");
    let mut files: Vec<_> = std::fs::read_dir(&dir).expect("scenario directory").map(|e| e.unwrap().path()).collect();
    files.sort();
    for f in files {
        if f.file_stem().is_some_and(|s| s == "pipeline") {
            continue;
        }
        let scenario = Scenario::load(&f);
        let kind = match &scenario {
            Ok(Scenario { kind: Some(k), .. }) => *k,
            Ok(_) => {
                println!("{}: no kind given", f.display());
                continue;
            }
            Err(e) => {
                println!("{}: {e}", f.display());
                continue;
            }
        };
        let target = out.join(f.file_stem().unwrap());
        let outcome = run(kind, scenario, None, &target);
        println!("{:<28} exit {}  {:?}", f.file_name().unwrap().to_string_lossy(), outcome.exit_code, outcome.files);
    }
}
