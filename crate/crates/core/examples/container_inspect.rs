//! Validates a model file, or a freshly built one when no path is given.

use litevla::action_space::ActionVocabulary;
use litevla::container::{policy_to_model, to_bytes, validate_container};
use litevla::policy::{DecodeConfig, PolicyDims, PolicyParams};

fn main() {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path).expect("readable file"),
        None => {
            let params = PolicyParams::random(PolicyDims::default(), ActionVocabulary::default(), 0).unwrap();
            to_bytes(&policy_to_model(&params, &DecodeConfig::default(), None)).unwrap()
        }
    };
    let report = validate_container(&bytes);
    for c in &report.checks {
        println!("{:<16} {:?}  {}", c.name, c.status, c.detail);
    }
    if let Some(model) = &report.model {
        for (k, v) in &model.metadata {
            println!("{k} = {v:?}");
        }
        for t in &model.tensors {
            println!("{:<22} {:<6} {:?}", t.name, t.dtype().name(), t.dims);
        }
    }

    // a cut-off file is rejected with a class, never read past its end
    let cut = validate_container(&bytes[..bytes.len() / 2]);
    println!("truncated copy: {:?}", cut.error_class);
}
