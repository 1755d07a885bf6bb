//! Quantizes a policy to 4-bit blocks and measures how often decoding changes.

use litevla::action_space::ActionVocabulary;
use litevla::container::{policy_to_model, to_bytes};
use litevla::policy::{DecodeConfig, PolicyDims, PolicyParams};
use litevla::quantizer::{argmax_agreement, quantize_policy};
use litevla::sim::{render_observation, WorldState};
use rand::SeedableRng;

fn main() {
    let params = PolicyParams::random(PolicyDims::default(), ActionVocabulary::default(), 3).unwrap();
    let q = quantize_policy(&params).unwrap();
    for s in &q.stats {
        println!(
            "{:<22} {:>6} blocks  {:>7} -> {:>6} bytes  max err {:.2e}",
            s.name, s.blocks, s.f32_bytes, s.packed_bytes, s.max_abs_error
        );
    }

    let decode = DecodeConfig::default();
    let full = to_bytes(&policy_to_model(&params, &decode, None)).unwrap().len();
    let small = to_bytes(&policy_to_model(&params, &decode, Some(&q))).unwrap().len();
    println!("container {full} -> {small} bytes");

    // untrained weights give near-tied logits, so expect far lower agreement
    // here than for a trained policy
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let observations: Vec<_> = (0..200)
        .map(|_| render_observation(&WorldState::random(&mut rng), 16, 16))
        .collect();
    let report = argmax_agreement(&params.freeze(), &q.params, &observations, &decode).unwrap();
    println!("argmax agreement {}/{} ({:.3})", report.agreeing, report.total, report.agreement);
}
