//! Times frame-to-command latency for a backend with an injected delay.

use std::time::Duration;

use litevla::action_space::ActionVocabulary;
use litevla::sim::{run_latency_bench, DelayInjectingBackend, ExpertBackend};

fn main() {
    let ms: f64 = std::env::args().nth(1).map_or(20.0, |s| s.parse().unwrap());
    let inner = ExpertBackend::new(ActionVocabulary::default());
    let mut backend = DelayInjectingBackend::new(inner, Duration::from_secs_f64(ms / 1e3));
    let report = run_latency_bench(&mut backend, 30, 3, 0).unwrap();
    println!("{}", report.table());
}
