//! Drives the expert through one episode with a mid-run goal change.

use litevla::action_space::ActionVocabulary;
use litevla::sim::{eval_seeds, run_closed_loop, EpisodeConfig, ExpertBackend};

fn main() {
    let seed = std::env::args().nth(1).map_or(eval_seeds(0, 1)[0], |s| s.parse().unwrap());
    let mut expert = ExpertBackend::new(ActionVocabulary::default());
    let config = EpisodeConfig {
        goal_shift_time: Some(5.0),
        ..EpisodeConfig::default()
    };
    let r = run_closed_loop(&mut expert, &config, seed).unwrap();
    for d in r.decision_log.iter().step_by(5) {
        println!(
            "t {:6.3}  tokens {:?}  v {:+.3}  w {:+.3}",
            d.time_s, d.tokens, d.command.linear_velocity, d.command.angular_velocity
        );
    }
    println!(
        "seed {seed}: success {} after {:.2} s, {} ticks, final distance {:.3} m",
        r.success, r.duration_s, r.steps, r.final_distance
    );
}
