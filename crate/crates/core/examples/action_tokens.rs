//! Round-trips a few velocity commands through the discrete action vocabulary.

use litevla::action_space::{decode_tokens, encode_command, ActionCommand, ActionVocabulary};
use litevla::parser::format_action;

fn main() {
    let vocab = ActionVocabulary::default();
    println!(
        "{} v-bins of {:.4} m/s, {} w-bins of {:.4} rad/s, {} ids",
        vocab.v_bins,
        vocab.v_bin_width(),
        vocab.w_bins,
        vocab.w_bin_width(),
        vocab.size()
    );
    for (v, w) in [(0.0, 0.0), (0.3, -0.8), (-0.5, 1.5), (2.0, -9.0)] {
        let tokens = encode_command(ActionCommand::new(v, w), &vocab).unwrap();
        let back = decode_tokens(&tokens, &vocab).unwrap();
        print!("({v:+.2}, {w:+.2}) -> {}", format_action(&tokens).unwrap());
        println!("    decodes to ({:+.4}, {:+.4})", back.linear_velocity, back.angular_velocity);
    }
}
