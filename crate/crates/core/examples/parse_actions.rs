//! Shows which model outputs the action line grammar accepts.

use litevla::action_space::ActionVocabulary;
use litevla::parser::parse_action_line;

fn main() {
    let vocab = ActionVocabulary::default();
    let lines = [
        "ACTION 20 14\n",
        "ACTION 31 0",
        "ACTION 32 0",
        "ACTION  3 4",
        "action 3 4",
        "ACTION 03 4",
        "ACTION 3 4 5",
        "ACTION -1 4",
    ];
    for line in lines {
        match parse_action_line(line, &vocab) {
            Ok(cmd) => println!("{line:?}: v {:+.4} w {:+.4}", cmd.linear_velocity, cmd.angular_velocity),
            Err(e) => println!("{line:?}: {:?} at byte {}: {}", e.class, e.offset, e.message),
        }
    }
}
