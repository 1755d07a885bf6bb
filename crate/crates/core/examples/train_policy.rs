//! Collects expert demonstrations and trains the toy policy on them.
//!
//! Defaults are small so this finishes in seconds; pass
//! `<episodes> <epochs>` for a longer run, e.g. `300 60`.

use litevla::action_space::ActionVocabulary;
use litevla::policy::{PolicyDims, PolicyParams, TrainConfig};
use litevla::sim::{collect_dataset, eval_seeds, evaluate, EpisodeConfig, ToyPolicyBackend};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let episodes = args.next().unwrap_or(30);
    let epochs = args.next().unwrap_or(10);

    let vocab = ActionVocabulary::default();
    let episode = EpisodeConfig::default();
    let data = collect_dataset(episodes, 0, &episode, &vocab).unwrap();
    println!("{} samples from {episodes} episodes", data.len());

    let params = PolicyParams::random(PolicyDims::default(), vocab, 0).unwrap();
    let config = TrainConfig { epochs, ..TrainConfig::default() };
    let out = litevla::policy::train_sft(params, &data, &config).unwrap();
    for (epoch, loss) in out.loss_curve.iter().enumerate() {
        println!("epoch {epoch:3}  loss {loss:.4}");
    }

    let mut backend = ToyPolicyBackend::new(out.params.freeze(), Default::default());
    let (summary, _) = evaluate(&mut backend, &episode, &eval_seeds(0, 20)).unwrap();
    println!("held-out success {}/{}", summary.successes, summary.episodes);
}
