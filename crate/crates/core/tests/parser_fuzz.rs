use litevla::action_space::{decode_tokens, ActionTokenSeq, ActionVocabulary};
use litevla::parser::{format_action, parse_action_line, parse_action_tokens, ErrorClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::bytes::Regex;

const ALPHABET: &[u8] = b"ACTIONaction 0123456789\n\t-+x";

fn mutate(rng: &mut ChaCha8Rng, line: &mut Vec<u8>) {
    match rng.random_range(0..4) {
        0 if !line.is_empty() => {
            let i = rng.random_range(0..line.len());
            line[i] = ALPHABET[rng.random_range(0..ALPHABET.len())];
        }
        1 => {
            let i = rng.random_range(0..=line.len());
            line.insert(i, ALPHABET[rng.random_range(0..ALPHABET.len())]);
        }
        2 if !line.is_empty() => {
            let i = rng.random_range(0..line.len());
            line.remove(i);
        }
        _ => line.push(rng.random()),
    }
}

/// Independent oracle: a regex for the grammar plus the bin and length limits.
fn oracle(re: &Regex, line: &[u8], vocab: &ActionVocabulary) -> Option<(u32, u32)> {
    if line.len() > 64 {
        return None;
    }
    let caps = re.captures(line)?;
    let v: u64 = std::str::from_utf8(&caps[1]).ok()?.parse().ok()?;
    let w: u64 = std::str::from_utf8(&caps[2]).ok()?.parse().ok()?;
    (v < vocab.v_bins as u64 && w < vocab.w_bins as u64).then_some((v as u32, w as u32))
}

#[test]
fn random_lines_agree_with_regex_oracle() {
    let re = Regex::new(r"\AACTION (0|[1-9][0-9]*) (0|[1-9][0-9]*)\n?\z").unwrap();
    let vocab = ActionVocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut accepted, mut rejected) = (0u32, 0u32);
    for _ in 0..1_000_000 {
        let mut line = if rng.random_bool(0.1) {
            let n = rng.random_range(0..80);
            (0..n).map(|_| rng.random::<u8>()).collect()
        } else {
            let v = rng.random_range(0..40);
            let w = rng.random_range(0..40);
            format_action(&ActionTokenSeq::pair(v, w)).unwrap().into_bytes()
        };
        for _ in 0..rng.random_range(0..3) {
            mutate(&mut rng, &mut line);
        }
        let got = parse_action_tokens(&line, &vocab);
        match (oracle(&re, &line, &vocab), got) {
            (Some((v, w)), Ok(seq)) => {
                assert_eq!(seq.tokens(), &[v, w]);
                let cmd = parse_action_line(&line, &vocab).unwrap();
                assert_eq!(cmd, decode_tokens(&seq, &vocab).unwrap());
                accepted += 1;
            }
            (None, Err(e)) => {
                assert!(e.offset <= line.len().max(64), "{e} for {line:?}");
                if line.len() > 64 {
                    assert_eq!(e.class, ErrorClass::Length);
                }
                rejected += 1;
            }
            (o, g) => panic!("oracle {o:?} vs parser {g:?} for {:?}", String::from_utf8_lossy(&line)),
        }
    }
    assert!(accepted > 100_000 && rejected > 100_000, "{accepted} / {rejected}");
}
