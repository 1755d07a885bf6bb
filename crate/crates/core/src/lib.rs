//! Fully local vision-language-action deployment pipeline.
//!
//! The crate covers each stage from demonstrations to a benchmarked control
//! loop:
//!
//! * [`action_space`]: discrete action tokens and their velocity meaning
//! * [`policy`]: toy autoregressive policy, NLL training, LoRA, greedy decoding
//! * [`quantizer`]: 4-bit blockwise weight compression
//! * [`container`]: GGUF-style model file reader and writer
//! * [`parser`]: the `ACTION <v> <w>` line grammar between model and robot
//! * [`bridge`]: pub/sub bus, Twist wire codec over UDP, heartbeat controller
//! * [`sim`]: synthetic world, expert, closed-loop runner, latency bench
//! * [`cli`]: the `litevla` command-line front end

pub mod action_space;
pub mod cli;
pub mod bridge;
pub mod container;
pub mod parser;
pub mod policy;
pub mod quantizer;
pub mod sim;
pub mod tensor;
