use serde::{Deserialize, Serialize};

use super::PolicyError;

/// Fixed instruction set; `goal_id` indexes into it and names the target color.
pub const INSTRUCTIONS: [&str; 3] = [
    "go to the red target",
    "go to the green target",
    "go to the blue target",
];

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoalInstruction {
    pub goal_id: usize,
    pub text: String,
}

impl GoalInstruction {
    pub fn new(goal_id: usize) -> Result<Self, PolicyError> {
        INSTRUCTIONS
            .get(goal_id)
            .map(|text| Self {
                goal_id,
                text: (*text).to_string(),
            })
            .ok_or(PolicyError::UnknownGoal {
                goal_id,
                count: INSTRUCTIONS.len(),
            })
    }
}

/// H x W x 3 image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self, PolicyError> {
        if data.len() != height * width * CHANNELS {
            return Err(PolicyError::Dimension(format!(
                "image buffer has {} values, expected {height}x{width}x{CHANNELS}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(PolicyError::Dimension(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * CHANNELS + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    /// Values are clamped to [0, 1].
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.data[i] = value.clamp(0.0, 1.0);
    }

    /// Nonzero entries of the flattened image.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, &x)| (i, x))
    }

    /// Intensities quantized to bytes, `round(x * 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|x| (x * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn channel_is_empty(&self, channel: usize) -> bool {
        self.data
            .iter()
            .skip(channel)
            .step_by(CHANNELS)
            .all(|&x| x == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub image: Image,
    pub goal: GoalInstruction,
}

impl Observation {
    pub fn new(image: Image, goal: GoalInstruction) -> Self {
        Self { image, goal }
    }
}
