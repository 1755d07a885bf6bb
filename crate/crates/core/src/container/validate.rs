//! Structured per-check validation of a container byte stream.

use serde::Serialize;

use super::policy_io::REQUIRED_POLICY_KEYS;
use super::{
    from_bytes, policy_from_model, ContainerModel, ModelKind, TensorData, ALIGNMENT,
};
use crate::action_space::decode_tokens;
use crate::policy::{greedy_decode, GoalInstruction, Image, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
    #[serde(skip)]
    pub model: Option<ContainerModel>,
    /// Error class of the first failing parse, if any.
    pub error_class: Option<&'static str>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    fn push(&mut self, name: &'static str, status: CheckStatus, detail: impl Into<String>) {
        self.checks.push(ValidationCheck {
            name,
            status,
            detail: detail.into(),
        });
    }

    fn skip_rest(&mut self, names: &[&'static str]) {
        for &n in names {
            self.push(n, CheckStatus::Skipped, "earlier check failed");
        }
    }
}

const CHECKS_AFTER_PARSE: [&str; 4] = ["finite_values", "policy_keys", "policy_load", "decode_smoke"];

/// Parses `bytes` and runs the structural and semantic checks.
///
/// Policy-specific checks are skipped for dataset containers.
pub fn validate_container(bytes: &[u8]) -> ValidationReport {
    let mut report = ValidationReport {
        checks: Vec::new(),
        model: None,
        error_class: None,
    };
    let model = match from_bytes(bytes) {
        Ok(m) => {
            report.push(
                "parse",
                CheckStatus::Pass,
                format!(
                    "{} bytes, {} metadata keys, {} tensors, payload alignment {ALIGNMENT}",
                    bytes.len(),
                    m.metadata.len(),
                    m.tensors.len()
                ),
            );
            m
        }
        Err(e) => {
            report.error_class = Some(e.class());
            report.push("parse", CheckStatus::Fail, e.to_string());
            report.skip_rest(&CHECKS_AFTER_PARSE);
            return report;
        }
    };

    let non_finite: Vec<&str> = model
        .tensors
        .iter()
        .filter(|t| match &t.data {
            TensorData::F32(v) => v.iter().any(|x| !x.is_finite()),
            TensorData::Q4B32(_) => false,
        })
        .map(|t| t.name.as_str())
        .collect();
    if non_finite.is_empty() {
        report.push("finite_values", CheckStatus::Pass, "all F32 payloads finite");
    } else {
        report.push(
            "finite_values",
            CheckStatus::Fail,
            format!("non-finite values in {non_finite:?}"),
        );
    }

    if ModelKind::of(&model) != Some(ModelKind::Policy) {
        for n in &CHECKS_AFTER_PARSE[1..] {
            report.push(n, CheckStatus::Skipped, "not a policy container");
        }
        report.model = Some(model);
        return report;
    }

    let missing: Vec<&str> = REQUIRED_POLICY_KEYS
        .iter()
        .copied()
        .filter(|k| model.get(k).is_none())
        .collect();
    if missing.is_empty() {
        report.push("policy_keys", CheckStatus::Pass, "all required keys present");
    } else {
        report.push("policy_keys", CheckStatus::Fail, format!("missing {missing:?}"));
    }

    match policy_from_model(&model) {
        Ok(bundle) => {
            report.push(
                "policy_load",
                CheckStatus::Pass,
                format!("codec {}, max_tokens {}", bundle.codec, bundle.decode.max_tokens),
            );
            let dims = bundle.policy.dims;
            let obs = Observation::new(
                Image::blank(dims.image_h, dims.image_w),
                GoalInstruction::new(0).expect("goal 0 always exists"),
            );
            match greedy_decode(&bundle.policy, &obs, &bundle.decode)
                .and_then(|seq| Ok(decode_tokens(&seq, &bundle.policy.vocab)?))
            {
                Ok(cmd) => report.push(
                    "decode_smoke",
                    CheckStatus::Pass,
                    format!(
                        "blank frame -> v={:.4} w={:.4}",
                        cmd.linear_velocity, cmd.angular_velocity
                    ),
                ),
                Err(e) => {
                    report.error_class = Some("invalid_content");
                    report.push("decode_smoke", CheckStatus::Fail, e.to_string())
                }
            }
        }
        Err(e) => {
            report.error_class = Some(e.class());
            report.push("policy_load", CheckStatus::Fail, e.to_string());
            report.skip_rest(&CHECKS_AFTER_PARSE[3..]);
        }
    }
    report.model = Some(model);
    report
}
