use std::collections::BTreeSet;

use super::{JobMode, JobSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("image digest {0} is not on the trusted allow-list")]
    DigestNotTrusted(String),
    #[error("malformed image digest {0:?}: expected 64 hex characters")]
    MalformedDigest(String),
    #[error("non-positive resource field `{0}`")]
    NonPositiveResource(&'static str),
    #[error("invalid job spec: {0}")]
    InvalidSpec(String),
}

impl ValidationError {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::DigestNotTrusted(_) => "DigestNotTrusted",
            ValidationError::MalformedDigest(_) => "MalformedDigest",
            ValidationError::NonPositiveResource(_) => "NonPositiveResource",
            ValidationError::InvalidSpec(_) => "InvalidSpec",
        }
    }
}

/// Accepts either a bare 64-hex digest or the `sha256:`-prefixed form and
/// returns the normalized lowercase hex.
pub fn normalize_digest(digest: &str) -> Option<String> {
    let hex = digest.strip_prefix("sha256:").unwrap_or(digest);
    if hex.len() == 64 && hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        Some(hex.to_ascii_lowercase())
    } else {
        None
    }
}

pub fn validate_job_spec(spec: &JobSpec, allow_list: &BTreeSet<String>) -> Result<(), ValidationError> {
    let digest = normalize_digest(&spec.image_digest)
        .ok_or_else(|| ValidationError::MalformedDigest(spec.image_digest.clone()))?;
    if spec.gpu_memory_mib_required == 0 {
        return Err(ValidationError::NonPositiveResource("gpu_memory_mib_required"));
    }
    if spec.checkpoint_interval_s == 0 {
        return Err(ValidationError::NonPositiveResource("checkpoint_interval_s"));
    }
    if spec.estimated_duration_s == 0 {
        return Err(ValidationError::NonPositiveResource("estimated_duration_s"));
    }
    if spec.image_ref.trim().is_empty() {
        return Err(ValidationError::InvalidSpec("image_ref is empty".into()));
    }
    if spec.storage_target.path().is_empty() {
        return Err(ValidationError::InvalidSpec("storage target path is empty".into()));
    }
    if spec.min_compute_capability.major() < 1 {
        return Err(ValidationError::InvalidSpec("min_compute_capability major must be >= 1".into()));
    }
    if spec.mode == JobMode::Interactive && !spec.entrypoint.is_empty() {
        return Err(ValidationError::InvalidSpec("entrypoint applies to batch jobs only".into()));
    }
    if !allow_list.iter().any(|d| normalize_digest(d).as_deref() == Some(digest.as_str())) {
        return Err(ValidationError::DigestNotTrusted(digest));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CheckpointMode, ComputeCapability, StorageTarget};

    const DIGEST: &str = "4b3c5d3f6a1e2b7c8d9e0f1a2b3c4d5e6f708192a3b4c5d6e7f8091a2b3c4d5e";

    fn spec() -> JobSpec {
        JobSpec {
            image_ref: "registry.campus/pytorch:2.3".into(),
            image_digest: DIGEST.into(),
            mode: JobMode::Batch,
            entrypoint: vec!["python".into(), "train.py".into()],
            gpu_memory_mib_required: 8192,
            min_compute_capability: ComputeCapability(7, 0),
            priority: 0,
            checkpoint_interval_s: 600,
            checkpoint_mode: CheckpointMode::Incremental,
            storage_target: StorageTarget::SharedFs { path: "/campus/ckpt".into() },
            estimated_duration_s: 3600,
            affinity_window_s: 0,
        }
    }

    fn allow() -> BTreeSet<String> {
        [DIGEST.to_string()].into_iter().collect()
    }

    #[test]
    fn trusted_spec_passes() {
        assert_eq!(validate_job_spec(&spec(), &allow()), Ok(()));
        let mut s = spec();
        s.image_digest = format!("sha256:{}", DIGEST.to_uppercase());
        assert_eq!(validate_job_spec(&s, &allow()), Ok(()));
    }

    #[test]
    fn untrusted_digest_rejected() {
        let mut s = spec();
        s.image_digest = "f".repeat(64);
        assert!(matches!(validate_job_spec(&s, &allow()), Err(ValidationError::DigestNotTrusted(_))));
    }

    #[test]
    fn malformed_digest_rejected() {
        let mut s = spec();
        s.image_digest = "a".repeat(63);
        assert!(matches!(validate_job_spec(&s, &allow()), Err(ValidationError::MalformedDigest(_))));
        s.image_digest = format!("{}z", "a".repeat(63));
        assert!(matches!(validate_job_spec(&s, &allow()), Err(ValidationError::MalformedDigest(_))));
    }

    #[test]
    fn zero_memory_rejected() {
        let mut s = spec();
        s.gpu_memory_mib_required = 0;
        assert_eq!(
            validate_job_spec(&s, &allow()),
            Err(ValidationError::NonPositiveResource("gpu_memory_mib_required"))
        );
        let mut s = spec();
        s.checkpoint_interval_s = 0;
        assert_eq!(
            validate_job_spec(&s, &allow()),
            Err(ValidationError::NonPositiveResource("checkpoint_interval_s"))
        );
    }

    #[test]
    fn interactive_with_entrypoint_rejected() {
        let mut s = spec();
        s.mode = JobMode::Interactive;
        assert!(matches!(validate_job_spec(&s, &allow()), Err(ValidationError::InvalidSpec(_))));
        s.entrypoint.clear();
        assert_eq!(validate_job_spec(&s, &allow()), Ok(()));
    }
}
