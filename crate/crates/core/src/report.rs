//! Findings produced by requirement validation and static verification.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::Owner;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Error,
    Warn,
    Info,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "ERROR",
            Severity::Warn => "WARN",
            Severity::Info => "INFO",
        })
    }
}

/// What a finding is about: an owner plus a block name or entry id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Subject {
    pub owner: Option<String>,
    pub item: Option<String>,
}

impl Subject {
    pub fn none() -> Self {
        Subject::default()
    }

    pub fn owner(owner: &Owner) -> Self {
        Subject {
            owner: Some(owner.name().to_string()),
            item: None,
        }
    }

    pub fn block(owner: &Owner, item: impl Into<String>) -> Self {
        Subject {
            owner: Some(owner.name().to_string()),
            item: Some(item.into()),
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.owner, &self.item) {
            (Some(o), Some(i)) => write!(f, "{o}/{i}"),
            (Some(o), None) => f.write_str(o),
            (None, Some(i)) => f.write_str(i),
            (None, None) => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: String,
    pub subject: Subject,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub findings: Vec<Finding>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn new() -> Self {
        VerificationReport {
            findings: Vec::new(),
            passed: true,
        }
    }

    pub fn push(&mut self, severity: Severity, code: &str, subject: Subject, message: impl Into<String>) {
        if severity == Severity::Error {
            self.passed = false;
        }
        self.findings.push(Finding {
            severity,
            code: code.to_string(),
            subject,
            message: message.into(),
        });
    }

    pub fn error(&mut self, code: &str, subject: Subject, message: impl Into<String>) {
        self.push(Severity::Error, code, subject, message);
    }

    pub fn warn(&mut self, code: &str, subject: Subject, message: impl Into<String>) {
        self.push(Severity::Warn, code, subject, message);
    }

    pub fn info(&mut self, code: &str, subject: Subject, message: impl Into<String>) {
        self.push(Severity::Info, code, subject, message);
    }

    pub fn merge(&mut self, other: VerificationReport) {
        self.passed &= other.passed;
        self.findings.extend(other.findings);
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for f in &self.findings {
            out.push_str(&format!("{:<5} {:<24} {:<24} {}\n", f.severity, f.code, f.subject, f.message));
        }
        let (e, w, i) = self.findings.iter().fold((0, 0, 0), |acc, f| match f.severity {
            Severity::Error => (acc.0 + 1, acc.1, acc.2),
            Severity::Warn => (acc.0, acc.1 + 1, acc.2),
            Severity::Info => (acc.0, acc.1, acc.2 + 1),
        });
        out.push_str(&format!(
            "{}: {e} error(s), {w} warning(s), {i} info\n",
            if self.passed { "PASSED" } else { "FAILED" }
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passed_tracks_errors_only() {
        let mut r = VerificationReport::new();
        r.warn("MIN_PERM", Subject::none(), "extra grant");
        r.info("X", Subject::none(), "note");
        assert!(r.passed);
        r.error("OUT_OF_MAP", Subject::block(&Owner::Kernel, "code"), "outside");
        assert!(!r.passed);
        let back: VerificationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.render_text().contains("kernel/code"));
    }
}
