//! Per-constraint-family pass/fail report shared by the schedule checker and
//! the MIP valuation checker.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyResult {
    /// Family label such as `eq06`.
    pub family: String,
    pub checked: usize,
    /// First counterexample found, if any.
    pub violation: Option<String>,
}

impl FamilyResult {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub families: Vec<FamilyResult>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.families.iter().all(FamilyResult::passed)
    }

    pub fn family(&self, name: &str) -> Option<&FamilyResult> {
        self.families.iter().find(|f| f.family == name)
    }

    /// Names of the families that failed.
    pub fn failures(&self) -> Vec<&str> {
        self.families.iter().filter(|f| !f.passed()).map(|f| f.family.as_str()).collect()
    }

    pub(crate) fn entry(&mut self, name: &str) -> &mut FamilyResult {
        if let Some(pos) = self.families.iter().position(|f| f.family == name) {
            return &mut self.families[pos];
        }
        self.families.push(FamilyResult { family: name.to_string(), checked: 0, violation: None });
        self.families.last_mut().unwrap()
    }

    /// Counts one check; keeps only the first violation per family.
    pub(crate) fn check(&mut self, name: &str, ok: bool, describe: impl FnOnce() -> String) {
        let e = self.entry(name);
        e.checked += 1;
        if !ok && e.violation.is_none() {
            e.violation = Some(describe());
        }
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for fam in &self.families {
            match &fam.violation {
                None => writeln!(f, "{}: ok ({} checks)", fam.family, fam.checked)?,
                Some(v) => writeln!(f, "{}: FAIL {}", fam.family, v)?,
            }
        }
        Ok(())
    }
}
