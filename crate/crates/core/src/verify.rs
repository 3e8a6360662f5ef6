//! Parameter equivalence check between two runs.

use std::fmt;
use std::path::Path;

use crate::params::{ParamDiff, Params, ParamsError};

/// Relative difference reported as a near-match when not bitwise equal.
pub const REL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Exact,
    /// Differs, but every element within [`REL_TOLERANCE`] relative.
    WithinTolerance,
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Report {
    pub diff: ParamDiff,
    pub verdict: Verdict,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.verdict {
            Verdict::Exact => "exact",
            Verdict::WithinTolerance => "within-tolerance",
            Verdict::Mismatch => "mismatch",
        };
        write!(
            f,
            "{v}: {}/{} elements differ, max abs diff {:e}, max rel diff {:e}",
            self.diff.mismatched, self.diff.total, self.diff.max_abs, self.diff.max_rel
        )
    }
}

pub fn compare(a: &Params, b: &Params) -> Result<Report, ParamsError> {
    let diff = a.compare(b)?;
    let verdict = if diff.exact() {
        Verdict::Exact
    } else if diff.max_rel <= REL_TOLERANCE {
        Verdict::WithinTolerance
    } else {
        Verdict::Mismatch
    };
    Ok(Report { diff, verdict })
}

pub fn compare_files(a: &Path, b: &Path) -> Result<Report, ParamsError> {
    compare(&Params::load(a)?, &Params::load(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LayerParams;

    fn p(w: f32) -> Params {
        Params {
            layers: vec![LayerParams {
                rows: 1,
                cols: 2,
                weight: vec![w, 2.0],
                bias: vec![0.5],
            }],
        }
    }

    #[test]
    fn verdicts() {
        assert_eq!(compare(&p(1.0), &p(1.0)).unwrap().verdict, Verdict::Exact);
        let near = f32::from_bits(1.0f32.to_bits() + 1);
        assert_eq!(
            compare(&p(1.0), &p(near)).unwrap().verdict,
            Verdict::WithinTolerance
        );
        let r = compare(&p(1.0), &p(1.5)).unwrap();
        assert_eq!(r.verdict, Verdict::Mismatch);
        assert!(r.to_string().starts_with("mismatch: 1/3"));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        p(0.25).save(&a).unwrap();
        assert_eq!(compare_files(&a, &a).unwrap().verdict, Verdict::Exact);
    }
}
