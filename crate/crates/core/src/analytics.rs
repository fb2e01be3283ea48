//! Finetuning-schedule statistics: total samples and iterations, average
//! iterations per class and average pixels per class.
//!
//! ```text
//! N_ToSa = N_TrIm · N_TrEp            (epoch schedules)
//!        = N_ToIt · S_B               (iteration schedules)
//! N_ToIt = N_TrIm · N_TrEp / S_B
//! AI_C   = N_ToIt / N_C
//! AP_C   = N_ToSa · S_TrIm / N_C      (S_TrIm is the image side length)
//! ```
//!
//! Every quotient is rounded half to even with exact integer arithmetic.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub name: String,
    pub n_tr_im: u64,
    /// Epochs; exactly one of this and `n_to_it` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tr_ep: Option<u64>,
    /// Iterations, for schedules stated in iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_to_it: Option<u64>,
    pub s_b: u64,
    pub s_tr_im: u64,
    pub n_c: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub n_to_sa: u64,
    pub n_to_it: u64,
    pub ai_c: u64,
    pub ap_c: u64,
}

impl ScheduleRow {
    pub const COLUMNS: [&'static str; 4] = ["n_to_sa", "n_to_it", "ai_c", "ap_c"];

    pub fn cells(&self) -> [u64; 4] {
        [self.n_to_sa, self.n_to_it, self.ai_c, self.ap_c]
    }
}

/// `num / den` rounded to the nearest integer, ties to even.
pub fn round_half_even(num: u128, den: u128) -> u128 {
    let (q, r) = (num / den, num % den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
        std::cmp::Ordering::Less => q,
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("{}: {m}", self.name)));
        if self.n_tr_im == 0 || self.s_b == 0 || self.s_tr_im == 0 || self.n_c == 0 {
            return fail("counts and sizes must be positive");
        }
        match (self.n_tr_ep, self.n_to_it) {
            (Some(0), _) | (_, Some(0)) => fail("epochs and iterations must be positive"),
            (Some(_), Some(_)) | (None, None) => fail("give exactly one of n_tr_ep and n_to_it"),
            _ => Ok(()),
        }
    }
}

pub fn derive_row(cfg: &ScheduleConfig) -> Result<ScheduleRow> {
    cfg.validate()?;
    let (im, b, s, c) = (
        cfg.n_tr_im as u128,
        cfg.s_b as u128,
        cfg.s_tr_im as u128,
        cfg.n_c as u128,
    );
    let (n_to_sa, n_to_it) = match (cfg.n_tr_ep, cfg.n_to_it) {
        (Some(ep), None) => (im * ep as u128, round_half_even(im * ep as u128, b)),
        (None, Some(it)) => (it as u128 * b, it as u128),
        _ => unreachable!("validated above"),
    };
    let narrow = |v: u128| u64::try_from(v).map_err(|_| Error::Config(format!("{}: value {v} overflows", cfg.name)));
    Ok(ScheduleRow {
        n_to_sa: narrow(n_to_sa)?,
        n_to_it: narrow(n_to_it)?,
        ai_c: narrow(round_half_even(n_to_it, c))?,
        ap_c: narrow(round_half_even(n_to_sa * s, c))?,
    })
}

/// One fixture entry: raw inputs plus the published derived values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRow {
    #[serde(flatten)]
    pub config: ScheduleConfig,
    pub expected: ScheduleRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn parse_fixture(text: &str) -> Result<Vec<FixtureRow>> {
    serde_json::from_str(text).map_err(|e| Error::Fixture(e.to_string()))
}

pub fn load_fixture(path: impl AsRef<Path>) -> Result<Vec<FixtureRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Fixture(format!("{}: {e}", path.display())))?;
    parse_fixture(&text)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellCheck {
    pub dataset: String,
    pub column: &'static str,
    pub expected: u64,
    pub derived: u64,
}

impl CellCheck {
    pub fn matches(&self) -> bool {
        self.expected == self.derived
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reconciliation {
    pub rows: Vec<(ScheduleConfig, ScheduleRow)>,
    pub cells: Vec<CellCheck>,
}

impl Reconciliation {
    pub fn matched(&self) -> usize {
        self.cells.iter().filter(|c| c.matches()).count()
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &CellCheck> {
        self.cells.iter().filter(|c| !c.matches())
    }

    pub fn all_match(&self) -> bool {
        self.matched() == self.cells.len()
    }
}

pub fn reconcile_table(fixture: &[FixtureRow]) -> Result<Reconciliation> {
    let mut rows = Vec::with_capacity(fixture.len());
    let mut cells = Vec::with_capacity(4 * fixture.len());
    for f in fixture {
        let derived = derive_row(&f.config)?;
        for ((column, expected), got) in ScheduleRow::COLUMNS.iter().zip(f.expected.cells()).zip(derived.cells()) {
            cells.push(CellCheck {
                dataset: f.config.name.clone(),
                column,
                expected,
                derived: got,
            });
        }
        rows.push((f.config.clone(), derived));
    }
    Ok(Reconciliation { rows, cells })
}

pub const REPORT_HEADER: &str = "name,n_tr_im,n_tr_ep,n_to_it_given,s_b,s_tr_im,n_c,n_to_sa,n_to_it,ai_c,ap_c";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Raw and derived columns, one line per dataset; absent inputs are empty.
pub fn emit_report(rows: &[(ScheduleConfig, ScheduleRow)]) -> String {
    let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = format!("{REPORT_HEADER}\n");
    for (c, r) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&c.name),
            c.n_tr_im,
            opt(c.n_tr_ep),
            opt(c.n_to_it),
            c.s_b,
            c.s_tr_im,
            c.n_c,
            r.n_to_sa,
            r.n_to_it,
            r.ai_c,
            r.ap_c
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epochs(name: &str, im: u64, ep: u64, b: u64, s: u64, c: u64) -> ScheduleConfig {
        ScheduleConfig {
            name: name.into(),
            n_tr_im: im,
            n_tr_ep: Some(ep),
            n_to_it: None,
            s_b: b,
            s_tr_im: s,
            n_c: c,
        }
    }

    #[test]
    fn rounding_ties_go_to_even() {
        assert_eq!(round_half_even(5, 2), 2);
        assert_eq!(round_half_even(7, 2), 4);
        assert_eq!(round_half_even(8, 3), 3);
        assert_eq!(round_half_even(7, 3), 2);
    }

    #[test]
    fn published_rows() {
        let r = derive_row(&epochs("EuroSAT", 16200, 100, 64, 224, 10)).unwrap();
        assert_eq!((r.n_to_it, r.ai_c, r.ap_c), (25_312, 2_531, 36_288_000));
        let r = derive_row(&epochs("DIOR", 11725, 12, 4, 800, 20)).unwrap();
        assert_eq!((r.n_to_it, r.ai_c, r.ap_c), (35_175, 1_759, 5_628_000));
        let r = derive_row(&epochs("RESISC-45", 6300, 200, 64, 224, 45)).unwrap();
        assert_eq!((r.n_to_it, r.ai_c, r.ap_c), (19_688, 438, 6_272_000));
        let loveda = ScheduleConfig {
            n_tr_ep: None,
            n_to_it: Some(80_000),
            ..epochs("LoveDA", 4191, 1, 8, 512, 7)
        };
        let r = derive_row(&loveda).unwrap();
        assert_eq!((r.n_to_sa, r.ai_c, r.ap_c), (640_000, 11_429, 46_811_429));
    }

    #[test]
    fn exactly_one_schedule_form() {
        let both = ScheduleConfig {
            n_to_it: Some(10),
            ..epochs("x", 10, 1, 1, 1, 1)
        };
        assert!(matches!(derive_row(&both), Err(Error::Config(_))));
        let neither = ScheduleConfig {
            n_tr_ep: None,
            ..epochs("x", 10, 1, 1, 1, 1)
        };
        assert!(derive_row(&neither).is_err());
        assert!(derive_row(&epochs("x", 10, 1, 0, 1, 1)).is_err());
    }

    #[test]
    fn report_shapes() {
        assert_eq!(emit_report(&[]), format!("{REPORT_HEADER}\n"));
        let c = epochs("a,b", 10, 2, 4, 8, 2);
        let r = derive_row(&c).unwrap();
        let text = emit_report(&[(c, r)]);
        assert_eq!(text.lines().nth(1).unwrap(), "\"a,b\",10,2,,4,8,2,20,5,2,80");
    }
}
