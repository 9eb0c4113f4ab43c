use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One annotated respiratory cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleAnnotation {
    pub begin_s: f64,
    pub end_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
}

impl CycleAnnotation {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.begin_s
    }
}

// Cycle durations outside this range are unusual for the public corpus and
// get logged, never rejected.
const TYPICAL_CYCLE_S: (f64, f64) = (0.2, 16.0);

fn parse_flag(token: &str, line: usize) -> Result<bool> {
    match token {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::MalformedAnnotation {
            line,
            reason: format!("flag `{other}` is not 0 or 1"),
        }),
    }
}

/// Parse a four-column annotation file: begin, end, crackle flag, wheeze flag.
///
/// Blank lines are skipped. Cycles are returned in file order; overlapping
/// cycles are accepted with a warning.
pub fn parse_annotation(text: &str) -> Result<Vec<CycleAnnotation>> {
    let mut cycles: Vec<CycleAnnotation> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::MalformedAnnotation {
                line,
                reason: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::MalformedAnnotation {
                    line,
                    reason: format!("`{s}` is not a number"),
                })
        };
        let begin_s = num(cols[0])?;
        let end_s = num(cols[1])?;
        if begin_s < 0.0 || end_s <= begin_s {
            return Err(Error::MalformedAnnotation {
                line,
                reason: format!("cycle [{begin_s}, {end_s}] is empty or negative"),
            });
        }
        let cycle = CycleAnnotation {
            begin_s,
            end_s,
            crackle: parse_flag(cols[2], line)?,
            wheeze: parse_flag(cols[3], line)?,
        };
        let d = cycle.duration_s();
        if d < TYPICAL_CYCLE_S.0 || d > TYPICAL_CYCLE_S.1 {
            log::warn!("line {line}: unusual cycle duration {d:.3} s");
        }
        if let Some(prev) = cycles.last() {
            if begin_s < prev.end_s {
                log::warn!("line {line}: cycle overlaps the previous one");
            }
        }
        cycles.push(cycle);
    }
    Ok(cycles)
}

/// Inverse of [`parse_annotation`]; numbers use the shortest round-trip form.
pub fn serialize_annotation(cycles: &[CycleAnnotation]) -> String {
    let mut out = String::new();
    for c in cycles {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            c.begin_s,
            c.end_s,
            u8::from(c.crackle),
            u8::from(c.wheeze)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_normal_cycle() {
        let c = parse_annotation("0.036 0.579 0 0").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].begin_s, 0.036);
        assert_eq!(c[0].end_s, 0.579);
        assert!(!c[0].crackle && !c[0].wheeze);
    }

    #[test]
    fn reversed_cycle_rejected() {
        assert!(matches!(
            parse_annotation("1.0 0.5 0 1"),
            Err(Error::MalformedAnnotation { line: 1, .. })
        ));
    }

    #[test]
    fn bad_columns_rejected() {
        assert!(parse_annotation("0.1 0.5 0").is_err());
        assert!(parse_annotation("0.1 abc 0 1").is_err());
        assert!(parse_annotation("0.1 0.5 2 1").is_err());
        assert!(parse_annotation("0.1 0.5 0 1\n0.5 0.9 0 x").is_err());
    }

    #[test]
    fn ten_lines_keep_order() {
        let text: String = (0..10)
            .map(|i| format!("{}\t{}\t{}\t{}\n", i as f64, i as f64 + 0.9, i % 2, (i / 2) % 2))
            .collect();
        let cycles = parse_annotation(&text).unwrap();
        assert_eq!(cycles.len(), 10);
        for (i, c) in cycles.iter().enumerate() {
            assert_eq!(c.begin_s, i as f64);
            assert_eq!(c.crackle, i % 2 == 1);
        }
    }

    #[test]
    fn overlap_is_accepted() {
        let c = parse_annotation("0.0 1.0 0 0\n0.5 1.5 1 0\n\n").unwrap();
        assert_eq!(c.len(), 2);
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(raw in prop::collection::vec((0.0f64..100.0, 0.001f64..20.0, any::<bool>(), any::<bool>()), 0..30)) {
            let cycles: Vec<CycleAnnotation> = raw
                .into_iter()
                .map(|(b, d, crackle, wheeze)| CycleAnnotation { begin_s: b, end_s: b + d, crackle, wheeze })
                .filter(|c| c.end_s > c.begin_s)
                .collect();
            let back = parse_annotation(&serialize_annotation(&cycles)).unwrap();
            prop_assert_eq!(back, cycles);
        }
    }
}
