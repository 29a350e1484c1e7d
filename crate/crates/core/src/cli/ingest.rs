use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::Path;

use nalgebra::DVector;

use super::CliError;
use crate::engine::Sample;

/// Lazy reader over a sample CSV: one sample per line, `p` comma-separated
/// values. In completion files an empty field marks an unobserved entry.
/// Blank lines and lines starting with `#` are skipped.
pub struct SampleReader {
    lines: Lines<BufReader<File>>,
    path: String,
    line_no: usize,
    p: usize,
    masked: bool,
}

/// Opens `path` for streaming; nothing is read until iteration.
pub fn ingest_stream(path: &Path, p: usize, masked: bool) -> Result<SampleReader, CliError> {
    let file = File::open(path)?;
    Ok(SampleReader {
        lines: BufReader::new(file).lines(),
        path: path.display().to_string(),
        line_no: 0,
        p,
        masked,
    })
}

impl SampleReader {
    fn parse_line(&self, line: &str) -> Result<Sample<f64>, CliError> {
        let err = |message: String| CliError::Parse { path: self.path.clone(), line: self.line_no, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != self.p {
            return Err(err(format!("expected {} fields, found {}", self.p, fields.len())));
        }
        let mut values = DVector::zeros(self.p);
        let mut mask = vec![true; self.p];
        for (i, raw) in fields.iter().enumerate() {
            let raw = raw.trim();
            if raw.is_empty() {
                if !self.masked {
                    return Err(err(format!("field {} is empty", i + 1)));
                }
                mask[i] = false;
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| err(format!("field {}: '{raw}' is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(err(format!("field {} is not finite", i + 1)));
            }
            values[i] = v;
        }
        Ok(if self.masked { Sample::masked(values, mask) } else { Sample::dense(values) })
    }
}

impl Iterator for SampleReader {
    type Item = Result<Sample<f64>, CliError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            let t = line.trim_end_matches('\r');
            if t.trim().is_empty() || t.starts_with('#') {
                continue;
            }
            return Some(self.parse_line(t));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.csv");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn dense_lines_in_order() {
        let (_d, path) = write("1,2,3\n# note\n\n-4, 5.5 ,6e1\n");
        let got: Vec<_> = ingest_stream(&path, 3, false).unwrap().map(Result::unwrap).collect();
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].values, DVector::from_column_slice(&[-4.0, 5.5, 60.0]));
        assert!(got[0].mask.is_none());
    }

    #[test]
    fn empty_fields_are_unobserved() {
        let (_d, path) = write("1,,3\n");
        let s = ingest_stream(&path, 3, true).unwrap().next().unwrap().unwrap();
        assert_eq!(s.mask, Some(vec![true, false, true]));
        assert_eq!(s.values[1], 0.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let (_d, path) = write("1,2\n3,x\n");
        let mut r = ingest_stream(&path, 2, false).unwrap();
        assert!(r.next().unwrap().is_ok());
        assert!(matches!(r.next().unwrap(), Err(CliError::Parse { line: 2, .. })));

        let (_d, path) = write("1,2\n\n1,inf\n");
        let err = ingest_stream(&path, 2, false).unwrap().nth(1).unwrap().unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }));

        let (_d, path) = write("1,2,3\n");
        assert!(ingest_stream(&path, 2, false).unwrap().next().unwrap().is_err());
        let (_d, path) = write("1,,3\n");
        assert!(ingest_stream(&path, 3, false).unwrap().next().unwrap().is_err());
    }
}
