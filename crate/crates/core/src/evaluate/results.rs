//! Result rows and their CSV / JSON-lines files.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns before the per-UE block and after it.
pub const CSV_FIXED_COLUMNS: ([&str; 5], [&str; 5]) = (
    ["scheme", "overhead_kbps", "density", "subbands", "se_sum"],
    ["bs_gflops", "ue_gflops", "seed", "n_samples", "n_dropped"],
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Operating point id.
    pub scheme: String,
    pub kind: String,
    pub overhead_kbps: f64,
    pub bits_per_report: usize,
    pub density: String,
    pub subbands: usize,
    pub se_sum: f64,
    pub se_per_ue: Vec<f64>,
    pub bs_gflops: f64,
    pub ue_gflops: f64,
    pub seed: u64,
    /// ZF groups evaluated (one per test sample).
    pub n_samples: usize,
    pub n_dropped: usize,
    /// Per-RB reconstruction error of the unit directions.
    pub nmse_db: f64,
    pub valid: bool,
}

/// A grid point's row, or the reason it could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    pub id: String,
    pub row: Option<ResultRow>,
    pub error: Option<String>,
}

fn header(users: usize) -> Vec<String> {
    let (head, tail) = CSV_FIXED_COLUMNS;
    head.iter()
        .map(|s| s.to_string())
        .chain((0..users).map(|m| format!("se_ue{m}")))
        .chain(tail.iter().map(|s| s.to_string()))
        .collect()
}

/// Writes successful rows; every row must report the same number of UEs.
pub fn write_results_csv<W: Write>(w: W, rows: &[ResultRow], users: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(users)).map_err(csv_err)?;
    for r in rows {
        if r.se_per_ue.len() != users {
            return Err(Error::InvalidArgument(format!("row {} has {} UEs", r.scheme, r.se_per_ue.len())));
        }
        let mut rec = vec![
            r.scheme.clone(),
            r.overhead_kbps.to_string(),
            r.density.clone(),
            r.subbands.to_string(),
            r.se_sum.to_string(),
        ];
        rec.extend(r.se_per_ue.iter().map(f64::to_string));
        rec.extend([
            r.bs_gflops.to_string(),
            r.ue_gflops.to_string(),
            r.seed.to_string(),
            r.n_samples.to_string(),
            r.n_dropped.to_string(),
        ]);
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Columns recovered from a results CSV (fields not stored there are left empty).
pub fn read_results_csv<R: BufRead>(r: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut records = rdr.records();
    let Some(head) = records.next() else {
        return Ok(Vec::new());
    };
    let head = head.map_err(|e| Error::Format(format!("line 1: {e}")))?;
    let users = head.len().saturating_sub(10);
    if head.len() < 10 || head.iter().map(str::to_string).collect::<Vec<_>>() != header(users) {
        return Err(Error::Format("line 1: unexpected results header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        if rec.len() != head.len() {
            return Err(Error::Format(format!(
                "line {line}: expected {} fields, found {}",
                head.len(),
                rec.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {line}: column {} is not a number", header(users)[j])))
        };
        let int = |j: usize| -> Result<u64> {
            rec[j]
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("line {line}: column {} is not an integer", header(users)[j])))
        };
        let t = 5 + users;
        rows.push(ResultRow {
            scheme: rec[0].to_string(),
            kind: String::new(),
            overhead_kbps: num(1)?,
            bits_per_report: 0,
            density: rec[2].to_string(),
            subbands: int(3)? as usize,
            se_sum: num(4)?,
            se_per_ue: (5..t).map(num).collect::<Result<_>>()?,
            bs_gflops: num(t)?,
            ue_gflops: num(t + 1)?,
            seed: int(t + 2)?,
            n_samples: int(t + 3)? as usize,
            n_dropped: int(t + 4)? as usize,
            nmse_db: f64::NAN,
            valid: true,
        });
    }
    Ok(rows)
}

/// One JSON object per grid point, failures included.
pub fn write_jsonl<W: Write>(mut w: W, outcomes: &[PointOutcome]) -> Result<()> {
    for o in outcomes {
        serde_json::to_writer(&mut w, o)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ResultRow {
        ResultRow {
            scheme: "t".into(),
            kind: "type2".into(),
            overhead_kbps: 18.2,
            bits_per_report: 91,
            density: "1/4".into(),
            subbands: 4,
            se_sum: 1.0 / 3.0,
            se_per_ue: vec![0.1, 1.0 / 3.0 - 0.1],
            bs_gflops: 0.5,
            ue_gflops: 1e-3,
            seed: u64::MAX,
            n_samples: 7,
            n_dropped: 0,
            nmse_db: -3.0,
            valid: true,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[row()], 2).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scheme,overhead_kbps,density,subbands,se_sum,se_ue0,se_ue1,bs_gflops"));
        let back = read_results_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0].se_sum, row().se_sum);
        assert_eq!(back[0].se_per_ue, row().se_per_ue);
        assert_eq!(back[0].seed, u64::MAX);
    }

    #[test]
    fn malformed_line_is_named() {
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[row()], 2).unwrap();
        buf.extend_from_slice(b"x,1,1,1,oops,1,1,1,1,1,1,1\n");
        let err = read_results_csv(buf.as_slice()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
