//! CSV ingestion of external data and CSV/JSON serialization of results.
//!
//! Input files are strict: a header row is mandatory, every data row has the
//! header's width, and every cell must parse as a finite real with no
//! surrounding whitespace.
//!
//! * labeled file: `y,x1,...,xd`
//! * test file: `x1,...,xd`, or `y,x1,...,xd` when responses are known
//! * precomputed file: `y,mu_hat,t_score` (the `y` column is optional for
//!   test units)
//!
//! Result CSV: a `rep,method,fcp,avg_length,n_selected,infinite_flag` table,
//! a blank line, then a summary table. Reals are written with 17 significant
//! digits (`{:.16e}`); an empty `avg_length` cell means no finite length.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, ScopError};
use crate::intervals::PredictionInterval;
use crate::predictors::{Dataset, ScoredUnit};
use crate::simulate::{ExperimentResult, ExternalData, Prepared, SweepPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Header and numeric rows of a strict CSV file.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn io_err(path: &Path, source: std::io::Error) -> ScopError {
    ScopError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let csv_err = |row: usize, column: usize, message: String| ScopError::Csv {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let mut records = reader.records();
    let header: Vec<String> = match records.next() {
        Some(rec) => rec
            .map_err(|e| csv_err(1, 0, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect(),
        None => {
            return Err(ScopError::Data {
                path: path.to_path_buf(),
                message: "file is empty; a header row is required".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let row_no = i + 2;
        let rec = rec.map_err(|e| csv_err(row_no, 0, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(csv_err(
                row_no,
                rec.len().min(header.len()) + 1,
                format!("expected {} cells, found {}", header.len(), rec.len()),
            ));
        }
        let values = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(csv_err(row_no, c + 1, format!("'{cell}' is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    Ok(Table { header, rows })
}

fn data_err(path: &Path, message: impl Into<String>) -> ScopError {
    ScopError::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn split_response(path: &Path, table: Table, required: bool) -> Result<Dataset> {
    let has_y = table.header.first().is_some_and(|h| h == "y");
    if required && !has_y {
        return Err(data_err(path, "first column must be 'y'"));
    }
    let width = table.header.len() - usize::from(has_y);
    if width == 0 {
        return Err(data_err(path, "no feature columns"));
    }
    if table.rows.is_empty() {
        return Err(data_err(path, "no data rows"));
    }
    let (y, rows): (Vec<f64>, Vec<Vec<f64>>) = if has_y {
        table.rows.into_iter().map(|mut r| (r.remove(0), r)).unzip()
    } else {
        (Vec::new(), table.rows)
    };
    let ds = if has_y { Dataset::labeled(rows, y) } else { Dataset::unlabeled(rows) };
    ds.map_err(|e| data_err(path, e.to_string()))
}

/// Labeled file `y,x1,...,xd`.
pub fn load_labeled(path: &Path) -> Result<Dataset> {
    split_response(path, read_table(path)?, true)
}

/// Test file, with or without a leading `y` column.
pub fn load_test(path: &Path) -> Result<Dataset> {
    split_response(path, read_table(path)?, false)
}

/// Precomputed units: columns `y,mu_hat,t_score` or `mu_hat,t_score`.
pub fn load_precomputed(path: &Path) -> Result<Vec<ScoredUnit>> {
    let table = read_table(path)?;
    let names: Vec<&str> = table.header.iter().map(String::as_str).collect();
    let has_y = match names.as_slice() {
        ["y", "mu_hat", "t_score"] => true,
        ["mu_hat", "t_score"] => false,
        _ => return Err(data_err(path, "precomputed header must be 'y,mu_hat,t_score' or 'mu_hat,t_score'")),
    };
    Ok(table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if has_y {
                ScoredUnit::new(i, r[1], r[2], Some(r[0]))
            } else {
                ScoredUnit::new(i, r[0], r[1], None)
            }
        })
        .collect())
}

/// Both input files of a `run-csv` invocation.
pub fn load_csv(labeled: &Path, test: &Path, precomputed: bool) -> Result<ExternalData> {
    if precomputed {
        let cal = load_precomputed(labeled)?;
        if cal.iter().any(|u| u.response.is_none()) {
            return Err(data_err(labeled, "calibration units need a 'y' column"));
        }
        if cal.is_empty() {
            return Err(data_err(labeled, "no data rows"));
        }
        let test_units = load_precomputed(test)?;
        if test_units.is_empty() {
            return Err(data_err(test, "no data rows"));
        }
        return Ok(ExternalData::Precomputed { cal, test: test_units });
    }
    let labeled_ds = load_labeled(labeled)?;
    let test_ds = load_test(test)?;
    if labeled_ds.dim() != test_ds.dim() {
        return Err(data_err(
            test,
            format!("{} feature columns, but the labeled file has {}", test_ds.dim(), labeled_ds.dim()),
        ));
    }
    Ok(ExternalData::Raw {
        labeled: labeled_ds,
        test: test_ds,
    })
}

/// 17 significant digits; round-trips every finite `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

const RECORD_COLUMNS: [&str; 6] = ["rep", "method", "fcp", "avg_length", "n_selected", "infinite_flag"];
const SUMMARY_COLUMNS: [&str; 11] = [
    "method",
    "reps",
    "failed_reps",
    "fcr",
    "fcr_se",
    "fcr_percent",
    "mean_length",
    "infinite_reps",
    "empty_reps",
    "mean_selected",
    "selection_fdr",
];

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().flexible(true).from_writer(w)
}

fn csv_io(path: &Path, e: csv::Error) -> ScopError {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    };
    io_err(path, source)
}

fn write_blocks<W: Write>(wtr: &mut csv::Writer<W>, prefix: &[String], result: &ExperimentResult, with_header: bool) -> csv::Result<()> {
    let pre = |cols: &[&str]| -> Vec<String> {
        prefix.iter().cloned().chain(cols.iter().map(|s| s.to_string())).collect()
    };
    if with_header {
        wtr.write_record(pre(&RECORD_COLUMNS))?;
    }
    for rec in &result.records {
        for m in &rec.methods {
            wtr.write_record(pre(&[
                &rec.rep.to_string(),
                m.method.as_str(),
                &fmt_real(m.coverage.fcp),
                &fmt_opt(m.coverage.avg_length),
                &m.coverage.n_selected.to_string(),
                &u8::from(m.coverage.infinite).to_string(),
            ]))?;
        }
    }
    Ok(())
}

fn write_summary<W: Write>(wtr: &mut csv::Writer<W>, prefix: &[String], result: &ExperimentResult, with_header: bool) -> csv::Result<()> {
    let pre = |cols: Vec<String>| -> Vec<String> { prefix.iter().cloned().chain(cols).collect() };
    if with_header {
        wtr.write_record(pre(SUMMARY_COLUMNS.map(String::from).to_vec()))?;
    }
    for s in &result.summaries {
        wtr.write_record(pre(vec![
            s.method.to_string(),
            s.reps.to_string(),
            result.failed.len().to_string(),
            fmt_real(s.fcr),
            fmt_opt(s.fcr_se),
            format!("{:.2}", 100.0 * s.fcr),
            fmt_opt(s.mean_length),
            s.infinite_reps.to_string(),
            s.empty_reps.to_string(),
            fmt_real(s.mean_selected),
            fmt_opt(result.selection_fdr),
        ]))?;
    }
    Ok(())
}

/// Serialize one experiment.
pub fn write_result<W: Write>(w: W, result: &ExperimentResult, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(w, result),
        Format::Csv => two_tables(
            w,
            |wtr| write_blocks(wtr, &[], result, true),
            |wtr| write_summary(wtr, &[], result, true),
        ),
    }
}

/// Serialize a sweep; CSV rows are prefixed with `point,label`.
pub fn write_sweep<W: Write>(w: W, points: &[SweepPoint], format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(w, &points),
        Format::Csv => {
            let head = |p: &SweepPoint| vec![p.index.to_string(), p.label.clone()];
            let named = ["point", "label"];
            two_tables(
                w,
                |wtr| {
                    wtr.write_record(named.iter().chain(&RECORD_COLUMNS))?;
                    points.iter().try_for_each(|p| write_blocks(wtr, &head(p), &p.result, false))
                },
                |wtr| {
                    wtr.write_record(named.iter().chain(&SUMMARY_COLUMNS))?;
                    points.iter().try_for_each(|p| write_summary(wtr, &head(p), &p.result, false))
                },
            )
        }
    }
}

/// Two CSV tables separated by a blank line.
fn two_tables<W: Write, F, G>(mut w: W, first: F, second: G) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut W>) -> csv::Result<()>,
    G: FnOnce(&mut csv::Writer<&mut W>) -> csv::Result<()>,
{
    let path = PathBuf::from("<output>");
    let mut wtr = csv_writer(&mut w);
    first(&mut wtr).map_err(|e| csv_io(&path, e))?;
    wtr.flush().map_err(|e| io_err(&path, e))?;
    drop(wtr);
    w.write_all(b"\n").map_err(|e| io_err(&path, e))?;
    let mut wtr = csv_writer(&mut w);
    second(&mut wtr).map_err(|e| csv_io(&path, e))?;
    wtr.flush().map_err(|e| io_err(&path, e))
}

/// Per-unit intervals when test responses are unknown. JSON writes infinite
/// bounds as `null`.
pub fn write_intervals<W: Write>(w: W, intervals: &[PredictionInterval], format: Format) -> Result<()> {
    let path = PathBuf::from("<output>");
    match format {
        Format::Json => write_json(w, &intervals),
        Format::Csv => {
            let mut wtr = csv_writer(w);
            let run = |wtr: &mut csv::Writer<W>| -> csv::Result<()> {
                wtr.write_record(["unit", "method", "score", "lo", "hi"])?;
                for iv in intervals {
                    wtr.write_record([
                        iv.unit.to_string(),
                        iv.method.to_string(),
                        iv.score_kind.to_string(),
                        fmt_real(iv.lo),
                        fmt_real(iv.hi),
                    ])?;
                }
                Ok(())
            };
            run(&mut wtr).map_err(|e| csv_io(&path, e))?;
            wtr.flush().map_err(|e| io_err(&path, e))
        }
    }
}

fn write_json<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> Result<()> {
    let path = PathBuf::from("<output>");
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(&path, std::io::Error::other(e)))?;
    writeln!(w).map_err(|e| io_err(&path, e))
}

/// Write `labeled.csv` (training rows, then calibration rows) and
/// `test.csv` into `dir`, in the layout read by [`load_csv`].
pub fn dump_datasets(dir: &Path, train: &Dataset, cal: &Dataset, test: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, parts) in [("labeled.csv", vec![train, cal]), ("test.csv", vec![test])] {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut wtr = csv_writer(BufWriter::new(file));
        let run = |wtr: &mut csv::Writer<BufWriter<File>>| -> csv::Result<()> {
            let labeled = parts.iter().all(|d| d.is_labeled());
            let dim = parts[0].dim();
            let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
            if labeled {
                header.insert(0, "y".into());
            }
            wtr.write_record(&header)?;
            for d in &parts {
                for (i, x) in d.rows().enumerate() {
                    let y = d.responses().map(|y| fmt_real(y[i]));
                    wtr.write_record(y.into_iter().chain(x.iter().map(|&v| fmt_real(v))))?;
                }
            }
            wtr.flush()?;
            Ok(())
        };
        run(&mut wtr).map_err(|e| csv_io(&path, e))?;
    }
    Ok(())
}

/// Write `cal_units.csv` and `test_units.csv` in the precomputed format
/// into `dir`.
pub fn dump_units(dir: &Path, prepared: &Prepared) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, units) in [("cal_units.csv", &prepared.cal), ("test_units.csv", &prepared.test)] {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut wtr = csv_writer(BufWriter::new(file));
        let labeled = units.iter().all(|u| u.response.is_some());
        let run = |wtr: &mut csv::Writer<BufWriter<File>>| -> csv::Result<()> {
            if labeled {
                wtr.write_record(["y", "mu_hat", "t_score"])?;
            } else {
                wtr.write_record(["mu_hat", "t_score"])?;
            }
            for u in units {
                let mut row = Vec::with_capacity(3);
                if labeled {
                    row.push(fmt_real(u.response.expect("labeled")));
                }
                row.push(fmt_real(u.mu_hat));
                row.push(fmt_real(u.t_score));
                wtr.write_record(row)?;
            }
            wtr.flush()?;
            Ok(())
        };
        run(&mut wtr).map_err(|e| csv_io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn labeled_three_rows() {
        let f = file_with("y,x1\n1,2\n3,4\n5,6\n");
        let ds = load_labeled(f.path()).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 1));
        assert_eq!(ds.responses().unwrap(), &[1.0, 3.0, 5.0]);
        assert_eq!(ds.row(2), &[6.0]);
    }

    #[test]
    fn strict_parse_errors_name_row_and_column() {
        let f = file_with("y,x1\n1,2\n3,abc\n");
        match load_labeled(f.path()) {
            Err(ScopError::Csv { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        let f = file_with("y,x1\n1,2\n3\n");
        assert!(matches!(load_labeled(f.path()), Err(ScopError::Csv { row: 3, .. })));
        let f = file_with("y,x1\n1, 2\n");
        assert!(load_labeled(f.path()).is_err());
        let f = file_with("y,x1\n1,NaN\n");
        assert!(load_labeled(f.path()).is_err());
        let f = file_with("x1,y\n1,2\n");
        assert!(matches!(load_labeled(f.path()), Err(ScopError::Data { .. })));
        let f = file_with("");
        assert!(load_labeled(f.path()).is_err());
        assert!(matches!(load_labeled(Path::new("/nonexistent/file.csv")), Err(ScopError::Io { .. })));
    }

    #[test]
    fn test_file_with_and_without_responses() {
        let f = file_with("x1,x2\n1,2\n");
        assert!(!load_test(f.path()).unwrap().is_labeled());
        let f = file_with("y,x1,x2\n0,1,2\n");
        assert!(load_test(f.path()).unwrap().is_labeled());
    }

    #[test]
    fn precomputed_units() {
        let f = file_with("y,mu_hat,t_score\n1.5,1,0.25\n");
        let u = load_precomputed(f.path()).unwrap();
        assert_eq!(u[0].response, Some(1.5));
        assert_eq!(u[0].mu_hat, 1.0);
        assert_eq!(u[0].t_score, 0.25);
        assert_eq!(u[0].residual_score, Some(0.5));
        let f = file_with("mu_hat,y,t_score\n1,2,3\n");
        assert!(load_precomputed(f.path()).is_err());
    }

    #[test]
    fn real_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, f64::MIN_POSITIVE, 9.760000000000001] {
            assert_eq!(fmt_real(x).parse::<f64>().unwrap(), x);
        }
    }
}
