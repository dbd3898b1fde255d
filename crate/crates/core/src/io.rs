//! Dataset CSV (`x1,...,xp,y,tau,censored[,y_star]`, intercept added on load),
//! daily `date,count` series and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use crate::datagen::CensoredDataset;
use crate::error::{Error, Result};
use crate::losses::Side;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn dataset_to_csv(ds: &CensoredDataset) -> Result<String> {
    ds.validate()?;
    let p = ds.n_covariates().saturating_sub(1);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.extend(["y", "tau", "censored"].map(String::from));
    if ds.y_star.is_some() {
        header.push("y_star".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x[i][1..].iter().map(f64::to_string).collect();
        rec.push(ds.y[i].to_string());
        rec.push(ds.tau[i].to_string());
        rec.push(if ds.censored[i] { "1" } else { "0" }.into());
        if let Some(ys) = &ds.y_star {
            rec.push(ys[i].to_string());
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_f64(field: &str, location: impl Fn() -> String) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        location: location(),
        message: format!("`{field}` is not a number: {e}"),
    })
}

/// Parses a dataset CSV; the censoring side is not stored in the file.
pub fn dataset_from_csv(text: &str, side: Side) -> Result<CensoredDataset> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let has_star = header.last().is_some_and(|h| h == "y_star");
    let tail = if has_star { 4 } else { 3 };
    if header.len() < tail {
        return Err(Error::Parse {
            location: "header".into(),
            message: format!("expected x1..xp,y,tau,censored[,y_star], got {header:?}"),
        });
    }
    let p = header.len() - tail;
    for (j, h) in header[..p].iter().enumerate() {
        if *h != format!("x{}", j + 1) {
            return Err(Error::Parse {
                location: "header".into(),
                message: format!("column {} should be `x{}`, found `{h}`", j + 1, j + 1),
            });
        }
    }
    if header[p..p + 3] != ["y", "tau", "censored"] {
        return Err(Error::Parse {
            location: "header".into(),
            message: format!(
                "expected y,tau,censored after the covariates, found {:?}",
                &header[p..p + 3]
            ),
        });
    }
    let mut ds = CensoredDataset {
        x: Vec::new(),
        y: Vec::new(),
        tau: Vec::new(),
        censored: Vec::new(),
        y_star: has_star.then(Vec::new),
        latent_quantiles: None,
        side,
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let loc = |col: usize| move || format!("line {line}, column {}", col + 1);
        let mut row = Vec::with_capacity(p + 1);
        row.push(1.0);
        for j in 0..p {
            row.push(parse_f64(&rec[j], loc(j))?);
        }
        ds.x.push(row);
        ds.y.push(parse_f64(&rec[p], loc(p))?);
        ds.tau.push(parse_f64(&rec[p + 1], loc(p + 1))?);
        ds.censored.push(match rec[p + 2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    location: loc(p + 2)(),
                    message: format!("censored flag must be 0 or 1, found `{other}`"),
                })
            }
        });
        if let Some(ys) = &mut ds.y_star {
            ys.push(parse_f64(&rec[p + 3], loc(p + 3))?);
        }
    }
    if ds.is_empty() {
        return Err(Error::Parse {
            location: "body".into(),
            message: "dataset has no rows".into(),
        });
    }
    ds.validate()?;
    Ok(ds)
}

pub fn read_dataset(path: &Path, side: Side) -> Result<CensoredDataset> {
    dataset_from_csv(&read_to_string(path)?, side)
}

/// Parses a `date,count` daily series. Dates must be ISO-8601 and
/// consecutive; counts nonnegative.
pub fn series_from_csv(text: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["date", "count"] {
        return Err(Error::Parse {
            location: "header".into(),
            message: format!("expected `date,count`, found {header:?}"),
        });
    }
    let mut out = Vec::new();
    let mut last: Option<NaiveDate> = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let date =
            NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
                location: format!("line {line}"),
                message: format!("bad date `{}`: {e}", &rec[0]),
            })?;
        if let Some(prev) = last {
            if prev.succ_opt() != Some(date) {
                return Err(Error::Parse {
                    location: format!("line {line}"),
                    message: format!(
                        "date {date} does not follow {prev}; gaps and reordering are rejected"
                    ),
                });
            }
        }
        last = Some(date);
        let c = parse_f64(&rec[1], || format!("line {line}"))?;
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Parse {
                location: format!("line {line}"),
                message: format!("count must be a nonnegative number, found {c}"),
            });
        }
        out.push(c);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            location: "body".into(),
            message: "series has no rows".into(),
        });
    }
    Ok(out)
}

pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    series_from_csv(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{censor_partial, gen_synthetic, Noise, SyntheticSpec};

    #[test]
    fn dataset_round_trip() {
        let mut ds = gen_synthetic(&SyntheticSpec::new(Noise::Heteroskedastic, 50, 3)).unwrap();
        let text = dataset_to_csv(&ds).unwrap();
        assert!(text.starts_with("x1,x2,y,tau,censored,y_star\n"));
        let back = dataset_from_csv(&text, Side::Left).unwrap();
        ds.latent_quantiles = None;
        assert_eq!(back, ds);
    }

    #[test]
    fn open_thresholds_round_trip() {
        let ds = censor_partial(&[3.0, 4.0, 5.0, 6.0], 0.5, 0.2, 0.4, 1).unwrap();
        let back = dataset_from_csv(&dataset_to_csv(&ds).unwrap(), Side::Right).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(matches!(
            dataset_from_csv("x1,y,tau,censored\n1,2,0,2\n", Side::Left),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            dataset_from_csv("x1,y,tau,censored\n1,abc,0,0\n", Side::Left),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            dataset_from_csv("a,y,tau,censored\n1,1,0,0\n", Side::Left),
            Err(Error::Parse { .. })
        ));
        // censored row off its threshold
        assert!(matches!(
            dataset_from_csv("x1,y,tau,censored\n1,1,0,1\n", Side::Left),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn series_ingest() {
        let ok = "date,count\n2024-02-28,3\n2024-02-29,4\n2024-03-01,0\n";
        assert_eq!(series_from_csv(ok).unwrap(), vec![3.0, 4.0, 0.0]);
        let gap = "date,count\n2024-01-01,3\n2024-01-03,4\n";
        assert!(matches!(series_from_csv(gap), Err(Error::Parse { .. })));
        let neg = "date,count\n2024-01-01,-3\n";
        assert!(matches!(series_from_csv(neg), Err(Error::Parse { .. })));
        assert!(matches!(
            series_from_csv("day,count\n2024-01-01,1\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
