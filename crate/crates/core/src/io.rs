//! CSV files for sweep results and power diagnostics, and the `key = value`
//! configuration format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{OptimalRow, Outcome, ResultRow};

/// Rounds to 12 significant digits. The result prints and parses back to
/// itself.
pub fn quantize(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// A row type with a fixed CSV schema.
pub trait CsvRecord: Sized {
    const HEADER: &'static [&'static str];

    fn to_fields(&self) -> Result<Vec<String>>;

    fn from_fields(fields: &[&str]) -> std::result::Result<Self, String>;
}

fn number(x: f64) -> String {
    let q = quantize(x);
    if q != 0.0 && !(1e-4..1e15).contains(&q.abs()) {
        format!("{q:e}")
    } else {
        q.to_string()
    }
}

fn parse<T: std::str::FromStr>(field: &str, column: &str) -> std::result::Result<T, String> {
    field
        .trim()
        .parse()
        .map_err(|_| format!("column {column}: cannot parse '{field}'"))
}

fn check_rate(rate: f64, stderr: f64) -> Result<()> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!("refusing to write rate {rate}")));
    }
    if !(stderr >= 0.0) || !stderr.is_finite() {
        return Err(Error::Domain(format!("refusing to write stderr {stderr}")));
    }
    Ok(())
}

impl CsvRecord for ResultRow {
    const HEADER: &'static [&'static str] = &[
        "family", "K", "M", "N", "P_dB", "rate", "stderr", "trials", "seed", "status",
    ];

    fn to_fields(&self) -> Result<Vec<String>> {
        let (rate, stderr, status) = match &self.outcome {
            Outcome::Rate { mean, stderr } => {
                check_rate(*mean, *stderr)?;
                (number(*mean), number(*stderr), "ok".to_string())
            }
            Outcome::Failed(msg) => (String::new(), String::new(), format!("error: {msg}")),
        };
        Ok(vec![
            self.family.name().to_string(),
            self.k.to_string(),
            self.m.to_string(),
            self.n.to_string(),
            number(self.p_db),
            rate,
            stderr,
            self.trials.to_string(),
            self.seed.to_string(),
            status,
        ])
    }

    fn from_fields(f: &[&str]) -> std::result::Result<Self, String> {
        let outcome = match f[9] {
            "ok" => Outcome::Rate {
                mean: parse(f[5], "rate")?,
                stderr: parse(f[6], "stderr")?,
            },
            s => match s.strip_prefix("error: ") {
                Some(msg) if f[5].is_empty() && f[6].is_empty() => Outcome::Failed(msg.to_string()),
                _ => return Err(format!("column status: unexpected '{s}'")),
            },
        };
        Ok(ResultRow {
            family: f[0].parse().map_err(|e: Error| e.to_string())?,
            k: parse(f[1], "K")?,
            m: parse(f[2], "M")?,
            n: parse(f[3], "N")?,
            p_db: parse(f[4], "P_dB")?,
            outcome,
            trials: parse(f[7], "trials")?,
            seed: parse(f[8], "seed")?,
        })
    }
}

impl CsvRecord for OptimalRow {
    const HEADER: &'static [&'static str] = &["K", "N", "B_opt", "rate", "stderr", "P_dB"];

    fn to_fields(&self) -> Result<Vec<String>> {
        check_rate(self.rate, self.stderr)?;
        Ok(vec![
            self.k.to_string(),
            self.n.to_string(),
            self.b_opt.to_string(),
            number(self.rate),
            number(self.stderr),
            number(self.p_db),
        ])
    }

    fn from_fields(f: &[&str]) -> std::result::Result<Self, String> {
        Ok(OptimalRow {
            k: parse(f[0], "K")?,
            n: parse(f[1], "N")?,
            b_opt: parse(f[2], "B_opt")?,
            rate: parse(f[3], "rate")?,
            stderr: parse(f[4], "stderr")?,
            p_db: parse(f[5], "P_dB")?,
        })
    }
}

/// Levels and optimality residuals of one sub-carrier of one symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRow {
    pub symbol: usize,
    pub subcarrier: usize,
    pub eta: f64,
    /// Instantaneous rate of the whole symbol.
    pub objective: f64,
    pub feasibility: f64,
    pub slackness: f64,
    pub stationarity: f64,
    pub max_power_gap: f64,
}

impl CsvRecord for LevelRow {
    const HEADER: &'static [&'static str] = &[
        "symbol",
        "subcarrier",
        "eta",
        "objective",
        "feasibility",
        "slackness",
        "stationarity",
        "max_power_gap",
    ];

    fn to_fields(&self) -> Result<Vec<String>> {
        let mut out = vec![self.symbol.to_string(), self.subcarrier.to_string()];
        for x in [
            self.eta,
            self.objective,
            self.feasibility,
            self.slackness,
            self.stationarity,
            self.max_power_gap,
        ] {
            if !x.is_finite() {
                return Err(Error::Domain(format!("refusing to write {x}")));
            }
            out.push(number(x));
        }
        Ok(out)
    }

    fn from_fields(f: &[&str]) -> std::result::Result<Self, String> {
        Ok(LevelRow {
            symbol: parse(f[0], "symbol")?,
            subcarrier: parse(f[1], "subcarrier")?,
            eta: parse(f[2], "eta")?,
            objective: parse(f[3], "objective")?,
            feasibility: parse(f[4], "feasibility")?,
            slackness: parse(f[5], "slackness")?,
            stationarity: parse(f[6], "stationarity")?,
            max_power_gap: parse(f[7], "max_power_gap")?,
        })
    }
}

/// Multiplier and total power of one node in one symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRow {
    pub symbol: usize,
    pub node: usize,
    pub mu: f64,
    pub load: f64,
}

impl CsvRecord for NodeRow {
    const HEADER: &'static [&'static str] = &["symbol", "node", "mu", "load"];

    fn to_fields(&self) -> Result<Vec<String>> {
        if !self.mu.is_finite() || !self.load.is_finite() {
            return Err(Error::Domain(
                "refusing to write a non-finite multiplier or load".into(),
            ));
        }
        Ok(vec![
            self.symbol.to_string(),
            self.node.to_string(),
            number(self.mu),
            number(self.load),
        ])
    }

    fn from_fields(f: &[&str]) -> std::result::Result<Self, String> {
        Ok(NodeRow {
            symbol: parse(f[0], "symbol")?,
            node: parse(f[1], "node")?,
            mu: parse(f[2], "mu")?,
            load: parse(f[3], "load")?,
        })
    }
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line() as usize);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e.to_string()),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes a header line and one line per row.
pub fn write_csv_to<T: CsvRecord, W: Write>(rows: &[T], out: W) -> Result<()> {
    let fields = rows.iter().map(T::to_fields).collect::<Result<Vec<_>>>()?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(T::HEADER).map_err(csv_error)?;
    for record in fields {
        writer.write_record(&record).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_csv<T: CsvRecord>(rows: &[T], path: &Path) -> Result<()> {
    // Validate before touching the file.
    for row in rows {
        row.to_fields()?;
    }
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_csv_to(rows, file)
}

pub fn read_csv_from<T: CsvRecord, R: Read>(input: R) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    if header.iter().ne(T::HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header '{}'", T::HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<&str> = record.iter().collect();
        if fields.len() != T::HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    T::HEADER.len(),
                    fields.len()
                ),
            });
        }
        rows.push(T::from_fields(&fields).map_err(|message| Error::Parse { line, message })?);
    }
    Ok(rows)
}

pub fn read_csv<T: CsvRecord>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv_from(file)
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// skipped. Keys outside `allowed` and repeated keys are errors.
pub fn parse_config(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Parse {
                line,
                message: format!("expected 'key = value', found '{content}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !allowed.contains(&key) {
            return Err(Error::Parse {
                line,
                message: format!("unknown key '{key}'"),
            });
        }
        if value.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("missing value for '{key}'"),
            });
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("'{key}' given twice"),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::RateFamily;
    use proptest::prelude::*;

    fn row(mean: f64) -> ResultRow {
        ResultRow {
            family: RateFamily::SfaAvg,
            k: 16,
            m: 4,
            n: 8,
            p_db: 10.0,
            outcome: Outcome::Rate {
                mean,
                stderr: 0.001,
            },
            trials: 1000,
            seed: 7,
        }
    }

    fn to_string<T: CsvRecord>(rows: &[T]) -> String {
        let mut buf = Vec::new();
        write_csv_to(rows, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(1.0), 1.0);
        assert_eq!(quantize(0.1234567890123456), 0.123456789012);
        assert_eq!(quantize(123456789.0123456), 123456789.012);
        assert_eq!(quantize(0.0), 0.0);
        assert!(quantize(f64::NAN).is_nan());
    }

    #[test]
    fn empty_file_is_header_only() {
        assert_eq!(
            to_string::<ResultRow>(&[]),
            "family,K,M,N,P_dB,rate,stderr,trials,seed,status\n"
        );
        assert_eq!(
            read_csv_from::<ResultRow, _>(
                "family,K,M,N,P_dB,rate,stderr,trials,seed,status\n".as_bytes()
            )
            .unwrap(),
            vec![]
        );
    }

    #[test]
    fn result_rows_format() {
        let failed = ResultRow {
            outcome: Outcome::Failed("M = 3 does not divide K = 10, so B is fractional".into()),
            ..row(0.0)
        };
        let text = to_string(&[row(0.5), failed.clone()]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "sfa-avg,16,4,8,10,0.5,0.001,1000,7,ok");
        assert!(lines[2].starts_with("sfa-avg,16,4,8,10,,,1000,7,\"error: M = 3"));
        assert_eq!(
            read_csv_from::<ResultRow, _>(text.as_bytes()).unwrap(),
            vec![row(0.5), failed]
        );
    }

    #[test]
    fn bad_rates_are_rejected() {
        let mut buf = Vec::new();
        assert!(write_csv_to(&[row(f64::NAN)], &mut buf).is_err());
        assert!(write_csv_to(&[row(-0.1)], &mut buf).is_err());
        assert!(buf.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        assert!(write_csv(&[row(f64::NAN)], &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "family,K,M,N,P_dB,rate,stderr,trials,seed,status\nsfa-avg,16,4,8,10,0.5,0.001,1000,7,ok\nsfa-avg,x,4,8,10,0.5,0.001,1000,7,ok\n";
        match read_csv_from::<ResultRow, _>(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("K"));
            }
            other => panic!("{other:?}"),
        }
        let short = "family,K,M,N,P_dB,rate,stderr,trials,seed,status\nsfa-avg,16\n";
        assert!(matches!(
            read_csv_from::<ResultRow, _>(short.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_csv_from::<ResultRow, _>("a,b\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_csv_from::<ResultRow, _>("".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn diagnostic_rows_round_trip() {
        let levels = vec![LevelRow {
            symbol: 0,
            subcarrier: 2,
            eta: 1.5,
            objective: 0.25,
            feasibility: 0.0,
            slackness: 1e-12,
            stationarity: 3.25e-17,
            max_power_gap: 0.0,
        }];
        let nodes = vec![NodeRow {
            symbol: 1,
            node: 3,
            mu: 0.75,
            load: 10.0,
        }];
        assert_eq!(
            read_csv_from::<LevelRow, _>(to_string(&levels).as_bytes()).unwrap(),
            levels
        );
        assert_eq!(
            read_csv_from::<NodeRow, _>(to_string(&nodes).as_bytes()).unwrap(),
            nodes
        );
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            read_csv::<ResultRow>(Path::new("/nonexistent/x.csv")),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn config_parsing() {
        let text = "# sweep\nk = 16\n\nsnr-db=10 # dB\n";
        let map = parse_config(text, &["k", "snr-db"]).unwrap();
        assert_eq!(map["k"], "16");
        assert_eq!(map["snr-db"], "10");
        assert!(matches!(
            parse_config("k = 1\nq = 2", &["k"]),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("k 1", &["k"]),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("k = 1\nk = 2", &["k"]),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("k =", &["k"]),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn quantized_values_round_trip(x in 0.0f64..1e6, e in 0.0f64..1.0) {
            let r = ResultRow { outcome: Outcome::Rate { mean: quantize(x), stderr: quantize(e) }, ..row(0.0) };
            let back = read_csv_from::<ResultRow, _>(to_string(std::slice::from_ref(&r)).as_bytes()).unwrap();
            prop_assert_eq!(back, vec![r]);
        }

        #[test]
        fn quantize_is_idempotent_and_close(x in -1e12f64..1e12) {
            let q = quantize(x);
            prop_assert_eq!(quantize(q), q);
            prop_assert!((q - x).abs() <= 5e-12 * x.abs());
        }
    }
}
