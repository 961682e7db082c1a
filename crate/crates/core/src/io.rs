//! CSV ingestion and output, TOML configuration, and JSON emission with
//! 17 significant digits for every floating-point value.
//!
//! Input schema: `cluster_id,y,u,x1..xp,z1..zq`. Rows of a cluster need not
//! be contiguous; clusters keep the order of their first row.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::data::{Cluster, ClusterDataset, Observation};
use crate::error::{Error, Result};
use crate::inference::{BandResult, TestResult};
use crate::local::CoefficientCurves;
use crate::pipeline::AnalysisReport;

/// `v` with 17 significant digits; parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

struct Header {
    p: usize,
    q: usize,
}

fn parse_header(header: &csv::StringRecord) -> Result<Header> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 4 || cols[0] != "cluster_id" || cols[1] != "y" || cols[2] != "u" {
        return Err(Error::Schema(format!(
            "header must start with cluster_id,y,u,x1 (got {:?})",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let rest = &cols[3..];
    let p = rest.iter().take_while(|c| c.starts_with('x')).count();
    let q = rest.len() - p;
    for (i, c) in rest[..p].iter().enumerate() {
        if *c != format!("x{}", i + 1) {
            return Err(Error::Schema(format!("expected column x{}, found {c}", i + 1)));
        }
    }
    for (i, c) in rest[p..].iter().enumerate() {
        if *c != format!("z{}", i + 1) {
            return Err(Error::Schema(format!("expected column z{}, found {c}", i + 1)));
        }
    }
    if p == 0 {
        return Err(Error::Schema("at least one column x1 is required".into()));
    }
    Ok(Header { p, q })
}

/// Reads a dataset from CSV text. Row numbers in errors are file line
/// numbers (the header is line 1).
pub fn read_csv(reader: impl Read) -> Result<ClusterDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let Header { p, q } = parse_header(&header)?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut clusters: Vec<Cluster> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |pos| pos.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |pos| pos.line() as usize);
        if record.len() != 3 + p + q {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", 3 + p + q, record.len()),
            });
        }
        let num = |col: usize| -> Result<f64> {
            record[col].parse::<f64>().map_err(|e| Error::Parse {
                row,
                message: format!("column {}: {e} ({:?})", &header[col], &record[col]),
            })
        };
        let id = record[0].to_string();
        let y = num(1)?;
        let u = num(2)?;
        let x = (0..p).map(|j| num(3 + j)).collect::<Result<Vec<_>>>()?;
        let z = (0..q).map(|k| num(3 + p + k)).collect::<Result<Vec<_>>>()?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            clusters.push(Cluster::new(id.clone(), z.clone(), Vec::new()));
            clusters.len() - 1
        });
        let cluster = &mut clusters[slot];
        for (k, (a, b)) in cluster.z.iter().zip(&z).enumerate() {
            if a.to_bits() != b.to_bits() {
                return Err(Error::InconsistentClusterCovariate {
                    cluster: id,
                    column: format!("z{}", k + 1),
                    first: *a,
                    other: *b,
                });
            }
        }
        cluster.obs.push(Observation { y, u, x });
    }
    ClusterDataset::new(clusters)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<ClusterDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(io::BufReader::new(file))
}

/// Writes `data` in the input schema, cluster by cluster.
pub fn write_dataset(data: &ClusterDataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster_id".to_string(), "y".into(), "u".into()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    header.extend((1..=data.q()).map(|k| format!("z{k}")));
    w.write_record(&header).map_err(csv_error)?;
    for c in data.clusters() {
        for o in &c.obs {
            let mut row = vec![c.id.clone(), fmt_f64(o.y), fmt_f64(o.u)];
            row.extend(o.x.iter().map(|v| fmt_f64(*v)));
            row.extend(c.z.iter().map(|v| fmt_f64(*v)));
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

pub fn write_csv(data: &ClusterDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(data, io::BufWriter::new(file))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io("<csv writer>", e),
        other => Error::Schema(format!("{other:?}")),
    }
}

/// Pretty JSON whose numbers carry 17 significant digits.
struct Digits17(PrettyFormatter<'static>);

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Schema(format!("json serialization: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(value)?).map_err(|e| Error::io(path, e))
}

/// Parses a TOML document; unknown keys are rejected by the target types.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn load_config<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv writer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

pub const CURVE_COLUMNS: [&str; 8] = [
    "coefficient",
    "u",
    "estimate",
    "bias",
    "center",
    "se",
    "band_lo",
    "band_hi",
];

/// Plot-ready band data, one row per coefficient and grid point.
pub fn curves_csv(bands: &[BandResult]) -> Result<String> {
    let rows = bands.iter().flat_map(|b| {
        let (lo, hi) = (b.lower(), b.upper());
        (0..b.u.len()).map(move |g| {
            vec![
                b.coefficient.to_string(),
                fmt_f64(b.u[g]),
                fmt_f64(b.estimate[g]),
                fmt_f64(b.bias[g]),
                fmt_f64(b.center[g]),
                fmt_f64(b.se[g]),
                fmt_f64(lo[g]),
                fmt_f64(hi[g]),
            ]
        })
    });
    csv_text(&CURVE_COLUMNS, rows)
}

/// Point estimates of every coefficient on the evaluation grid.
pub fn estimates_csv(curves: &CoefficientCurves) -> Result<String> {
    let rows = curves.layout.ids().into_iter().enumerate().flat_map(|(i, id)| {
        curves
            .grid
            .iter()
            .zip(&curves.fits)
            .map(move |(u, f)| vec![id.to_string(), fmt_f64(*u), fmt_f64(f.theta[i])])
    });
    csv_text(&["coefficient", "u", "estimate"], rows)
}

pub const TEST_COLUMNS: [&str; 10] = [
    "coefficient",
    "null",
    "constant",
    "statistic",
    "sup_deviation",
    "sup_u",
    "omega_n",
    "critical_value",
    "p_value",
    "reject",
];

pub fn tests_csv(tests: &[TestResult]) -> Result<String> {
    let rows = tests.iter().map(|t| {
        vec![
            t.coefficient.to_string(),
            serde_json::to_value(t.null)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            t.constant.map(fmt_f64).unwrap_or_default(),
            fmt_f64(t.statistic),
            fmt_f64(t.sup_deviation),
            fmt_f64(t.sup_u),
            fmt_f64(t.omega_n),
            fmt_f64(t.critical_value),
            fmt_f64(t.p_value),
            t.reject.to_string(),
        ]
    });
    csv_text(&TEST_COLUMNS, rows)
}

/// Writes `text` to `dir/name` and returns the path.
pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Emits `results.json`, `curves.csv`, `varcomp.json` and `tests.csv`.
pub fn write_results(report: &AnalysisReport, outdir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = outdir.as_ref();
    ensure_dir(dir)?;
    Ok(vec![
        write_file(dir, "results.json", &to_json(report)?)?,
        write_file(dir, "curves.csv", &curves_csv(&report.bands)?)?,
        write_file(dir, "varcomp.json", &to_json(&report.variance_components)?)?,
        write_file(dir, "tests.csv", &tests_csv(&report.tests)?)?,
    ])
}
