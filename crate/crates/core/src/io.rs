//! CSV datasets, query files, prediction output and atomic file writes.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::latent_map::{Dataset, MixedPoint, MixedSchema};
use crate::prediction::PointPredictions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    X(usize),
    T(usize),
    Y(usize),
}

fn parse_header(header: &csv::StringRecord) -> Result<Vec<Column>> {
    let mut cols = Vec::with_capacity(header.len());
    for (c, name) in header.iter().enumerate() {
        let name = name.trim();
        let bad = |message: &str| Error::Data {
            row: 0,
            column: if name.is_empty() { format!("#{}", c + 1) } else { name.to_string() },
            message: message.to_string(),
        };
        let (kind, idx) = name.split_once('_').ok_or_else(|| bad("expected x_i, t_j or y_k"))?;
        let idx: usize = idx.parse().map_err(|_| bad("column index is not an integer"))?;
        if idx == 0 {
            return Err(bad("column indices start at 1"));
        }
        cols.push(match kind {
            "x" => Column::X(idx - 1),
            "t" => Column::T(idx - 1),
            "y" => Column::Y(idx - 1),
            _ => return Err(bad("expected x_i, t_j or y_k")),
        });
    }
    let indices = |pick: fn(&Column) -> Option<usize>| {
        let mut v: Vec<usize> = cols.iter().filter_map(pick).collect();
        v.sort_unstable();
        v
    };
    let groups = [
        indices(|c| if let Column::X(i) = c { Some(*i) } else { None }),
        indices(|c| if let Column::T(i) = c { Some(*i) } else { None }),
        indices(|c| if let Column::Y(i) = c { Some(*i) } else { None }),
    ];
    if groups.iter().any(|g| g.iter().enumerate().any(|(k, &i)| k != i)) {
        return Err(Error::Data {
            row: 0,
            column: "header".into(),
            message: "column indices must be 1..n without gaps or duplicates".into(),
        });
    }
    Ok(cols)
}

struct Table {
    p: usize,
    q: usize,
    outputs: usize,
    inputs: Vec<MixedPoint>,
    y: Vec<Vec<f64>>,
}

fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let cols = parse_header(&header)?;
    let count = |f: fn(&Column) -> bool| cols.iter().filter(|c| f(c)).count();
    let p = count(|c| matches!(c, Column::X(_)));
    let q = count(|c| matches!(c, Column::T(_)));
    let outputs = count(|c| matches!(c, Column::Y(_)));
    let mut inputs = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Data {
            row,
            column: "-".into(),
            message: e.to_string(),
        })?;
        if rec.len() != cols.len() {
            return Err(Error::Data {
                row,
                column: "-".into(),
                message: format!("expected {} fields, found {}", cols.len(), rec.len()),
            });
        }
        let mut x = vec![0.0; p];
        let mut t = vec![0; q];
        let mut yr = vec![0.0; outputs];
        for (c, field) in rec.iter().enumerate() {
            let err = |message: String| Error::Data {
                row,
                column: header[c].trim().to_string(),
                message,
            };
            match cols[c] {
                Column::X(i) | Column::Y(i) => {
                    let v: f64 = field.parse().map_err(|_| err(format!("'{field}' is not a number")))?;
                    if !v.is_finite() {
                        return Err(err(format!("'{field}' is not finite")));
                    }
                    if let Column::X(_) = cols[c] {
                        x[i] = v;
                    } else {
                        yr[i] = v;
                    }
                }
                Column::T(i) => {
                    let v: usize = field
                        .parse()
                        .map_err(|_| err(format!("'{field}' is not a positive integer level")))?;
                    if v == 0 {
                        return Err(err("levels start at 1".into()));
                    }
                    t[i] = v;
                }
            }
        }
        inputs.push(MixedPoint::new(x, t));
        y.push(yr);
    }
    if inputs.is_empty() {
        return Err(Error::Data {
            row: 1,
            column: "-".into(),
            message: "no data rows".into(),
        });
    }
    Ok(Table { p, q, outputs, inputs, y })
}

/// Reads a dataset CSV. Level counts come from `schema` when given, otherwise
/// from the largest level observed in each categorical column.
pub fn read_dataset<R: Read>(input: R, schema: Option<&MixedSchema>) -> Result<Dataset> {
    let table = read_table(input)?;
    if table.outputs == 0 {
        return Err(Error::Data {
            row: 0,
            column: "header".into(),
            message: "no y_k columns".into(),
        });
    }
    let schema = match schema {
        Some(s) => {
            if s.p != table.p || s.q() != table.q {
                return Err(Error::DimensionMismatch(format!(
                    "file has {} quantitative and {} categorical columns, schema expects {} and {}",
                    table.p,
                    table.q,
                    s.p,
                    s.q()
                )));
            }
            s.clone()
        }
        None => {
            let levels = (0..table.q)
                .map(|j| table.inputs.iter().map(|pt| pt.t[j]).max().unwrap_or(0))
                .collect();
            MixedSchema::new(table.p, levels)?
        }
    };
    let n = table.inputs.len();
    let outputs = DMatrix::from_fn(n, table.outputs, |i, o| table.y[i][o]);
    for (r, pt) in table.inputs.iter().enumerate() {
        schema.check_point(pt).map_err(|e| Error::Data {
            row: r + 1,
            column: "t".into(),
            message: e.to_string(),
        })?;
    }
    Dataset::new(schema, table.inputs, outputs)
}

pub fn read_dataset_file(path: &Path, schema: Option<&MixedSchema>) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?, schema)
}

/// Reads query points; any `y_k` columns are ignored.
pub fn read_queries<R: Read>(input: R, schema: &MixedSchema) -> Result<Vec<MixedPoint>> {
    let table = read_table(input)?;
    if table.p != schema.p || table.q != schema.q() {
        return Err(Error::DimensionMismatch(format!(
            "query file has {} quantitative and {} categorical columns, model expects {} and {}",
            table.p,
            table.q,
            schema.p,
            schema.q()
        )));
    }
    for (r, pt) in table.inputs.iter().enumerate() {
        schema.check_point(pt).map_err(|e| Error::Data {
            row: r + 1,
            column: "t".into(),
            message: e.to_string(),
        })?;
    }
    Ok(table.inputs)
}

fn input_header(schema: &MixedSchema) -> Vec<String> {
    (1..=schema.p)
        .map(|i| format!("x_{i}"))
        .chain((1..=schema.q()).map(|j| format!("t_{j}")))
        .collect()
}

fn input_fields(pt: &MixedPoint) -> impl Iterator<Item = String> + '_ {
    pt.x.iter().map(|v| v.to_string()).chain(pt.t.iter().map(|t| t.to_string()))
}

pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = input_header(&data.schema);
    header.extend((1..=data.outputs_count()).map(|k| format!("y_{k}")));
    w.write_record(&header)?;
    for (i, pt) in data.inputs.iter().enumerate() {
        let rec: Vec<String> = input_fields(pt)
            .chain(data.outputs.row(i).iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Query inputs followed by `mean_k,var_k` per output.
pub fn write_predictions<W: Write>(
    schema: &MixedSchema,
    queries: &[MixedPoint],
    pred: &PointPredictions,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = input_header(schema);
    for k in 1..=pred.mean.ncols() {
        header.push(format!("mean_{k}"));
        header.push(format!("var_{k}"));
    }
    w.write_record(&header)?;
    for (i, pt) in queries.iter().enumerate() {
        let mut rec: Vec<String> = input_fields(pt).collect();
        for k in 0..pred.mean.ncols() {
            rec.push(pred.mean[(i, k)].to_string());
            rec.push(pred.variance[(i, k)].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `path` via a temporary file in the same directory and a rename.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
