use std::io::Write;
use std::path::Path;

use atme_core::{bind_dataset, BindOptions, Bound, Column, ColumnTable, Roles};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{CliError, CliResult};

const MISSING: [&str; 4] = ["", "NA", "NaN", "nan"];

/// Reads a comma-separated file with a header row and binds the role
/// columns. Columns not named in `roles` are ignored and never parsed.
pub fn read_csv(path: &Path, roles: &Roles, opts: BindOptions) -> CliResult<Bound> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();

    let mut wanted: Vec<(&str, bool)> = vec![
        (&roles.outcome, true),
        (&roles.treatment, true),
        (&roles.moderator, true),
    ];
    wanted.extend(roles.covariates.iter().map(|c| (c.as_str(), true)));
    if let Some(c) = &roles.cluster {
        wanted.push((c, false));
    }
    let mut index = Vec::with_capacity(wanted.len());
    for &(name, _) in &wanted {
        let hits: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| *h == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [] => return Err(atme_core::Error::MissingColumn(name.to_string()).into()),
            [i] => index.push(*i),
            _ => {
                return Err(CliError::Data(format!(
                    "{}: column `{name}` appears more than once",
                    path.display()
                )))
            }
        }
    }

    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut labels: Vec<String> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for (slot, (&(name, is_real), &col)) in wanted.iter().zip(&index).enumerate() {
            let cell = record.get(col).unwrap_or("");
            if !is_real {
                labels.push(cell.to_string());
            } else if MISSING.contains(&cell) {
                numeric[slot].push(f64::NAN);
            } else {
                let v = cell.parse::<f64>().map_err(|_| {
                    CliError::Data(format!(
                        "{}: cannot parse `{cell}` as a number at row {}, column `{name}` (line {})",
                        path.display(),
                        row + 1,
                        row + 2
                    ))
                })?;
                numeric[slot].push(v);
            }
        }
    }

    let mut table = ColumnTable::new();
    for (slot, &(name, is_real)) in wanted.iter().enumerate() {
        if is_real {
            table.insert(name, Column::Real(std::mem::take(&mut numeric[slot])));
        } else {
            table.insert(name, Column::Label(std::mem::take(&mut labels)));
        }
    }
    Ok(bind_dataset(&table, roles, opts)?)
}

/// `%.17g`: 17 significant digits, enough to read back the identical `f64`.
pub fn fmt_g17(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        // "-0" would read back as the integer zero in JSON
        return if v.is_sign_negative() {
            "-0.0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let trim = |s: &str| s.trim_end_matches('0').to_string();
    if !(-4..17).contains(&exp) {
        let frac = trim(&digits[1..]);
        let dot = if frac.is_empty() { "" } else { "." };
        return format!("{sign}{}{dot}{frac}e{exp}", &digits[..1]);
    }
    let (int, frac) = if exp >= 0 {
        let split = exp as usize + 1;
        (digits[..split].to_string(), trim(&digits[split..]))
    } else {
        (
            "0".to_string(),
            trim(&format!("{}{digits}", "0".repeat((-exp - 1) as usize))),
        )
    };
    if frac.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}

/// Pretty JSON whose floats use [`fmt_g17`].
struct G17<'a>(PrettyFormatter<'a>);

macro_rules! forward {
    ($($name:ident $(, $arg:ident: $ty:ty)?;)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)?) -> std::io::Result<()> {
            self.0.$name(w $(, $arg)?)
        })*
    };
}

impl Formatter for G17<'_> {
    forward! {
        begin_array;
        end_array;
        begin_array_value, first: bool;
        end_array_value;
        begin_object;
        end_object;
        begin_object_key, first: bool;
        end_object_key;
        begin_object_value;
        end_object_value;
    }

    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(fmt_g17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        w.write_all(fmt_g17(f64::from(value)).as_bytes())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, G17(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser).expect("reports serialize");
    out.push(b'\n');
    out
}

/// Writes rows of preformatted cells.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn cell(v: f64) -> String {
    fmt_g17(v)
}

pub fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_g17).unwrap_or_default()
}

/// Writes to `path`, or to standard output when `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io("<stdout>", e))
        }
    }
}
