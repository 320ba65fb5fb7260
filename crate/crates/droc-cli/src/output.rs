//! Artifact emission and parsing.
//!
//! Everything lands in one output directory per run. All CSVs are RFC-4180
//! (CRLF row endings, header row always present, rectangular rows); all
//! files are written atomically (temp file in the target directory, then
//! rename) so a crashed run never leaves a half-written artifact. The run
//! manifest records the config hash and effective seed but no timestamps,
//! so identical inputs reproduce bit-identical output trees.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use droc_core::control::{ControlBox, ControlGrid};
use droc_core::outer::TraceRow;

use crate::CliError;

/// Write `bytes` to `dir/name` atomically; returns the final path.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("cannot create temp file in {}", dir.display()), e))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}", path.display()), e))?;
    tmp.persist(&path)
        .map_err(|e| CliError::Io(format!("cannot persist {}", path.display()), e.error))?;
    Ok(path)
}

/// RFC-4180 CSV accumulator. Fields here are numeric or simple labels, so
/// quoting is never required; the writer asserts that invariant.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new() -> Self {
        Self { buf: String::new() }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for field in fields {
            let field = field.as_ref();
            debug_assert!(
                !field.contains([',', '"', '\r', '\n']),
                "CSV field {field:?} would need quoting"
            );
            if !first {
                self.buf.push(',');
            }
            self.buf.push_str(field);
            first = false;
        }
        self.buf.push_str("\r\n");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

/// Shortest-roundtrip decimal rendering (Rust's default float Display).
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Render the solution table: one row per control piece in physical time,
/// then labeled scalar rows for the dual vector and the objective, all with
/// the same field count.
pub fn solution_csv(grid: &ControlGrid, t_f: f64, y: &[f64; 3], objective: f64) -> Vec<u8> {
    let n_u = grid.dim_control();
    let mut csv = Csv::new();
    let mut header = vec!["piece_index".to_string(), "t_start".into(), "t_end".into()];
    for l in 1..=n_u {
        header.push(format!("u_{l}"));
    }
    csv.row(&header);
    let bk = grid.breakpoints();
    for k in 0..grid.pieces() {
        let mut row = vec![k.to_string(), num(bk[k] * t_f), num(bk[k + 1] * t_f)];
        row.extend(grid.row(k).iter().map(|&v| num(v)));
        csv.row(&row);
    }
    let width = 3 + n_u;
    for (label, value) in [
        ("y_0", y[0]),
        ("y_1", y[1]),
        ("y_2", y[2]),
        ("objective", objective),
    ] {
        let mut row = vec![label.to_string()];
        row.extend(std::iter::repeat(String::new()).take(width - 2));
        row.push(num(value));
        csv.row(&row);
    }
    csv.into_bytes()
}

/// Worst-case distribution table over the scenario support.
pub fn worstcase_csv(rows: &[(usize, f64, f64, f64)]) -> Vec<u8> {
    let mut csv = Csv::new();
    csv.row(["scenario_index", "parameter", "cost", "weight"]);
    for &(i, p, cost, weight) in rows {
        csv.row([i.to_string(), num(p), num(cost), num(weight)]);
    }
    csv.into_bytes()
}

/// Outer-round progress trace.
pub fn trace_csv(trace: &[TraceRow]) -> Vec<u8> {
    let mut csv = Csv::new();
    csv.row([
        "round",
        "rho",
        "omega",
        "eta",
        "merit",
        "dual_objective",
        "penalty",
        "max_constraint",
        "pgrad_norm",
    ]);
    for row in trace {
        csv.row([
            row.round.to_string(),
            num(row.rho),
            num(row.omega),
            num(row.eta),
            num(row.merit),
            num(row.dual_objective),
            num(row.penalty),
            num(row.max_constraint),
            num(row.pgrad_norm),
        ]);
    }
    csv.into_bytes()
}

/// Density discretization table.
pub fn discretization_csv(points: &[f64], weights: &[f64]) -> Vec<u8> {
    let mut csv = Csv::new();
    csv.row(["cell_index", "point", "weight"]);
    for (i, (&p, &w)) in points.iter().zip(weights).enumerate() {
        csv.row([i.to_string(), num(p), num(w)]);
    }
    csv.into_bytes()
}

/// Moment-residual table for a list of `(m, e1, e2)` rows.
pub fn residuals_csv(rows: &[(usize, f64, f64)]) -> Vec<u8> {
    let mut csv = Csv::new();
    csv.row(["m", "e1", "e2"]);
    for &(m, e1, e2) in rows {
        csv.row([m.to_string(), num(e1), num(e2)]);
    }
    csv.into_bytes()
}

/// Scenario trajectory table in physical units.
pub fn trajectories_csv(rows: &[droc_core::bench::TrajectoryRow]) -> Vec<u8> {
    let mut csv = Csv::new();
    csv.row(["t", "scenario_index", "m_S", "X", "S", "V"]);
    for r in rows {
        csv.row([
            num(r.time),
            r.scenario.to_string(),
            num(r.parameter),
            num(r.biomass),
            num(r.substrate),
            num(r.volume),
        ]);
    }
    csv.into_bytes()
}

/// Run provenance record. Field order is the serialization order; there are
/// deliberately no timestamps so reruns are bit-identical.
#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// SHA-256 of the raw config bytes (for `bench`, of the embedded case).
    pub config_sha256: String,
    /// Effective seed after any `--seed` override.
    pub seed: u64,
    /// File names written by this run, in emission order.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_bytes: &[u8], seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_bytes);
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        Self {
            tool: "droc",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: hex,
            seed,
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &Path) {
        if let Some(name) = path.file_name() {
            self.outputs.push(name.to_string_lossy().into_owned());
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| CliError::Config(format!("cannot serialize manifest: {e}")))?;
        bytes.push(b'\n');
        write_atomic(dir, "manifest.json", &bytes)
    }
}

/// A parsed solution file: control mesh plus the dual block.
pub struct ParsedSolution {
    /// Normalized breakpoints (length pieces + 1).
    pub breakpoints: Vec<f64>,
    /// Piece-major flat control values.
    pub values: Vec<f64>,
    pub n_u: usize,
    pub y: Option<[f64; 3]>,
    pub objective: Option<f64>,
}

impl ParsedSolution {
    /// Rebuild the control grid on the stored mesh.
    pub fn grid(&self, bounds: &ControlBox) -> Result<ControlGrid, CliError> {
        Ok(ControlGrid::from_breakpoints(
            self.breakpoints.clone(),
            self.values.clone(),
            bounds.clone(),
        )?)
    }
}

fn parse_f64(field: &str, line_no: usize) -> Result<f64, CliError> {
    field.trim().parse().map_err(|_| {
        CliError::Config(format!(
            "solution file line {line_no}: {field:?} is not a number"
        ))
    })
}

/// Parse a solution CSV produced by `solve` (tolerant of LF-only endings).
///
/// Accepts the header, piece rows `(index, t_start, t_end, u..)`, and the
/// labeled tail rows `y_0..y_2` and `objective`; anything else is an error
/// with its line number. Piece times are converted back to the normalized
/// horizon via `t_f`.
pub fn parse_solution(text: &str, t_f: f64) -> Result<ParsedSolution, CliError> {
    let mut pieces: Vec<(usize, f64, f64, Vec<f64>)> = Vec::new();
    let mut y = [None::<f64>; 3];
    let mut objective = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let first = fields[0].trim();
        match first {
            "piece_index" => continue,
            "y_0" | "y_1" | "y_2" => {
                let slot = (first.as_bytes()[2] - b'0') as usize;
                let last = fields.last().unwrap();
                y[slot] = Some(parse_f64(last, line_no)?);
            }
            "objective" => {
                let last = fields.last().unwrap();
                objective = Some(parse_f64(last, line_no)?);
            }
            _ => {
                let index: usize = first.parse().map_err(|_| {
                    CliError::Config(format!(
                        "solution file line {line_no}: expected a piece row, \
                         a y_k row, or an objective row, got {first:?}"
                    ))
                })?;
                if fields.len() < 4 {
                    return Err(CliError::Config(format!(
                        "solution file line {line_no}: piece row needs at least \
                         4 fields (index, t_start, t_end, u_1)"
                    )));
                }
                let t_start = parse_f64(fields[1], line_no)?;
                let t_end = parse_f64(fields[2], line_no)?;
                let values = fields[3..]
                    .iter()
                    .map(|f| parse_f64(f, line_no))
                    .collect::<Result<Vec<f64>, _>>()?;
                pieces.push((index, t_start, t_end, values));
            }
        }
    }
    if pieces.is_empty() {
        return Err(CliError::Config(
            "solution file contains no control pieces".into(),
        ));
    }
    pieces.sort_by_key(|&(index, ..)| index);
    let n_u = pieces[0].3.len();
    let mut breakpoints = Vec::with_capacity(pieces.len() + 1);
    let mut values = Vec::with_capacity(pieces.len() * n_u);
    for (slot, (index, t_start, t_end, u)) in pieces.iter().enumerate() {
        if *index != slot {
            return Err(CliError::Config(format!(
                "solution file: piece indices must be 0..n contiguous, \
                 missing index {slot}"
            )));
        }
        if u.len() != n_u {
            return Err(CliError::Config(format!(
                "solution file: piece {index} has {} control values, piece 0 has {n_u}",
                u.len()
            )));
        }
        if slot == 0 {
            breakpoints.push(t_start / t_f);
        } else if (t_start - pieces[slot - 1].2).abs() > 1e-9 * t_f.max(1.0) {
            return Err(CliError::Config(format!(
                "solution file: piece {index} starts at {t_start} but the \
                 previous piece ends at {}",
                pieces[slot - 1].2
            )));
        }
        breakpoints.push(t_end / t_f);
        values.extend_from_slice(u);
    }
    // Clamp endpoint roundoff from the physical-time round trip.
    if let Some(first) = breakpoints.first_mut() {
        if first.abs() < 1e-12 {
            *first = 0.0;
        }
    }
    if let Some(last) = breakpoints.last_mut() {
        if (*last - 1.0).abs() < 1e-12 {
            *last = 1.0;
        }
    }
    let y = match y {
        [Some(a), Some(b), Some(c)] => Some([a, b, c]),
        [None, None, None] => None,
        _ => {
            return Err(CliError::Config(
                "solution file has a partial y-block; need all of y_0, y_1, y_2".into(),
            ))
        }
    };
    Ok(ParsedSolution {
        breakpoints,
        values,
        n_u,
        y,
        objective,
    })
}

/// Parse a control file for `inner`: either a solution CSV (piece rows) or
/// bare whitespace/comma-separated values, flattened piece-major.
pub fn parse_control_values(text: &str) -> Result<Vec<f64>, CliError> {
    let mut flat = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        match tokens[0] {
            "piece_index" => continue,
            "y_0" | "y_1" | "y_2" | "objective" => continue,
            first if first.parse::<usize>().is_ok() && tokens.len() >= 4 => {
                for t in &tokens[3..] {
                    flat.push(parse_f64(t, line_no)?);
                }
            }
            _ => {
                for t in &tokens {
                    flat.push(parse_f64(t, line_no)?);
                }
            }
        }
    }
    if flat.is_empty() {
        return Err(CliError::Config("control file contains no values".into()));
    }
    Ok(flat)
}
