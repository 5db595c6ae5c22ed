//! CSV schemas for datasets and run outputs.
//!
//! * `traps.csv`: `trap_id,x,y`
//! * `counts.csv`: `trap_id,occasion,count`, one row for every trap and
//!   occasion `1..T`
//! * `marked.csv`: `individual_id,trap_id,occasion,count`, sparse; absent
//!   entries are zero and a marked individual that was never detected is
//!   listed with a single zero row
//! * `truth.csv`: `individual_id,x,y,marked`
//! * `chain_<k>.csv`: `iteration,sigma,lambda0,phi,N,D`
//! * `centers_<k>.csv`: `iteration,individual,x,y`
//!
//! Coordinates and sigma are in user units, D in individuals per area unit.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use spatcount::sampler::{CenterSnapshot, Draw};
use spatcount::{CountData, LatentCounts, MarkedObservations, Point};

use crate::error::{CliError, CliResult};

pub const TRAPS_HEADER: [&str; 3] = ["trap_id", "x", "y"];
pub const COUNTS_HEADER: [&str; 3] = ["trap_id", "occasion", "count"];
pub const MARKED_HEADER: [&str; 4] = ["individual_id", "trap_id", "occasion", "count"];
pub const TRUTH_HEADER: [&str; 4] = ["individual_id", "x", "y", "marked"];
pub const CHAIN_HEADER: [&str; 6] = ["iteration", "sigma", "lambda0", "phi", "N", "D"];
pub const CENTERS_HEADER: [&str; 4] = ["iteration", "individual", "x", "y"];

/// Traps in file order, coordinates in user units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapTable {
    pub ids: Vec<String>,
    pub coords: Vec<Point>,
}

impl TrapTable {
    fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }
}

/// Marked histories with their individual labels in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedTable {
    pub ids: Vec<String>,
    pub histories: MarkedObservations,
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into())
}

struct Rows {
    name: String,
    reader: csv::Reader<File>,
}

impl Rows {
    fn open(path: &Path, header: &[&str]) -> CliResult<Rows> {
        let file = File::open(path).map_err(|e| CliError::at(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(file);
        let name = file_name(path);
        let found = reader
            .headers()
            .map_err(|e| CliError::data(format!("{name}: {e}")))?;
        if found.iter().ne(header.iter().copied()) {
            return Err(CliError::data(format!(
                "{name} line 1: expected header '{}', found '{}'",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            )));
        }
        Ok(Rows { name, reader })
    }

    /// Calls `f(line, fields)` for every record.
    fn each(mut self, mut f: impl FnMut(&Line<'_>) -> CliResult<()>) -> CliResult<()> {
        let width = self.reader.headers().map(|h| h.len()).unwrap_or(0);
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {}
                Err(e) => return Err(CliError::data(format!("{}: {e}", self.name))),
            }
            let line = Line {
                name: &self.name,
                number: record.position().map_or(0, |p| p.line()),
                record: &record,
            };
            if record.len() != width {
                return Err(line.error(format!("expected {width} fields, found {}", record.len())));
            }
            f(&line)?;
        }
    }
}

struct Line<'a> {
    name: &'a str,
    number: u64,
    record: &'a csv::StringRecord,
}

impl Line<'_> {
    fn error(&self, msg: impl std::fmt::Display) -> CliError {
        CliError::data(format!("{} line {}: {msg}", self.name, self.number))
    }

    fn text(&self, i: usize, what: &str) -> CliResult<&str> {
        let v = &self.record[i];
        if v.is_empty() {
            return Err(self.error(format!("empty {what}")));
        }
        Ok(v)
    }

    fn real(&self, i: usize, what: &str) -> CliResult<f64> {
        let v = &self.record[i];
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.error(format!("{what} '{v}' is not a finite number"))),
        }
    }

    fn count(&self, i: usize, what: &str) -> CliResult<u32> {
        let v = &self.record[i];
        v.parse::<u32>()
            .map_err(|_| self.error(format!("{what} '{v}' is not a non-negative integer")))
    }
}

pub fn read_traps(path: &Path) -> CliResult<TrapTable> {
    let rows = Rows::open(path, &TRAPS_HEADER)?;
    let mut table = TrapTable { ids: Vec::new(), coords: Vec::new() };
    let mut seen = HashSet::new();
    rows.each(|l| {
        let id = l.text(0, "trap_id")?;
        if !seen.insert(id.to_string()) {
            return Err(l.error(format!("duplicate trap_id '{id}'")));
        }
        table.ids.push(id.to_string());
        table.coords.push(Point::new(l.real(1, "x")?, l.real(2, "y")?));
        Ok(())
    })?;
    if table.ids.is_empty() {
        return Err(CliError::data(format!("{}: no traps", file_name(path))));
    }
    Ok(table)
}

pub fn read_counts(path: &Path, traps: &TrapTable) -> CliResult<CountData> {
    let index = traps.index();
    let rows = Rows::open(path, &COUNTS_HEADER)?;
    let mut cells: BTreeMap<(usize, u32), u32> = BTreeMap::new();
    rows.each(|l| {
        let id = l.text(0, "trap_id")?;
        let r = *index.get(id).ok_or_else(|| l.error(format!("unknown trap_id '{id}'")))?;
        let t = l.count(1, "occasion")?;
        if t == 0 {
            return Err(l.error("occasions are numbered from 1"));
        }
        let n = l.count(2, "count")?;
        if cells.insert((r, t), n).is_some() {
            return Err(l.error(format!("duplicate entry for trap '{id}', occasion {t}")));
        }
        Ok(())
    })?;
    let name = file_name(path);
    let occasions = cells.keys().map(|k| k.1).max().unwrap_or(0) as usize;
    if occasions == 0 {
        return Err(CliError::data(format!("{name}: no counts")));
    }
    let mut counts = vec![vec![0u32; occasions]; traps.ids.len()];
    for (r, row) in counts.iter_mut().enumerate() {
        for (t, slot) in row.iter_mut().enumerate() {
            *slot = *cells.get(&(r, t as u32 + 1)).ok_or_else(|| {
                CliError::data(format!(
                    "{name}: missing count for trap '{}', occasion {}",
                    traps.ids[r],
                    t + 1
                ))
            })?;
        }
    }
    CountData::new(counts).map_err(|e| CliError::data(format!("{name}: {e}")))
}

pub fn read_marked(path: &Path, traps: &TrapTable, data: &CountData) -> CliResult<MarkedTable> {
    let index = traps.index();
    let rows = Rows::open(path, &MARKED_HEADER)?;
    let occasions = data.occasions();
    let mut ids: Vec<String> = Vec::new();
    let mut ind_index: HashMap<String, usize> = HashMap::new();
    let mut entries: HashMap<(usize, usize, usize), u32> = HashMap::new();
    rows.each(|l| {
        let id = l.text(0, "individual_id")?;
        let next = ids.len();
        let i = *ind_index.entry(id.to_string()).or_insert(next);
        if i == next {
            ids.push(id.to_string());
        }
        let trap = l.text(1, "trap_id")?;
        let r = *index.get(trap).ok_or_else(|| l.error(format!("unknown trap_id '{trap}'")))?;
        let t = l.count(2, "occasion")? as usize;
        if t == 0 || t > occasions {
            return Err(l.error(format!("occasion {t} outside 1..{occasions}")));
        }
        let n = l.count(3, "count")?;
        if entries.insert((i, r, t - 1), n).is_some() {
            return Err(l.error(format!(
                "duplicate entry for individual '{id}', trap '{trap}', occasion {t}"
            )));
        }
        Ok(())
    })?;
    let mut z = LatentCounts::zeros(ids.len(), traps.ids.len(), occasions);
    for (&(i, r, t), &n) in &entries {
        z.set(i, r, t, n);
    }
    let histories = MarkedObservations::new(z);
    histories.validate_against(data).map_err(|e| {
        CliError::data(format!("{}: {e}", file_name(path)))
    })?;
    Ok(MarkedTable { ids, histories })
}

/// Buffered CSV writer with `\n` line endings.
pub struct CsvOut {
    path: std::path::PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<CsvOut> {
        let file = File::create(path).map_err(|e| CliError::at(path, e))?;
        let inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        let mut out = CsvOut { path: path.to_path_buf(), inner };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<I, T>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| CliError::at(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::at(&self.path, e))?;
        let buf = self.inner.into_inner().map_err(|e| CliError::at(&self.path, e.error()))?;
        buf.into_inner()
            .map_err(|e| CliError::at(&self.path, e.error()))?
            .sync_all()
            .map_err(|e| CliError::at(&self.path, e))
    }
}

pub fn write_traps(path: &Path, traps: &TrapTable) -> CliResult<()> {
    let mut out = CsvOut::create(path, &TRAPS_HEADER)?;
    for (id, p) in traps.ids.iter().zip(&traps.coords) {
        out.row([id.clone(), p.x.to_string(), p.y.to_string()])?;
    }
    out.finish()
}

pub fn write_counts(path: &Path, traps: &TrapTable, counts: &CountData) -> CliResult<()> {
    let mut out = CsvOut::create(path, &COUNTS_HEADER)?;
    for (id, row) in traps.ids.iter().zip(counts.rows()) {
        for (t, n) in row.iter().enumerate() {
            out.row([id.clone(), (t + 1).to_string(), n.to_string()])?;
        }
    }
    out.finish()
}

pub fn write_marked(path: &Path, traps: &TrapTable, marked: &MarkedTable) -> CliResult<()> {
    let mut out = CsvOut::create(path, &MARKED_HEADER)?;
    let z = marked.histories.histories();
    for (i, id) in marked.ids.iter().enumerate() {
        let mut any = false;
        for (r, trap) in traps.ids.iter().enumerate() {
            for (t, &n) in z.cell(i, r).iter().enumerate() {
                if n > 0 {
                    out.row([id.clone(), trap.clone(), (t + 1).to_string(), n.to_string()])?;
                    any = true;
                }
            }
        }
        if !any {
            out.row([id.clone(), traps.ids[0].clone(), "1".into(), "0".into()])?;
        }
    }
    out.finish()
}

/// `centers` in user units; `marked[i]` flags individual `i`.
pub fn write_truth(path: &Path, centers: &[Point], marked: &[bool]) -> CliResult<()> {
    let mut out = CsvOut::create(path, &TRUTH_HEADER)?;
    for (i, (p, &m)) in centers.iter().zip(marked).enumerate() {
        out.row([(i + 1).to_string(), p.x.to_string(), p.y.to_string(), u8::from(m).to_string()])?;
    }
    out.finish()
}

pub fn write_chain(path: &Path, draws: &[Draw]) -> CliResult<()> {
    let mut out = CsvOut::create(path, &CHAIN_HEADER)?;
    for d in draws {
        out.row([
            d.iteration.to_string(),
            d.sigma.to_string(),
            d.lambda0.to_string(),
            d.phi.to_string(),
            d.n.to_string(),
            d.density.to_string(),
        ])?;
    }
    out.finish()
}

pub fn read_chain(path: &Path) -> CliResult<Vec<Draw>> {
    let rows = Rows::open(path, &CHAIN_HEADER).map_err(as_io)?;
    let mut draws = Vec::new();
    rows.each(|l| {
        draws.push(Draw {
            iteration: l.count(0, "iteration")? as usize,
            sigma: l.real(1, "sigma")?,
            lambda0: l.real(2, "lambda0")?,
            phi: l.real(3, "phi")?,
            n: l.count(4, "N")? as usize,
            density: l.real(5, "D")?,
        });
        Ok(())
    })
    .map_err(as_io)?;
    Ok(draws)
}

pub fn write_centers(path: &Path, snapshots: &[CenterSnapshot]) -> CliResult<()> {
    let mut out = CsvOut::create(path, &CENTERS_HEADER)?;
    for s in snapshots {
        for (i, p) in s.individuals.iter().zip(&s.centers) {
            out.row([s.iteration.to_string(), (i + 1).to_string(), p.x.to_string(), p.y.to_string()])?;
        }
    }
    out.finish()
}

/// Reads snapshots back. `iterations` lists every snapshot iteration, so
/// sweeps with no active individual are restored as empty snapshots.
pub fn read_centers(path: &Path, iterations: &[usize]) -> CliResult<Vec<CenterSnapshot>> {
    let rows = Rows::open(path, &CENTERS_HEADER).map_err(as_io)?;
    let mut by_iter: BTreeMap<usize, CenterSnapshot> = iterations
        .iter()
        .map(|&it| (it, CenterSnapshot { iteration: it, individuals: Vec::new(), centers: Vec::new() }))
        .collect();
    rows.each(|l| {
        let it = l.count(0, "iteration")? as usize;
        let ind = l.count(1, "individual")? as usize;
        let snap = by_iter
            .get_mut(&it)
            .ok_or_else(|| l.error(format!("iteration {it} is not a snapshot iteration")))?;
        snap.individuals.push(ind.saturating_sub(1));
        snap.centers.push(Point::new(l.real(2, "x")?, l.real(3, "y")?));
        Ok(())
    })
    .map_err(as_io)?;
    Ok(by_iter.into_values().collect())
}

/// Run outputs that fail to parse are corrupt rather than bad user data.
fn as_io(e: CliError) -> CliError {
    CliError::io(e.message)
}

/// Writes `text` to `path` in one piece.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = File::create(path).map_err(|e| CliError::at(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::at(path, e))?;
    f.sync_all().map_err(|e| CliError::at(path, e))
}
