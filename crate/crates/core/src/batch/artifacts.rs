use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{LabError, Result};
use crate::grid::GridState;

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| LabError::Io(e.error))?;
    Ok(())
}

/// An in-memory CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row of numbers, formatted with the shortest exact
    /// round-trip representation.
    pub fn push(&mut self, row: &[f64]) {
        self.push_cells(row.iter().map(|v| num(*v)).collect());
    }

    pub fn push_cells(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| LabError::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.into_inner().map_err(|e| LabError::Io(std::io::Error::other(e.to_string())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let bad = |e: csv::Error| LabError::Invalid(format!("csv: {e}"));
        let header = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(bad)?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[k].parse().ok()).collect()
    }
}

/// `f64` as text: shortest round-trip form, `nan`/`inf` spelled out.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:?}")
    }
}

/// Plain PGM (P2), 8-bit, rows from top (largest y) to bottom. Values are
/// clamped to [0, 1] and scaled to 0..=255.
pub fn pgm(state: &GridState) -> String {
    let g = &state.grid;
    let (nx, ny) = (g.n[0], if g.dim == 2 { g.n[1] } else { 1 });
    let mut s = String::new();
    let _ = writeln!(s, "P2\n# t={} h={}\n{nx} {ny}\n255", num(state.time), num(g.h));
    for j in (0..ny).rev() {
        let line: Vec<String> = (0..nx)
            .map(|i| {
                let v = state.values[g.index(i, j)].clamp(0.0, 1.0);
                ((v * 255.0).round() as u8).to_string()
            })
            .collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

/// Parses the header and pixels of a P2 image written by [`pgm`].
pub fn parse_pgm(text: &str) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || LabError::Invalid("malformed pgm".into());
    let mut tokens = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(bad());
    }
    let mut next = || -> Result<usize> { tokens.next().and_then(|t| t.parse().ok()).ok_or_else(bad) };
    let (w, h, max) = (next()?, next()?, next()?);
    if max != 255 {
        return Err(bad());
    }
    let px = (0..w * h).map(|_| next().map(|v| v as u8)).collect::<Result<_>>()?;
    Ok((w, h, px))
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Manifest { entries }
    }
}

/// Everything one run produces, held in memory until [`Artifacts::commit`].
#[derive(Debug, Default)]
pub struct Artifacts {
    pub tables: Vec<(String, Table)>,
    pub images: Vec<(String, String)>,
    pub manifest: Manifest,
}

impl Artifacts {
    pub fn table(&mut self, name: &str, t: Table) {
        self.tables.push((format!("{name}.csv"), t));
    }

    pub fn image(&mut self, name: &str, state: &GridState) {
        self.images.push((format!("{name}.pgm"), pgm(state)));
    }

    pub fn get(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == file).map(|(_, t)| t)
    }

    /// Writes every artifact atomically into `dir`, the manifest last.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (name, t) in &self.tables {
            let p = dir.join(name);
            write_atomic(&p, &t.to_bytes()?)?;
            written.push(p);
        }
        for (name, img) in &self.images {
            let p = dir.join(name);
            write_atomic(&p, img.as_bytes())?;
            written.push(p);
        }
        let p = dir.join("manifest.txt");
        write_atomic(&p, self.manifest.render().as_bytes())?;
        written.push(p);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Grid};
    use proptest::prelude::*;

    #[test]
    fn pgm_layout_and_header() {
        let g = Grid::rect([0.0, 0.0], [3.5, 4.5], 0.5, Boundary::DirichletZero).unwrap();
        let s = GridState::from_fn(g, |x| x[0] * x[1] / 16.0);
        let text = pgm(&s);
        assert!(text.starts_with("P2\n# t=0.0 h=0.5\n8 10\n255\n"));
        let (w, h, px) = parse_pgm(&text).unwrap();
        assert_eq!((w, h), (8, 10));
        // top row is y = 4.5, bottom row y = 0
        assert_eq!(&px[..8], &[0, 36, 72, 108, 143, 179, 215, 251]);
        assert!(px[72..].iter().all(|&v| v == 0));
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"x\n1\n").unwrap();
        write_atomic(&p, b"x\n2\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x\n2\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::default();
        m.set("seed", 3);
        m.set("w", "1.5 2.0");
        m.set("seed", 4);
        assert_eq!(Manifest::parse(&m.render()), m);
        assert_eq!(m.get("seed"), Some("4"));
    }

    proptest! {
        #[test]
        fn csv_numbers_round_trip(vals in proptest::collection::vec(any::<f64>(), 1..20)) {
            let mut t = Table::new(&["v"]);
            for v in &vals {
                t.push(&[*v]);
            }
            let back = Table::parse(std::str::from_utf8(&t.to_bytes().unwrap()).unwrap()).unwrap();
            let col = back.column("v").unwrap();
            for (a, b) in vals.iter().zip(&col) {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }
}
