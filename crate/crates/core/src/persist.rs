//! Q-table files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic "TQAL" | u32 version | u32 width | u32 height | u32 regions | u32 actions
//! u32 slices, then per slice: u32 len, len x u32 region id
//! u64 fingerprint | f64 r_step | f64 r_goal | u32 c_p | u8 extra_tier
//! u8 converged | f64 residual | u64 sweeps
//! u32 len + UTF-8 task | u32 len + UTF-8 provenance (empty when absent)
//! u64 n, then n x f64 values in (cell, goal, action) order
//! ```
//!
//! The JSON export carries the same fields and round-trips every value
//! exactly.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::algebra::{TaskKey, TaskLibrary};
use crate::error::{Error, Result};
use crate::mdp::{Action, LabeledMdp};
use crate::penalty::PenaltyConfig;
use crate::planner::QTable;

pub const TABLE_MAGIC: &[u8; 4] = b"TQAL";
pub const TABLE_VERSION: u32 = 1;
pub const TABLE_EXTENSION: &str = "qtab";

/// A table plus the composition it came from, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTable {
    pub format_version: u32,
    pub table: QTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl StoredTable {
    pub fn new(table: QTable, provenance: Option<String>) -> Self {
        StoredTable { format_version: TABLE_VERSION, table, provenance }
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in 32 bits")))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LE>(u32_of(s.len(), "string length")?)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LE>()? as usize;
    let mut buf = vec![0; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string field is not UTF-8".into()))
}

pub fn write_table<W: Write>(w: &mut W, stored: &StoredTable) -> Result<()> {
    let t = &stored.table;
    w.write_all(TABLE_MAGIC)?;
    w.write_u32::<LE>(TABLE_VERSION)?;
    for n in [t.width, t.height, t.regions, Action::COUNT] {
        w.write_u32::<LE>(u32_of(n, "dimension")?)?;
    }
    w.write_u32::<LE>(u32_of(t.subsets.len(), "slice count")?)?;
    for s in &t.subsets {
        w.write_u32::<LE>(u32_of(s.len(), "subset size")?)?;
        for &g in s {
            w.write_u32::<LE>(u32_of(g, "region id")?)?;
        }
    }
    w.write_u64::<LE>(t.fingerprint)?;
    w.write_f64::<LE>(t.config.r_step)?;
    w.write_f64::<LE>(t.config.r_goal)?;
    w.write_u32::<LE>(t.config.c_p)?;
    w.write_u8(u8::from(t.config.extra_tier))?;
    w.write_u8(u8::from(t.converged))?;
    w.write_f64::<LE>(t.residual)?;
    w.write_u64::<LE>(t.sweeps as u64)?;
    write_str(w, &t.task)?;
    write_str(w, stored.provenance.as_deref().unwrap_or(""))?;
    w.write_u64::<LE>(t.values.len() as u64)?;
    for &v in &t.values {
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn flag(b: u8, what: &str) -> Result<bool> {
    match b {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Format(format!("{what} flag is {b}, expected 0 or 1"))),
    }
}

pub fn read_table<R: Read>(r: &mut R) -> Result<StoredTable> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file too short for a header".into()))?;
    if &magic != TABLE_MAGIC {
        return Err(Error::Format("not a Q-table file (bad magic)".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != TABLE_VERSION {
        return Err(Error::Format(format!("unsupported format version {version} (expected {TABLE_VERSION})")));
    }
    let width = r.read_u32::<LE>()? as usize;
    let height = r.read_u32::<LE>()? as usize;
    let regions = r.read_u32::<LE>()? as usize;
    let actions = r.read_u32::<LE>()? as usize;
    if actions != Action::COUNT {
        return Err(Error::Format(format!("table has {actions} actions, expected {}", Action::COUNT)));
    }
    let slices = r.read_u32::<LE>()? as usize;
    let mut subsets = Vec::new();
    for _ in 0..slices {
        let n = r.read_u32::<LE>()? as usize;
        if n > regions {
            return Err(Error::Format(format!("G_ok subset of size {n} with only {regions} regions")));
        }
        let s = (0..n).map(|_| r.read_u32::<LE>().map(|g| g as usize)).collect::<std::io::Result<Vec<_>>>()?;
        subsets.push(s);
    }
    if subsets.is_empty() {
        return Err(Error::Format("table has no slices".into()));
    }
    let fingerprint = r.read_u64::<LE>()?;
    let config = PenaltyConfig {
        r_step: r.read_f64::<LE>()?,
        r_goal: r.read_f64::<LE>()?,
        c_p: r.read_u32::<LE>()?,
        extra_tier: flag(r.read_u8()?, "extra_tier")?,
    };
    let converged = flag(r.read_u8()?, "converged")?;
    let residual = r.read_f64::<LE>()?;
    let sweeps = r.read_u64::<LE>()? as usize;
    let task = read_str(r)?;
    let provenance = Some(read_str(r)?).filter(|p| !p.is_empty());
    let n = r.read_u64::<LE>()? as usize;
    let expected = width * height * regions * subsets.len() * Action::COUNT;
    if n != expected {
        return Err(Error::Format(format!("payload has {n} values, header implies {expected}")));
    }
    let mut values = vec![0.0; n];
    r.read_f64_into::<LE>(&mut values).map_err(|_| Error::Format("truncated payload".into()))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let table = QTable { width, height, regions, subsets, config, fingerprint, task, converged, residual, sweeps, values };
    Ok(StoredTable { format_version: version, table, provenance })
}

pub fn save_table(path: &Path, stored: &StoredTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_table(&mut w, stored)?;
    w.flush()?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<StoredTable> {
    let mut r = BufReader::new(File::open(path)?);
    read_table(&mut r)
}

pub fn table_to_json(stored: &StoredTable) -> Result<String> {
    Ok(serde_json::to_string_pretty(stored)?)
}

pub fn table_from_json(text: &str) -> Result<StoredTable> {
    let stored: StoredTable = serde_json::from_str(text)?;
    if stored.format_version != TABLE_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", stored.format_version)));
    }
    let t = &stored.table;
    if t.values.len() != t.width * t.height * t.regions * t.slices() * Action::COUNT {
        return Err(Error::Format("value count does not match the dimensions".into()));
    }
    Ok(stored)
}

/// Writes every table of `lib` as `<key>.qtab` under `dir`.
pub fn save_library(lib: &TaskLibrary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (key, table) in lib.tables() {
        save_table(&dir.join(key.file_name()), &StoredTable::new(table.clone(), None))?;
    }
    Ok(())
}

/// Loads every `.qtab` file under `dir` whose stem is a task key. The
/// library takes its penalty configuration from the tables; `fallback` is
/// used only when the directory holds none.
pub fn load_library(dir: &Path, mdp: &LabeledMdp, fallback: PenaltyConfig) -> Result<TaskLibrary> {
    let mut found = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(TABLE_EXTENSION) {
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<TaskKey>().ok()) else {
                continue;
            };
            found.push((key, path));
        }
    }
    found.sort();
    let mut lib: Option<TaskLibrary> = None;
    for (key, path) in found {
        let table = load_table(&path)?.table;
        table.matches_env(mdp)?;
        let lib = lib.get_or_insert_with(|| TaskLibrary::new(mdp, table.config));
        lib.insert(key, table)?;
    }
    Ok(lib.unwrap_or_else(|| TaskLibrary::new(mdp, fallback)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::example_env;
    use crate::penalty::RewardSpec;
    use crate::planner::{value_iterate_safety, DEFAULT_TOL};

    fn sample() -> StoredTable {
        let mdp = example_env();
        let spec = RewardSpec::negated(["A"], PenaltyConfig::new(8));
        let t = value_iterate_safety(&mdp, &spec, 1, DEFAULT_TOL, None, None).unwrap();
        StoredTable::new(t, Some("neg(A)".into()))
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let s = sample();
        let mut buf = Vec::new();
        write_table(&mut buf, &s).unwrap();
        let back = read_table(&mut buf.as_slice()).unwrap();
        assert_eq!(back, s);
        let bits = |t: &QTable| t.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.table), bits(&s.table));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let s = sample();
        let back = table_from_json(&table_to_json(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(back.table.values.iter().zip(&s.table.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_damaged_files() {
        let s = sample();
        let mut buf = Vec::new();
        write_table(&mut buf, &s).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_table(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_table(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(read_table(&mut &short[..]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_table(&mut long.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn library_directory_round_trip() {
        let mdp = example_env();
        let mut lib = TaskLibrary::new(&mdp, PenaltyConfig::new(8));
        lib.train_positive_basis(&mdp).unwrap();
        lib.train(&mdp, TaskKey::negated(["A", "B"]), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_library(&lib, dir.path()).unwrap();
        assert!(dir.path().join("not-A+B.qtab").exists());
        let back = load_library(dir.path(), &mdp, PenaltyConfig::new(1)).unwrap();
        assert_eq!(back, lib);
        let empty = tempfile::tempdir().unwrap();
        assert_eq!(load_library(empty.path(), &mdp, PenaltyConfig::new(3)).unwrap().config.c_p, 3);
    }
}
