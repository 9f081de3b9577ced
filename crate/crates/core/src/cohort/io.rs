//! Cohort directory layout: `manifest.txt` plus little-endian binary arrays
//! with an 8-byte `(count: u32, dim: u32)` header — f32 everywhere except
//! the u8 observation mask — and `codes.txt` sparse triplets.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

use super::{CohortTensor, FeatureGroup};

fn write_f32(path: &Path, count: u32, dim: u32, data: &[f32]) -> Result<()> {
    if data.len() != count as usize * dim as usize {
        return Err(Error::Data(format!(
            "{}: {} values for header ({count}, {dim})",
            path.display(),
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(8 + data.len() * 4);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

fn write_u8(path: &Path, count: u32, dim: u32, data: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + data.len());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(data);
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

fn read_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() < 8 {
        return Err(Error::Data(format!("{}: truncated header", path.display())));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    Ok((count, dim))
}

fn read_f32(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (count, dim) = read_header(path, &bytes)?;
    let body = &bytes[8..];
    if body.len() != count * dim * 4 {
        return Err(Error::Data(format!(
            "{}: truncated body ({} bytes for {count}x{dim} f32)",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, dim, data))
}

fn read_u8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (count, dim) = read_header(path, &bytes)?;
    let body = &bytes[8..];
    if body.len() != count * dim {
        return Err(Error::Data(format!(
            "{}: truncated body ({} bytes for {count}x{dim} u8)",
            path.display(),
            body.len()
        )));
    }
    Ok((count, dim, body.to_vec()))
}

pub fn write_cohort(dir: &Path, c: &CohortTensor) -> Result<()> {
    c.validate()?;
    std::fs::create_dir_all(dir)?;
    let n = c.len() as u32;

    let mut manifest = String::new();
    manifest.push_str("format=cohort-v1\n");
    manifest.push_str(&format!("n_stays={}\n", c.len()));
    manifest.push_str(&format!("t_bins={}\n", c.t_bins));
    manifest.push_str(&format!("d_ts={}\n", c.d_ts));
    manifest.push_str(&format!("d_flat={}\n", c.d_flat));
    manifest.push_str(&format!("d_codes={}\n", c.d_codes));
    manifest.push_str(&format!("emb_dim={}\n", c.emb_dim));
    let ids: Vec<String> = c.ids.iter().map(u32::to_string).collect();
    manifest.push_str(&format!("ids={}\n", ids.join(",")));
    for (name, g) in &c.groups {
        if !g.ts_channels.is_empty() {
            let v: Vec<String> = g.ts_channels.iter().map(usize::to_string).collect();
            manifest.push_str(&format!("ts_group.{name}={}\n", v.join(",")));
        }
        if !g.static_cols.is_empty() {
            let v: Vec<String> = g.static_cols.iter().map(usize::to_string).collect();
            manifest.push_str(&format!("static_group.{name}={}\n", v.join(",")));
        }
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;

    write_f32(&dir.join("ts.bin"), n, (c.t_bins * c.d_ts) as u32, &c.ts)?;
    write_u8(&dir.join("mask.bin"), n, c.t_bins as u32, &c.mask)?;
    write_f32(&dir.join("static.bin"), n, c.d_flat as u32, &c.statics)?;
    write_f32(&dir.join("labels.bin"), n, 1, &c.labels)?;
    write_f32(&dir.join("emb.bin"), n, c.emb_dim as u32, &c.emb)?;

    let mut codes = String::new();
    for (row, list) in c.codes.iter().enumerate() {
        for &col in list {
            codes.push_str(&format!("{row} {col} 1\n"));
        }
    }
    std::fs::write(dir.join("codes.txt"), codes)?;
    Ok(())
}

pub fn read_cohort(dir: &Path) -> Result<CohortTensor> {
    let manifest_path = dir.join("manifest.txt");
    let manifest = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for line in manifest.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("manifest: malformed line '{line}'")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get_usize = |key: &str| -> Result<usize> {
        kv.get(key)
            .ok_or_else(|| Error::Data(format!("manifest: missing key '{key}'")))?
            .parse()
            .map_err(|_| Error::Data(format!("manifest: bad value for '{key}'")))
    };
    let n = get_usize("n_stays")?;
    let t_bins = get_usize("t_bins")?;
    let d_ts = get_usize("d_ts")?;
    let d_flat = get_usize("d_flat")?;
    let d_codes = get_usize("d_codes")?;
    let emb_dim = get_usize("emb_dim")?;
    let ids: Vec<u32> = match kv.get("ids") {
        Some(s) if !s.is_empty() => s
            .split(',')
            .map(|t| t.parse().map_err(|_| Error::Data("manifest: bad stay id".into())))
            .collect::<Result<_>>()?,
        _ => (0..n as u32).collect(),
    };
    if ids.len() != n {
        return Err(Error::Data(format!("manifest: {} ids for {n} stays", ids.len())));
    }

    let mut groups: BTreeMap<String, FeatureGroup> = BTreeMap::new();
    for (k, v) in &kv {
        let parse_list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse().map_err(|_| Error::Data("manifest: bad group index".into())))
                .collect()
        };
        if let Some(name) = k.strip_prefix("ts_group.") {
            groups.entry(name.to_string()).or_default().ts_channels = parse_list(v)?;
        } else if let Some(name) = k.strip_prefix("static_group.") {
            groups.entry(name.to_string()).or_default().static_cols = parse_list(v)?;
        }
    }

    let (tn, td, ts) = read_f32(&dir.join("ts.bin"))?;
    if tn != n || td != t_bins * d_ts {
        return Err(Error::Data(format!("ts.bin: header {tn}x{td} vs manifest")));
    }
    let (mn, md, mask) = read_u8(&dir.join("mask.bin"))?;
    if mn != n || md != t_bins {
        return Err(Error::Data(format!("mask.bin: header {mn}x{md} vs manifest")));
    }
    let (sn, sd, statics) = read_f32(&dir.join("static.bin"))?;
    if sn != n || sd != d_flat {
        return Err(Error::Data(format!("static.bin: header {sn}x{sd} vs manifest")));
    }
    let (ln, ld, labels) = read_f32(&dir.join("labels.bin"))?;
    if ln != n || ld != 1 {
        return Err(Error::Data(format!("labels.bin: header {ln}x{ld} vs manifest")));
    }
    let (en, ed, emb) = read_f32(&dir.join("emb.bin"))?;
    if en != n || ed != emb_dim {
        return Err(Error::Data(format!("emb.bin: header {en}x{ed} vs manifest")));
    }

    let codes_text = std::fs::read_to_string(dir.join("codes.txt"))
        .map_err(|e| Error::Data(format!("codes.txt: {e}")))?;
    let mut codes: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (ln_no, line) in codes_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let row: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Data(format!("codes.txt line {}: bad row", ln_no + 1)))?;
        let col: u32 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Data(format!("codes.txt line {}: bad col", ln_no + 1)))?;
        if row >= n || col as usize >= d_codes {
            return Err(Error::Data(format!("codes.txt line {}: out of range", ln_no + 1)));
        }
        codes[row].push(col);
    }
    for row in &mut codes {
        row.sort_unstable();
        row.dedup();
    }

    let c = CohortTensor {
        ids,
        t_bins,
        d_ts,
        d_flat,
        d_codes,
        emb_dim,
        ts,
        mask,
        statics,
        labels,
        codes,
        emb,
        groups,
    };
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::super::synth::{generate_cohort, SynthSpec};
    use super::*;

    #[test]
    fn cohort_round_trips_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_cohort(&SynthSpec { n_stays: 3, ..SynthSpec::default() }, 5).unwrap();
        write_cohort(dir.path(), &c).unwrap();
        let back = read_cohort(dir.path()).unwrap();
        assert_eq!(c, back);

        // write the read-back cohort again: files must be byte-identical
        let dir2 = tempfile::tempdir().unwrap();
        write_cohort(dir2.path(), &back).unwrap();
        for f in ["ts.bin", "mask.bin", "static.bin", "labels.bin", "emb.bin", "codes.txt"] {
            let a = std::fs::read(dir.path().join(f)).unwrap();
            let b = std::fs::read(dir2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
    }

    #[test]
    fn truncated_section_reports_its_name() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_cohort(&SynthSpec { n_stays: 3, ..SynthSpec::default() }, 5).unwrap();
        write_cohort(dir.path(), &c).unwrap();
        let ts_path = dir.path().join("ts.bin");
        let bytes = std::fs::read(&ts_path).unwrap();
        std::fs::write(&ts_path, &bytes[..bytes.len() - 4]).unwrap();
        let err = read_cohort(dir.path()).unwrap_err().to_string();
        assert!(err.contains("ts.bin"), "error was: {err}");
    }

    #[test]
    fn nan_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_cohort(&SynthSpec { n_stays: 3, ..SynthSpec::default() }, 5).unwrap();
        write_cohort(dir.path(), &c).unwrap();
        // corrupt one label in place
        let path = dir.path().join("labels.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(read_cohort(dir.path()).is_err());
    }

    #[test]
    fn mask_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_cohort(&SynthSpec { n_stays: 3, ..SynthSpec::default() }, 11).unwrap();
        write_cohort(dir.path(), &c).unwrap();
        let back = read_cohort(dir.path()).unwrap();
        assert_eq!(c.mask, back.mask);
    }
}
