//! Dataset file.
//!
//! ```text
//! OFMLD1\n
//! N c m k\n
//! then per instance:
//!   <id> <T_pos> <label_1> … <label_T>\n
//!   planted <label>:<cell>,<cell>,… …\n
//!   m·k little-endian f64, cells outer, features inner
//! ```

use std::fs;
use std::path::Path;

use crate::data::{DatasetManifest, Instance};
use crate::error::Result;
use crate::model::FeatureMaps;
use crate::wire::{join_usizes, push_f64s, Reader};

pub const MAGIC: &[u8] = b"OFMLD1\n";

pub fn to_bytes(ds: &DatasetManifest) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let header = [ds.len(), ds.labels, ds.regions, ds.feature_dim];
    out.extend_from_slice(join_usizes(header).as_bytes());
    out.push(b'\n');
    for inst in &ds.instances {
        let mut line = format!("{} {}", inst.id, inst.labels.len());
        for l in &inst.labels {
            line.push_str(&format!(" {l}"));
        }
        line.push('\n');
        line.push_str("planted");
        for (l, cells) in inst.labels.iter().zip(&inst.planted) {
            let cells: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
            line.push_str(&format!(" {l}:{}", cells.join(",")));
        }
        line.push('\n');
        out.extend_from_slice(line.as_bytes());
        push_f64s(&mut out, inst.features.values().data());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<DatasetManifest> {
    let mut r = Reader::new(bytes);
    r.expect(MAGIC)?;
    let at = r.offset();
    let h = r.usize_line(Some(4))?;
    let (n, c, m, k) = (h[0], h[1], h[2], h[3]);
    if c == 0 || m == 0 || k == 0 {
        return r.error(at, format!("dimensions must be positive, got {h:?}"));
    }
    let mut instances = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let at = r.offset();
        let line = r.line()?;
        let mut fields = line.split(' ');
        let id = fields.next().filter(|s| !s.is_empty());
        let rest: std::result::Result<Vec<usize>, _> = fields.map(str::parse).collect();
        let (Some(id), Ok(rest)) = (id, rest) else {
            return r.error(at, format!("malformed instance line {line:?}"));
        };
        let Some((&t_pos, labels)) = rest.split_first() else {
            return r.error(at, "instance line lacks a label count");
        };
        if labels.len() != t_pos {
            return r.error(at, format!("declared {t_pos} labels, found {}", labels.len()));
        }
        if labels.iter().any(|&l| l >= c) || !labels.windows(2).all(|w| w[0] < w[1]) {
            return r.error(at, "labels must be ascending, distinct and below c");
        }

        let at = r.offset();
        let planted_line = r.line()?;
        let mut parts = planted_line.split(' ');
        if parts.next() != Some("planted") {
            return r.error(at, "expected a planted line");
        }
        let mut planted = Vec::with_capacity(t_pos);
        for (i, part) in parts.enumerate() {
            let parsed = part.split_once(':').and_then(|(l, cells)| {
                let l: usize = l.parse().ok()?;
                let cells: Option<Vec<usize>> = cells.split(',').map(|s| s.parse().ok()).collect();
                Some((l, cells?))
            });
            match parsed {
                Some((l, cells)) if labels.get(i) == Some(&l) && cells.iter().all(|&x| x < m) => {
                    planted.push(cells)
                }
                _ => return r.error(at, format!("malformed planted entry {part:?}")),
            }
        }
        if planted.len() != t_pos {
            return r.error(at, format!("{} planted entries for {t_pos} labels", planted.len()));
        }

        let values = r.f64s(m * k)?;
        instances.push(Instance {
            id: id.to_string(),
            features: FeatureMaps::from_rows(m, k, values)?,
            labels: labels.to_vec(),
            planted,
        });
    }
    if !r.at_end() {
        return r.error(r.offset(), "trailing bytes after last instance");
    }
    Ok(DatasetManifest {
        labels: c,
        regions: m,
        feature_dim: k,
        instances,
    })
}

pub fn save_dataset(ds: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    from_bytes(&fs::read(path)?)
}
