//! Checkpoint files: a plain-text header describing every layer and its
//! parameter shapes, then the values as little-endian `f64` in declaration
//! order, then a little-endian `u64` value count.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::network::Network;
use crate::error::{Error, IoContext, Result};

const MAGIC: &str = "fieldrecon-checkpoint v1";

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Header text for a network; also used to validate a file against the
/// network it is loaded into.
pub fn header(net: &Network) -> String {
    let mut out = format!("{MAGIC}\nlayers {}\n", net.layers.len());
    let buffers = net.buffers();
    for (i, layer) in net.layers.iter().enumerate() {
        let _ = write!(out, "{} {}", layer.name, layer.spec.kind());
        for p in layer.params.clone() {
            let p = net.store().get(p);
            let _ = write!(out, " {}:{}", p.kind.label(), shape_str(p.value.shape()));
        }
        if let Some((_, m, v)) = buffers.iter().find(|(l, _, _)| *l == i) {
            let _ = write!(out, " running_mean:{} running_var:{}", m.len(), v.len());
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

fn values(net: &Network) -> Vec<f64> {
    let mut out = Vec::new();
    let buffers = net.buffers();
    for (i, layer) in net.layers.iter().enumerate() {
        for p in layer.params.clone() {
            out.extend_from_slice(net.store().get(p).value.data());
        }
        if let Some((_, m, v)) = buffers.iter().find(|(l, _, _)| *l == i) {
            out.extend_from_slice(m);
            out.extend_from_slice(v);
        }
    }
    out
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let vals = values(net);
    let mut bytes = header(net).into_bytes();
    bytes.reserve(vals.len() * 8 + 8);
    for v in &vals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&(vals.len() as u64).to_le_bytes());
    let mut f = fs::File::create(path).at(path)?;
    f.write_all(&bytes).at(path)?;
    Ok(())
}

/// Load values into a network whose topology matches the file header.
pub fn load(net: &mut Network, path: &Path) -> Result<()> {
    let bytes = fs::read(path).at(path)?;
    let bad = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
    let end = find_subslice(&bytes, b"\nend\n").ok_or_else(|| bad("missing checkpoint header"))? + 5;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    if !head.starts_with(MAGIC) {
        return Err(bad("not a checkpoint file"));
    }
    if head != header(net) {
        return Err(bad("checkpoint layers do not match the configured network"));
    }
    let body = &bytes[end..];
    if body.len() < 8 || (body.len() - 8) % 8 != 0 {
        return Err(bad("truncated checkpoint"));
    }
    let (data, tail) = body.split_at(body.len() - 8);
    let count = u64::from_le_bytes(tail.try_into().unwrap()) as usize;
    let expected = values(net).len();
    if count != data.len() / 8 || count != expected {
        return Err(bad(&format!(
            "truncated checkpoint: header expects {expected} values, file holds {} (count field {count})",
            data.len() / 8
        )));
    }
    let mut vals = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut buffer_updates = Vec::new();
    let buffer_layers: Vec<(usize, usize)> = net.buffers().iter().map(|(l, m, _)| (*l, m.len())).collect();
    for i in 0..net.layers.len() {
        for p in net.layers[i].params.clone() {
            for v in net.store_mut().get_mut(p).value.data_mut() {
                *v = vals.next().unwrap();
            }
        }
        if let Some(&(_, len)) = buffer_layers.iter().find(|(l, _)| *l == i) {
            let mean: Vec<f64> = vals.by_ref().take(len).collect();
            let var: Vec<f64> = vals.by_ref().take(len).collect();
            buffer_updates.push((i, mean, var));
        }
    }
    for (i, m, v) in buffer_updates {
        net.set_buffers(i, m, v);
    }
    Ok(())
}

pub const BUNDLE_INDEX: &str = "index.txt";
const BUNDLE_MAGIC: &str = "fieldrecon-bundle v1";

/// Contents of a bundle index: model kind, architecture keys, and the
/// checkpoint file of each named network.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleIndex {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub nets: Vec<(String, String)>,
}

impl BundleIndex {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// A required numeric or otherwise parseable key.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Data(format!("model index is missing {key}")))?;
        v.parse()
            .map_err(|_| Error::Data(format!("model index has invalid {key} {v:?}")))
    }
}

/// Write one checkpoint per network plus an index into `dir`.
pub fn save_bundle(dir: &Path, kind: &str, meta: &[(String, String)], nets: &[(String, &Network)]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut index = format!("{BUNDLE_MAGIC}\nkind {kind}\n");
    for (k, v) in meta {
        let _ = writeln!(index, "meta {k} {v}");
    }
    for (name, net) in nets {
        let file = format!("{name}.ckpt");
        save(net, &dir.join(&file))?;
        let _ = writeln!(index, "net {name} {file}");
    }
    let path = dir.join(BUNDLE_INDEX);
    fs::write(&path, index).at(&path)
}

pub fn read_bundle_index(dir: &Path) -> Result<BundleIndex> {
    let path = dir.join(BUNDLE_INDEX);
    let text = fs::read_to_string(&path).at(&path)?;
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(BUNDLE_MAGIC) {
        return Err(bad("not a model index".into()));
    }
    let mut index = BundleIndex {
        kind: String::new(),
        meta: Vec::new(),
        nets: Vec::new(),
    };
    for line in lines {
        let mut parts = line.splitn(3, ' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("kind"), Some(k), None) => index.kind = k.to_string(),
            (Some("meta"), Some(k), Some(v)) => index.meta.push((k.to_string(), v.to_string())),
            (Some("net"), Some(n), Some(f)) => index.nets.push((n.to_string(), f.to_string())),
            _ => return Err(bad(format!("malformed line {line:?}"))),
        }
    }
    Ok(index)
}

/// Load every network of a bundle; names and topologies must match.
pub fn load_bundle(dir: &Path, kind: &str, nets: &mut [(String, &mut Network)]) -> Result<BundleIndex> {
    let index = read_bundle_index(dir)?;
    if index.kind != kind {
        return Err(Error::Data(format!(
            "{}: expected a {kind} model, found {}",
            dir.display(),
            index.kind
        )));
    }
    if index.nets.len() != nets.len() {
        return Err(Error::Data(format!(
            "{}: index lists {} networks, model has {}",
            dir.display(),
            index.nets.len(),
            nets.len()
        )));
    }
    for ((name, file), (want, net)) in index.nets.iter().zip(nets.iter_mut()) {
        if name != want {
            return Err(Error::Data(format!("{}: expected network {want}, found {name}", dir.display())));
        }
        load(net, &dir.join(file))?;
    }
    Ok(index)
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
