//! Plain-text checkpoint format.
//!
//! ```text
//! tkp-checkpoint 1
//! config_sha256 <64 hex digits>
//! config_lines <n>
//! <n lines: canonical TOML of the run configuration>
//! tensors <count>
//! <name> <shape, extents joined by x> <values, row-major>
//! ...
//! ```
//!
//! Tensors appear in the model's parameter order. The digest covers the
//! embedded configuration text, and loading fails if either disagrees.
//! Saving a loaded checkpoint reproduces the file byte for byte.

use std::fmt::Write as _;

use tkp_core::train::{Model, RunConfig};

use crate::config::{canonical_toml, config_digest, ConfigFile};
use crate::error::CliError;
use crate::text::Cursor;

pub const TAG: &str = "tkp-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
}

impl Checkpoint {
    pub fn digest(&self) -> String {
        config_digest(&self.config)
    }
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn write_checkpoint(ck: &Checkpoint) -> String {
    let toml = canonical_toml(&ck.config);
    let mut out = format!(
        "{TAG} {VERSION}\nconfig_sha256 {}\nconfig_lines {}\n{toml}",
        ck.digest(),
        toml.lines().count()
    );
    if !toml.ends_with('\n') {
        out.push('\n');
    }
    let named = ck.model.named();
    writeln!(out, "tensors {}", named.len()).unwrap();
    for (name, t) in named {
        write!(out, "{name} {}", shape_string(t.shape())).unwrap();
        for x in t.data() {
            write!(out, " {x}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<Checkpoint, CliError> {
    let mut c = Cursor::new(TAG, text);
    c.header(TAG, VERSION)?;
    let digest: String = c.keyed("config_sha256")?;
    let n: usize = c.keyed("config_lines")?;
    let mut toml = String::new();
    for _ in 0..n {
        toml.push_str(c.next_line()?);
        toml.push('\n');
    }
    let config = ConfigFile::parse(&toml)?.to_run()?;
    if config_digest(&config) != digest {
        return Err(c.err("embedded configuration does not match its digest"));
    }
    let mut model = Model::init(&config)?;
    let count: usize = c.keyed("tensors")?;
    let names: Vec<(String, Vec<usize>)> = model
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if count != names.len() {
        return Err(c.err(format!(
            "configuration has {} tensors, file declares {count}",
            names.len()
        )));
    }
    let mut targets = model.tensors_mut();
    for ((name, shape), target) in names.iter().zip(targets.iter_mut()) {
        let line = c.next_line()?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(name.as_str()) {
            return Err(c.err(format!("expected tensor {name}")));
        }
        if fields.next() != Some(shape_string(shape).as_str()) {
            return Err(c.err(format!("{name} should have shape {}", shape_string(shape))));
        }
        let values = fields
            .map(|f| c.parse_f64(f))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != target.len() {
            return Err(c.err(format!(
                "{name} needs {} values, found {}",
                target.len(),
                values.len()
            )));
        }
        target.data_mut().copy_from_slice(&values);
    }
    if !c.at_end() {
        return Err(c.err("trailing content after the last tensor"));
    }
    Ok(Checkpoint { config, model })
}
