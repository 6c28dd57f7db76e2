//! Plain-text dataset format.
//!
//! ```text
//! tkp-dataset 1
//! input_dim <d>
//! num_identities <n>
//! videos <count>
//! <split> <identity> <camera> <frames> <x_1,1> ... <x_1,d> <x_2,1> ... <x_frames,d>
//! ...
//! ```
//!
//! One video per line. `split` is `train`, `query` or `gallery`; the frame
//! values follow frame by frame. Numbers are written in the shortest form
//! that parses back to the same `f64`, so a dataset survives a round trip
//! bit for bit.

use std::fmt::Write as _;

use tkp_core::data::{Dataset, VideoRecord};

use crate::error::CliError;
use crate::text::Cursor;

pub const TAG: &str = "tkp-dataset";
pub const VERSION: u32 = 1;

pub fn write_dataset(ds: &Dataset) -> String {
    let count = ds.train.len() + ds.query.len() + ds.gallery.len();
    let mut out = format!(
        "{TAG} {VERSION}\ninput_dim {}\nnum_identities {}\nvideos {count}\n",
        ds.input_dim, ds.num_identities
    );
    let splits = [("train", &ds.train), ("query", &ds.query), ("gallery", &ds.gallery)];
    for (split, videos) in splits {
        for v in videos {
            write!(out, "{split} {} {} {}", v.identity, v.camera, v.len()).unwrap();
            for x in v.frames.iter().flatten() {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Dataset, CliError> {
    let mut c = Cursor::new(TAG, text);
    c.header(TAG, VERSION)?;
    let input_dim: usize = c.keyed("input_dim")?;
    let num_identities: usize = c.keyed("num_identities")?;
    let count: usize = c.keyed("videos")?;
    if input_dim == 0 {
        return Err(c.err("input_dim must be positive"));
    }
    let mut ds = Dataset {
        input_dim,
        num_identities,
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
    };
    for _ in 0..count {
        let line = c.next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(c.err("expected split, identity, camera and frame count"));
        }
        let split = fields[0];
        let identity: usize = c.parse(fields[1])?;
        let camera: usize = c.parse(fields[2])?;
        let frames: usize = c.parse(fields[3])?;
        if frames == 0 {
            return Err(c.err("a video needs at least one frame"));
        }
        let values = fields[4..]
            .iter()
            .map(|f| c.parse_f64(f))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != frames * input_dim {
            return Err(c.err(format!(
                "expected {} values for {frames} frames, found {}",
                frames * input_dim,
                values.len()
            )));
        }
        let video = VideoRecord {
            identity,
            camera,
            frames: values.chunks(input_dim).map(<[f64]>::to_vec).collect(),
        };
        match split {
            "train" => {
                if identity >= num_identities {
                    return Err(c.err(format!(
                        "training identity {identity} outside 0..{num_identities}"
                    )));
                }
                ds.train.push(video)
            }
            "query" => ds.query.push(video),
            "gallery" => ds.gallery.push(video),
            other => return Err(c.err(format!("unknown split {other:?}"))),
        }
    }
    if !c.at_end() {
        return Err(c.err(format!("more than the declared {count} videos")));
    }
    Ok(ds)
}
