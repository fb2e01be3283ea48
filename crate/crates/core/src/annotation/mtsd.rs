//! `MTSD1` dataset files.
//!
//! ```text
//! MTSD1 samples=<n> grid=<H>x<W> classes=<K> dataset=<id>\n
//! per sample:
//!   image            TNSR1 block, shape C×H×W
//!   semantic         H·W bytes, row-major, 255 = ignore
//!   instance count   u32
//!   per instance     x_min y_min x_max y_max class source run_count (u32 each)
//!                    run_count × u32 run lengths (row-major, unset first)
//!   rbox count       u32
//!   per rbox         cx cy w h theta (f64 each), class (u32)
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::geometry::{HBox, Mask, RotatedBox, SemanticMap};
use super::sample::{InstanceAnnotation, MultiTaskSample};
use crate::error::{Error, Result};
use crate::tensor::{read_line, Tensor};

pub const MTSD1_MAGIC: &str = "MTSD1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub classes: u32,
    pub dataset_id: u32,
    pub samples: Vec<MultiTaskSample>,
}

impl Dataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!(
            "{MTSD1_MAGIC} samples={} grid={}x{} classes={} dataset={}\n",
            self.samples.len(),
            self.height,
            self.width,
            self.classes,
            self.dataset_id
        )
        .into_bytes();
        let u32s = |out: &mut Vec<u8>, v: usize| -> Result<()> {
            let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in u32")))?;
            out.extend_from_slice(&v.to_le_bytes());
            Ok(())
        };
        for (i, s) in self.samples.iter().enumerate() {
            if s.height() != self.height || s.width() != self.width || s.dataset_id != self.dataset_id {
                return Err(Error::Config(format!("sample {i} does not match the dataset header")));
            }
            out.extend(s.image.to_tnsr1_bytes());
            out.extend_from_slice(&s.semantic.data);
            u32s(&mut out, s.instances.len())?;
            for inst in &s.instances {
                let hb = inst.hbox;
                for v in [hb.x_min, hb.y_min, hb.x_max, hb.y_max, inst.class_id] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                u32s(&mut out, inst.source)?;
                let runs = inst.mask.to_runs();
                u32s(&mut out, runs.len())?;
                for r in runs {
                    out.extend_from_slice(&r.to_le_bytes());
                }
            }
            u32s(&mut out, s.rboxes.len())?;
            for b in &s.rboxes {
                for v in [b.cx, b.cy, b.w, b.h, b.theta] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&b.class_id.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::Format { offset, msg };
        let (line, mut pos) = read_line(bytes, 0).ok_or_else(|| fail(0, "missing MTSD1 header line".into()))?;
        let header = parse_header(line).ok_or_else(|| fail(0, format!("malformed MTSD1 header {line:?}")))?;
        let (n, height, width, classes, dataset_id) = header;

        let mut cur = Cursor { bytes, pos: &mut pos };
        let mut samples = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let at = *cur.pos;
            let (image, used) = Tensor::parse_tnsr1(&bytes[at..], at)?;
            if image.rank() != 3 || image.shape()[1] != height || image.shape()[2] != width {
                return Err(fail(at, format!("image shape {:?} does not match grid", image.shape())));
            }
            *cur.pos += used;
            let semantic = SemanticMap {
                height,
                width,
                data: cur.take(height * width)?.to_vec(),
            };
            let n_inst = cur.u32()? as usize;
            let mut instances = Vec::with_capacity(n_inst.min(1 << 16));
            for _ in 0..n_inst {
                let vals = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?];
                let n_runs = cur.u32()? as usize;
                let runs_at = *cur.pos;
                let runs = (0..n_runs).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
                let mask = Mask::from_runs(height, width, &runs).map_err(|e| fail(runs_at, e.to_string()))?;
                instances.push(InstanceAnnotation {
                    hbox: HBox {
                        x_min: vals[0],
                        y_min: vals[1],
                        x_max: vals[2],
                        y_max: vals[3],
                    },
                    mask,
                    class_id: vals[4],
                    source: vals[5] as usize,
                });
            }
            let n_boxes = cur.u32()? as usize;
            let mut rboxes = Vec::with_capacity(n_boxes.min(1 << 16));
            for _ in 0..n_boxes {
                let v = [cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?];
                rboxes.push(RotatedBox {
                    cx: v[0],
                    cy: v[1],
                    w: v[2],
                    h: v[3],
                    theta: v[4],
                    class_id: cur.u32()?,
                });
            }
            samples.push(MultiTaskSample {
                image,
                semantic,
                instances,
                rboxes,
                dataset_id,
            });
        }
        if *cur.pos != bytes.len() {
            return Err(fail(*cur.pos, "trailing bytes after last sample".into()));
        }
        Ok(Self {
            height,
            width,
            classes,
            dataset_id,
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn parse_header(line: &str) -> Option<(usize, usize, usize, u32, u32)> {
    let mut parts = line.split(' ');
    if parts.next()? != MTSD1_MAGIC {
        return None;
    }
    let mut field = |key: &str| parts.next()?.strip_prefix(key)?.strip_prefix('=').map(str::to_string);
    let n = field("samples")?.parse().ok()?;
    let grid = field("grid")?;
    let classes = field("classes")?.parse().ok()?;
    let dataset = field("dataset")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    let (h, w) = grid.split_once('x')?;
    let (h, w) = (h.parse().ok()?, w.parse().ok()?);
    (h > 0 && w > 0).then_some((n, h, w, classes, dataset))
}

struct Cursor<'a, 'b> {
    bytes: &'a [u8],
    pos: &'b mut usize,
}

impl Cursor<'_, '_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let start = *self.pos;
        let end = start
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Format {
                offset: start,
                msg: format!("truncated: need {n} more bytes"),
            })?;
        *self.pos = end;
        Ok(&self.bytes[start..end])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{synth_dataset, SynthSpec};

    fn dataset() -> Dataset {
        let spec = SynthSpec::new(3, 16, 4, (1, 3), 2);
        Dataset {
            height: 16,
            width: 16,
            classes: 4,
            dataset_id: 2,
            samples: synth_dataset(&spec, 11).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let d = dataset();
        let bytes = d.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_is_text() {
        let bytes = dataset().to_bytes().unwrap();
        assert!(bytes.starts_with(b"MTSD1 samples=3 grid=16x16 classes=4 dataset=2\n"));
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = dataset().to_bytes().unwrap();
        let cut = bytes.len() - 3;
        match Dataset::from_bytes(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset <= cut && offset > 0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Dataset::from_bytes(b"MTSD2 samples=0\n"),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
