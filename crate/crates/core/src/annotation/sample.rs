use super::geometry::{compose_semantic, min_hbox, rasterize_rbox, HBox, Mask, RotatedBox, SemanticMap, IGNORE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceAnnotation {
    pub hbox: HBox,
    pub mask: Mask,
    pub class_id: u32,
    /// Index of the rotated box this instance was derived from.
    pub source: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskSample {
    /// `C×H×W`.
    pub image: Tensor,
    pub semantic: SemanticMap,
    pub instances: Vec<InstanceAnnotation>,
    pub rboxes: Vec<RotatedBox>,
    pub dataset_id: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuiltSample {
    pub sample: MultiTaskSample,
    /// Boxes whose rasterization was empty and produced no instance.
    pub dropped: usize,
}

/// Rasterizes every box, derives horizontal boxes and the semantic map.
pub fn build_sample(rboxes: &[RotatedBox], image: Tensor, dataset_id: u32) -> Result<BuiltSample> {
    let (_, h, w) = image.dims3("build_sample")?;
    for b in rboxes {
        b.validate()?;
    }
    let mut instances = Vec::with_capacity(rboxes.len());
    let mut dropped = 0;
    for (source, b) in rboxes.iter().enumerate() {
        let mask = rasterize_rbox(b, h, w);
        match min_hbox(&mask) {
            Ok(hbox) => instances.push(InstanceAnnotation {
                hbox,
                mask,
                class_id: b.class_id,
                source,
            }),
            Err(Error::EmptyAnnotation) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if instances.is_empty() {
        return Err(Error::DegenerateSample(format!(
            "none of {} boxes covers a pixel center",
            rboxes.len()
        )));
    }
    let layers: Vec<_> = instances.iter().map(|i| (&i.mask, i.class_id)).collect();
    let semantic = compose_semantic(&layers, h, w)?;
    Ok(BuiltSample {
        sample: MultiTaskSample {
            image,
            semantic,
            instances,
            rboxes: rboxes.to_vec(),
            dataset_id,
        },
        dropped,
    })
}

impl MultiTaskSample {
    pub fn height(&self) -> usize {
        self.semantic.height
    }

    pub fn width(&self) -> usize {
        self.semantic.width
    }

    /// Checks every structural invariant: shared grid, each instance
    /// derived from exactly one box, masks and horizontal boxes consistent
    /// with the boxes, class ids in range and the semantic map equal to
    /// the list-order composition.
    pub fn audit(&self, classes: u32) -> Result<()> {
        let bad = |m: String| Err(Error::Label(m));
        let (_, h, w) = self.image.dims3("audit")?;
        if self.semantic.height != h || self.semantic.width != w || self.semantic.data.len() != h * w {
            return bad(format!("semantic map is not {h}x{w}"));
        }
        let mut used = vec![false; self.rboxes.len()];
        for b in &self.rboxes {
            b.validate()?;
            if b.class_id >= classes {
                return bad(format!("box class {} >= {classes}", b.class_id));
            }
        }
        let mut last_source = None;
        for (i, inst) in self.instances.iter().enumerate() {
            let Some(b) = self.rboxes.get(inst.source) else {
                return bad(format!("instance {i} names missing box {}", inst.source));
            };
            if used[inst.source] || last_source.is_some_and(|s| s >= inst.source) {
                return bad(format!("instance {i} reuses or reorders box {}", inst.source));
            }
            used[inst.source] = true;
            last_source = Some(inst.source);
            if inst.mask.height() != h || inst.mask.width() != w {
                return bad(format!("instance {i} mask is not {h}x{w}"));
            }
            if inst.mask != rasterize_rbox(b, h, w) {
                return bad(format!("instance {i} mask differs from its box rasterization"));
            }
            if min_hbox(&inst.mask)? != inst.hbox {
                return bad(format!("instance {i} hbox is not the mask extent"));
            }
            if inst.class_id != b.class_id {
                return bad(format!("instance {i} class differs from its box"));
            }
        }
        for (j, b) in self.rboxes.iter().enumerate() {
            if !used[j] && !rasterize_rbox(b, h, w).is_empty() {
                return bad(format!("box {j} covers pixels but has no instance"));
            }
        }
        let layers: Vec<_> = self.instances.iter().map(|i| (&i.mask, i.class_id)).collect();
        if compose_semantic(&layers, h, w)? != self.semantic {
            return bad("semantic map differs from instance composition".into());
        }
        if self.semantic.data.iter().any(|&v| v != IGNORE && v as u32 >= classes) {
            return bad("semantic class out of range".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_instance_extent() {
        let b = RotatedBox::new(4.0, 3.0, 5.0, 3.0, 0.0, 2).unwrap();
        let built = build_sample(&[b], Tensor::zeros(&[1, 8, 8]), 0).unwrap();
        let hb = built.sample.instances[0].hbox;
        assert_eq!((hb.x_min, hb.y_min, hb.x_max, hb.y_max), (2, 2, 6, 4));
        assert_eq!(built.dropped, 0);
        built.sample.audit(3).unwrap();
    }

    #[test]
    fn off_grid_boxes_are_dropped() {
        let on = RotatedBox::new(1.0, 1.0, 2.0, 2.0, 0.0, 0).unwrap();
        let off = RotatedBox::new(40.0, 40.0, 2.0, 2.0, 0.0, 1).unwrap();
        let built = build_sample(&[off, on], Tensor::zeros(&[1, 4, 4]), 0).unwrap();
        assert_eq!(built.dropped, 1);
        assert_eq!(built.sample.instances[0].source, 1);
        built.sample.audit(2).unwrap();
    }

    #[test]
    fn no_boxes_is_degenerate() {
        let err = build_sample(&[], Tensor::zeros(&[1, 4, 4]), 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateSample(_)));
    }

    #[test]
    fn audit_catches_tampering() {
        let b = RotatedBox::new(2.0, 2.0, 3.0, 3.0, 0.3, 0).unwrap();
        let mut s = build_sample(&[b], Tensor::zeros(&[1, 6, 6]), 0).unwrap().sample;
        s.instances[0].hbox.x_max += 1;
        assert!(s.audit(1).is_err());
    }
}
