use super::{expect_arity, DifferentiableOp};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize of a token-major map `[(h·w) × C] -> [(H·W) × C]`,
/// half-pixel centers, edge clamping.
pub struct UpsampleBilinear {
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    taps_y: Vec<(usize, usize, f64)>,
    taps_x: Vec<(usize, usize, f64)>,
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl UpsampleBilinear {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        Self {
            in_hw,
            out_hw,
            taps_y: axis_taps(in_hw.0, out_hw.0),
            taps_x: axis_taps(in_hw.1, out_hw.1),
        }
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, f64)) {
        let w_in = self.in_hw.1;
        for (oy, &(y0, y1, fy)) in self.taps_y.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in self.taps_x.iter().enumerate() {
                let o = oy * self.out_hw.1 + ox;
                f(o, y0 * w_in + x0, (1.0 - fy) * (1.0 - fx));
                f(o, y0 * w_in + x1, (1.0 - fy) * fx);
                f(o, y1 * w_in + x0, fy * (1.0 - fx));
                f(o, y1 * w_in + x1, fy * fx);
            }
        }
    }
}

impl DifferentiableOp for UpsampleBilinear {
    fn name(&self) -> &str {
        "upsample_bilinear"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_arity("upsample_bilinear", inputs, 1)?;
        let (n, c) = inputs[0].dims2("upsample_bilinear")?;
        if n != self.in_hw.0 * self.in_hw.1 {
            return Err(Error::shape(
                "upsample_bilinear",
                inputs[0].shape(),
                &[self.in_hw.0, self.in_hw.1],
            ));
        }
        let x = inputs[0].data();
        let mut out = vec![0.0; self.out_hw.0 * self.out_hw.1 * c];
        self.for_each_tap(|o, i, w| {
            for ch in 0..c {
                out[o * c + ch] += w * x[i * c + ch];
            }
        });
        Tensor::new(vec![self.out_hw.0 * self.out_hw.1, c], out)
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c) = inputs[0].dims2("upsample_bilinear")?;
        let mut dx = Tensor::zeros(inputs[0].shape());
        let d = dx.data_mut();
        let gd = g.data();
        self.for_each_tap(|o, i, w| {
            for ch in 0..c {
                d[i * c + ch] += w * gd[o * c + ch];
            }
        });
        Ok(vec![dx])
    }
}
