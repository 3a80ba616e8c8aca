use std::time::Instant;

use ndarray::Array3;

use crate::data::{normalize, Mask, Volume};
use crate::error::Result;
use crate::model::Model;

use super::volume_tensor;

pub struct Prediction {
    /// `final probability >= threshold`.
    pub mask: Mask,
    pub probabilities: Array3<f32>,
    /// Channel mean of each attention map at the layer-1 resolution.
    pub attention: Option<[Array3<f32>; 4]>,
    /// Wall-clock time of normalization, forward pass and thresholding.
    pub seconds: f64,
}

fn channel_mean(t: &daf3d_tensor::Tensor<f32>) -> Array3<f32> {
    let s = t.shape();
    let (c, w, h, l) = (s[1], s[2], s[3], s[4]);
    let n = w * h * l;
    let mut out = vec![0.0f32; n];
    for ch in 0..c {
        for (o, &v) in out.iter_mut().zip(&t.data()[ch * n..(ch + 1) * n]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= c as f32);
    Array3::from_shape_vec((w, h, l), out).expect("extent matches")
}

pub fn predict_volume(model: &Model<f32>, v: &Volume, threshold: f32, with_attention: bool) -> Result<Prediction> {
    let start = Instant::now();
    let x = volume_tensor::<f32>(&normalize(v));
    let (final_pred, maps) = if with_attention {
        let (b, maps) = model.predict_with_attention(&x)?;
        (b.final_pred, Some(maps))
    } else {
        (model.predict(&x)?.final_pred, None)
    };
    let [w, h, l] = v.shape();
    let probabilities = Array3::from_shape_vec((w, h, l), final_pred.into_data()).expect("prediction has the input extent");
    let mask = Mask::threshold(&probabilities, threshold, v.spacing);
    let seconds = start.elapsed().as_secs_f64();
    let attention = maps.map(|m| [channel_mean(&m[0]), channel_mean(&m[1]), channel_mean(&m[2]), channel_mean(&m[3])]);
    Ok(Prediction { mask, probabilities, attention, seconds })
}
