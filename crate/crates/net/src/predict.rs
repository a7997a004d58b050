use mbhr_core::eval::HeightPredictor;
use mbhr_core::{Grid, HeightMap, Sample};
use tch::{Kind, Tensor};

use crate::data::{Normalization, TileTensors};
use crate::error::Result;
use crate::model::MbhrNet;

/// Months per forward pass at inference; bounds peak memory.
const INFER_CHUNK: i64 = 4;

/// A trained network plus the statistics its inputs were normalized with.
#[derive(Debug)]
pub struct NetPredictor {
    pub model: MbhrNet,
    pub normalization: Normalization,
}

impl NetPredictor {
    pub fn new(model: MbhrNet, normalization: Normalization) -> Self {
        NetPredictor { model, normalization }
    }

    /// `(months, 1, H, W)` predictions for already-normalized tile tensors.
    pub fn predict_tensors(&self, tile: &TileTensors) -> Result<Tensor> {
        predict_months_tensor(&self.model, tile)
    }
}

pub fn predict_months_tensor(model: &MbhrNet, tile: &TileTensors) -> Result<Tensor> {
    let n = tile.s1.size()[0];
    let dev = model.device();
    let kind = model.kind();
    let mut outs = Vec::new();
    let mut start = 0;
    while start < n {
        let len = INFER_CHUNK.min(n - start);
        let s2 = tile.s2.narrow(0, start, len).to_device(dev).to_kind(kind);
        let s1 = tile.s1.narrow(0, start, len).to_device(dev).to_kind(kind);
        outs.push(model.predict(&s2, &s1)?);
        start += len;
    }
    Ok(Tensor::cat(&outs, 0))
}

impl HeightPredictor for NetPredictor {
    fn predict_months(&self, rec: &Sample) -> mbhr_core::Result<Vec<HeightMap<f32>>> {
        let tile = TileTensors::from_record(rec, &self.normalization)?;
        let out = self.predict_tensors(&tile)?.to_kind(Kind::Float).to_device(tch::Device::Cpu);
        let (w, h) = (rec.reference.width(), rec.reference.height());
        (0..out.size()[0])
            .map(|m| {
                let v = Vec::<f32>::try_from(out.get(m).flatten(0, -1)).map_err(|e| crate::NetError::from(e))?;
                Ok(Grid::from_vec(w, h, v)?)
            })
            .collect()
    }
}
