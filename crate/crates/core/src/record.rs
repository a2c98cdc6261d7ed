use crate::encoding::{
    encode_geo, CompositeVector, GeoCoordinate, GeoEncoding, ModalityEmbedding, Schema,
    TimeEncoding,
};
use crate::error::{schema, Result};
use crate::RecordId;

/// One database item: content sub-embeddings, a timestamp and a location.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatRecord {
    pub id: RecordId,
    /// One unit-norm vector per content modality, in schema order.
    pub content: Vec<Vec<f64>>,
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub location: GeoCoordinate,
}

impl SpatRecord {
    pub fn content_embeddings(&self) -> Result<Vec<ModalityEmbedding>> {
        self.content
            .iter()
            .enumerate()
            .map(|(i, v)| ModalityEmbedding::new(i, v.clone()))
            .collect()
    }

    pub fn geo_encoding(&self) -> GeoEncoding {
        encode_geo(&self.location)
    }

    /// Composite for a spatiotemporal schema, given the already computed time phase.
    pub fn compose(&self, schema: &Schema, phase: f64) -> Result<CompositeVector> {
        if self.content.len() != schema.content_count() {
            return Err(self::schema(format!(
                "record {} has {} content blocks, schema expects {}",
                self.id,
                self.content.len(),
                schema.content_count()
            )));
        }
        schema.compose_record(
            &self.content_embeddings()?,
            &TimeEncoding::from_phase(phase),
            &self.geo_encoding(),
        )
    }
}
