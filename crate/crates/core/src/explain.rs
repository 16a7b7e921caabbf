//! The common execution protocol shared by every explainer.

use crate::error::Result;
use crate::record::EcgRecord;
use crate::wrapper::WrappedModel;

/// Explains one model output for one record.
pub trait Explainer {
    type Output;

    /// Method name as used in configs and manifests.
    fn name(&self) -> &'static str;

    fn explain(&self, model: &WrappedModel, record: &EcgRecord, target: usize) -> Result<Self::Output>;

    /// Explains each record in order.
    fn explain_all(&self, model: &WrappedModel, records: &[EcgRecord], target: usize) -> Result<Vec<Self::Output>> {
        records.iter().map(|r| self.explain(model, r, target)).collect()
    }
}
