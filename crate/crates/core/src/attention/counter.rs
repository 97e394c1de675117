use std::ops::AddAssign;

/// Scalar operation tallies of an attention block, split by role.
///
/// Kernels increment these while they execute; the analytic cost model in
/// [`crate::flops`] predicts the same fields from shapes alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    /// 1×1×1 projections: queries, keys, values and the output projection.
    pub projection_macs: u64,
    /// `q·k` logit contractions.
    pub score_macs: u64,
    /// `q·r_q` and `k·r_k` logit contractions against relative tables.
    pub positional_macs: u64,
    /// Weighted sums of values.
    pub value_macs: u64,
    /// Element-wise additions of positional encodings.
    pub encoding_adds: u64,
    /// Exponentials evaluated in softmax.
    pub softmax_exps: u64,
}

impl OpCounts {
    /// Multiplies performed in the score and value contractions.
    pub fn attention_macs(&self) -> u64 {
        self.score_macs + self.positional_macs + self.value_macs
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.projection_macs += o.projection_macs;
        self.score_macs += o.score_macs;
        self.positional_macs += o.positional_macs;
        self.value_macs += o.value_macs;
        self.encoding_adds += o.encoding_adds;
        self.softmax_exps += o.softmax_exps;
    }
}
