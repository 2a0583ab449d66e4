use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::DEFAULT_HEAD_DIM;
use crate::axes::{PartitionSpec, DEFAULT_PARTITION};
use crate::error::{Error, Result};

/// One of the three sub-layers of a MaxViT block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "C")]
    MbConv,
    #[serde(rename = "BA")]
    BlockAttn,
    #[serde(rename = "GA")]
    GridAttn,
}

impl LayerKind {
    pub fn tag(self) -> &'static str {
        match self {
            LayerKind::MbConv => "C",
            LayerKind::BlockAttn => "BA",
            LayerKind::GridAttn => "GA",
        }
    }
}

/// Order of the sub-layers inside every block, e.g. `C-BA-GA`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BlockOrder(pub [LayerKind; 3]);

impl Default for BlockOrder {
    fn default() -> Self {
        Self([LayerKind::MbConv, LayerKind::BlockAttn, LayerKind::GridAttn])
    }
}

impl BlockOrder {
    pub fn new(order: [LayerKind; 3]) -> Result<Self> {
        let distinct = order[0] != order[1] && order[1] != order[2] && order[0] != order[2];
        if !distinct {
            return Err(Error::Config(format!("block order must use each sub-layer once, got {order:?}")));
        }
        Ok(Self(order))
    }

    /// All six permutations.
    pub fn all() -> Vec<BlockOrder> {
        use LayerKind::*;
        let k = [MbConv, BlockAttn, GridAttn];
        let mut out = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    if let Ok(o) = Self::new([k[a], k[b], k[c]]) {
                        out.push(o);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for BlockOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.0[0].tag(), self.0[1].tag(), self.0[2].tag())
    }
}

impl FromStr for BlockOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<LayerKind> = s
            .split('-')
            .map(|p| match p.trim().to_ascii_uppercase().as_str() {
                "C" => Ok(LayerKind::MbConv),
                "BA" => Ok(LayerKind::BlockAttn),
                "GA" => Ok(LayerKind::GridAttn),
                other => Err(Error::Config(format!("unknown sub-layer {other:?} in block order {s:?}"))),
            })
            .collect::<Result<_>>()?;
        let arr: [LayerKind; 3] =
            parts.try_into().map_err(|_| Error::Config(format!("block order {s:?} must have three parts")))?;
        Self::new(arr)
    }
}

impl TryFrom<String> for BlockOrder {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BlockOrder> for String {
    fn from(o: BlockOrder) -> String {
        o.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    /// Whether the first block halves the resolution.
    pub downsample: bool,
}

impl StageSpec {
    pub const fn new(blocks: usize, channels: usize) -> Self {
        Self { blocks, channels, downsample: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantName {
    T,
    S,
    B,
    L,
    XL,
}

impl VariantName {
    pub const ALL: [VariantName; 5] = [Self::T, Self::S, Self::B, Self::L, Self::XL];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::T => "T",
            Self::S => "S",
            Self::B => "B",
            Self::L => "L",
            Self::XL => "XL",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        let key = key.strip_prefix("MAXVIT-").unwrap_or(&key);
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; valid names are T, S, B, L, XL")))
    }
}

/// Full architecture description of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    pub partition: PartitionSpec,
    pub head_dim: usize,
    pub expansion: usize,
    pub se_ratio: f64,
    pub order: BlockOrder,
}

impl VariantSpec {
    fn family(name: VariantName, stem: usize, blocks: [usize; 4], channels: [usize; 4]) -> Self {
        Self {
            name: name.to_string(),
            stem_channels: stem,
            stages: blocks.iter().zip(channels).map(|(&b, c)| StageSpec::new(b, c)).collect(),
            partition: PartitionSpec::default(),
            head_dim: DEFAULT_HEAD_DIM,
            expansion: 4,
            se_ratio: 0.25,
            order: BlockOrder::default(),
        }
    }

    pub fn named(name: VariantName) -> Self {
        match name {
            VariantName::T => Self::family(name, 64, [2, 2, 5, 2], [64, 128, 256, 512]),
            VariantName::S => Self::family(name, 64, [2, 2, 5, 2], [96, 192, 384, 768]),
            VariantName::B => Self::family(name, 64, [2, 6, 14, 2], [96, 192, 384, 768]),
            VariantName::L => Self::family(name, 128, [2, 6, 14, 2], [128, 256, 512, 1024]),
            VariantName::XL => Self::family(name, 192, [2, 6, 14, 2], [192, 384, 768, 1536]),
        }
    }

    /// Desk-scale model for 56×56 inputs: stem to 28×28, then stages at
    /// 14×14 and 7×7 with 7×7 windows and 8-wide heads.
    pub fn miniature(stages: &[(usize, usize)]) -> Self {
        Self {
            name: "mini".into(),
            stem_channels: 16,
            stages: stages.iter().map(|&(b, c)| StageSpec::new(b, c)).collect(),
            partition: PartitionSpec::default(),
            head_dim: 8,
            expansion: 4,
            se_ratio: 0.25,
            order: BlockOrder::default(),
        }
    }

    pub fn with_order(mut self, order: BlockOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_partition(mut self, partition: PartitionSpec) -> Self {
        self.partition = partition;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stem_channels == 0 {
            return Err(Error::Config("a model needs a stem and at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 {
                return Err(Error::Config(format!("stage {} has no blocks", i + 1)));
            }
            if self.head_dim == 0 || s.channels % self.head_dim != 0 {
                return Err(Error::Config(format!(
                    "stage {} width {} is not divisible by head size {}",
                    i + 1,
                    s.channels,
                    self.head_dim
                )));
            }
        }
        if self.expansion == 0 || !(self.se_ratio > 0.0) {
            return Err(Error::Config("expansion and SE ratio must be positive".into()));
        }
        Ok(())
    }

    /// Spatial extent after the stem and after each stage.
    pub fn stage_resolutions(&self, res: usize) -> Vec<usize> {
        let mut r = res.div_ceil(2);
        let mut out = vec![r];
        for s in &self.stages {
            if s.downsample {
                r = r.div_ceil(2);
            }
            out.push(r);
        }
        out
    }

    /// Attention partition used at input resolution `res`: the configured
    /// one if it divides every stage, otherwise a uniform size equal to the
    /// last stage's extent (a single window there).
    pub fn partition_for(&self, res: usize) -> Result<PartitionSpec> {
        let extents = self.stage_resolutions(res);
        let fits = |p: PartitionSpec| extents[1..].iter().all(|&e| p.check(e, e).is_ok());
        if fits(self.partition) {
            return Ok(self.partition);
        }
        let last = *extents.last().unwrap();
        let alt = PartitionSpec::uniform(last);
        if fits(alt) {
            return Ok(alt);
        }
        Err(Error::Partition { h: res, w: res, size: self.partition.window_size })
    }

    pub fn last_channels(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |s| s.channels)
    }
}

/// True when `res` works with the default 7×7 partition at every stage.
pub fn default_partition_fits(spec: &VariantSpec, res: usize) -> bool {
    let p = PartitionSpec::uniform(DEFAULT_PARTITION);
    spec.stage_resolutions(res)[1..].iter().all(|&e| p.check(e, e).is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layouts() {
        let t = VariantSpec::named(VariantName::T);
        let widths: Vec<usize> = std::iter::once(t.stem_channels).chain(t.stages.iter().map(|s| s.channels)).collect();
        assert_eq!(widths, [64, 64, 128, 256, 512]);
        let l = VariantSpec::named(VariantName::L);
        let blocks: Vec<usize> = l.stages.iter().map(|s| s.blocks).collect();
        assert_eq!(blocks, [2, 6, 14, 2]);
        for v in VariantName::ALL {
            VariantSpec::named(v).validate().unwrap();
        }
    }

    #[test]
    fn stage_resolutions_at_224() {
        let t = VariantSpec::named(VariantName::T);
        assert_eq!(t.stage_resolutions(224), [112, 56, 28, 14, 7]);
        assert!(default_partition_fits(&t, 224));
        assert!(default_partition_fits(&t, 448));
        assert!(!default_partition_fits(&t, 384));
        assert_eq!(t.partition_for(384).unwrap(), PartitionSpec::uniform(12));
        assert_eq!(t.partition_for(512).unwrap(), PartitionSpec::uniform(16));
        assert!(t.partition_for(100).is_err());
    }

    #[test]
    fn parse_names_and_orders() {
        assert_eq!("xl".parse::<VariantName>().unwrap(), VariantName::XL);
        let err = "Q".parse::<VariantName>().unwrap_err().to_string();
        assert!(err.contains("T, S, B, L, XL"));
        let o: BlockOrder = "GA-BA-C".parse().unwrap();
        assert_eq!(o.to_string(), "GA-BA-C");
        assert!("C-C-GA".parse::<BlockOrder>().is_err());
        assert_eq!(BlockOrder::all().len(), 6);
    }

    #[test]
    fn rejects_bad_width() {
        let mut v = VariantSpec::named(VariantName::T);
        v.stages[0].channels = 48;
        assert!(matches!(v.validate(), Err(Error::Config(_))));
    }
}
