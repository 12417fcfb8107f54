//! Binary model snapshots.
//!
//! A model file is `"SMDM"`, version `0x01`, kind `0x04`, the schema
//! fingerprint (u64), the partition count (u16) and one length-prefixed
//! learner body per partition. All integers are big-endian.

use super::hoeffding::{Leaf, Node, NumericObserver, Observer, Split};
use super::stats::{CategoricalCounts, GaussianStats};
use super::{
    AttributeStats, FeatureKind, FeatureLayout, HoeffdingConfig, HoeffdingTree, Learner, LearnerError, MajorityClass,
    NaiveBayes, SplitTest,
};
use crate::codec::{DecodeError, Reader, Writer};
use crate::schema::DatasetSchema;

const MAGIC: &[u8; 4] = b"SMDM";
const VERSION: u8 = 0x01;
const KIND_STATE: u8 = 0x04;

const TAG_MAJORITY: u8 = 0;
const TAG_NB: u8 = 1;
const TAG_HT: u8 = 2;

impl From<DecodeError> for LearnerError {
    fn from(e: DecodeError) -> Self {
        LearnerError::Snapshot(e.to_string())
    }
}

fn bad(msg: impl Into<String>) -> LearnerError {
    LearnerError::Snapshot(msg.into())
}

/// Serializes one model per partition together with the schema fingerprint.
pub fn encode_model(schema: &DatasetSchema, partitions: &[Learner]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC).u8(VERSION).u8(KIND_STATE);
    w.u64(schema.fingerprint()).u16(partitions.len() as u16);
    for learner in partitions {
        w.blob(&encode_learner(learner));
    }
    w.into_bytes()
}

/// Inverse of [`encode_model`]; fails if the file was written for another schema.
pub fn decode_model(bytes: &[u8], schema: &DatasetSchema) -> Result<Vec<Learner>, LearnerError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = r.u8()?;
    if kind != KIND_STATE {
        return Err(bad(format!("unexpected frame kind {kind:#04x}")));
    }
    let fingerprint = r.u64()?;
    if fingerprint != schema.fingerprint() {
        return Err(LearnerError::SchemaMismatch(format!(
            "snapshot fingerprint {fingerprint:016x} != schema {:016x}",
            schema.fingerprint()
        )));
    }
    let layout = FeatureLayout::from_schema(schema);
    let n = r.u16()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let learner = decode_learner(r.blob()?)?;
        if learner_layout(&learner) != &layout {
            return Err(LearnerError::SchemaMismatch(
                "learner layout differs from schema".into(),
            ));
        }
        out.push(learner);
    }
    r.finish()?;
    Ok(out)
}

fn learner_layout(l: &Learner) -> &FeatureLayout {
    match l {
        Learner::Majority(m) => &m.layout,
        Learner::NaiveBayes(m) => &m.layout,
        Learner::Hoeffding(m) => &m.layout,
    }
}

/// Body of a single learner, without the file header.
pub fn encode_learner(learner: &Learner) -> Vec<u8> {
    let mut w = Writer::new();
    match learner {
        Learner::Majority(m) => {
            w.u8(TAG_MAJORITY);
            write_layout(&mut w, &m.layout);
            write_counts(&mut w, &m.counts);
        }
        Learner::NaiveBayes(m) => {
            w.u8(TAG_NB);
            write_layout(&mut w, &m.layout);
            write_counts(&mut w, &m.class_counts);
            for stats in &m.attributes {
                match stats {
                    AttributeStats::Numeric(per_class) => {
                        w.u8(0);
                        per_class.iter().for_each(|g| write_gaussian(&mut w, g));
                    }
                    AttributeStats::Categorical(c) => {
                        w.u8(1);
                        write_counts(&mut w, c.raw());
                    }
                }
            }
        }
        Learner::Hoeffding(t) => {
            w.u8(TAG_HT);
            write_layout(&mut w, &t.layout);
            w.u64(t.config.grace_period)
                .f64(t.config.delta)
                .f64(t.config.tie_threshold);
            w.u32(t.nodes.len() as u32);
            for node in &t.nodes {
                write_node(&mut w, node);
            }
        }
    }
    w.into_bytes()
}

pub fn decode_learner(bytes: &[u8]) -> Result<Learner, LearnerError> {
    let mut r = Reader::new(bytes);
    let tag = r.u8()?;
    let layout = read_layout(&mut r)?;
    let k = layout.num_classes;
    let learner = match tag {
        TAG_MAJORITY => {
            let counts = read_counts(&mut r, k)?;
            Learner::Majority(MajorityClass { layout, counts })
        }
        TAG_NB => {
            let class_counts = read_counts(&mut r, k)?;
            let mut attributes = Vec::with_capacity(layout.features.len());
            for f in &layout.features {
                let kind = r.u8()?;
                attributes.push(match (kind, f) {
                    (0, FeatureKind::Numeric) => {
                        AttributeStats::Numeric((0..k).map(|_| read_gaussian(&mut r)).collect::<Result<_, _>>()?)
                    }
                    (1, FeatureKind::Categorical(d)) => AttributeStats::Categorical(read_categorical(&mut r, k, *d)?),
                    _ => return Err(bad(format!("attribute kind {kind} does not match layout"))),
                });
            }
            Learner::NaiveBayes(NaiveBayes {
                layout,
                class_counts,
                attributes,
            })
        }
        TAG_HT => {
            let config = HoeffdingConfig {
                grace_period: r.u64()?,
                delta: r.f64()?,
                tie_threshold: r.f64()?,
            };
            config.validate().map_err(|e| bad(e.to_string()))?;
            let n = r.u32()? as usize;
            if n == 0 {
                return Err(bad("tree without nodes"));
            }
            let mut nodes = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                nodes.push(read_node(&mut r, &layout)?);
            }
            for node in &nodes {
                if let Node::Split(s) = node {
                    if s.children.iter().any(|&c| c == 0 || c >= n) {
                        return Err(bad("child index out of range"));
                    }
                }
            }
            Learner::Hoeffding(HoeffdingTree { layout, config, nodes })
        }
        other => return Err(bad(format!("unknown learner tag {other}"))),
    };
    r.finish()?;
    Ok(learner)
}

fn write_layout(w: &mut Writer, layout: &FeatureLayout) {
    w.u16(layout.num_classes as u16).u16(layout.features.len() as u16);
    for f in &layout.features {
        match f {
            FeatureKind::Numeric => w.u8(0).u16(0),
            FeatureKind::Categorical(d) => w.u8(1).u16(*d as u16),
        };
    }
}

fn read_layout(r: &mut Reader<'_>) -> Result<FeatureLayout, LearnerError> {
    let k = r.u16()? as usize;
    if k == 0 {
        return Err(bad("zero classes"));
    }
    let n = r.u16()? as usize;
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = r.u8()?;
        let d = r.u16()? as usize;
        features.push(match kind {
            0 => FeatureKind::Numeric,
            1 if d > 0 => FeatureKind::Categorical(d),
            _ => return Err(bad(format!("bad feature kind {kind}/{d}"))),
        });
    }
    Ok(FeatureLayout {
        features,
        num_classes: k,
    })
}

fn write_counts(w: &mut Writer, counts: &[u64]) {
    counts.iter().for_each(|&c| {
        w.u64(c);
    });
}

fn read_counts(r: &mut Reader<'_>, n: usize) -> Result<Vec<u64>, LearnerError> {
    (0..n).map(|_| r.u64().map_err(Into::into)).collect()
}

fn read_categorical(r: &mut Reader<'_>, k: usize, d: usize) -> Result<CategoricalCounts, LearnerError> {
    let raw = read_counts(r, k * d)?;
    CategoricalCounts::from_parts(k, d, raw).ok_or_else(|| bad("categorical counts size"))
}

fn write_gaussian(w: &mut Writer, g: &GaussianStats) {
    w.u64(g.count).f64(g.mean).f64(g.m2);
}

fn read_gaussian(r: &mut Reader<'_>) -> Result<GaussianStats, LearnerError> {
    Ok(GaussianStats {
        count: r.u64()?,
        mean: r.f64()?,
        m2: r.f64()?,
    })
}

fn write_node(w: &mut Writer, node: &Node) {
    match node {
        Node::Leaf(leaf) => {
            w.u8(0);
            write_counts(w, &leaf.class_counts);
            w.u64(leaf.observed).u64(leaf.last_evaluation);
            for obs in &leaf.observers {
                match obs {
                    Observer::Numeric(o) => {
                        for c in 0..o.per_class.len() {
                            write_gaussian(w, &o.per_class[c]);
                            w.f64(o.min[c]).f64(o.max[c]);
                        }
                    }
                    Observer::Categorical(c) => write_counts(w, c.raw()),
                }
            }
        }
        Node::Split(split) => {
            w.u8(1).u16(split.feature as u16);
            match split.test {
                SplitTest::Categorical => w.u8(0),
                SplitTest::Numeric { threshold } => w.u8(1).f64(threshold),
            };
            w.u16(split.children.len() as u16);
            for (&child, &traffic) in split.children.iter().zip(&split.traffic) {
                w.u32(child as u32).u64(traffic);
            }
        }
    }
}

fn read_node(r: &mut Reader<'_>, layout: &FeatureLayout) -> Result<Node, LearnerError> {
    let k = layout.num_classes;
    match r.u8()? {
        0 => {
            let class_counts = read_counts(r, k)?;
            let observed = r.u64()?;
            let last_evaluation = r.u64()?;
            let mut observers = Vec::with_capacity(layout.features.len());
            for f in &layout.features {
                observers.push(match f {
                    FeatureKind::Numeric => {
                        let mut o = NumericObserver {
                            per_class: Vec::with_capacity(k),
                            min: Vec::with_capacity(k),
                            max: Vec::with_capacity(k),
                        };
                        for _ in 0..k {
                            o.per_class.push(read_gaussian(r)?);
                            o.min.push(r.f64()?);
                            o.max.push(r.f64()?);
                        }
                        Observer::Numeric(o)
                    }
                    FeatureKind::Categorical(d) => Observer::Categorical(read_categorical(r, k, *d)?),
                });
            }
            Ok(Node::Leaf(Leaf {
                class_counts,
                observed,
                last_evaluation,
                observers,
            }))
        }
        1 => {
            let feature = r.u16()? as usize;
            let test = match r.u8()? {
                0 => SplitTest::Categorical,
                1 => SplitTest::Numeric { threshold: r.f64()? },
                t => return Err(bad(format!("bad split test {t}"))),
            };
            let expected = match (layout.features.get(feature), test) {
                (Some(FeatureKind::Categorical(d)), SplitTest::Categorical) => *d,
                (Some(FeatureKind::Numeric), SplitTest::Numeric { .. }) => 2,
                _ => return Err(bad(format!("split on feature {feature} does not match layout"))),
            };
            let n = r.u16()? as usize;
            if n != expected {
                return Err(bad(format!("split has {n} branches, expected {expected}")));
            }
            let mut children = Vec::with_capacity(n);
            let mut traffic = Vec::with_capacity(n);
            for _ in 0..n {
                children.push(r.u32()? as usize);
                traffic.push(r.u64()?);
            }
            Ok(Node::Split(Split {
                feature,
                test,
                children,
                traffic,
            }))
        }
        t => Err(bad(format!("bad node tag {t}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{Classifier, LearnerKind};
    use crate::schema::{parse_schema, Cell, Instance};

    fn schema() -> DatasetSchema {
        parse_schema("x numeric\nc categorical {a,b,c}\ny class {no,yes}").unwrap()
    }

    fn trained(kind: LearnerKind) -> Learner {
        let s = schema();
        let cfg = HoeffdingConfig {
            grace_period: 20,
            ..Default::default()
        };
        let mut l = Learner::new(kind, &s, cfg).unwrap();
        for i in 0..400u32 {
            let c = (i % 3) as u16;
            let y = u16::from(c == 2);
            let x = if i % 7 == 0 {
                Cell::Missing
            } else {
                Cell::Numeric(i as f64 * 0.5)
            };
            l.train_one(&Instance::new(vec![x, Cell::Categorical(c)], Some(y)))
                .unwrap();
        }
        l
    }

    #[test]
    fn round_trip_all_kinds() {
        let s = schema();
        let models = vec![
            trained(LearnerKind::Majority),
            trained(LearnerKind::NaiveBayes),
            trained(LearnerKind::Hoeffding),
        ];
        let bytes = encode_model(&s, &models);
        assert_eq!(&bytes[..6], b"SMDM\x01\x04");
        let back = decode_model(&bytes, &s).unwrap();
        assert_eq!(back, models);
    }

    #[test]
    fn tree_actually_split() {
        let Learner::Hoeffding(t) = trained(LearnerKind::Hoeffding) else {
            unreachable!()
        };
        assert!(t.node_count() > 1);
    }

    #[test]
    fn fingerprint_mismatch() {
        let bytes = encode_model(&schema(), &[trained(LearnerKind::NaiveBayes)]);
        let other = parse_schema("x numeric\nc categorical {a,b,d}\ny class {no,yes}").unwrap();
        assert!(matches!(
            decode_model(&bytes, &other),
            Err(LearnerError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let s = schema();
        let bytes = encode_model(&s, &[trained(LearnerKind::Hoeffding)]);
        for cut in [0, 5, 14, bytes.len() - 1] {
            assert!(decode_model(&bytes[..cut], &s).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra, &s).is_err());
    }
}
