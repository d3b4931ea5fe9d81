use serde::{Deserialize, Serialize};

use crate::model::Packet;

/// Packet field a predicate can inspect.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    SrcAddr,
    DstAddr,
    SrcPort,
    DstPort,
    Proto,
    CtrlFlags,
    Size,
    Meta(String),
}

impl Field {
    pub fn read(&self, p: &Packet) -> Option<u64> {
        Some(match self {
            Field::SrcAddr => p.flow.src_addr.into(),
            Field::DstAddr => p.flow.dst_addr.into(),
            Field::SrcPort => p.flow.src_port.into(),
            Field::DstPort => p.flow.dst_port.into(),
            Field::Proto => p.flow.proto.into(),
            Field::CtrlFlags => p.ctrl_flags.into(),
            Field::Size => p.size_bytes.into(),
            Field::Meta(tag) => return p.meta(tag),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Total boolean function over packets. Comparisons on an absent metadata
/// field evaluate to false.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    #[default]
    True,
    Not {
        of: Box<Predicate>,
    },
    All {
        of: Vec<Predicate>,
    },
    Cmp {
        field: Field,
        cmp: CmpOp,
        value: u64,
    },
    In {
        field: Field,
        values: Vec<u64>,
    },
    /// Inclusive range.
    Range {
        field: Field,
        lo: u64,
        hi: u64,
    },
    FlagsSet {
        mask: u8,
    },
}

impl Predicate {
    pub fn negate(p: Predicate) -> Predicate {
        Predicate::Not { of: Box::new(p) }
    }

    pub fn eval(&self, p: &Packet) -> bool {
        match self {
            Predicate::True => true,
            Predicate::Not { of } => !of.eval(p),
            Predicate::All { of } => of.iter().all(|q| q.eval(p)),
            Predicate::Cmp { field, cmp, value } => field.read(p).is_some_and(|v| match cmp {
                CmpOp::Eq => v == *value,
                CmpOp::Ne => v != *value,
                CmpOp::Lt => v < *value,
                CmpOp::Le => v <= *value,
                CmpOp::Gt => v > *value,
                CmpOp::Ge => v >= *value,
            }),
            Predicate::In { field, values } => {
                field.read(p).is_some_and(|v| values.contains(&v))
            }
            Predicate::Range { field, lo, hi } => {
                field.read(p).is_some_and(|v| *lo <= v && v <= *hi)
            }
            Predicate::FlagsSet { mask } => p.ctrl_flags & mask == *mask,
        }
    }

    pub(crate) fn map_tags(&mut self, f: &impl Fn(&str) -> String) {
        let fix = |field: &mut Field| {
            if let Field::Meta(tag) = field {
                *tag = f(tag);
            }
        };
        match self {
            Predicate::True | Predicate::FlagsSet { .. } => {}
            Predicate::Not { of } => of.map_tags(f),
            Predicate::All { of } => of.iter_mut().for_each(|q| q.map_tags(f)),
            Predicate::Cmp { field, .. }
            | Predicate::In { field, .. }
            | Predicate::Range { field, .. } => fix(field),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FlowKey, NodeId, SimTime};

    fn pkt() -> Packet {
        let mut p = Packet {
            seq: 1,
            flow: FlowKey::new(10, 20, 1000, 80, 6),
            size_bytes: 500,
            inject_time: SimTime::ZERO,
            ingress_node: NodeId(1),
            egress_node: NodeId(2),
            metadata: vec![],
            ctrl_flags: 0x12,
        };
        p.push_meta("ingress", 4);
        p
    }

    #[test]
    fn comparisons() {
        let p = pkt();
        let cmp = |field, cmp, value| Predicate::Cmp { field, cmp, value }.eval(&p);
        assert!(cmp(Field::DstPort, CmpOp::Eq, 80));
        assert!(cmp(Field::Size, CmpOp::Gt, 499));
        assert!(!cmp(Field::Proto, CmpOp::Ne, 6));
        assert!(cmp(Field::Meta("ingress".into()), CmpOp::Le, 4));
        assert!(!cmp(Field::Meta("missing".into()), CmpOp::Ne, 4));
        assert!(Predicate::negate(Predicate::Cmp {
            field: Field::Meta("missing".into()),
            cmp: CmpOp::Eq,
            value: 0
        })
        .eval(&p));
    }

    #[test]
    fn combinators() {
        let p = pkt();
        assert!(Predicate::All { of: vec![] }.eval(&p));
        assert!(Predicate::All {
            of: vec![
                Predicate::In {
                    field: Field::DstAddr,
                    values: vec![19, 20]
                },
                Predicate::Range {
                    field: Field::SrcAddr,
                    lo: 10,
                    hi: 10
                },
                Predicate::FlagsSet { mask: 0x02 },
            ]
        }
        .eval(&p));
        assert!(!Predicate::FlagsSet { mask: 0x01 }.eval(&p));
    }

    #[test]
    fn json_shape() {
        let p: Predicate = serde_json::from_str(
            r#"{"op":"all","of":[{"op":"in","field":"dst_addr","values":[1,2]},
                {"op":"cmp","field":{"meta":"t"},"cmp":"ge","value":3}]}"#,
        )
        .unwrap();
        assert!(matches!(p, Predicate::All { ref of } if of.len() == 2));
    }
}
