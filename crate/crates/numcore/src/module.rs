use std::collections::HashMap;

use crate::error::{NumError, Result};
use crate::tensor::Tensor;

/// Role of a tensor inside a [`Module`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRef {
    /// Learned by the optimizer (unless frozen).
    Weight,
    /// State updated outside gradient descent, e.g. batch-norm running statistics.
    Buffer,
}

/// Dotted child name, `"a" + "b" -> "a.b"`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that owns named tensors.
///
/// Visitation order must be stable: optimizer state and checkpoints rely on it.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef));

    /// Freezes (or unfreezes) every weight; buffers are unaffected.
    fn set_frozen(&mut self, frozen: bool) {
        self.visit_mut("", &mut |_, t, kind| {
            if kind == ParamRef::Weight {
                t.set_requires_grad(!frozen);
            }
        });
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t, _| t.zero_grad());
    }

    /// Number of scalar weights (buffers excluded).
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, kind| {
            if kind == ParamRef::Weight {
                n += t.len();
            }
        });
        n
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t, _| out.push((name.to_string(), t.clone())));
        out
    }

    /// Copies values from a name-keyed table; every tensor must be present
    /// with a matching shape.
    fn load_named(&mut self, table: &[(String, Tensor)]) -> Result<()> {
        let index: HashMap<&str, &Tensor> = table.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        self.visit_mut("", &mut |name, t, _| {
            if err.is_some() {
                return;
            }
            match index.get(name) {
                Some(src) if src.shape() == t.shape() => {
                    t.assign(src.data()).expect("shapes checked");
                }
                Some(src) => {
                    err = Some(NumError::Shape {
                        op: "load_named",
                        lhs: t.shape().to_vec(),
                        rhs: src.shape().to_vec(),
                    })
                }
                None => err = Some(NumError::Checkpoint(format!("missing tensor `{name}`"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// FNV-1a hash over the bit patterns of every tensor, in visit order.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit("", &mut |_, t, _| {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        });
        h
    }
}
