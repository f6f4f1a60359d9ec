//! Runtime values shared by the tool interpreter and the simulated tools.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Integer rectangle on the canvas, `left < right`, `top < bottom`, y grows down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub left: i64,
    pub top: i64,
    pub right: i64,
    pub bottom: i64,
}

impl BBox {
    pub fn new(left: i64, top: i64, right: i64, bottom: i64) -> Self {
        Self { left, top, right, bottom }
    }

    /// Center in doubled coordinates, so it stays integral.
    pub fn center2(&self) -> (i64, i64) {
        (self.left + self.right, self.top + self.bottom)
    }
}

/// A rectangular view of the scene. Objects belong to a region when their
/// center lies inside it; bounds are inclusive and kept in doubled
/// coordinates like [`BBox::center2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Region {
    pub fn full(width: i64, height: i64) -> Self {
        Self { x0: 0, y0: 0, x1: 2 * width, y1: 2 * height }
    }

    pub fn contains(&self, bbox: &BBox) -> bool {
        let (cx, cy) = bbox.center2();
        (self.x0..=self.x1).contains(&cx) && (self.y0..=self.y1).contains(&cy)
    }

    pub fn is_empty(&self) -> bool {
        self.x0 > self.x1 || self.y0 > self.y1
    }
}

/// A detection handed back to the program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectRef {
    pub id: usize,
    pub name: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Text(String),
    Object(ObjectRef),
    List(Vec<Value>),
    Patch(Region),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::None => "NoneType",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Text(_) => "str",
            Value::Object(_) => "object",
            Value::List(_) => "list",
            Value::Patch(_) => "ImagePatch",
        }
    }

    /// Text used when the value becomes a prediction: strings unquoted,
    /// everything else as its repr.
    pub fn display(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

/// Python-flavoured repr, which is what the agent sees in feedback.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::None => f.write_str("None"),
            Value::Bool(true) => f.write_str("True"),
            Value::Bool(false) => f.write_str("False"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Text(s) => write!(f, "'{}'", s.replace('\\', "\\\\").replace('\'', "\\'")),
            Value::Object(o) => write!(
                f,
                "ImagePatch({}, {}, {}, {}, {})",
                o.name, o.bbox.left, o.bbox.top, o.bbox.right, o.bbox.bottom
            ),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            Value::Patch(r) => write!(f, "ImagePatch({}, {}, {}, {})", r.x0 / 2, r.y0 / 2, r.x1 / 2, r.y1 / 2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reprs() {
        assert_eq!(Value::Bool(false).to_string(), "False");
        assert_eq!(Value::Text("it's".into()).to_string(), "'it\\'s'");
        assert_eq!(Value::Text("red".into()).display(), "red");
        assert_eq!(Value::Int(3).display(), "3");
        let obj = ObjectRef { id: 0, name: "mug".into(), bbox: BBox::new(1, 2, 3, 4) };
        assert_eq!(
            Value::List(vec![Value::Object(obj), Value::None]).to_string(),
            "[ImagePatch(mug, 1, 2, 3, 4), None]"
        );
    }

    #[test]
    fn region_membership_uses_centers() {
        let r = Region { x0: 0, y0: 0, x1: 20, y1: 20 };
        assert!(r.contains(&BBox::new(0, 0, 20, 20)));
        assert!(!r.contains(&BBox::new(0, 0, 22, 20)));
    }
}
