/// Which number system a layer computes in. Activation tensors carry the
/// component count as their leading axis: `[1, ...]` for real, `[4, ...]`
/// for quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algebra {
    Real,
    Quaternion,
}

/// One term of a block-structured product: output component `out` receives
/// `sign * W[weight] (*) x[input]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub out: usize,
    pub input: usize,
    pub weight: usize,
    pub sign: f64,
}

const fn t(out: usize, input: usize, weight: usize, sign: f64) -> Term {
    Term {
        out,
        input,
        weight,
        sign,
    }
}

const REAL: [Term; 1] = [t(0, 0, 0, 1.0)];

/// Sign layout of `W ⊗ x` with shared submatrices W0..W3.
const HAMILTON: [Term; 16] = [
    t(0, 0, 0, 1.0),
    t(0, 1, 1, -1.0),
    t(0, 2, 2, -1.0),
    t(0, 3, 3, -1.0),
    t(1, 0, 1, 1.0),
    t(1, 1, 0, 1.0),
    t(1, 2, 3, -1.0),
    t(1, 3, 2, 1.0),
    t(2, 0, 2, 1.0),
    t(2, 1, 3, 1.0),
    t(2, 2, 0, 1.0),
    t(2, 3, 1, -1.0),
    t(3, 0, 3, 1.0),
    t(3, 1, 2, -1.0),
    t(3, 2, 1, 1.0),
    t(3, 3, 0, 1.0),
];

impl Algebra {
    pub const fn components(self) -> usize {
        match self {
            Algebra::Real => 1,
            Algebra::Quaternion => 4,
        }
    }

    pub fn terms(self) -> &'static [Term] {
        match self {
            Algebra::Real => &REAL,
            Algebra::Quaternion => &HAMILTON,
        }
    }

    pub fn from_components(k: usize) -> Option<Self> {
        match k {
            1 => Some(Algebra::Real),
            4 => Some(Algebra::Quaternion),
            _ => None,
        }
    }
}
