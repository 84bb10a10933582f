use num_bigint::BigUint;
use num_traits::One;

use super::gexp;
use crate::error::WireError;
use crate::field::{Fe, FieldParams};
use crate::wire::{Canonical, Decode, Reader, Writer};

/// `g^m * h^r mod p`. Perfectly hiding; binding as long as `log_g h` is
/// unknown.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Commitment(pub BigUint);

impl Commitment {
    pub fn identity() -> Self {
        Commitment(BigUint::one())
    }

    pub fn combine(&self, other: &Commitment, params: &FieldParams) -> Commitment {
        Commitment((&self.0 * &other.0) % &params.group.p)
    }

    pub fn product<'a, I>(items: I, params: &FieldParams) -> Commitment
    where
        I: IntoIterator<Item = &'a Commitment>,
    {
        items
            .into_iter()
            .fold(Commitment::identity(), |acc, c| acc.combine(c, params))
    }
}

impl Canonical for Commitment {
    fn write_to(&self, w: &mut Writer) {
        w.big(&self.0);
    }
}

impl Decode for Commitment {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.big().map(Commitment)
    }
}

pub fn commit(m: Fe, r: Fe, params: &FieldParams) -> Commitment {
    let gm = gexp(params, &params.group.g, m);
    let hr = gexp(params, &params.group.h, r);
    Commitment((gm * hr) % &params.group.p)
}

pub fn open_check(c: &Commitment, m: Fe, r: Fe, params: &FieldParams) -> bool {
    m.0 < params.q && r.0 < params.q && commit(m, r, params) == *c
}
