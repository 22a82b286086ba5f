use crate::expr::LinExpr;
use crate::program::{Program, RowId, RowOp};
use crate::OptError;

/// Operating-quadrant mask for the polygonal apparent-power relaxation.
/// Quadrant 1 is P >= 0, Q >= 0 and numbering continues counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadrants(pub u8);

impl Quadrants {
    pub const Q1: Quadrants = Quadrants(0b0001);
    pub const Q2: Quadrants = Quadrants(0b0010);
    pub const Q3: Quadrants = Quadrants(0b0100);
    pub const Q4: Quadrants = Quadrants(0b1000);
    pub const ALL: Quadrants = Quadrants(0b1111);

    pub fn union(self, other: Quadrants) -> Quadrants {
        Quadrants(self.0 | other.0)
    }

    pub fn contains(self, other: Quadrants) -> bool {
        self.0 & other.0 == other.0
    }
}

/// Linearize the apparent-power circle `P^2 + Q^2 <= S^2` with the
/// six-sided polygon whose exactness is set by `tau` (`tau = 1.1` keeps
/// every feasible point inside radius `tau*S` while admitting everything
/// within `(sqrt(3)/2)*tau*S`). Only the faces bounding the declared
/// operating quadrants are added.
///
/// The full family, with `c = (sqrt(3)/2) * tau * S`:
///   -sqrt(3)(P + tau S) <= Q <= -sqrt(3)(P - tau S)
///   -c <= Q <= c
///    sqrt(3)(P - tau S) <= Q <=  sqrt(3)(P + tau S)
///   -c <= P <= c
pub fn add_hexagon(
    prog: &mut Program,
    p: &LinExpr,
    q: &LinExpr,
    s_rating: f64,
    tau: f64,
    quads: Quadrants,
    tag: &str,
) -> Result<Vec<RowId>, OptError> {
    if s_rating <= 0.0 {
        return Err(OptError::NonpositiveRating(s_rating));
    }
    if tau < 1.0 {
        return Err(OptError::BadTau(tau));
    }
    let rt3 = 3.0_f64.sqrt();
    let c = rt3 / 2.0 * tau * s_rating;
    let ts = tau * s_rating;

    // face -> quadrants it bounds
    let faces: [(Quadrants, f64, f64, RowOp, f64, &str); 8] = [
        // q + sqrt3 p <= sqrt3 ts   (upper-right diagonal, Q1)
        (Quadrants::Q1, rt3, 1.0, RowOp::Le, rt3 * ts, "ur"),
        // q - sqrt3 p <= sqrt3 ts   (upper-left diagonal, Q2)
        (Quadrants::Q2, -rt3, 1.0, RowOp::Le, rt3 * ts, "ul"),
        // q + sqrt3 p >= -sqrt3 ts  (lower-left diagonal, Q3)
        (Quadrants::Q3, rt3, 1.0, RowOp::Ge, -rt3 * ts, "ll"),
        // q - sqrt3 p >= -sqrt3 ts  (lower-right diagonal, Q4)
        (Quadrants::Q4, -rt3, 1.0, RowOp::Ge, -rt3 * ts, "lr"),
        // q <= c (top flat, Q1|Q2)
        (Quadrants::Q1.union(Quadrants::Q2), 0.0, 1.0, RowOp::Le, c, "top"),
        // q >= -c (bottom flat, Q3|Q4)
        (Quadrants::Q3.union(Quadrants::Q4), 0.0, 1.0, RowOp::Ge, -c, "bot"),
        // p <= c (right flat, Q1|Q4)
        (Quadrants::Q1.union(Quadrants::Q4), 1.0, 0.0, RowOp::Le, c, "right"),
        // p >= -c (left flat, Q2|Q3)
        (Quadrants::Q2.union(Quadrants::Q3), 1.0, 0.0, RowOp::Ge, -c, "left"),
    ];

    let mut rows = Vec::new();
    for (fq, pc, qc, op, rhs, name) in faces {
        if quads.0 & fq.0 != 0 {
            let mut e = LinExpr::new();
            e.add_expr(p, pc);
            e.add_expr(q, qc);
            rows.push(prog.add_row(format!("hex_{}_{}", tag, name), e, op, rhs)?);
        }
    }
    Ok(rows)
}
