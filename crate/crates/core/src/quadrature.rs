//! Fixed-order Gauss–Legendre rules.

/// Abscissae of the 8-point Gauss–Legendre rule on [-1, 1] (positive half).
const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];

const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// 8-point Gauss–Legendre nodes and weights mapped onto `[lo, hi]`, with the
/// weights normalised to sum to one (i.e. an expectation under U[lo, hi]).
/// Nodes are returned in increasing order.
pub fn gauss_legendre_8(lo: f64, hi: f64) -> [(f64, f64); 8] {
    let half = 0.5 * (hi - lo);
    let centre = 0.5 * (hi + lo);
    let mut out = [(0.0, 0.0); 8];
    for k in 0..4 {
        let w = 0.5 * GL8_WEIGHTS[k];
        out[3 - k] = (centre - half * GL8_NODES[k], w);
        out[4 + k] = (centre + half * GL8_NODES[k], w);
    }
    out
}
