use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{ensure_finite, log_sum_exp};
use crate::error::{Error, Result};

/// Which batch elements may serve as triplet anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    /// Only the class prototypes.
    Prototypes,
    /// Prototypes and queries.
    All,
}

impl AnchorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AnchorMode::Prototypes => "prototypes",
            AnchorMode::All => "all",
        }
    }
}

impl fmt::Display for AnchorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnchorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prototypes" => Ok(AnchorMode::Prototypes),
            "all" => Ok(AnchorMode::All),
            other => Err(Error::config(
                "apl.anchor_mode",
                format!("unknown mode `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AplConfig {
    /// Angle bound in degrees, shared by the miner and the loss.
    pub alpha_deg: f64,
    pub anchor_mode: AnchorMode,
}

impl Default for AplConfig {
    fn default() -> Self {
        Self {
            alpha_deg: 15.0,
            anchor_mode: AnchorMode::Prototypes,
        }
    }
}

impl AplConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..90.0).contains(&self.alpha_deg) {
            return Err(Error::config("apl.alpha_deg", "must lie in [0, 90)"));
        }
        Ok(())
    }

    /// `tan^2(alpha)`.
    pub fn tan_sq(&self) -> f64 {
        self.alpha_deg.to_radians().tan().powi(2)
    }

    /// Weight of the negative in the triplet exponent (`4 tan^2 alpha`). At
    /// zero the loss no longer depends on which negatives survive.
    pub fn negative_weight(&self) -> f64 {
        4.0 * self.tan_sq()
    }
}

/// Row indices into the batch `[prototypes; queries]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Angle at the negative vertex, `atan(|x_p - x_a| / (2 |x_n - x_c|))` with
/// `x_c` the anchor/positive midpoint, in degrees. A negative sitting on the
/// midpoint gives 90.
pub fn triplet_angle_deg(a: ArrayView1<f64>, p: ArrayView1<f64>, n: ArrayView1<f64>) -> f64 {
    let centre: Array1<f64> = (&a + &p) * 0.5;
    let nc = dist(n, centre.view());
    if nc == 0.0 {
        return 90.0;
    }
    (dist(p, a) / (2.0 * nc)).atan().to_degrees()
}

/// Enumerates anchor/positive/negative triplets over the batch and keeps the
/// ones whose negative-vertex angle exceeds `alpha_deg`. The first
/// `n_prototypes` rows are the prototypes. Output is sorted by anchor, then
/// positive, then negative.
pub fn mine_triplets(
    rows: ArrayView2<f64>,
    labels: &[usize],
    n_prototypes: usize,
    alpha_deg: f64,
    mode: AnchorMode,
) -> Vec<Triplet> {
    let anchors = match mode {
        AnchorMode::Prototypes => n_prototypes.min(rows.nrows()),
        AnchorMode::All => rows.nrows(),
    };
    let mut out = Vec::new();
    for a in 0..anchors {
        for p in (0..rows.nrows()).filter(|&p| p != a && labels[p] == labels[a]) {
            for n in (0..rows.nrows()).filter(|&n| labels[n] != labels[a]) {
                if triplet_angle_deg(rows.row(a), rows.row(p), rows.row(n)) > alpha_deg {
                    out.push(Triplet {
                        anchor: a,
                        positive: p,
                        negative: n,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AplOutput {
    pub loss: f64,
    pub d_rows: Array2<f64>,
    /// Anchor/positive pairs with at least one surviving negative.
    pub pairs: usize,
}

/// Angular prototype loss over mined triplets. For each anchor/positive pair,
/// `ln(1 + sum_n exp(f_apn))` with
/// `f_apn = 4 tan^2(a) <x_a + x_p, x_n> - 2 (1 + tan^2(a)) <x_a, x_p>`;
/// the pair terms are summed and divided by the batch size.
pub fn apl_loss(rows: ArrayView2<f64>, triplets: &[Triplet], cfg: &AplConfig) -> Result<AplOutput> {
    cfg.validate()?;
    ensure_finite("angular batch", rows.iter().copied())?;
    if rows.nrows() == 0 {
        return Err(Error::EmptyInput(
            "angular loss needs a non-empty batch".into(),
        ));
    }
    let t2 = cfg.tan_sq();
    let (wn, wap) = (4.0 * t2, 2.0 * (1.0 + t2));
    let scale = 1.0 / rows.nrows() as f64;
    let mut d_rows = Array2::<f64>::zeros(rows.dim());
    let mut loss = 0.0;
    let mut pairs = 0;

    let mut start = 0;
    while start < triplets.len() {
        let (a, p) = (triplets[start].anchor, triplets[start].positive);
        let end = start
            + triplets[start..]
                .iter()
                .take_while(|t| t.anchor == a && t.positive == p)
                .count();
        let (xa, xp) = (rows.row(a), rows.row(p));
        let sum_ap: Array1<f64> = &xa + &xp;
        let ap = xa.dot(&xp);
        let f: Vec<f64> = triplets[start..end]
            .iter()
            .map(|t| wn * sum_ap.dot(&rows.row(t.negative)) - wap * ap)
            .collect();
        let lse = log_sum_exp(std::iter::once(0.0).chain(f.iter().copied()));
        loss += lse;
        pairs += 1;

        let mut d_a = Array1::<f64>::zeros(rows.ncols());
        let mut d_p = Array1::<f64>::zeros(rows.ncols());
        for (t, &fj) in triplets[start..end].iter().zip(&f) {
            let w = scale * (fj - lse).exp();
            let xn = rows.row(t.negative);
            d_a.scaled_add(w * wn, &xn);
            d_a.scaled_add(-w * wap, &xp);
            d_p.scaled_add(w * wn, &xn);
            d_p.scaled_add(-w * wap, &xa);
            d_rows.row_mut(t.negative).scaled_add(w * wn, &sum_ap);
        }
        d_rows.row_mut(a).zip_mut_with(&d_a, |o, g| *o += g);
        d_rows.row_mut(p).zip_mut_with(&d_p, |o, g| *o += g);
        start = end;
    }
    Ok(AplOutput {
        loss: loss * scale,
        d_rows,
        pairs,
    })
}
