//! Performance surfaces over (proxies `p`, clients `n`) and the SLA tables
//! derived from them.
//!
//! Each metric is modelled as
//!
//! ```text
//! f(p, n) = c00 + c10 p + c01 n + c20 p² + c11 p n + c02 n² + c21 p² n + c12 p n² + c03 n³
//! ```
//!
//! and fitted by least squares with a Householder QR factorization of the
//! column-scaled design matrix. Everything is generic over
//! [`num_traits::Float`]; see the crate-root aliases for the concrete types.

use std::fmt::{self, Write as _};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of basis functions.
pub const BASIS_LEN: usize = 9;

/// Coefficient names in basis order.
pub const COEFFICIENT_NAMES: [&str; BASIS_LEN] =
    ["c00", "c10", "c01", "c20", "c11", "c02", "c21", "c12", "c03"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Throughput,
    ReadLatency,
    WriteLatency,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Throughput => "throughput",
            Metric::ReadLatency => "read latency",
            Metric::WriteLatency => "write latency",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {BASIS_LEN} samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {0} is not finite")]
    NonFinite(usize),
    #[error("design matrix is rank deficient in columns {0:?}")]
    RankDeficient(Vec<&'static str>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlaError {
    #[error("predicted {metric} for p = {p} is not positive")]
    NonPositive { p: u32, metric: Metric },
}

/// `(1, p, n, p², pn, n², p²n, pn², n³)`
pub fn design_row<T: Float>(p: T, n: T) -> [T; BASIS_LEN] {
    [
        T::one(),
        p,
        n,
        p * p,
        p * n,
        n * n,
        p * p * n,
        p * n * n,
        n * n * n,
    ]
}

/// Fitted surface for one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlaModel<T> {
    pub metric: Metric,
    pub coefficients: [T; BASIS_LEN],
}

impl<T: Float> SlaModel<T> {
    pub fn predict(&self, p: T, n: T) -> T {
        predict(self, p, n)
    }
}

pub fn predict<T: Float>(model: &SlaModel<T>, p: T, n: T) -> T {
    design_row(p, n)
        .iter()
        .zip(model.coefficients.iter())
        .fold(T::zero(), |acc, (&x, &c)| acc + x * c)
}

/// Least-squares fit of `(p, n, value)` samples.
pub fn fit<T: Float>(metric: Metric, samples: &[(T, T, T)]) -> Result<SlaModel<T>, FitError> {
    let m = samples.len();
    if m < BASIS_LEN {
        return Err(FitError::TooFewSamples(m));
    }
    if let Some(i) = samples
        .iter()
        .position(|(p, n, v)| !(p.is_finite() && n.is_finite() && v.is_finite()))
    {
        return Err(FitError::NonFinite(i));
    }

    // Column-major design matrix, each column scaled to unit max-norm.
    let mut cols: Vec<Vec<T>> = (0..BASIS_LEN).map(|_| Vec::with_capacity(m)).collect();
    for &(p, n, _) in samples {
        for (col, x) in cols.iter_mut().zip(design_row(p, n)) {
            col.push(x);
        }
    }
    let scale: Vec<T> = cols
        .iter()
        .map(|c| c.iter().fold(T::zero(), |a, &x| a.max(x.abs())))
        .collect();
    for (col, &s) in cols.iter_mut().zip(&scale) {
        if s > T::zero() {
            col.iter_mut().for_each(|x| *x = *x / s);
        }
    }
    let mut rhs: Vec<T> = samples.iter().map(|s| s.2).collect();

    let r_diag = householder_qr(&mut cols, &mut rhs);

    // Scaled columns have norms in (0, sqrt(m)].
    let tol = T::from(100.0 * m as f64).unwrap() * T::epsilon();
    let deficient: Vec<&'static str> = r_diag
        .iter()
        .enumerate()
        .filter(|(j, r)| scale[*j] == T::zero() || r.abs() <= tol)
        .map(|(j, _)| COEFFICIENT_NAMES[j])
        .collect();
    if !deficient.is_empty() {
        return Err(FitError::RankDeficient(deficient));
    }

    // Back substitution on R x = Qᵀ b; R's strict upper part lives in cols[j][i], i < j.
    let mut x = [T::zero(); BASIS_LEN];
    for i in (0..BASIS_LEN).rev() {
        let mut acc = rhs[i];
        for (j, xj) in x.iter().enumerate().skip(i + 1) {
            acc = acc - cols[j][i] * *xj;
        }
        x[i] = acc / r_diag[i];
    }
    for (xj, &s) in x.iter_mut().zip(&scale) {
        *xj = *xj / s;
    }
    Ok(SlaModel {
        metric,
        coefficients: x,
    })
}

/// In-place Householder QR on column-major `cols` (m × k), applying the same
/// reflections to `rhs`. Returns the diagonal of R; the strict upper triangle
/// is left in `cols[j][i]` for `i < j`.
fn householder_qr<T: Float>(cols: &mut [Vec<T>], rhs: &mut [T]) -> Vec<T> {
    let m = rhs.len();
    let k = cols.len();
    let mut diag = Vec::with_capacity(k);
    for j in 0..k {
        let norm = cols[j][j..]
            .iter()
            .fold(T::zero(), |a, &x| a.hypot(x));
        if norm == T::zero() {
            diag.push(T::zero());
            continue;
        }
        let alpha = if cols[j][j] > T::zero() { -norm } else { norm };
        // v = x - alpha e1, stored in place of column j's tail
        let mut v: Vec<T> = cols[j][j..].to_vec();
        v[0] = v[0] - alpha;
        let vnorm2 = v.iter().fold(T::zero(), |a, &x| a + x * x);
        if vnorm2 > T::zero() {
            let two = T::one() + T::one();
            let reflect = |target: &mut [T]| {
                let dot = v
                    .iter()
                    .zip(target.iter())
                    .fold(T::zero(), |a, (&vi, &ti)| a + vi * ti);
                let f = two * dot / vnorm2;
                for (t, &vi) in target.iter_mut().zip(&v) {
                    *t = *t - f * vi;
                }
            };
            for col in cols.iter_mut().skip(j + 1) {
                reflect(&mut col[j..m]);
            }
            reflect(&mut rhs[j..m]);
        }
        diag.push(alpha);
    }
    diag
}

/// The three surfaces an offer is computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlaModels<T> {
    pub throughput: SlaModel<T>,
    pub read_latency: SlaModel<T>,
    pub write_latency: SlaModel<T>,
}

/// Named coefficients, the on-disk form of one surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NamedCoefficients<T> {
    pub c00: T,
    pub c10: T,
    pub c01: T,
    pub c20: T,
    pub c11: T,
    pub c02: T,
    pub c21: T,
    pub c12: T,
    pub c03: T,
}

impl<T: Float> NamedCoefficients<T> {
    pub fn from_array(c: [T; BASIS_LEN]) -> Self {
        let [c00, c10, c01, c20, c11, c02, c21, c12, c03] = c;
        NamedCoefficients {
            c00,
            c10,
            c01,
            c20,
            c11,
            c02,
            c21,
            c12,
            c03,
        }
    }

    pub fn to_array(&self) -> [T; BASIS_LEN] {
        [
            self.c00, self.c10, self.c01, self.c20, self.c11, self.c02, self.c21, self.c12,
            self.c03,
        ]
    }
}

/// JSON document: metric name to its nine named coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFile<T> {
    pub throughput: NamedCoefficients<T>,
    pub read_latency: NamedCoefficients<T>,
    pub write_latency: NamedCoefficients<T>,
}

impl<T: Float> From<&SlaModels<T>> for CoefficientFile<T> {
    fn from(m: &SlaModels<T>) -> Self {
        CoefficientFile {
            throughput: NamedCoefficients::from_array(m.throughput.coefficients),
            read_latency: NamedCoefficients::from_array(m.read_latency.coefficients),
            write_latency: NamedCoefficients::from_array(m.write_latency.coefficients),
        }
    }
}

impl<T: Float> From<&CoefficientFile<T>> for SlaModels<T> {
    fn from(f: &CoefficientFile<T>) -> Self {
        SlaModels {
            throughput: SlaModel {
                metric: Metric::Throughput,
                coefficients: f.throughput.to_array(),
            },
            read_latency: SlaModel {
                metric: Metric::ReadLatency,
                coefficients: f.read_latency.to_array(),
            },
            write_latency: SlaModel {
                metric: Metric::WriteLatency,
                coefficients: f.write_latency.to_array(),
            },
        }
    }
}

/// Fits all three metrics from `(p, n, throughput, read_latency, write_latency)` rows.
pub fn fit_all<T: Float>(rows: &[(T, T, T, T, T)]) -> Result<SlaModels<T>, FitError> {
    let column = |pick: fn(&(T, T, T, T, T)) -> T| -> Vec<(T, T, T)> {
        rows.iter().map(|r| (r.0, r.1, pick(r))).collect()
    };
    Ok(SlaModels {
        throughput: fit(Metric::Throughput, &column(|r| r.2))?,
        read_latency: fit(Metric::ReadLatency, &column(|r| r.3))?,
        write_latency: fit(Metric::WriteLatency, &column(|r| r.4))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaOffer<T> {
    pub p: u32,
    pub n_max: u32,
    /// Guaranteed average throughput, ops/sec.
    pub t_min: T,
    /// Average read latency ceiling, µs.
    pub l_r_max: T,
    /// Average write latency ceiling, µs.
    pub l_w_max: T,
}

pub fn sla_table<T: Float>(
    models: &SlaModels<T>,
    n: u32,
    p_options: &[u32],
) -> Result<Vec<SlaOffer<T>>, SlaError> {
    let nf = T::from(n).unwrap();
    p_options
        .iter()
        .map(|&p| {
            let pf = T::from(p).unwrap();
            let offer = SlaOffer {
                p,
                n_max: n,
                t_min: models.throughput.predict(pf, nf),
                l_r_max: models.read_latency.predict(pf, nf),
                l_w_max: models.write_latency.predict(pf, nf),
            };
            for (v, metric) in [
                (offer.t_min, Metric::Throughput),
                (offer.l_r_max, Metric::ReadLatency),
                (offer.l_w_max, Metric::WriteLatency),
            ] {
                if v.is_nan() || v <= T::zero() {
                    return Err(SlaError::NonPositive { p, metric });
                }
            }
            Ok(offer)
        })
        .collect()
}

fn fmt3<T: Float>(v: T) -> String {
    format!("{:.3}", v.to_f64().unwrap_or(f64::NAN))
}

/// Aligned plain-text table.
pub fn render_text<T: Float>(offers: &[SlaOffer<T>]) -> String {
    let header = [
        "Option".to_string(),
        "Proxies (P)".to_string(),
        "Max clients (N)".to_string(),
        "Throughput (T)".to_string(),
        "Read latency (l_r)".to_string(),
        "Write latency (l_w)".to_string(),
    ];
    let rows: Vec<[String; 6]> = offers
        .iter()
        .enumerate()
        .map(|(i, o)| {
            [
                (i + 1).to_string(),
                o.p.to_string(),
                o.n_max.to_string(),
                format!("{} ops/sec", fmt3(o.t_min)),
                format!("{} µs", fmt3(o.l_r_max)),
                format!("{} µs", fmt3(o.l_w_max)),
            ]
        })
        .collect();
    let mut widths = header.clone().map(|h| h.chars().count());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(&header).chain(rows.iter()) {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn render_csv<T: Float>(offers: &[SlaOffer<T>]) -> String {
    let mut out = String::from("p,n_max,t_min_ops,l_r_max_us,l_w_max_us\n");
    for o in offers {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            o.p,
            o.n_max,
            fmt3(o.t_min),
            fmt3(o.l_r_max),
            fmt3(o.l_w_max)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(ps: &[f64], ns: impl Iterator<Item = f64> + Clone, f: impl Fn(f64, f64) -> f64) -> Vec<(f64, f64, f64)> {
        ps.iter()
            .flat_map(|&p| ns.clone().map(move |n| (p, n)))
            .map(|(p, n)| (p, n, f(p, n)))
            .collect()
    }

    #[test]
    fn design_rows() {
        assert_eq!(design_row(0.0, 0.0), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(design_row(1.0, 1.0), [1.0; 9]);
        assert_eq!(
            design_row(2.0, 3.0),
            [1.0, 2.0, 3.0, 4.0, 6.0, 9.0, 12.0, 18.0, 27.0]
        );
    }

    #[test]
    fn planted_linear_surface() {
        let samples = grid(&[1.0, 2.0, 3.0], (1..=5).map(f64::from), |p, n| 2.0 + 3.0 * p + 5.0 * n);
        let m = fit(Metric::Throughput, &samples).unwrap();
        let want = [2.0, 3.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for (got, want) in m.coefficients.iter().zip(want) {
            assert!((got - want).abs() < 1e-9, "{:?}", m.coefficients);
        }
        for &(p, n, v) in &samples {
            assert!((m.predict(p, n) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_surface() {
        let samples = grid(&[1.0, 2.0, 4.0], (1..=6).map(f64::from), |_, _| 7.0);
        let m = fit(Metric::ReadLatency, &samples).unwrap();
        assert!((m.coefficients[0] - 7.0).abs() < 1e-9);
        assert!(m.coefficients[1..].iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn too_few_samples() {
        let samples = grid(&[1.0, 2.0], (1..=4).map(f64::from), |p, n| p + n);
        assert_eq!(
            fit(Metric::Throughput, &samples),
            Err(FitError::TooFewSamples(8))
        );
    }

    #[test]
    fn rank_deficiency_names_columns() {
        // Two distinct p values cannot separate p² from p (nor p²n from pn).
        let samples = grid(&[1.0, 2.0], (1..=8).map(f64::from), |p, n| p + n);
        match fit(Metric::Throughput, &samples) {
            Err(FitError::RankDeficient(cols)) => assert_eq!(cols, vec!["c20", "c21"]),
            other => panic!("{other:?}"),
        }
        let zeros = grid(&[0.0], (0..12).map(|_| 0.0), |_, _| 1.0);
        assert!(matches!(
            fit(Metric::Throughput, &zeros),
            Err(FitError::RankDeficient(_))
        ));
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let mut samples = grid(&[1.0, 2.0, 4.0], (1..=4).map(f64::from), |p, n| p * n);
        samples[3].2 = f64::NAN;
        assert_eq!(fit(Metric::Throughput, &samples), Err(FitError::NonFinite(3)));
    }

    #[test]
    fn single_precision_fit() {
        let samples: Vec<(f32, f32, f32)> = grid(&[1.0, 2.0, 4.0], (1..=8).map(f64::from), |p, n| {
            10.0 + p - 0.5 * n
        })
        .into_iter()
        .map(|(a, b, c)| (a as f32, b as f32, c as f32))
        .collect();
        let m = fit(Metric::Throughput, &samples).unwrap();
        assert!((m.predict(2.0, 3.0) - 10.5).abs() < 1e-3);
    }

    fn models() -> SlaModels<f64> {
        let lin = |metric, c: [f64; 3]| SlaModel {
            metric,
            coefficients: [c[0], c[1], c[2], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        SlaModels {
            throughput: lin(Metric::Throughput, [1000.0, 800.0, 1.0]),
            read_latency: lin(Metric::ReadLatency, [20000.0, -1000.0, 10.0]),
            write_latency: lin(Metric::WriteLatency, [21000.0, -1000.0, 10.0]),
        }
    }

    #[test]
    fn table_rows_per_option() {
        let t = sla_table(&models(), 128, &[1, 2, 4]).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[1].p, 2);
        assert!((t[1].t_min - (1000.0 + 1600.0 + 128.0)).abs() < 1e-9);
        assert!(sla_table(&models(), 128, &[]).unwrap().is_empty());
        assert_eq!(
            sla_table(&models(), 128, &[30]),
            Err(SlaError::NonPositive {
                p: 30,
                metric: Metric::ReadLatency
            })
        );
    }

    #[test]
    fn monotone_surface_gives_monotone_offers() {
        let mut t = sla_table(&models(), 64, &[4, 1, 3, 2]).unwrap();
        t.sort_by_key(|o| o.p);
        assert!(t.windows(2).all(|w| w[0].t_min <= w[1].t_min));
    }

    #[test]
    fn coefficient_file_round_trip() {
        let file = CoefficientFile::from(&models());
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.starts_with(r#"{"throughput":{"c00":1000.0,"c10":800.0"#));
        let back: CoefficientFile<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(SlaModels::from(&back), models());
    }
}
