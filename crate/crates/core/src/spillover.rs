//! Generalized forecast-error variance decomposition, pairwise
//! spillovers, the spillover index and directed spillover networks.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::var::{to_vma, VarModel};

/// Horizon of a working week of daily data.
pub const DEFAULT_HORIZON: usize = 5;

/// Share of off-diagonal spillovers kept as network edges.
pub const DEFAULT_RETENTION: f64 = 0.15;

const EXPORT_DIGITS: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct SpilloverResult {
    pub horizon: usize,
    /// w_{jk}: share of the variance of series j due to shocks to k.
    pub fevd: DMatrix<f64>,
    /// Rows of `fevd` scaled to sum to one.
    pub normalized: DMatrix<f64>,
    /// 100·normalized; row = receiver, column = source.
    pub spillovers: DMatrix<f64>,
    /// Sum of the off-diagonal spillovers.
    pub index: f64,
    /// Σ, or Ψ when the covariance is undefined (ν ≤ 2).
    pub dispersion_matrix: DMatrix<f64>,
    /// The model's companion spectral radius is not below one.
    pub non_stationary: bool,
}

impl SpilloverResult {
    /// Spillover received by `receiver` from `source`, in percent.
    pub fn spillover(&self, source: usize, receiver: usize) -> f64 {
        self.spillovers[(receiver, source)]
    }

    pub fn dim(&self) -> usize {
        self.fevd.nrows()
    }
}

/// Responses θ_p Σ δ_k / √σ_kk for p = 0..h−1.
pub fn generalized_impulse(
    model: &VarModel,
    shock: usize,
    horizon: usize,
) -> Result<Vec<DVector<f64>>> {
    let j = model.dim();
    if shock >= j {
        return Err(Error::Parameter(format!(
            "shock index {shock} out of range for {j} series"
        )));
    }
    let sigma = model.error().dispersion();
    let variance = sigma[(shock, shock)];
    if !(variance > 0.0) {
        return Err(Error::Singular(format!(
            "dispersion of series {shock} is not positive"
        )));
    }
    let vma = to_vma(model, horizon)?;
    let column = sigma.column(shock) / variance.sqrt();
    Ok(vma.thetas().iter().map(|theta| theta * &column).collect())
}

/// h-step generalized variance decomposition of a fitted or true VAR.
pub fn gfevd(model: &VarModel, horizon: usize) -> Result<SpilloverResult> {
    let sigma = model.error().dispersion();
    linalg::cholesky(&sigma, "dispersion matrix")?;
    let vma = to_vma(model, horizon)?;
    let j = model.dim();

    let mut numerator = DMatrix::zeros(j, j);
    let mut denominator = DVector::zeros(j);
    for theta in vma.thetas() {
        let impact = theta * &sigma;
        numerator += impact.map(|v| v * v);
        let variance = &impact * theta.transpose();
        denominator += variance.diagonal();
    }
    let fevd = DMatrix::from_fn(j, j, |r, c| {
        numerator[(r, c)] / (sigma[(c, c)] * denominator[r])
    });
    let normalized = normalize_rows(&fevd)?;
    let spillovers = &normalized * 100.0;
    let index = off_diagonal_sum(&spillovers);
    Ok(SpilloverResult {
        horizon,
        fevd,
        normalized,
        spillovers,
        index,
        dispersion_matrix: sigma,
        non_stationary: !model.is_stationary(),
    })
}

fn normalize_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        let total: f64 = row.sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical(format!(
                "variance decomposition row {r} has no positive mass"
            )));
        }
        row /= total;
    }
    Ok(out)
}

fn off_diagonal_sum(m: &DMatrix<f64>) -> f64 {
    m.sum() - m.trace()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

/// Directed graph of the largest spillovers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkExport {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    #[serde(skip)]
    pub retention_quantile: f64,
}

/// Keeps the top ⌈q·J(J−1)⌉ off-diagonal spillovers, plus any ties with the
/// smallest kept weight, as edges source → receiver.
pub fn extract_network(
    result: &SpilloverResult,
    quantile: f64,
    labels: &[String],
) -> Result<NetworkExport> {
    let j = result.dim();
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Parameter(format!(
            "retention quantile must be in (0, 1], got {quantile}"
        )));
    }
    if labels.len() != j {
        return Err(Error::Dimension(format!(
            "expected {j} labels, got {}",
            labels.len()
        )));
    }
    let mut candidates: Vec<(usize, usize, f64)> = (0..j)
        .flat_map(|receiver| (0..j).map(move |source| (source, receiver)))
        .filter(|(source, receiver)| source != receiver)
        .map(|(source, receiver)| (source, receiver, result.spillover(source, receiver)))
        .filter(|(_, _, w)| *w > 0.0)
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));

    let keep = (quantile * (j * (j - 1)) as f64 - 1e-9).ceil() as usize;
    let cutoff = candidates.get(keep.saturating_sub(1)).map(|c| c.2);
    let edges = candidates
        .into_iter()
        .enumerate()
        .take_while(|(rank, c)| *rank < keep || Some(c.2) == cutoff)
        .map(|(_, (source, receiver, weight))| Edge {
            source: labels[source].clone(),
            target: labels[receiver].clone(),
            weight,
        })
        .collect();
    Ok(NetworkExport {
        nodes: labels.to_vec(),
        edges,
        retention_quantile: quantile,
    })
}

/// `x` rounded to `digits` significant digits.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}

impl NetworkExport {
    fn rounded_edges(&self) -> Vec<Edge> {
        self.edges
            .iter()
            .map(|e| Edge {
                weight: round_significant(e.weight, EXPORT_DIGITS),
                ..e.clone()
            })
            .collect()
    }

    /// `{"nodes": [...], "edges": [{"source", "target", "weight"}]}`.
    pub fn to_json(&self) -> Result<String> {
        let doc = serde_json::json!({
            "nodes": self.nodes,
            "edges": self.rounded_edges(),
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// DOT digraph with pen width proportional to the edge weight.
    pub fn to_dot(&self) -> String {
        let edges = self.rounded_edges();
        let max = edges.iter().map(|e| e.weight).fold(0.0, f64::max);
        let mut out = String::from("digraph spillovers {\n");
        for node in &self.nodes {
            let _ = writeln!(out, "  {};", quote(node));
        }
        for edge in edges {
            let width = if max > 0.0 {
                round_significant(5.0 * edge.weight / max, EXPORT_DIGITS)
            } else {
                0.0
            };
            let _ = writeln!(
                out,
                "  {} -> {} [weight={}, penwidth={}];",
                quote(&edge.source),
                quote(&edge.target),
                edge.weight,
                width
            );
        }
        out.push_str("}\n");
        out
    }
}

fn quote(label: &str) -> String {
    format!("\"{}\"", label.replace('\\', "\\\\").replace('"', "\\\""))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::var::ErrorDistribution;

    fn model(coefficients: Vec<DMatrix<f64>>, sigma: DMatrix<f64>) -> VarModel {
        VarModel::new(coefficients, ErrorDistribution::gaussian(sigma).unwrap()).unwrap()
    }

    fn labels(j: usize) -> Vec<String> {
        (0..j).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn white_noise_has_no_spillovers() {
        let m = model(vec![DMatrix::zeros(3, 3)], DMatrix::identity(3, 3));
        let r = gfevd(&m, 4).unwrap();
        assert_eq!(r.normalized, DMatrix::identity(3, 3));
        assert_eq!(r.index, 0.0);
    }

    #[test]
    fn single_series_is_its_own_source() {
        let m = model(
            vec![DMatrix::from_element(1, 1, 0.3)],
            DMatrix::identity(1, 1),
        );
        let r = gfevd(&m, 5).unwrap();
        assert_eq!(r.normalized[(0, 0)], 1.0);
        assert_eq!(r.index, 0.0);
    }

    // Values from an independent numpy evaluation of the decomposition.
    #[test]
    fn two_series_example_matches_hand_computation() {
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.5]);
        let r = gfevd(&model(vec![b.clone()], DMatrix::identity(2, 2)), 2).unwrap();
        let expected = [0.9689922480620154, 0.0310077519379845, 0.0, 1.0];
        for (got, want) in r.normalized.transpose().iter().zip(expected) {
            assert!((got - want).abs() < 1e-10);
        }

        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let r = gfevd(&model(vec![b], sigma), 2).unwrap();
        let raw = [0.9450359712230215, 0.14118705035971224, 0.045, 1.0];
        let normalized = [
            0.870020200682187,
            0.12997979931781303,
            0.0430622009569378,
            0.9569377990430623,
        ];
        for (got, want) in r.fevd.transpose().iter().zip(raw) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in r.normalized.transpose().iter().zip(normalized) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((r.index - 17.30420002747506).abs() < 1e-10);
    }

    #[test]
    fn three_series_two_lags_match_reference() {
        let b1 = DMatrix::from_row_slice(3, 3, &[0.4, 0.1, 0.0, 0.2, 0.3, -0.1, 0.0, 0.1, 0.5]);
        let b2 = DMatrix::from_row_slice(3, 3, &[0.1, 0.0, 0.0, 0.0, -0.1, 0.05, 0.02, 0.0, 0.1]);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.5, -0.1, 0.1, -0.1, 0.8]);
        let r = gfevd(&model(vec![b1, b2], sigma), 5).unwrap();
        let expected = [
            [0.8954459619709426, 0.09498684278593408, 0.00956719524312325],
            [0.17414790247568646, 0.7947879981106984, 0.03106409941361516],
            [0.02693809600720231, 0.0176402894063238, 0.955421614586474],
        ];
        for (r_idx, row) in expected.iter().enumerate() {
            for (c_idx, want) in row.iter().enumerate() {
                assert!((r.normalized[(r_idx, c_idx)] - want).abs() < 1e-12);
            }
        }
        assert!((r.index - 35.434442533188545).abs() < 1e-10);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn impulse_scales_dispersion_column() {
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.5]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let responses = generalized_impulse(&model(vec![b], sigma), 1, 2).unwrap();
        let expected = [
            [0.21213203435596423, 1.414213562373095],
            [0.38890872965260115, 0.7071067811865475],
        ];
        for (got, want) in responses.iter().zip(expected) {
            assert!((got[0] - want[0]).abs() < 1e-14);
            assert!((got[1] - want[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn impulse_of_white_noise_dies_after_impact() {
        let m = model(vec![DMatrix::zeros(2, 2)], DMatrix::identity(2, 2));
        let responses = generalized_impulse(&m, 0, 3).unwrap();
        assert_eq!(responses[0], DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(responses[1], DVector::zeros(2));
        assert_eq!(responses[2], DVector::zeros(2));
    }

    #[test]
    fn heavy_tails_fall_back_to_scale_matrix() {
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let m = VarModel::new(
            vec![DMatrix::zeros(2, 2)],
            ErrorDistribution::student_t(1.5, psi.clone()).unwrap(),
        )
        .unwrap();
        assert_eq!(gfevd(&m, 2).unwrap().dispersion_matrix, psi);
    }

    #[test]
    fn non_stationary_model_is_flagged() {
        let m = model(vec![DMatrix::identity(2, 2) * 1.1], DMatrix::identity(2, 2));
        let r = gfevd(&m, 3).unwrap();
        assert!(r.non_stationary);
        assert!((r.normalized.row(0).sum() - 1.0).abs() < 1e-12);
    }

    fn dense_result(j: usize) -> SpilloverResult {
        let b = DMatrix::from_fn(j, j, |r, c| 0.03 * ((r * 7 + c * 3) % 5) as f64);
        let sigma = DMatrix::from_fn(j, j, |r, c| 0.2f64.powi((r as i32 - c as i32).abs()));
        gfevd(&model(vec![b], sigma), 5).unwrap()
    }

    #[test]
    fn fifteen_percent_of_ten_series_keeps_fourteen_edges() {
        let net = extract_network(&dense_result(10), 0.15, &labels(10)).unwrap();
        assert_eq!(net.edges.len(), 14);
        assert!(net
            .edges
            .iter()
            .all(|e| e.source != e.target && e.weight > 0.0));
        assert!(net.edges.windows(2).all(|w| w[0].weight >= w[1].weight));
    }

    #[test]
    fn full_quantile_keeps_every_positive_spillover() {
        let net = extract_network(&dense_result(4), 1.0, &labels(4)).unwrap();
        assert_eq!(net.edges.len(), 12);
    }

    #[test]
    fn identity_decomposition_has_no_edges() {
        let m = model(vec![DMatrix::identity(3, 3) * 0.4], DMatrix::identity(3, 3));
        let net = extract_network(&gfevd(&m, 5).unwrap(), 0.5, &labels(3)).unwrap();
        assert!(net.edges.is_empty());
    }

    #[test]
    fn ties_at_cutoff_are_all_kept() {
        let mut r = dense_result(3);
        r.spillovers =
            DMatrix::from_row_slice(3, 3, &[80.0, 10.0, 10.0, 10.0, 80.0, 10.0, 5.0, 5.0, 90.0]);
        let net = extract_network(&r, 0.2, &labels(3)).unwrap();
        assert_eq!(net.edges.len(), 4);
    }

    #[test]
    fn edge_direction_runs_from_source_to_receiver() {
        let mut r = dense_result(2);
        r.spillovers = DMatrix::from_row_slice(2, 2, &[70.0, 30.0, 0.0, 100.0]);
        let net = extract_network(&r, 1.0, &["a".into(), "b".into()]).unwrap();
        assert_eq!(net.edges.len(), 1);
        assert_eq!(
            (net.edges[0].source.as_str(), net.edges[0].target.as_str()),
            ("b", "a")
        );
    }

    #[test]
    fn exports_round_to_six_significant_digits() {
        let net = NetworkExport {
            nodes: vec!["a".into(), "b \"x\"".into()],
            edges: vec![Edge {
                source: "a".into(),
                target: "b \"x\"".into(),
                weight: 12.3456789,
            }],
            retention_quantile: 1.0,
        };
        let json: serde_json::Value = serde_json::from_str(&net.to_json().unwrap()).unwrap();
        assert_eq!(json["edges"][0]["weight"], 12.3457);
        assert_eq!(json["nodes"][1], "b \"x\"");
        let dot = net.to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"a\" -> \"b \\\"x\\\"\" [weight=12.3457, penwidth=5];"));
    }

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(0.000123456789, 6), 0.000123457);
        assert_eq!(round_significant(-98765432.1, 6), -98765400.0);
        assert_eq!(round_significant(0.0, 6), 0.0);
    }
}
