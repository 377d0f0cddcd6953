//! File interchange: trajectory CSV with a JSON sidecar, matrix and graph
//! JSON, and the inference-result document.
//!
//! Trajectory CSV carries one row per observation under the header
//! `k,z_1,...,z_N`. Values print through the shortest round-trip float
//! formatting (`{:?}`), so write-then-read reproduces the numbers bit for
//! bit. The
//! sidecar (same stem, `.json` extension) records the sampling period, noise
//! level, seed, and optionally the generating input model.
//!
//! Matrices are stored as `{"n": N, "matrix": [row-major floats]}`; graphs
//! as `{"n": N, "adjacency": [row-major floats]}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{LatentInputModel, ObservationSet};
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;
use crate::ietia::IterationTrace;
use crate::totia::InferenceResult;

/// Sidecar companion of a trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub epsilon: f64,
    pub sigma: f64,
    pub seed: u64,
    pub n: usize,
    pub k_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<LatentInputModel>,
}

/// Sidecar path of a trajectory file: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write a trajectory as CSV plus its sidecar.
pub fn write_trajectory_csv(
    path: &Path,
    obs: &ObservationSet,
    input: Option<&LatentInputModel>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string()];
    header.extend((1..=obs.n()).map(|i| format!("z_{i}")));
    writer.write_record(&header)?;
    for k in 1..=obs.k_max() {
        let mut record = vec![k.to_string()];
        record.extend(obs.state(k).iter().map(|v| format!("{v:?}")));
        writer.write_record(&record)?;
    }
    writer.flush()?;

    let sidecar = TrajectorySidecar {
        epsilon: obs.epsilon(),
        sigma: obs.noise_sigma(),
        seed: obs.seed(),
        n: obs.n(),
        k_max: obs.k_max(),
        input: input.cloned(),
    };
    let file = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &sidecar)?;
    Ok(())
}

/// Read a trajectory CSV and its sidecar. A missing sidecar is tolerated
/// when `epsilon_override` supplies the sampling period; when both are
/// present the override wins.
pub fn read_trajectory_csv(
    path: &Path,
    epsilon_override: Option<f64>,
) -> Result<(ObservationSet, Option<LatentInputModel>)> {
    let sidecar: Option<TrajectorySidecar> = match File::open(sidecar_path(path)) {
        Ok(file) => Some(serde_json::from_reader(BufReader::new(file))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };

    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 2 || header.get(0) != Some("k") {
        return Err(Error::InvalidParameter(format!(
            "trajectory header must be k,z_1,...,z_N, got {header:?}"
        )));
    }
    let n = header.len() - 1;

    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != n + 1 {
            return Err(Error::InvalidParameter(format!(
                "row {} has {} fields, expected {}",
                row_index + 1,
                record.len(),
                n + 1
            )));
        }
        let k: usize = record[0]
            .parse()
            .map_err(|e| Error::InvalidParameter(format!("bad index {:?}: {e}", &record[0])))?;
        if k != row_index + 1 {
            return Err(Error::InvalidParameter(format!(
                "rows must be contiguous from 1; row {} has k = {k}",
                row_index + 1
            )));
        }
        let values: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::InvalidParameter(format!("bad value {s:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        columns.push(values);
    }
    if columns.len() < 2 {
        return Err(Error::InvalidParameter(
            "trajectory needs at least 2 observations".into(),
        ));
    }

    let k_max = columns.len();
    let states = Array2::from_shape_fn((n, k_max), |(i, k)| columns[k][i]);

    let epsilon = epsilon_override
        .or_else(|| sidecar.as_ref().map(|s| s.epsilon))
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "no sidecar at {:?}; pass the sampling period explicitly",
                sidecar_path(path)
            ))
        })?;
    let (sigma, seed, input) = sidecar
        .map(|s| (s.sigma, s.seed, s.input))
        .unwrap_or((0.0, 0, None));
    Ok((ObservationSet::new(states, epsilon, sigma, seed)?, input))
}

/// Write a bare series (no sidecar) in the trajectory CSV layout; used for
/// exporting filtered series.
pub fn write_series_csv(path: &Path, series: &Array2<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let n = series.nrows();
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("z_{i}")));
    writer.write_record(&header)?;
    for k in 0..series.ncols() {
        let mut record = vec![(k + 1).to_string()];
        record.extend(series.column(k).iter().map(|v| format!("{v:?}")));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn matrix_to_vec(m: &Array2<f64>) -> Vec<f64> {
    m.iter().cloned().collect()
}

fn vec_to_matrix(n: usize, data: &[f64], what: &str) -> Result<Array2<f64>> {
    if data.len() != n * n {
        return Err(Error::InvalidParameter(format!(
            "{what} carries {} entries for n = {n}; expected {}",
            data.len(),
            n * n
        )));
    }
    Ok(Array2::from_shape_vec((n, n), data.to_vec()).expect("length checked"))
}

/// Write `{"n": ..., "matrix": [...]}`, merging any extra top-level fields.
pub fn write_matrix_json(
    path: &Path,
    matrix: &Array2<f64>,
    extras: Option<serde_json::Value>,
) -> Result<()> {
    let mut doc = json!({
        "n": matrix.nrows(),
        "matrix": matrix_to_vec(matrix),
    });
    if let Some(serde_json::Value::Object(extra)) = extras {
        let obj = doc.as_object_mut().expect("document is an object");
        for (key, value) in extra {
            obj.insert(key, value);
        }
    }
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &doc)?;
    writer.flush()?;
    Ok(())
}

/// Read the `matrix` field of a matrix document.
pub fn read_matrix_json(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path)?;
    let doc: serde_json::Value = serde_json::from_reader(BufReader::new(file))?;
    let n = doc["n"]
        .as_u64()
        .ok_or_else(|| Error::InvalidParameter(format!("{path:?} has no integer field \"n\"")))?
        as usize;
    let data: Vec<f64> = doc["matrix"]
        .as_array()
        .ok_or_else(|| Error::InvalidParameter(format!("{path:?} has no array field \"matrix\"")))?
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| Error::InvalidParameter("non-numeric matrix entry".into()))
        })
        .collect::<Result<_>>()?;
    vec_to_matrix(n, &data, "matrix")
}

/// Write `{"n": ..., "adjacency": [...]}`.
pub fn write_graph_json(path: &Path, g: &WeightedDigraph) -> Result<()> {
    let doc = json!({
        "n": g.n(),
        "adjacency": matrix_to_vec(g.adjacency()),
    });
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &doc)?;
    Ok(())
}

/// Read a graph document (connectivity validated on load).
pub fn read_graph_json(path: &Path) -> Result<WeightedDigraph> {
    let file = File::open(path)?;
    let doc: serde_json::Value = serde_json::from_reader(BufReader::new(file))?;
    let n = doc["n"]
        .as_u64()
        .ok_or_else(|| Error::InvalidParameter(format!("{path:?} has no integer field \"n\"")))?
        as usize;
    let data: Vec<f64> = doc["adjacency"]
        .as_array()
        .ok_or_else(|| {
            Error::InvalidParameter(format!("{path:?} has no array field \"adjacency\""))
        })?
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| Error::InvalidParameter("non-numeric adjacency entry".into()))
        })
        .collect::<Result<_>>()?;
    WeightedDigraph::from_adjacency(vec_to_matrix(n, &data, "adjacency")?)
}

/// Plain CSV dump of the adjacency matrix (one row per line, no header) for
/// plotting tools.
pub fn write_graph_csv(path: &Path, g: &WeightedDigraph) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in g.adjacency().rows() {
        let record: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Render an inference result (and optional iteration trace) as the output
/// document: the matrix fields plus a diagnostics block.
pub fn inference_document(
    result: &InferenceResult,
    trace: Option<&IterationTrace>,
) -> serde_json::Value {
    let d = &result.diagnostics;
    let mut doc = json!({
        "n": result.p_hat.nrows(),
        "matrix": matrix_to_vec(&result.p_hat),
        "iterations": result.iterations,
        "diagnostics": {
            "k_eps": d.k_eps,
            "c": d.c,
            "r": d.r.as_ref().map(|r| r.to_vec()),
            "eps_tol": d.eps_tol,
            "weight_kind": d.weight_kind.as_str(),
            "rho": d.rho,
            "beta": d.beta,
            "dropped_layers": d.dropped_layers,
            "solver": {
                "iterations": d.final_solve.iterations,
                "converged": d.final_solve.converged,
                "primal_residual": d.final_solve.primal_residual,
                "dual_residual": d.final_solve.dual_residual,
                "objective_value": d.final_solve.objective_value,
            },
        },
        "input_estimates": result
            .input_estimates
            .iter()
            .enumerate()
            .filter_map(|(agent, fit)| {
                fit.map(|f| json!({
                    "agent": agent,
                    "injection_time": f.injection_time,
                    "theta": f.theta,
                }))
            })
            .collect::<Vec<_>>(),
    });
    if let Some(trace) = trace {
        let obj = doc.as_object_mut().expect("document is an object");
        obj.insert("psi_d_trace".into(), json!(trace.psi_d_trace()));
        obj.insert(
            "termination".into(),
            json!(match trace.termination {
                crate::ietia::TerminationStatus::Converged => "converged",
                crate::ietia::TerminationStatus::MaxIterations => "max_iterations",
            }),
        );
        let ident = &trace.identification;
        obj.insert(
            "identification".into(),
            json!({
                "q": ident.q,
                "k_uq": ident.k_uq,
                "injected": ident
                    .injected
                    .iter()
                    .map(|(agent, k_u)| json!({"agent": agent, "injection_time": k_u}))
                    .collect::<Vec<_>>(),
            }),
        );
    }
    doc
}

/// Write the inference document to a file.
pub fn write_inference_json(
    path: &Path,
    result: &InferenceResult,
    trace: Option<&IterationTrace>,
) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &inference_document(result, trace))?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_time_varying_input, simulate, InputFamily, LatentInputModel};
    use crate::graph::{interaction_matrix, random_connected_digraph};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn trajectory_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let g = random_connected_digraph(4, 0.6, (0.5, 1.5), 3).unwrap();
        let p = interaction_matrix(&g, 0.5 / g.d_max()).unwrap();
        let obs = simulate(
            &p,
            &array![1.0, -0.5, 0.25, 2.0],
            &LatentInputModel::zero(4),
            15,
            0.37,
            11,
        )
        .unwrap();
        write_trajectory_csv(&path, &obs, None).unwrap();
        let (loaded, input) = read_trajectory_csv(&path, None).unwrap();
        assert_eq!(loaded.states(), obs.states());
        assert_eq!(loaded.epsilon(), obs.epsilon());
        assert_eq!(loaded.noise_sigma(), obs.noise_sigma());
        assert_eq!(loaded.seed(), obs.seed());
        assert!(input.is_none());
    }

    #[test]
    fn sidecar_carries_the_input_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let g = random_connected_digraph(3, 0.8, (0.5, 1.5), 5).unwrap();
        let p = interaction_matrix(&g, 0.5 / g.d_max()).unwrap();
        let z0 = array![2.0, -1.0, 0.5];
        let model = make_time_varying_input(
            &p,
            &z0,
            &[(1, 4)],
            InputFamily::Exponential,
            &[(0.5, 0.1, 0.2)],
            2.0,
        )
        .unwrap();
        let obs = simulate(&p, &z0, &model, 10, 0.0, 0).unwrap();
        write_trajectory_csv(&path, &obs, Some(&model)).unwrap();
        let (_, input) = read_trajectory_csv(&path, None).unwrap();
        assert_eq!(input.unwrap(), model);
    }

    #[test]
    fn missing_sidecar_requires_an_explicit_period() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let states = Array2::from_shape_fn((2, 4), |(i, k)| (i + k) as f64);
        let obs = ObservationSet::new(states, 0.25, 0.0, 0).unwrap();
        write_trajectory_csv(&path, &obs, None).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(read_trajectory_csv(&path, None).is_err());
        let (loaded, _) = read_trajectory_csv(&path, Some(0.5)).unwrap();
        assert_eq!(loaded.epsilon(), 0.5);
        assert_eq!(loaded.states(), obs.states());
    }

    #[test]
    fn matrix_document_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let m = array![[0.25, 0.75], [0.5, 0.5]];
        write_matrix_json(&path, &m, Some(serde_json::json!({"note": "x"}))).unwrap();
        assert_eq!(read_matrix_json(&path).unwrap(), m);
    }

    #[test]
    fn graph_documents_round_trip_and_export() {
        let dir = tempfile::tempdir().unwrap();
        let g = random_connected_digraph(5, 0.5, (0.5, 1.5), 9).unwrap();
        let jpath = dir.path().join("g.json");
        write_graph_json(&jpath, &g).unwrap();
        let loaded = read_graph_json(&jpath).unwrap();
        assert_eq!(loaded.adjacency(), g.adjacency());

        let cpath = dir.path().join("g.csv");
        write_graph_csv(&cpath, &g).unwrap();
        let content = std::fs::read_to_string(&cpath).unwrap();
        assert_eq!(content.lines().count(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn arbitrary_noisy_trajectories_round_trip(seed in 0u64..1000, k in 2usize..12) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.csv");
            let g = random_connected_digraph(3, 0.7, (0.5, 1.5), seed).unwrap();
            let p = interaction_matrix(&g, 0.5 / g.d_max()).unwrap();
            let obs = simulate(
                &p,
                &array![1.0, -2.0, 0.5],
                &LatentInputModel::zero(3),
                k,
                0.81,
                seed,
            )
            .unwrap();
            write_trajectory_csv(&path, &obs, None).unwrap();
            let (loaded, _) = read_trajectory_csv(&path, None).unwrap();
            prop_assert_eq!(loaded.states(), obs.states());
        }
    }
}
