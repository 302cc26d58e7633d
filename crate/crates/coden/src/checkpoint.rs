//! Parameter checkpoint file: a line-tagged TSV dump of the temporal block
//! and classifier weights, with a one-line header recording the shapes and
//! mode.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CodenError, Result};
use crate::learner::{ClassifierHead, CodenModel, SsmKind};

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:.17e}"))
        .collect::<Vec<_>>()
        .join("\t")
}

/// Writes the model parameters. Layout:
/// header, transition diagonal (general mode), input matrix rows (general
/// mode), step-size parameter, then the classifier weight rows.
pub fn save_checkpoint(path: &Path, model: &CodenModel) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    let io = |e| CodenError::io(path.display().to_string(), e);
    let (mode, f_in, f_prime) = match &model.ssm {
        SsmKind::General { b, .. } => ("general", b.ncols(), b.nrows()),
        SsmKind::Gated { dim, .. } => ("gated", *dim, *dim),
    };
    writeln!(
        f,
        "# coden-params v1 mode={mode} f={f_in} f_prime={f_prime} hidden={} classes={} gamma={:.17e}",
        model.head.hidden_dim(),
        model.head.classes(),
        model.gamma
    )
    .map_err(io)?;
    match &model.ssm {
        SsmKind::General { a, b, s } => {
            writeln!(f, "a\t{}", fmt_row(a.iter().copied())).map_err(io)?;
            for i in 0..b.nrows() {
                writeln!(f, "b\t{}", fmt_row(b.row(i).iter().copied())).map_err(io)?;
            }
            writeln!(f, "s\t{}", fmt_row([*s])).map_err(io)?;
        }
        SsmKind::Gated { s, .. } => {
            writeln!(f, "s\t{}", fmt_row([*s])).map_err(io)?;
        }
    }
    let head = &model.head;
    for i in 0..head.w1.nrows() {
        writeln!(f, "w1\t{}", fmt_row(head.w1.row(i).iter().copied())).map_err(io)?;
    }
    writeln!(f, "b1\t{}", fmt_row(head.b1.iter().copied())).map_err(io)?;
    for i in 0..head.w2.nrows() {
        writeln!(f, "w2\t{}", fmt_row(head.w2.row(i).iter().copied())).map_err(io)?;
    }
    writeln!(f, "b2\t{}", fmt_row(head.b2.iter().copied())).map_err(io)?;
    Ok(())
}

fn header_field(header: &str, key: &str) -> Result<String> {
    header
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .map(str::to_string)
        .ok_or_else(|| CodenError::InconsistentInput(format!("missing {key} in header")))
}

pub fn load_checkpoint(path: &Path) -> Result<CodenModel> {
    let file =
        std::fs::File::open(path).map_err(|e| CodenError::io(path.display().to_string(), e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| CodenError::io(path.display().to_string(), e))?
        .ok_or_else(|| CodenError::InconsistentInput("empty checkpoint".into()))?;
    if !header.starts_with("# coden-params v1") {
        return Err(CodenError::InconsistentInput(
            "unrecognized checkpoint header".into(),
        ));
    }
    let mode = header_field(&header, "mode")?;
    let f_in: usize = header_field(&header, "f")?
        .parse()
        .map_err(|_| CodenError::InconsistentInput("bad f in header".into()))?;
    let f_prime: usize = header_field(&header, "f_prime")?
        .parse()
        .map_err(|_| CodenError::InconsistentInput("bad f_prime in header".into()))?;
    let hidden: usize = header_field(&header, "hidden")?
        .parse()
        .map_err(|_| CodenError::InconsistentInput("bad hidden in header".into()))?;
    let classes: usize = header_field(&header, "classes")?
        .parse()
        .map_err(|_| CodenError::InconsistentInput("bad classes in header".into()))?;
    let gamma: f64 = header_field(&header, "gamma")?
        .parse()
        .map_err(|_| CodenError::InconsistentInput("bad gamma in header".into()))?;

    let mut a = Vec::new();
    let mut b_rows: Vec<Vec<f64>> = Vec::new();
    let mut s = None;
    let mut w1_rows: Vec<Vec<f64>> = Vec::new();
    let mut b1 = Vec::new();
    let mut w2_rows: Vec<Vec<f64>> = Vec::new();
    let mut b2 = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| CodenError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let tag = parts.next().unwrap_or_default();
        let values: Vec<f64> = parts
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| CodenError::Parse {
                    path: path.display().to_string(),
                    line: i + 2,
                    msg: format!("bad float '{tok}'"),
                })
            })
            .collect::<Result<_>>()?;
        match tag {
            "a" => a = values,
            "b" => b_rows.push(values),
            "s" => s = values.first().copied(),
            "w1" => w1_rows.push(values),
            "b1" => b1 = values,
            "w2" => w2_rows.push(values),
            "b2" => b2 = values,
            other => {
                return Err(CodenError::Parse {
                    path: path.display().to_string(),
                    line: i + 2,
                    msg: format!("unknown tag '{other}'"),
                })
            }
        }
    }
    let s = s.ok_or_else(|| CodenError::InconsistentInput("missing s line".into()))?;
    let rows_to_matrix = |rows: &[Vec<f64>], what: &str| -> Result<DMatrix<f64>> {
        if rows.is_empty() {
            return Err(CodenError::InconsistentInput(format!(
                "missing {what} rows"
            )));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CodenError::InconsistentInput(format!("ragged {what} rows")));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
    };
    let head = ClassifierHead {
        w1: rows_to_matrix(&w1_rows, "w1")?,
        b1,
        w2: rows_to_matrix(&w2_rows, "w2")?,
        b2,
    };
    if head.in_dim() != if mode == "gated" { f_in } else { f_prime }
        || head.hidden_dim() != hidden
        || head.classes() != classes
    {
        return Err(CodenError::InconsistentInput(
            "classifier shapes disagree with the header".into(),
        ));
    }
    let ssm = match mode.as_str() {
        "general" => {
            let b = rows_to_matrix(&b_rows, "b")?;
            if a.len() != f_prime || b.nrows() != f_prime || b.ncols() != f_in {
                return Err(CodenError::InconsistentInput(
                    "transition shapes disagree with the header".into(),
                ));
            }
            SsmKind::General { a, b, s }
        }
        "gated" => SsmKind::Gated { s, dim: f_in },
        other => {
            return Err(CodenError::InconsistentInput(format!(
                "unknown mode '{other}'"
            )))
        }
    };
    Ok(CodenModel { ssm, head, gamma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(301);
        let model = CodenModel::general(3, 5, 7, 2, 0.93, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.tsv");
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(model.flat_params(), loaded.flat_params());
        assert_eq!(loaded.gamma, model.gamma);
    }

    #[test]
    fn checkpoint_roundtrip_gated() {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let model = CodenModel::gated(4, 6, 3, 0.9, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.tsv");
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(model.flat_params(), loaded.flat_params());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
