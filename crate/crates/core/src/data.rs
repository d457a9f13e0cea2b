//! Logged observational data: covariates, the action taken, and the reward seen.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// `n` records of `(x, a, y)`.
///
/// Actions are stored 0-based; the CSV form is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    covariates: Array2<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    n_actions: usize,
}

impl ObservationSet {
    pub fn new(covariates: Array2<f64>, actions: Vec<usize>, rewards: Vec<f64>, n_actions: usize) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(Error::Input("observation set is empty".into()));
        }
        if actions.len() != n || rewards.len() != n {
            return Err(Error::Input(format!(
                "length mismatch: {} covariate rows, {} actions, {} rewards",
                n,
                actions.len(),
                rewards.len()
            )));
        }
        if n_actions == 0 {
            return Err(Error::Input("action count must be at least 1".into()));
        }
        if let Some(i) = actions.iter().position(|&a| a >= n_actions) {
            return Err(Error::Input(format!(
                "record {i}: action {} outside 1..={n_actions}",
                actions[i] + 1
            )));
        }
        if let Some(i) = rewards.iter().position(|y| !y.is_finite()) {
            return Err(Error::Input(format!("record {i}: reward is not finite")));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("covariates contain non-finite values".into()));
        }
        let covariates = covariates.as_standard_layout().into_owned();
        Ok(Self {
            covariates,
            actions,
            rewards,
            n_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn x(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    /// Row `i` as a contiguous slice.
    pub fn x_slice(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.covariates.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Records at `indices`, in that order. Keeps the action count.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let covariates = self.covariates.select(ndarray::Axis(0), indices);
        Self::new(
            covariates,
            indices.iter().map(|&i| self.actions[i]).collect(),
            indices.iter().map(|&i| self.rewards[i]).collect(),
            self.n_actions,
        )
    }

    /// Parses `x1,...,xd,action,reward` with 1-based actions.
    ///
    /// The action count is `n_actions` when given, else the largest action seen.
    pub fn read_csv<R: Read>(reader: R, n_actions: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        let cols = headers.len();
        if cols < 3 {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be x1,...,xd,action,reward".into(),
            });
        }
        let d = cols - 2;
        for (j, h) in headers.iter().take(d).enumerate() {
            if h != format!("x{}", j + 1) {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected column x{}, found {h:?}", j + 1),
                });
            }
        }
        if &headers[d] != "action" || &headers[d + 1] != "reward" {
            return Err(Error::Parse {
                line: 1,
                msg: "last two columns must be action,reward".into(),
            });
        }

        let mut xs = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != cols {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {cols} fields, found {}", rec.len()),
                });
            }
            let num = |j: usize| -> Result<f64> {
                let v: f64 = rec[j].parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("field {} is not a number: {:?}", j + 1, &rec[j]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("field {} is not finite", j + 1),
                    });
                }
                Ok(v)
            };
            for j in 0..d {
                xs.push(num(j)?);
            }
            let a: usize = rec[d].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("action is not a positive integer: {:?}", &rec[d]),
            })?;
            if a == 0 || n_actions.is_some_and(|m| a > m) {
                return Err(Error::Parse {
                    line,
                    msg: format!("action {a} out of range"),
                });
            }
            actions.push(a - 1);
            rewards.push(num(d + 1)?);
        }
        if actions.is_empty() {
            return Err(Error::Parse {
                line: 2,
                msg: "no records".into(),
            });
        }
        let m = n_actions.unwrap_or_else(|| actions.iter().max().map_or(1, |a| a + 1));
        let n = actions.len();
        let covariates = Array2::from_shape_vec((n, d), xs).map_err(|e| Error::Input(e.to_string()))?;
        Self::new(covariates, actions, rewards, m)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("action".into());
        header.push("reward".into());
        w.write_record(&header).map_err(csv_io)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.x(i).iter().map(|v| v.to_string()).collect();
            row.push((self.actions[i] + 1).to_string());
            row.push(self.rewards[i].to_string());
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, n_actions: Option<usize>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), n_actions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip() {
        let data = ObservationSet::new(array![[0.5, -1.0], [0.25, 2.0]], vec![0, 2], vec![1.5, -3.0], 3).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,action,reward\n0.5,-1,1,1.5\n"));
        let back = ObservationSet::read_csv(&buf[..], Some(3)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn rejects_bad_rows_with_line_number() {
        let text = "x1,action,reward\n0.1,1,2\n0.2,abc,3\n";
        match ObservationSet::read_csv(text.as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "x1,action,reward\n0.1,0,2\n";
        assert!(matches!(
            ObservationSet::read_csv(text.as_bytes(), None),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "x1,action,reward\n0.1,1\n";
        assert!(matches!(
            ObservationSet::read_csv(text.as_bytes(), None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_invalid_construction() {
        assert!(ObservationSet::new(Array2::zeros((0, 2)), vec![], vec![], 2).is_err());
        assert!(ObservationSet::new(array![[0.0]], vec![2], vec![1.0], 2).is_err());
        assert!(ObservationSet::new(array![[0.0]], vec![0], vec![f64::NAN], 2).is_err());
    }
}
