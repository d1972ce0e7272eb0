use std::io::{Read, Write};

use thiserror::Error;

use super::ClosedLoopState;

/// Leading CSV columns; per-agent outputs `e_<agent>_<component>` follow.
pub const CSV_FIXED_COLUMNS: [&str; 11] = [
    "t",
    "mu",
    "||e||",
    "||v_tilde||",
    "||x_bar||",
    "||x_tilde||",
    "||u_tilde||",
    "phi1",
    "phi2",
    "phi3",
    "phi4",
];

/// Derived signals recorded at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub mu: f64,
    pub e_norm: f64,
    pub v_tilde: f64,
    pub x_bar: f64,
    pub x_tilde: Option<f64>,
    pub u_tilde: f64,
    pub phi: [Option<f64>; 4],
    /// Regulated outputs of all agents, stacked.
    pub e: Vec<f64>,
}

/// Sampled run. `states` holds the physical state at each sample when the
/// trajectory came from the integrator, and is empty when read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub output_dims: Vec<usize>,
    pub samples: Vec<Sample>,
    pub states: Vec<ClosedLoopState>,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}: sample times must be strictly increasing")]
    NotIncreasing { row: usize },
}

fn fmt_num(x: f64) -> String {
    // Shortest representation that parses back to the same value.
    format!("{x:e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

impl Trajectory {
    pub fn empty(output_dims: Vec<usize>) -> Self {
        Self {
            output_dims,
            samples: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Regulated output of `agent` within a sample.
    pub fn agent_output<'a>(&self, sample: &'a Sample, agent: usize) -> &'a [f64] {
        let start: usize = self.output_dims[..agent].iter().sum();
        &sample.e[start..start + self.output_dims[agent]]
    }

    /// Sample closest to `t`; the earlier one wins a tie.
    pub fn nearest(&self, t: f64) -> Option<&Sample> {
        self.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = CSV_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        for (i, &p) in self.output_dims.iter().enumerate() {
            for k in 0..p {
                h.push(format!("e_{}_{}", i + 1, k + 1));
            }
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrajectoryError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for s in &self.samples {
            let mut rec = vec![
                fmt_num(s.t),
                fmt_num(s.mu),
                fmt_num(s.e_norm),
                fmt_num(s.v_tilde),
                fmt_num(s.x_bar),
                fmt_opt(s.x_tilde),
                fmt_num(s.u_tilde),
            ];
            rec.extend(s.phi.iter().map(|p| fmt_opt(*p)));
            rec.extend(s.e.iter().map(|x| fmt_num(*x)));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TrajectoryError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header.len() < CSV_FIXED_COLUMNS.len()
            || header[..CSV_FIXED_COLUMNS.len()]
                .iter()
                .zip(CSV_FIXED_COLUMNS)
                .any(|(a, b)| a != b)
        {
            return Err(TrajectoryError::Header(format!(
                "expected leading columns {}",
                CSV_FIXED_COLUMNS.join(",")
            )));
        }
        let mut output_dims: Vec<usize> = Vec::new();
        for name in &header[CSV_FIXED_COLUMNS.len()..] {
            let parts: Vec<&str> = name.split('_').collect();
            let parsed = match parts.as_slice() {
                ["e", a, k] => a.parse::<usize>().ok().zip(k.parse::<usize>().ok()),
                _ => None,
            };
            let (agent, comp) = parsed.ok_or_else(|| TrajectoryError::Header(format!("unexpected column `{name}`")))?;
            if agent == output_dims.len() + 1 && comp == 1 {
                output_dims.push(1);
            } else if agent == output_dims.len() && comp == output_dims[agent - 1] + 1 {
                output_dims[agent - 1] += 1;
            } else {
                return Err(TrajectoryError::Header(format!("column `{name}` out of order")));
            }
        }

        let mut samples: Vec<Sample> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| -> Result<Option<f64>, TrajectoryError> {
                let raw = rec.get(c).unwrap_or("").trim();
                if raw.is_empty() {
                    return Ok(None);
                }
                raw.parse::<f64>().map(Some).map_err(|_| TrajectoryError::Parse {
                    row: row + 1,
                    column: header[c].clone(),
                    value: raw.to_string(),
                })
            };
            let req = |c: usize| -> Result<f64, TrajectoryError> {
                field(c)?.ok_or_else(|| TrajectoryError::Parse {
                    row: row + 1,
                    column: header[c].clone(),
                    value: String::new(),
                })
            };
            let s = Sample {
                t: req(0)?,
                mu: req(1)?,
                e_norm: req(2)?,
                v_tilde: req(3)?,
                x_bar: req(4)?,
                x_tilde: field(5)?,
                u_tilde: req(6)?,
                phi: [field(7)?, field(8)?, field(9)?, field(10)?],
                e: (CSV_FIXED_COLUMNS.len()..header.len())
                    .map(req)
                    .collect::<Result<_, _>>()?,
            };
            if samples.last().is_some_and(|p| p.t >= s.t) {
                return Err(TrajectoryError::NotIncreasing { row: row + 1 });
            }
            samples.push(s);
        }
        Ok(Self {
            output_dims,
            samples,
            states: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> Sample {
        Sample {
            t,
            mu: 1.0 / (2.0 - t),
            e_norm: 0.1 + t,
            v_tilde: 1.0 / 3.0,
            x_bar: 2e-300,
            x_tilde: None,
            u_tilde: 7.0,
            phi: [Some(0.25), Some(std::f64::consts::PI), None, None],
            e: vec![0.1, -0.2, 1e-17],
        }
    }

    fn traj() -> Trajectory {
        Trajectory {
            output_dims: vec![2, 1],
            samples: vec![sample(0.0), sample(0.5), sample(1.0)],
            states: Vec::new(),
        }
    }

    #[test]
    fn header_layout() {
        let h = traj().header();
        assert_eq!(h[2], "||e||");
        assert_eq!(&h[11..], ["e_1_1", "e_1_2", "e_2_1"]);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let t = traj();
        let text = t.to_csv_string();
        let back = Trajectory::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn absent_signals_are_empty_fields() {
        let text = traj().to_csv_string();
        let row = text.lines().nth(1).unwrap();
        assert!(row.contains(",,"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Trajectory::read_csv("a,b\n1,2\n".as_bytes()),
            Err(TrajectoryError::Header(_))
        ));
        let mut t = traj();
        t.samples[2].t = 0.5;
        let text = t.to_csv_string();
        assert!(matches!(
            Trajectory::read_csv(text.as_bytes()),
            Err(TrajectoryError::NotIncreasing { row: 3 })
        ));
        let text = traj().to_csv_string().replace("7e0", "seven");
        assert!(matches!(
            Trajectory::read_csv(text.as_bytes()),
            Err(TrajectoryError::Parse { .. })
        ));
    }

    #[test]
    fn agent_output_slices() {
        let t = traj();
        assert_eq!(t.agent_output(&t.samples[0], 1), &[1e-17]);
        assert_eq!(t.nearest(0.7).unwrap().t, 0.5);
        assert_eq!(t.nearest(0.75).unwrap().t, 0.5);
    }
}
