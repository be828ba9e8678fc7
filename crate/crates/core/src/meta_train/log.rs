use std::io::{self, Write};

/// One inner optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    /// 1-based step index `t`.
    pub step: usize,
    /// `L(theta_t)`.
    pub loss: f64,
    /// Euclidean norm of the update applied after this step.
    pub update_norm: f64,
    /// DMD features fed to the optimizer at this step (empty without DMD).
    pub features: Vec<f64>,
}

/// Append-only per-step record of one optimizee run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    records: Vec<TrajectoryRecord>,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TrajectoryRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Writes `step,loss,update_norm,re_1,im_1,...` with a header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let width = self.records.iter().map(|r| r.features.len()).max().unwrap_or(0);
        write!(out, "step,loss,update_norm")?;
        for k in 0..width / 2 {
            write!(out, ",re_{},im_{}", k + 1, k + 1)?;
        }
        writeln!(out)?;
        for r in &self.records {
            write!(out, "{},{},{}", r.step, r.loss, r.update_norm)?;
            for v in &r.features {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut log = TrajectoryLog::new();
        log.push(TrajectoryRecord {
            step: 1,
            loss: 0.5,
            update_norm: 0.0,
            features: vec![0.0, 0.0],
        });
        log.push(TrajectoryRecord {
            step: 2,
            loss: 0.1 + 0.2,
            update_norm: 1e-3,
            features: vec![0.9, -0.25],
        });
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,loss,update_norm,re_1,im_1\n1,0.5,0,0,0\n2,0.30000000000000004,0.001,0.9,-0.25\n"
        );
    }
}
