//! CSV writers. Reals carry 17 significant digits; ',' separator, LF endings.

use std::io::Write;

use crate::atoms::AtomDistribution;
use crate::error::{Error, Result};
use crate::popdyn::DecayTrace;
use crate::recursion::DecayBoundTrace;

/// Round-trippable decimal form of a real.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b',')
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Numeric(format!("csv output failed: {e}"))
}

/// Header plus pre-formatted rows.
pub fn write_table_csv<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(header).map_err(io_err)?;
    for row in rows {
        w.write_record(row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_atoms_csv<W: Write>(out: W, laws: &[AtomDistribution]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["quantity", "condition", "depth", "mode", "value", "prob"])
        .map_err(io_err)?;
    for law in laws {
        let depth = law.depth.to_string();
        for a in &law.atoms {
            w.write_record([
                law.quantity.as_str(),
                law.condition.as_str(),
                &depth,
                law.mode.as_str(),
                &fmt_real(a.value),
                &fmt_real(a.prob),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn write_decay_csv<W: Write>(out: W, trace: &DecayTrace) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["depth", "xbar", "xbar1", "xbar0", "stderr"])
        .map_err(io_err)?;
    for level in &trace.levels {
        let m = &level.moments;
        w.write_record([
            m.depth.to_string(),
            fmt_real(m.xbar),
            fmt_real(m.xbar1),
            fmt_real(m.xbar0),
            fmt_real(level.stderr.xbar),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_bound_csv<W: Write>(out: W, trace: &DecayBoundTrace) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["depth", "xbar_measured", "xbar_bound"])
        .map_err(io_err)?;
    for level in &trace.levels {
        w.write_record([
            level.depth.to_string(),
            level.xbar_measured.map(fmt_real).unwrap_or_default(),
            fmt_real(level.xbar_bound),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::atom_recursion;
    use crate::params::ModelParams;
    use crate::posterior::PosteriorMode;

    #[test]
    fn real_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 7.0] {
            let s = fmt_real(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_real(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn atoms_csv_layout() {
        let params = ModelParams::derive_from_omega(2, 1.0).unwrap();
        let ladder = atom_recursion(&params, 1, PosteriorMode::Paper).unwrap();
        let mut buf = Vec::new();
        write_atoms_csv(&mut buf, &[ladder[1].q[0].clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "quantity,condition,depth,mode,value,prob");
        assert_eq!(
            lines[1],
            "Q,0,1,paper,2.0000000000000001e-1,2.5000000000000000e-1"
        );
        assert!(!text.contains('\r'));
    }
}
