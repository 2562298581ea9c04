//! Plain CSV formatting shared by every artifact: `.` decimal separator,
//! `\n` line endings, no quoting, floats with 17 significant digits.

use std::io::{self, Write};

/// Formats a float with 17 significant digits (round-trips exactly).
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_row<W: Write, S: AsRef<str>>(w: &mut W, fields: &[S]) -> io::Result<()> {
    let mut first = true;
    for f in fields {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        w.write_all(f.as_ref().as_bytes())?;
    }
    w.write_all(b"\n")
}

pub fn write_floats<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let fields: Vec<String> = values.iter().map(|&v| float(v)).collect();
    write_row(w, &fields)
}
