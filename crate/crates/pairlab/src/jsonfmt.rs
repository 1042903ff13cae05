//! JSON and CSV emission with fixed-width float formatting.
//!
//! Every float written to disk uses 17 significant digits (`{:.16e}`), which
//! round-trips `f64` exactly and keeps reruns byte-identical.

use std::io;

use serde::Serialize;

use crate::error::Result;

/// `serde_json` formatter that writes every finite float with 17 significant
/// digits. Non-finite floats never reach it (`serde_json` maps them to
/// `null` upstream); the domain types reject non-finite values at
/// construction, so serialized documents contain only exact numbers.
pub struct SigFigFormatter;

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.write_f64(writer, value as f64)
    }
}

/// Serialize `value` as compact JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFigFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

/// Format a float for CSV cells: 17 significant digits.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}
