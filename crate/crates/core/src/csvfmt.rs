/// 17 significant digits; parses back to the identical `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_f64(field: &str) -> crate::Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| crate::Error::Parse(format!("bad number {field:?}: {e}")))
}
