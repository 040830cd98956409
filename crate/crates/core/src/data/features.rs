//! Text format for sparse token features: `id<TAB>token:weight token:weight ...`.

use std::io::{BufRead, Write};

use crate::encoder::SparseFeatures;
use crate::error::{Error, Result};

pub fn read_features<R: BufRead>(r: R) -> Result<Vec<(String, SparseFeatures)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |m: String| Error::Parse { line: lineno, message: m };
        let (id, rest) = line.split_once('\t').ok_or_else(|| perr("missing tab after id".into()))?;
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for tok in rest.split_whitespace() {
            let (t, w) = tok
                .split_once(':')
                .ok_or_else(|| perr(format!("feature {tok:?} is not token:weight")))?;
            indices.push(t.parse::<u32>().map_err(|_| perr(format!("bad token id {t:?}")))?);
            weights.push(w.parse::<f32>().map_err(|_| perr(format!("bad weight {w:?}")))?);
        }
        let f = SparseFeatures::new(indices, weights).map_err(|e| perr(e.to_string()))?;
        out.push((id.to_string(), f));
    }
    Ok(out)
}

pub fn write_features<W: Write>(mut w: W, items: &[(String, SparseFeatures)]) -> Result<()> {
    for (id, f) in items {
        write!(w, "{id}\t")?;
        for (j, (t, wt)) in f.indices().iter().zip(f.weights()).enumerate() {
            if j > 0 {
                write!(w, " ")?;
            }
            write!(w, "{t}:{wt}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let items = vec![
            ("a".to_string(), SparseFeatures::new(vec![1, 4], vec![1.0, 0.5]).unwrap()),
            ("b".to_string(), SparseFeatures::new(vec![], vec![]).unwrap()),
        ];
        let mut buf = Vec::new();
        write_features(&mut buf, &items).unwrap();
        assert_eq!(read_features(buf.as_slice()).unwrap(), items);
    }

    #[test]
    fn unsorted_tokens_rejected_with_line() {
        let err = read_features("a\t1:1\nb\t5:1 2:1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
