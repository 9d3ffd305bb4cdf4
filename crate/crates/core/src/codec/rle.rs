//! Zero-run token coding for residual planes.
//!
//! Token stream:
//! - `0x00, u8 run` emits `run` zero values (run in 1..=255);
//! - `0x01, u16 count (LE), count x i16 (LE)` emits raw values.
//!
//! Inside a CPV1 stream the token sequence ends exactly when the expected
//! number of values has been produced; the standalone decoder consumes the
//! whole buffer instead.

use super::CodecError;

const TOKEN_ZERO_RUN: u8 = 0x00;
const TOKEN_LITERALS: u8 = 0x01;

/// Token-level failure, kept structured so the container parser can attach
/// the frame index to truncations.
pub(crate) enum RleError {
    Truncated { offset: usize, missing: usize },
    Bad { offset: usize, message: String },
}

impl From<RleError> for CodecError {
    fn from(e: RleError) -> Self {
        match e {
            RleError::Truncated { offset, missing } => CodecError::Parse {
                offset,
                message: format!("run-length token truncated: needed {missing} more bytes"),
            },
            RleError::Bad { offset, message } => CodecError::Parse { offset, message },
        }
    }
}

pub fn rle0_encode(values: &[i16]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if values[i] == 0 {
            let mut run = 0usize;
            while i + run < values.len() && values[i + run] == 0 {
                run += 1;
            }
            let mut left = run;
            while left > 0 {
                let chunk = left.min(255);
                out.push(TOKEN_ZERO_RUN);
                out.push(chunk as u8);
                left -= chunk;
            }
            i += run;
        } else {
            let mut run = 0usize;
            while i + run < values.len() && values[i + run] != 0 {
                run += 1;
            }
            let mut consumed = 0usize;
            while consumed < run {
                let chunk = (run - consumed).min(u16::MAX as usize);
                out.push(TOKEN_LITERALS);
                out.extend_from_slice(&(chunk as u16).to_le_bytes());
                for &v in &values[i + consumed..i + consumed + chunk] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                consumed += chunk;
            }
            i += run;
        }
    }
    out
}

/// Decode a standalone token buffer, consuming it entirely.
pub fn rle0_decode(bytes: &[u8]) -> Result<Vec<i16>, CodecError> {
    let mut values = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        pos = decode_token(bytes, pos, &mut values)?;
    }
    Ok(values)
}

/// Decode tokens until exactly `expected` values have been produced,
/// returning the byte position one past the last token.
pub(crate) fn rle0_decode_exact(
    bytes: &[u8],
    start: usize,
    expected: usize,
) -> Result<(Vec<i16>, usize), RleError> {
    let mut values = Vec::with_capacity(expected);
    let mut pos = start;
    while values.len() < expected {
        pos = decode_token(bytes, pos, &mut values)?;
        if values.len() > expected {
            return Err(RleError::Bad {
                offset: pos,
                message: format!(
                    "run-length section overruns: produced {} of {} expected values",
                    values.len(),
                    expected
                ),
            });
        }
    }
    Ok((values, pos))
}

fn decode_token(bytes: &[u8], pos: usize, values: &mut Vec<i16>) -> Result<usize, RleError> {
    let need = |at: usize, n: usize| -> Result<(), RleError> {
        if at + n > bytes.len() {
            Err(RleError::Truncated {
                offset: bytes.len(),
                missing: at + n - bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(pos, 1)?;
    match bytes[pos] {
        TOKEN_ZERO_RUN => {
            need(pos + 1, 1)?;
            let run = bytes[pos + 1] as usize;
            if run == 0 {
                return Err(RleError::Bad {
                    offset: pos + 1,
                    message: "zero-length run token".into(),
                });
            }
            values.extend(std::iter::repeat_n(0i16, run));
            Ok(pos + 2)
        }
        TOKEN_LITERALS => {
            need(pos + 1, 2)?;
            let count = u16::from_le_bytes([bytes[pos + 1], bytes[pos + 2]]) as usize;
            if count == 0 {
                return Err(RleError::Bad {
                    offset: pos + 1,
                    message: "zero-length literal token".into(),
                });
            }
            need(pos + 3, count * 2)?;
            for i in 0..count {
                let at = pos + 3 + i * 2;
                values.push(i16::from_le_bytes([bytes[at], bytes[at + 1]]));
            }
            Ok(pos + 3 + count * 2)
        }
        other => Err(RleError::Bad {
            offset: pos,
            message: format!("unknown run-length token 0x{other:02x}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn long_zero_run_splits_at_255() {
        let values = vec![0i16; 300];
        let encoded = rle0_encode(&values);
        assert_eq!(encoded, vec![0x00, 255, 0x00, 45]);
        assert_eq!(rle0_decode(&encoded).unwrap(), values);
    }

    #[test]
    fn empty_input_encodes_to_empty_bytes() {
        assert!(rle0_encode(&[]).is_empty());
        assert_eq!(rle0_decode(&[]).unwrap(), Vec::<i16>::new());
    }

    #[test]
    fn mixed_sequence_tokenizes_per_format() {
        let values = vec![0i16, 0, 5, -1, 0];
        let encoded = rle0_encode(&values);
        let expected = vec![
            0x00, 2, // two zeros
            0x01, 2, 0, 5, 0, 0xff, 0xff, // literals 5, -1
            0x00, 1, // one zero
        ];
        assert_eq!(encoded, expected);
        assert_eq!(rle0_decode(&encoded).unwrap(), values);
    }

    #[test]
    fn truncated_token_reports_missing_bytes() {
        let encoded = rle0_encode(&[1i16, 2, 3]);
        let err = rle0_decode(&encoded[..encoded.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(err.to_string().contains("1 more byte"), "{err}");
    }

    proptest! {
        #[test]
        fn round_trip_random(values in prop::collection::vec(any::<i16>(), 0..600)) {
            let encoded = rle0_encode(&values);
            prop_assert_eq!(rle0_decode(&encoded).unwrap(), values);
        }

        #[test]
        fn round_trip_extremes(len in 0usize..600, all_zero in any::<bool>()) {
            let values: Vec<i16> = if all_zero {
                vec![0; len]
            } else {
                (0..len).map(|i| (i % 100 + 1) as i16).collect()
            };
            let encoded = rle0_encode(&values);
            prop_assert_eq!(rle0_decode(&encoded).unwrap(), values);
        }
    }
}
