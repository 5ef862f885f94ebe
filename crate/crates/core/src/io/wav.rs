//! Mono WAV input and 16-bit PCM output.

use std::path::Path;

use crate::error::{Error, Result};

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Wav(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono 16-bit PCM (or 32-bit float) file recorded at
/// `expected_rate` Hz as samples in `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!("{}: expected mono, found {} channels", path.display(), spec.channels)));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::Wav(format!(
            "{}: expected {expected_rate} Hz, found {} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0).map_err(|e| wav_err(path, e)))
            .collect(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map_err(|e| wav_err(path, e)))
            .collect(),
        (fmt, bits) => Err(Error::Wav(format!(
            "{}: unsupported sample format {fmt:?} with {bits} bits",
            path.display()
        ))),
    }
}

/// Quantizes a sample to 16-bit PCM.
pub fn to_pcm16(x: f32) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes mono 16-bit PCM. Samples are clipped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        w.write_sample(to_pcm16(s)).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        write_wav(&p, &x, 8000).unwrap();
        let y = read_wav(&p, 8000).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        write_wav(&p, &y, 8000).unwrap();
        assert_eq!(read_wav(&p, 8000).unwrap(), y);
    }

    #[test]
    fn rejects_wrong_rate_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &[0.0; 10], 16000).unwrap();
        assert!(matches!(read_wav(&p, 8000), Err(Error::Wav(_))));
        assert!(matches!(read_wav(dir.path().join("none.wav"), 8000), Err(Error::Io { .. })));
    }

    #[test]
    fn clipping() {
        assert_eq!(to_pcm16(2.0), 32767);
        assert_eq!(to_pcm16(-2.0), -32768);
        assert_eq!(to_pcm16(0.0), 0);
    }
}
