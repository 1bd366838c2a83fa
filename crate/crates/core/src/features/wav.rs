use std::path::Path;

use super::{FeatureError, Waveform};

/// Reads a PCM16 mono WAV file, scaling samples by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, FeatureError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => FeatureError::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => FeatureError::Format { field: "header", detail: format!("{}: {other}", path.display()) },
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(FeatureError::Format {
            field: "encoding",
            detail: format!("{}: expected integer PCM, got float", path.display()),
        });
    }
    if spec.bits_per_sample != 16 {
        return Err(FeatureError::Format {
            field: "bits_per_sample",
            detail: format!("{}: expected 16, got {}", path.display(), spec.bits_per_sample),
        });
    }
    if spec.channels != 1 {
        return Err(FeatureError::Format {
            field: "channels",
            detail: format!("{}: expected mono, got {} channels", path.display(), spec.channels),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| FeatureError::Format { field: "data", detail: e.to_string() })?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes samples in [-1, 1] as PCM16 mono (values are clamped, then
/// rounded after scaling by 32767).
pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<(), FeatureError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let map_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => FeatureError::Io(io),
        other => FeatureError::Format { field: "write", detail: other.to_string() },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_err)?;
    for &s in &w.samples {
        writer
            .write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .map_err(map_err)?;
    }
    writer.finalize().map_err(map_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, bits: u16, n: usize) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16000,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for _ in 0..n * channels as usize {
            w.write_sample(0i32).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_of_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, 1, 16, 16000);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples.len(), 16000);
        assert_eq!(w.sample_rate, 16000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        write_raw(&p, 2, 16, 100);
        match read_wav(&p) {
            Err(FeatureError::Format { field, .. }) => assert_eq!(field, "channels"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_bit_depth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_raw(&p, 1, 24, 100);
        assert!(matches!(read_wav(&p), Err(FeatureError::Format { field: "bits_per_sample", .. })));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(read_wav("/nonexistent/x.wav"), Err(FeatureError::Io(_))));
    }

    #[test]
    fn pcm_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.wav");
        let w = Waveform::new(vec![0.5, -0.25, 1.0], 8000).unwrap();
        write_wav_pcm16(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate, 8000);
        assert_eq!(r.samples, vec![16384.0 / 32768.0, -8192.0 / 32768.0, 32767.0 / 32768.0]);
    }
}
