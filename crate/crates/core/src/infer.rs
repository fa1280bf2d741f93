//! Middle-frame inference on image files.

use std::path::Path;

use crate::data::{read_png, write_png};
use crate::error::{invalid, Error, Result};
use crate::motion_model::FrameTensor;
use crate::train::{load_checkpoint, Trained};

/// Width and height of each input, failing on the first mismatch.
pub fn check_resolutions(inputs: &[&Path; 4]) -> Result<(u32, u32)> {
    let mut first = None;
    for path in inputs {
        let dims = image::image_dimensions(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        match first {
            None => first = Some(dims),
            Some(d) if d != dims => {
                return Err(invalid(format!(
                    "{} is {}x{} but {} is {}x{}",
                    path.display(),
                    dims.0,
                    dims.1,
                    inputs[0].display(),
                    d.0,
                    d.1
                )))
            }
            Some(_) => {}
        }
    }
    Ok(first.expect("four inputs"))
}

/// Predicts the frame between inputs 2 and 3 (temporal order `t = -2, -1,
/// 1, 2`) and writes it to `out` as PNG.
pub fn interpolate_with(trained: &Trained, inputs: &[&Path; 4], out: &Path) -> Result<FrameTensor<f32>> {
    check_resolutions(inputs)?;
    let frames = [read_png(inputs[0])?, read_png(inputs[1])?, read_png(inputs[2])?, read_png(inputs[3])?];
    let pred = trained.model.interpolate(&trained.params, &frames)?.clamp01();
    write_png(out, &pred)?;
    Ok(pred)
}

/// Like [`interpolate_with`], loading the checkpoint only after the inputs
/// pass the resolution check.
pub fn interpolate(checkpoint: &Path, inputs: &[&Path; 4], out: &Path) -> Result<FrameTensor<f32>> {
    check_resolutions(inputs)?;
    let trained = load_checkpoint(checkpoint)?;
    interpolate_with(&trained, inputs, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatched_sizes_fail_before_the_checkpoint_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        write_png(&a, &FrameTensor::<f32>::filled(3, 8, 8, 0.5)).unwrap();
        write_png(&b, &FrameTensor::<f32>::filled(3, 8, 6, 0.5)).unwrap();
        let missing = dir.path().join("no-checkpoint");
        let err = interpolate(&missing, &[&a, &a, &b, &a], &dir.path().join("out.png")).unwrap_err();
        assert!(err.to_string().contains("8x8"), "{err}");
        assert!(!dir.path().join("out.png").exists());
    }
}
