use crate::error::{Error, Result};

/// Sinusoidal embedding of a normalized time `t` in `[0, 1]`: `dim/2` sines
/// followed by `dim/2` cosines at geometric frequencies from 1 to 100, so
/// the fastest component turns by at most 0.5 rad per step of a 200-step schedule.
pub fn time_embed(t_norm: f64, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::arg(format!("time embedding dim {dim} must be even")));
    }
    let mut out = vec![0.0; dim];
    time_embed_into(t_norm, &mut out);
    Ok(out)
}

pub(crate) fn frequencies(half: usize) -> Vec<f64> {
    match half {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..half).map(|i| 10f64.powf(2.0 * i as f64 / (half - 1) as f64)).collect(),
    }
}

pub(crate) fn time_embed_into(t_norm: f64, out: &mut [f64]) {
    let half = out.len() / 2;
    for (i, f) in frequencies(half).into_iter().enumerate() {
        let (s, c) = (t_norm * f).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
}
