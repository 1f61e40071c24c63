//! Custom search-space files.
//!
//! ```text
//! stem_channels = 16
//! resolution = 224
//! stage = 64, 4
//! stage = 160, 4
//! ```
//!
//! Each `stage` line gives output channels and block count; stages appear
//! in network order. `resolution` defaults to 224.

use std::path::Path;

use detnas_core::{SearchSpace, StageSpec};

use crate::error::{CliError, CliResult};

pub fn parse(text: &str) -> Result<SearchSpace, String> {
    let mut stem = None;
    let mut resolution = 224usize;
    let mut stages = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |m: &str| format!("line {}: {m}", n + 1);
        let (key, value) = line.split_once('=').ok_or_else(|| at("expected `key = value`"))?;
        let number = |s: &str| s.trim().parse::<usize>().map_err(|_| at(&format!("`{}` is not a count", s.trim())));
        match key.trim() {
            "stem_channels" => stem = Some(number(value)?),
            "resolution" => resolution = number(value)?,
            "stage" => {
                let parts: Vec<&str> = value.split([',', ' ']).filter(|p| !p.is_empty()).collect();
                let [c, b] = parts.as_slice() else {
                    return Err(at("a stage is `channels, blocks`"));
                };
                stages.push(StageSpec::new(number(c)?, number(b)?));
            }
            other => return Err(at(&format!("unknown key `{other}`"))),
        }
    }
    let stem = stem.ok_or("missing stem_channels")?;
    SearchSpace::new(stem, stages, (resolution, resolution)).map_err(|e| e.to_string())
}

pub fn to_text(space: &SearchSpace) -> String {
    let mut s = format!(
        "stem_channels = {}\nresolution = {}\n",
        space.stem_channels, space.input_resolution.0
    );
    for stage in &space.stages {
        s.push_str(&format!("stage = {}, {}\n", stage.out_channels, stage.num_blocks));
    }
    s
}

pub fn load(path: &Path) -> CliResult<SearchSpace> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|message| CliError::Format {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_preset_round_trips() {
        let small = SearchSpace::small();
        assert_eq!(parse(&to_text(&small)).unwrap(), small);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(parse("stage = 16, 2\n").unwrap_err().contains("stem_channels"));
        assert!(parse("stem_channels = 8\nstage = 16\n").unwrap_err().contains("line 2"));
        assert!(parse("stem_channels = 8\ndepth = 3\n").is_err());
        assert!(parse("stem_channels = 8\n").is_err());
    }
}
