//! Scenario files shipped with the binary, one per figure panel.

use crate::error::CliError;
use crate::scenario::Scenario;

macro_rules! bundled {
    ($($id:literal),* $(,)?) => {
        /// `(id, TOML text)` for every bundled scenario.
        pub const BUNDLED: &[(&str, &str)] = &[
            $(($id, include_str!(concat!("../scenarios/", $id, ".toml")))),*
        ];
    };
}

bundled!(
    "smoke",
    "fig1",
    "fig2_left",
    "fig2_right",
    "fig3_left",
    "fig3_right",
    "fig4_left",
    "fig4_right",
    "fig5_left",
    "fig5_right",
    "fig6_left",
    "fig6_right",
    "fig7_left",
    "fig7_right",
    "fig8",
    "fig9",
    "fig10",
    "fig11_left",
    "fig11_right",
    "geo_inventory",
    "geo_surfaces",
    "oracle_bellman",
    "oracle_cash",
);

/// Directory holding the bundled scenario files in a source checkout.
pub fn scenario_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn text(id: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(k, _)| *k == id).map(|(_, t)| *t)
}

pub fn load(id: &str) -> Result<Scenario, CliError> {
    let t = text(id).ok_or_else(|| CliError::Usage(format!("no bundled scenario `{id}`")))?;
    Scenario::from_toml(t).map_err(|e| match e {
        CliError::Schema(m) => CliError::Schema(format!("{id}.toml: {m}")),
        other => other,
    })
}

/// Ids of the scenarios making up a figure: `fig5` expands to its panels,
/// `fig5_left` is taken as is.
pub fn figure_panels(figure: &str) -> Result<Vec<&'static str>, CliError> {
    let prefix = format!("{figure}_");
    let ids: Vec<_> = BUNDLED
        .iter()
        .map(|(k, _)| *k)
        .filter(|k| *k == figure || k.starts_with(&prefix))
        .collect();
    if ids.is_empty() {
        let known: Vec<_> = BUNDLED.iter().map(|(k, _)| *k).collect();
        return Err(CliError::Usage(format!(
            "unknown figure id `{figure}` (known: {})",
            known.join(", ")
        )));
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_loads_under_its_own_name() {
        for (id, _) in BUNDLED {
            let s = load(id).unwrap_or_else(|e| panic!("{id}: {e}"));
            assert_eq!(s.name(), *id);
        }
    }

    #[test]
    fn bundled_text_matches_files_on_disk() {
        for (id, t) in BUNDLED {
            let disk = std::fs::read_to_string(scenario_dir().join(format!("{id}.toml"))).unwrap();
            assert_eq!(disk, *t);
        }
    }

    #[test]
    fn panels_expand() {
        assert_eq!(figure_panels("fig5").unwrap(), ["fig5_left", "fig5_right"]);
        assert_eq!(figure_panels("fig1").unwrap(), ["fig1"]);
        assert_eq!(figure_panels("fig11_right").unwrap(), ["fig11_right"]);
        assert_eq!(figure_panels("fig12").unwrap_err().exit_code(), 2);
    }
}
