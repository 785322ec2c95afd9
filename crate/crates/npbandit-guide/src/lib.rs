//! Companion crate keeping the book honest: every chapter is included as
//! module documentation, so each of its code blocks runs as a doc-test and
//! the prose can never drift away from the library it describes.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/spectra-and-maps.md")]
pub mod spectra_and_maps {}

#[doc = include_str!("../../../book/src/environment.md")]
pub mod environment {}

#[doc = include_str!("../../../book/src/query-design.md")]
pub mod query_design {}

#[doc = include_str!("../../../book/src/ridge-and-risk.md")]
pub mod ridge_and_risk {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/kernel-bandits.md")]
pub mod kernel_bandits {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    /// Every chapter listed in the book summary must exist and be wired
    /// into this crate, and this crate must not include stray chapters.
    #[test]
    fn summary_and_included_chapters_agree() {
        let src = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../book/src");
        let summary = std::fs::read_to_string(src.join("SUMMARY.md")).unwrap();
        let listed: Vec<&str> = summary
            .lines()
            .filter_map(|l| l.split_once("](").map(|(_, rest)| rest))
            .filter_map(|rest| rest.split_once(')').map(|(f, _)| f))
            .collect();
        assert!(!listed.is_empty(), "summary lists no chapters");

        let lib = include_str!("lib.rs");
        for chapter in &listed {
            assert!(
                src.join(chapter).is_file(),
                "summary links missing chapter {chapter}"
            );
            assert!(
                lib.contains(&format!("book/src/{chapter}")),
                "chapter {chapter} is not doc-tested"
            );
        }
        let included = lib.matches("include_str!(\"../../../book/src/").count();
        assert_eq!(included, listed.len(), "crate includes a chapter the summary omits");
    }
}
