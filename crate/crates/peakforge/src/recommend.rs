//! Method recommendation from three facts about the data: whether the
//! peaks share one shape, whether that shape is known, and whether peaks
//! overlap.

use std::fmt;

/// The fitting methods the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    UniReg,
    PUniReg,
    L0Deco,
    BlindPointwise,
    BlindParametric,
    BlindUnimodal,
    AddUni,
    VaryingL0Deco,
}

impl Method {
    pub fn cli_name(&self) -> &'static str {
        match self {
            Method::UniReg => "unireg",
            Method::PUniReg => "punireg",
            Method::L0Deco => "l0deco",
            Method::BlindPointwise => "blind_pointwise",
            Method::BlindParametric => "blind_parametric",
            Method::BlindUnimodal => "blind_unimodal",
            Method::AddUni => "adduni",
            Method::VaryingL0Deco => "varying_l0deco",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Some(match name {
            "unireg" => Method::UniReg,
            "punireg" => Method::PUniReg,
            "l0deco" => Method::L0Deco,
            "blind_pointwise" => Method::BlindPointwise,
            "blind_parametric" => Method::BlindParametric,
            "blind_unimodal" => Method::BlindUnimodal,
            "adduni" => Method::AddUni,
            "varying_l0deco" => Method::VaryingL0Deco,
            _ => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

/// Whether all peaks share one basic shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakShapeEquality {
    Identical,
    Diverse,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct Recommendation {
    pub primary: Method,
    pub alternatives: Vec<Method>,
    pub rationale: String,
}

/// Pick a method for the described data situation.
///
/// Identical known shapes always go to plain L0 deconvolution; identical
/// unknown shapes to blind deconvolution with the unimodal shape update
/// (the pointwise and parametric variants are listed as alternatives);
/// diverse shapes go to piecewise fitting when the peaks do not overlap
/// and to the varying-shape deconvolution when they do, with the additive
/// model as the alternative when the peak count is known. An unknown
/// shape-equality is treated as diverse, the more general situation.
pub fn recommend_method(
    peaks_identical: PeakShapeEquality,
    shape_known: bool,
    overlap: bool,
) -> Recommendation {
    match (peaks_identical, shape_known) {
        (PeakShapeEquality::Identical, true) => Recommendation {
            primary: Method::L0Deco,
            alternatives: vec![],
            rationale: "All peaks are scaled copies of one known shape, so L0-penalized \
                        deconvolution estimates their number, locations and heights \
                        simultaneously, with or without overlap."
                .into(),
        },
        (PeakShapeEquality::Identical, false) => Recommendation {
            primary: Method::BlindUnimodal,
            alternatives: vec![Method::BlindPointwise, Method::BlindParametric],
            rationale: "One shared but unknown peak shape calls for blind deconvolution; \
                        the unimodal-spline shape update gives a smooth functional estimate \
                        without committing to a parametric family."
                .into(),
        },
        (PeakShapeEquality::Diverse | PeakShapeEquality::Unknown, _) => {
            if overlap {
                Recommendation {
                    primary: Method::VaryingL0Deco,
                    alternatives: vec![Method::AddUni],
                    rationale: "Overlapping peaks of diverse shapes accumulate, so a \
                                deconvolution with per-mode unimodal spline columns is \
                                needed; prefer it over the additive model when the peak \
                                count is unknown."
                        .into(),
                }
            } else {
                Recommendation {
                    primary: Method::PUniReg,
                    alternatives: vec![],
                    rationale: "Diverse shapes without overlap split into separate \
                                unimodal pieces, so piecewise unimodal regression is \
                                sufficient."
                        .into(),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_cells_match() {
        assert_eq!(
            recommend_method(PeakShapeEquality::Identical, true, true).primary,
            Method::L0Deco
        );
        assert_eq!(
            recommend_method(PeakShapeEquality::Identical, true, false).primary,
            Method::L0Deco
        );
        assert_eq!(
            recommend_method(PeakShapeEquality::Diverse, false, false).primary,
            Method::PUniReg
        );
        let rec = recommend_method(PeakShapeEquality::Diverse, false, true);
        assert_eq!(rec.primary, Method::VaryingL0Deco);
        assert_eq!(rec.alternatives, vec![Method::AddUni]);
    }

    #[test]
    fn blind_variants_are_listed_for_unknown_identical_shape() {
        let rec = recommend_method(PeakShapeEquality::Identical, false, true);
        assert_eq!(rec.primary, Method::BlindUnimodal);
        assert_eq!(
            rec.alternatives,
            vec![Method::BlindPointwise, Method::BlindParametric]
        );
    }

    #[test]
    fn unknown_equality_is_treated_as_diverse() {
        assert_eq!(
            recommend_method(PeakShapeEquality::Unknown, false, false).primary,
            Method::PUniReg
        );
        assert_eq!(
            recommend_method(PeakShapeEquality::Unknown, false, true).primary,
            Method::VaryingL0Deco
        );
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::UniReg,
            Method::PUniReg,
            Method::L0Deco,
            Method::BlindPointwise,
            Method::BlindParametric,
            Method::BlindUnimodal,
            Method::AddUni,
            Method::VaryingL0Deco,
        ] {
            assert_eq!(Method::parse(m.cli_name()), Some(m));
        }
        assert_eq!(Method::parse("nope"), None);
    }
}
