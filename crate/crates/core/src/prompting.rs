//! Coarse and fine sentence prompts plus the fixed 22-entry vocabulary the
//! matcher indexes into.

use crate::forgery_typing::ForgeryType;
use crate::mask_region::RegionName;

pub const COARSE_REAL: &str = "this is a real person";
pub const COARSE_FAKE: &str = "this is a fake person";

/// `fine_prompt` output: "this is a fake person, the forgery region is
/// {region}, the forgery type is {type}".
const FINE_PREFIX: &str = "this is a fake person, the forgery region is ";
const FINE_MIDDLE: &str = ", the forgery type is ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseLabel {
    Real,
    Fake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    CoarseReal,
    CoarseFake,
    Fine(RegionName, ForgeryType),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub kind: PromptKind,
}

pub fn coarse_prompt(label: CoarseLabel) -> Prompt {
    match label {
        CoarseLabel::Real => Prompt {
            text: COARSE_REAL.to_string(),
            kind: PromptKind::CoarseReal,
        },
        CoarseLabel::Fake => Prompt {
            text: COARSE_FAKE.to_string(),
            kind: PromptKind::CoarseFake,
        },
    }
}

pub fn fine_prompt(region: RegionName, ftype: ForgeryType) -> Prompt {
    Prompt {
        text: format!(
            "{FINE_PREFIX}{}{FINE_MIDDLE}{}",
            region.as_str(),
            ftype.as_phrase()
        ),
        kind: PromptKind::Fine(region, ftype),
    }
}

/// Inverse of the prompt templates; None for anything off-template.
pub fn parse_prompt(text: &str) -> Option<PromptKind> {
    if text == COARSE_REAL {
        return Some(PromptKind::CoarseReal);
    }
    if text == COARSE_FAKE {
        return Some(PromptKind::CoarseFake);
    }
    let rest = text.strip_prefix(FINE_PREFIX)?;
    let (region_str, type_str) = rest.split_once(FINE_MIDDLE)?;
    let region = RegionName::from_str(region_str)?;
    let ftype = ForgeryType::from_phrase(type_str)?;
    Some(PromptKind::Fine(region, ftype))
}

/// The full prompt list in matcher order: the two coarse prompts, then the
/// 20 fine prompts (regions in mouth/nose/eyes/face order, types in color
/// difference / blur / structure abnormal / texture abnormal / blend
/// boundary order).
pub fn vocabulary() -> Vec<Prompt> {
    let mut out = Vec::with_capacity(22);
    out.push(coarse_prompt(CoarseLabel::Real));
    out.push(coarse_prompt(CoarseLabel::Fake));
    for region in RegionName::ALL {
        for ftype in ForgeryType::ALL {
            out.push(fine_prompt(region, ftype));
        }
    }
    out
}

/// Vocabulary row index of a fine (region, type) pair.
pub fn fine_index(region: RegionName, ftype: ForgeryType) -> usize {
    let r = RegionName::ALL.iter().position(|&x| x == region).unwrap();
    let t = ForgeryType::ALL.iter().position(|&x| x == ftype).unwrap();
    2 + r * ForgeryType::ALL.len() + t
}
