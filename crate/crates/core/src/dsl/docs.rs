use crate::sim::{Library, Tool};

struct Entry {
    /// Library entry gating this builtin; `None` for always-on helpers.
    tool: Option<Tool>,
    signature: &'static str,
    description: &'static str,
}

const ENTRIES: [Entry; 14] = [
    Entry {
        tool: Some(Tool::Detector),
        signature: "find(object_name: str) -> list[ImagePatch]",
        description: "Detect Object. Returns every detected object of the category.",
    },
    Entry {
        tool: Some(Tool::Detector),
        signature: "count(detections: list) -> int",
        description: "Number of detections in a find() result.",
    },
    Entry {
        tool: Some(Tool::CheckExistence),
        signature: "exists(object_name: str) -> bool",
        description: "Check Object Existence.",
    },
    Entry {
        tool: Some(Tool::VerifyProperty),
        signature: "verify_property(object_name: str, visual_property: str) -> bool",
        description: "Verify Visual Property of an object of the category.",
    },
    Entry {
        tool: Some(Tool::PropertyMatching),
        signature: "best_description_from_options(object_name: str, property_list: list[str]) -> str",
        description: "Identify the Best-Matching Visual Property among the options.",
    },
    Entry {
        tool: Some(Tool::SimpleQuery),
        signature: "simple_query(question: str) -> str",
        description: "Answer a simple question about the image with a word or phrase.",
    },
    Entry {
        tool: Some(Tool::ExternalKnowledge),
        signature: "llm_query(question: str) -> str",
        description: "Acquire External Knowledge about a category.",
    },
    Entry {
        tool: Some(Tool::ImageCrop),
        signature: "crop_left_of_bbox(left: int, upper: int, right: int, lower: int) -> ImagePatch",
        description: "Crop the image to the part left of the box center. Also accepts a detection or a find() result.",
    },
    Entry {
        tool: Some(Tool::ImageCrop),
        signature: "crop_right_of_bbox(left: int, upper: int, right: int, lower: int) -> ImagePatch",
        description: "Crop the image to the part right of the box center.",
    },
    Entry {
        tool: Some(Tool::ImageCrop),
        signature: "crop_above_bbox(left: int, upper: int, right: int, lower: int) -> ImagePatch",
        description: "Crop the image to the part above the box center.",
    },
    Entry {
        tool: Some(Tool::ImageCrop),
        signature: "crop_below_bbox(left: int, upper: int, right: int, lower: int) -> ImagePatch",
        description: "Crop the image to the part below the box center.",
    },
    Entry {
        tool: None,
        signature: "bool_to_yesno(bool_answer: bool) -> str",
        description: "Convert True/False to Yes/No.",
    },
    Entry {
        tool: None,
        signature: "a == b, a != b, a < b, a <= b, a > b, a >= b",
        description: "Comparisons; ordering is defined on integers only.",
    },
    Entry {
        tool: None,
        signature: "patch.method(...)",
        description: "Image tools can be called as methods of `image` or of any returned patch to restrict them to that area.",
    },
];

/// Tool documentation block shown to the agent; only enabled tools appear.
pub fn builtin_docs(library: &Library) -> String {
    ENTRIES
        .iter()
        .filter(|e| e.tool.is_none_or(|t| library.enabled(t)))
        .map(|e| format!("{}\n    {}\n", e.signature, e.description))
        .collect()
}
