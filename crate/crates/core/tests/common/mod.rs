//! Builders shared by the integration tests.
#![allow(dead_code)]

use groundkit::{BoundingBox, Screenshot, UiCategory, UiElement};

pub fn shot(id: &str, w: u32, h: u32) -> Screenshot {
    Screenshot {
        id: id.into(),
        app_name: "App".into(),
        category: "Productivity".into(),
        width: w,
        height: h,
        image_path: format!("images/{id}.png"),
    }
}

pub fn elem(id: &str, shot: &str, b: [f64; 4], label: &str) -> UiElement {
    UiElement {
        id: id.into(),
        screenshot_id: shot.into(),
        bbox: BoundingBox::new(b[0], b[1], b[2], b[3]),
        label: label.into(),
        ocr_text: None,
        ui_category: Some(UiCategory::Button),
    }
}
