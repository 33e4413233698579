//! Procedural schematic renderer: sky, ground, road, a roadside mount with
//! an ad panel, and the scenario's critical object, all projected through
//! the same pinhole model as the patch.

use super::config::{MountKind, ScenarioConfig};
use crate::error::Result;
use crate::image::{ImageBuffer, PixelRect};
use crate::objective::SceneFrame;
use crate::oracle::SceneContext;
use crate::patch::Patch;
use crate::transforms::{composite_into, project_rect, PatchPlacement};

const SKY: [u8; 3] = [135, 180, 225];
const GRASS: [u8; 3] = [90, 140, 70];
const ROAD: [u8; 3] = [80, 80, 85];
const ZEBRA: [u8; 3] = [230, 230, 230];
const BARRIER: [u8; 3] = [170, 170, 160];
const FRAME: [u8; 3] = [60, 60, 65];
const AD_PANEL: [u8; 3] = [200, 200, 200];
const FIGURE_BODY: [u8; 3] = [40, 60, 160];
const FIGURE_HEAD: [u8; 3] = [210, 170, 140];

const BARRIER_HEIGHT_M: f64 = 0.8;
const CROSSWALK_DEPTH_M: f64 = 3.0;
const ZEBRA_STRIPE_M: f64 = 0.5;
const FRAME_BORDER_M: f64 = 0.12;

/// Frame plus what the renderer knows about it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub image: ImageBuffer,
    pub context: SceneContext,
    /// Unclipped patch rectangle at this distance.
    pub patch_rect: PixelRect,
    /// A patch was composited (given, on-frame, and within onset distance).
    pub patch_drawn: bool,
}

impl RenderedFrame {
    pub fn into_scene(self, prompt: &str) -> SceneFrame {
        SceneFrame { image: self.image, patch_rect: self.patch_rect, context: self.context, prompt: prompt.to_owned() }
    }
}

fn background(cfg: &ScenarioConfig, distance: f64) -> ImageBuffer {
    let cam = &cfg.camera;
    let (w, h) = (cam.image_width, cam.image_height);
    let f = cam.focal_px();
    let (cx, cy) = cam.principal_point();
    let cam_h = cam.height_above_ground;
    let layout = &cfg.scene;
    let mut img = ImageBuffer::filled(w, h, SKY).expect("camera validated");
    for y in 0..h {
        // pixel centers
        let v = y as f64 + 0.5;
        if v <= cy {
            continue;
        }
        let z = f * cam_h / (v - cy);
        for x in 0..w {
            let u = x as f64 + 0.5;
            let lateral = (u - cx) * z / f;
            let on_road = lateral >= layout.road_left_m && lateral <= layout.road_right_m;
            let mut color = if on_road { ROAD } else { GRASS };
            if on_road && layout.crosswalk && z >= distance && z <= distance + CROSSWALK_DEPTH_M {
                let stripe = ((lateral - layout.road_left_m) / ZEBRA_STRIPE_M).floor() as i64;
                if stripe % 2 == 0 {
                    color = ZEBRA;
                }
            }
            img.set_pixel(x, y, color);
        }
    }
    if let Some(bx) = layout.barrier_lateral_m {
        draw_barrier(&mut img, cfg, bx);
    }
    img
}

/// Vertical face at `lateral = bx`, from the road to `BARRIER_HEIGHT_M`.
fn draw_barrier(img: &mut ImageBuffer, cfg: &ScenarioConfig, bx: f64) -> bool {
    let cam = &cfg.camera;
    let f = cam.focal_px();
    let (cx, cy) = cam.principal_point();
    let mut any = false;
    for x in 0..img.width() {
        let du = x as f64 + 0.5 - cx;
        if du * bx <= 0.0 {
            continue;
        }
        let z = f * bx / du;
        if z < 0.5 {
            continue;
        }
        for y in 0..img.height() {
            let height = cam.height_above_ground - (y as f64 + 0.5 - cy) * z / f;
            if (0.0..=BARRIER_HEIGHT_M).contains(&height) {
                img.set_pixel(x, y, BARRIER);
                any = true;
            }
        }
    }
    any
}

fn barrier_visible(cfg: &ScenarioConfig) -> bool {
    let Some(bx) = cfg.scene.barrier_lateral_m else {
        return false;
    };
    let mut probe = ImageBuffer::filled(cfg.camera.image_width, cfg.camera.image_height, [0, 0, 0]).expect("camera validated");
    draw_barrier(&mut probe, cfg, bx)
}

fn draw_mount(img: &mut ImageBuffer, cfg: &ScenarioConfig, place: &PatchPlacement) -> Result<()> {
    let [pw, ph] = cfg.patch_physical;
    let cam = &cfg.camera;
    let border = project_rect(cam, place, pw + 2.0 * FRAME_BORDER_M, ph + 2.0 * FRAME_BORDER_M)?;
    match cfg.scene.mount_kind {
        MountKind::Shelter => {
            // roof slab above the panel and one post down to the road
            let roof_center = PatchPlacement { mount_height: place.mount_height + ph / 2.0 + 0.6, ..*place };
            img.fill_rect(project_rect(cam, &roof_center, pw + 1.2, 0.15)?, FRAME);
            let post_h = place.mount_height + ph / 2.0 + 0.6;
            let post = PatchPlacement {
                mount_center_lateral: place.mount_center_lateral + pw / 2.0 + 0.4,
                mount_height: post_h / 2.0,
                ..*place
            };
            img.fill_rect(project_rect(cam, &post, 0.1, post_h)?, FRAME);
        }
        MountKind::Billboard => {
            let pole_h = place.mount_height - ph / 2.0;
            for side in [-1.0, 1.0] {
                let pole = PatchPlacement {
                    mount_center_lateral: place.mount_center_lateral + side * pw / 3.0,
                    mount_height: pole_h / 2.0,
                    ..*place
                };
                img.fill_rect(project_rect(cam, &pole, 0.15, pole_h)?, FRAME);
            }
        }
    }
    img.fill_rect(border, FRAME);
    img.fill_rect(project_rect(cam, place, pw, ph)?, AD_PANEL);
    Ok(())
}

/// Draws the pedestrian if any, returning whether it is on-frame.
fn draw_figure(img: &mut ImageBuffer, cfg: &ScenarioConfig, distance: f64) -> Result<bool> {
    let Some(fig) = cfg.scene.pedestrian else {
        return Ok(false);
    };
    let d = distance + fig.distance_offset_m;
    let body = PatchPlacement { mount_center_lateral: fig.lateral_m, mount_height: fig.height_m * 0.4, distance: d };
    let head = PatchPlacement { mount_center_lateral: fig.lateral_m, mount_height: fig.height_m * 0.9, distance: d };
    let body_rect = project_rect(&cfg.camera, &body, fig.width_m, fig.height_m * 0.8)?;
    let head_rect = project_rect(&cfg.camera, &head, fig.width_m * 0.5, fig.height_m * 0.2)?;
    img.fill_rect(body_rect, FIGURE_BODY);
    img.fill_rect(head_rect, FIGURE_HEAD);
    let (w, h) = (img.width(), img.height());
    Ok(body_rect.clip_to(w, h).is_some() || head_rect.clip_to(w, h).is_some())
}

/// Deterministic schematic frame at `distance` from the mount. The patch is
/// drawn over the ad panel when given and `distance <= onset_distance`.
pub fn render_frame(cfg: &ScenarioConfig, distance: f64, patch: Option<&Patch>) -> Result<RenderedFrame> {
    let place = cfg.patch_placement(distance);
    let patch_rect = project_rect(&cfg.camera, &place, cfg.patch_physical[0], cfg.patch_physical[1])?;
    let mut image = background(cfg, distance);
    let figure_visible = draw_figure(&mut image, cfg, distance)?;
    draw_mount(&mut image, cfg, &place)?;
    let mut patch_drawn = false;
    if let Some(p) = patch.filter(|_| distance <= cfg.onset_distance) {
        patch_drawn = composite_into(&mut image, p, patch_rect);
    }
    let context = SceneContext {
        scenario: cfg.name.clone(),
        patch_roi: patch_rect.clip_to(cfg.camera.image_width, cfg.camera.image_height),
        critical_visible: figure_visible || barrier_visible(cfg),
        critical_description: cfg.critical_description.clone(),
        target_response: cfg.target_response.clone(),
    };
    Ok(RenderedFrame { image, context, patch_rect, patch_drawn })
}
