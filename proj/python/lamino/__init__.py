"""Computed laminography simulation, reconstruction and evaluation."""

from ._lamino import (
    LaminoError,
    ScanGeometry,
    add_noise,
    alpha_bar,
    back_project,
    bdm,
    cylinder_phantom,
    ddim_timesteps,
    fdk,
    forward_project,
    masked_fraction,
    missing_cone_energy,
    mse,
    otsu_threshold,
    pcb_phantom,
    pearson_cc,
    psnr,
    run_cli,
    sart,
    ssim,
)

__all__ = [
    "LaminoError",
    "ScanGeometry",
    "add_noise",
    "alpha_bar",
    "back_project",
    "bdm",
    "cylinder_phantom",
    "ddim_timesteps",
    "fdk",
    "forward_project",
    "masked_fraction",
    "missing_cone_energy",
    "mse",
    "otsu_threshold",
    "pcb_phantom",
    "pearson_cc",
    "psnr",
    "run_cli",
    "sart",
    "ssim",
]
