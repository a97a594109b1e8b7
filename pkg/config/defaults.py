"""
File name: defaults.py

Description: Default values for every RunConfig section. The loader coerces
user values to the type of the default listed here, so floats must be written
as floats and lists as lists.

Goal: One place that pins the parameters the method leaves unstated
(sector geometry, filter banks, confidence-map weights, phantom contrast,
network width), so runs are reproducible from a config file alone.
"""

import math

GEOMETRY = {
    "depth_min_m": 0.005,
    "depth_max_m": 0.069,
    "fov_rad": 1.0,
    "n_rays": 64,
    "n_samples": 64,
    "pixel_size_m": 0.001,
    "sweep_axis": [0.0, 1.0, 0.0],
    "sweep_pivot": [0.0, 0.0, 0.0],
    "carriage_axis": [0.0, 1.0, 0.0],
}

PHANTOM = {
    "shape": "cylinder",
    "shape_depth_m": 0.038,
    "shape_size_m": 0.012,
    "shape_tilt_rad": 0.35,
    "reflect_gain": 1.0,
    "specular_exponent": 4.0,
    "shadow_attenuation": 0.15,
    "speckle_mean": 0.12,
    # Rayleigh scale with unit mean: sqrt(2 / pi)
    "speckle_shape": math.sqrt(2.0 / math.pi),
    "noise_floor": 0.001,
    "seed": 7,
    "n_sweeps": 8,
    "sweep_angles_rad": [-0.24, -0.17, -0.1, -0.03, 0.03, 0.1, 0.17, 0.24],
    "carriage_range_m": [-0.02, 0.02],
    "frames_per_sweep": 13,
    "alternate_direction": True,
}

FEATURES = {
    "n_scales": 3,
    "n_orientations": 6,
    "min_wavelength_px": 6.0,
    "scale_mult": 2.1,
    "sigma_onf": 0.55,
    "d_theta_sigma": 0.8,
    "noise_t": 2.0,
    "epsilon": 0.01,
    "alpha": 2.0,
    "beta": 90.0,
    "gamma": 0.05,
    "solver_tol": 1e-8,
    "max_iters": 20000,
    "weight_floor": 1e-5,
    "sobel_threshold": 0.3,
    "blur_kernel_px": 6,
}

LABELGEN = {
    "sigma_px": 2.0,
    "max_incidence_rad": math.radians(80.0),
    "icp_max_iter": 100,
    "icp_tol": 1e-10,
}

NET = {
    "in_channels": 2,
    "base_channels": 8,
    "depth": 3,
    "use_convgru": True,
    "use_spatial_attention": True,
    "use_channel_attention": True,
}

TRAIN = {
    "loss": "w_dice",
    "learning_rate": 0.05,
    "epochs": 30,
    "reset_policy": "align_with_scan",
    "seed": 0,
    "ce_weight_lambda": 10.0,
    "step_per": "epoch",
}

VOLUME = {
    "mode": "max",
    "spacing_m": 0.001,
    "threshold": 0.5,
    "splat": "nearest",
}

EVAL = {
    "train_fraction": 0.7,
    "split_seed": 0,
    "anatomies": ["wedge", "cylinder"],
    "frames_per_sweep": 10,
    "n_sweeps": 8,
    # Benchmark runs take one step per reset window; [train] step_per stays the default elsewhere.
    "step_per": "window",
}

DEFAULTS = {
    "geometry": GEOMETRY,
    "phantom": PHANTOM,
    "features": FEATURES,
    "labelgen": LABELGEN,
    "net": NET,
    "train": TRAIN,
    "volume": VOLUME,
    "eval": EVAL,
}
