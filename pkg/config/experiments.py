"""
File name: experiments.py

Description: The six controlled-variable experiments of the default grid and
the reference average Dice scores measured for them on a gelatin spine phantom.

Goal: One table shared by `eval` (the default grid) and the ablation report,
which prints the reference score next to each measured score. The reference
values are for orientation only; the synthetic benchmark is only expected to
reproduce their ordering.
"""

# experiment_id: (loss, network, reset, test_split, input_channels)
EXPERIMENTS = {
    "exp1": ("w_dice", "rnn", "fixed_length", "unseen_image", "bmode_plus_feature"),
    "exp2": ("w_ce", "rnn", "fixed_length", "unseen_image", "bmode_plus_feature"),
    "exp3": ("w_dice", "cnn", "none", "unseen_image", "bmode_plus_feature"),
    "exp4": ("w_dice", "rnn", "align_with_scan", "unseen_image", "bmode_plus_feature"),
    "exp5": ("w_dice", "rnn", "align_with_scan", "unseen_anatomy", "bmode_plus_feature"),
    "exp6": ("w_dice", "rnn", "align_with_scan", "unseen_image", "bmode_only"),
}

REFERENCE_DICE = {
    "exp1": 0.422,
    "exp2": 0.416,
    "exp3": 0.287,
    "exp4": 0.493,
    "exp5": 0.436,
    "exp6": 0.331,
}

# Reference pairs: (better, worse).
COMPARED_PAIRS = [("exp1", "exp2"), ("exp1", "exp3"), ("exp4", "exp1"), ("exp4", "exp5"), ("exp4", "exp6")]

# Directional claims the synthetic benchmark must reproduce: name -> (higher, lower, strict)
ORDERING_CLAIMS = {
    "feature_channel_helps": ("exp4", "exp6", True),
    "temporal_model_helps": ("exp1", "exp3", True),
    "align_with_scan_not_worse": ("exp4", "exp1", False),
}
