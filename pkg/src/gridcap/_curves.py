"""Bundled normalized residential demand shape, 96 quarter-hour steps, peak = 1."""

RESIDENTIAL_DAY = (
    0.3024, 0.2965, 0.2918, 0.2882, 0.2855, 0.2835, 0.282, 0.2809, 0.2802, 0.2797,
    0.2794, 0.2792, 0.2792, 0.2795, 0.28, 0.2811, 0.2832, 0.2866, 0.2922, 0.3009,
    0.3136, 0.3313, 0.3547, 0.3838, 0.4181, 0.4559, 0.4944, 0.5304, 0.5602, 0.5807,
    0.5896, 0.5862, 0.5713, 0.5472, 0.5172, 0.4851, 0.4541, 0.427, 0.4054, 0.39,
    0.3806, 0.3764, 0.3763, 0.3793, 0.3842, 0.3901, 0.3964, 0.4026, 0.4082, 0.413,
    0.4169, 0.4197, 0.4217, 0.4227, 0.4232, 0.4234, 0.4236, 0.4245, 0.4265, 0.4304,
    0.4369, 0.4465, 0.4602, 0.4783, 0.5015, 0.5299, 0.5636, 0.6023, 0.6455, 0.6921,
    0.7409, 0.7903, 0.8384, 0.8835, 0.9234, 0.9565, 0.981, 0.9958, 1.0, 0.9933,
    0.976, 0.9487, 0.9126, 0.8693, 0.8205, 0.768, 0.7138, 0.6597, 0.6072, 0.5576,
    0.512, 0.4709, 0.4348, 0.4038, 0.3779, 0.3566,
)
