"""Published ModelNet40-C results for PointNet++ (multi-scale) under several training
strategies: per-kind mean OA in percent, and the printed CE relative to the ST row."""

KINDS = ("rotation", "shear", "ffd", "rbf", "inv_rbf", "uniform", "upsampling", "gaussian",
         "impulse", "background", "occlusion", "lidar", "density_inc", "density_dec", "cutout")

MEAN_OA = {
    "st": (80.09, 84.90, 86.54, 86.43, 87.51, 87.67, 90.67, 85.61, 72.60, 77.95, 41.01, 31.78,
           71.59, 80.58, 83.74),
    "cutmix_k": (79.30, 86.51, 87.72, 88.37, 88.73, 87.89, 91.55, 85.94, 87.39, 82.39, 48.3,
                 45.71, 88.46, 90.08, 90.75),
    "cutmix_r": (78.39, 84.53, 85.97, 88.07, 88.31, 89.67, 91.03, 89.29, 90.19, 74.87, 43.78,
                 46.26, 88.88, 90.05, 90.25),
    "mixup": (78.74, 86.06, 87.15, 88.17, 88.7, 88.75, 91.45, 87.5, 84.92, 61.39, 43.15, 32.07,
              84.03, 85.49, 87.8),
    "rsmix": (63.78, 80.29, 80.49, 78.79, 79.97, 76.60, 91.43, 69.81, 88.14, 84.01, 51.61, 45.53,
              88.51, 89.83, 90.06),
    "desenat_sd": (84.98, 91.62, 89.13, 90.05, 90.45, 91.64, 91.92, 91.57, 90.92, 88.53, 52.36,
                   54.12, 89.2, 90.4, 90.21),
}

PRINTED_MOA = {"st": 76.58}

PRINTED_CE = {
    "st": (1.0,) * 15,
    "cutmix_k": (1.04, 0.894, 0.913, 0.857, 0.902, 0.982, 0.906, 0.977, 0.46, 0.799, 0.876,
                 0.796, 0.406, 0.511, 0.569),
    "cutmix_r": (1.085, 1.025, 1.042, 0.879, 0.936, 0.838, 0.962, 0.744, 0.358, 1.14, 0.953,
                 0.788, 0.391, 0.512, 0.6),
    "mixup": (1.068, 0.923, 0.955, 0.872, 0.905, 0.912, 0.917, 0.868, 0.55, 1.751, 0.964, 0.996,
              0.562, 0.747, 0.751),
    "rsmix": (1.819, 1.305, 1.45, 1.562, 1.604, 1.897, 0.919, 2.098, 0.433, 0.725, 0.82, 0.799,
              0.404, 0.524, 0.612),
    "desenat_sd": (0.755, 0.555, 0.808, 0.733, 0.765, 0.677, 0.866, 0.586, 0.331, 0.52, 0.808,
                   0.673, 0.38, 0.494, 0.602),
}

PRINTED_MCE = {"st": 1.0, "cutmix_k": 0.793, "cutmix_r": 0.817, "mixup": 0.916, "rsmix": 1.131,
               "desenat_sd": 0.637}
