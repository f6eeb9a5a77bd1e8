"""Photometric stereo under calibrated nearby anisotropic LED illumination.

Forward rendering, light-source calibration, and three depth/albedo solvers:
an alternating scheme with absolute-scale estimation, an image-ratio PDE
approach (fixed point and ADMM), and alternating reweighted least-squares
with optional robust estimation and self-shadow handling (gray and RGB).
"""

from .alternating import AlternatingConfig, classical_ps, solve_alternating
from .arls import ArlsConfig, solve_arls, solve_arls_rgb
from .calibrate import (PlanePoseObservation, ReflectedRayBundle,
                        calibrate_anisotropic, calibrate_isotropic,
                        calibrate_rgb, triangulate_source)
from .camera import (CameraIntrinsics, LogDepthMap, NormalField, PixelMask,
                     backproject, gradient, gradient_from_normal,
                     homogeneous_pixel, normal_from_depth, q_matrix)
from .errors import (CalibrationError, DegenerateGeometryError, NearpsError,
                     SolverError)
from .estimators import (Cauchy, LeastSquares, ShadowOperator,
                         check_majorization, make_estimator, weight)
from .integrate import GradientField, integrate_least_squares, integrate_path
from .leds import (LedRig, LedSource, lighting_vector, mu_from_half_angle,
                   t_field, t_field_rgb)
from .ratios import (AdmmConfig, energy_ratio, ratio_coefficients, solve_admm,
                     solve_fixed_point)
from .render import (ImageStack, SceneTruth, correct_gray_levels,
                     prefilter_robust, render, render_noisy)
from .solution import SurfaceEstimate

__all__ = [name for name in dir() if not name.startswith("_")]
