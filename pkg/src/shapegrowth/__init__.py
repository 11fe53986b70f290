"""Shape-based growth-rate prediction for ascending aortic aneurysms.

Local geometric features, RBF morphing to iso-topological grids, PCA and PLS
shape models, and Gaussian SVR / PLS regression with leave-one-out checks.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .mesh import SurfaceMesh, load_mesh, save_mesh  # noqa: E402
from .phantom import CohortSpec, PhantomParams, generate_cohort, generate_phantom  # noqa: E402
from .geometry import analyze_mesh, extract_centerline, local_features  # noqa: E402
from .morph import build_cohort_grids, morph_two_step, rbf_fit  # noqa: E402
from .ssm import ShapeModelPCA, fit_ssm  # noqa: E402
from .pls import PLS1Regression, fit_pls  # noqa: E402
from .svr import EpsilonSVR, fit_svr, svr_predict  # noqa: E402
from .regress import FeatureTable, ftest_rank, loo_cv  # noqa: E402
