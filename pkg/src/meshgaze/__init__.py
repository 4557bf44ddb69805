"""meshgaze: visual attention modeling on 3D meshes.

Submodules
----------
mesh      mesh loading, normals, adjacency, sampling
fixtures  deterministic icosphere / torus / cube generators
spatial   k-nearest and radius queries
maps      saliency map / fixation / scanpath containers and file formats
metrics   KL, CC, NSS, AUC-Judd, MSE, MultiMatch
render    camera sampling, projection, z-buffer visibility
features  pixel-feature fusion and view-to-vertex transfer
fusion    dual-stream saliency network, loss, training
scanpath  fixation-sequence environment and policy optimization
tasks     synthetic planted-signal and two-lobe benchmarks
"""

from .mesh import Mesh, SampleSet, load_mesh, save_mesh, surface_neighbors, uniform_sample
from .spatial import SpatialIndex
from .maps import FixationSet, SaliencyMap, Scanpath
from .metrics import MultiMatchScore, auc_judd, cc, kl_div, mse, multimatch, nss

__version__ = "0.1.0"
