"""viewsynth: synthetic viewpoint-labeled image generation and estimation toolkit.

Subpackages cover the full desk-scale pipeline: viewpoint geometry and
discretization (viewgeom), the distance-weighted classification loss
(geomloss), mesh set augmentation by lattice deformation (modelaug),
distribution fitting and sampling for synthesis parameters (paramsampler),
a small software rasterizer (renderer), the image synthesis pipeline
(synthpipe), viewpoint and detection metrics (evalkit), a miniature
trainer demonstrating the class-dependent architecture (toytrainer), and
the command-line interface (cli).
"""

__version__ = "0.1.0"
