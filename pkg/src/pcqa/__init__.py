"""No-reference point cloud quality assessment toolkit.

Renders clouds to six cube-face projections, scores them through a vision
LMM endpoint (or an offline mock), extracts multi-scale linearity/planarity
statistics, and fuses both with an RBF epsilon-SVR evaluated under grouped
k-fold cross-validation.
"""
__version__ = "0.1.0"
