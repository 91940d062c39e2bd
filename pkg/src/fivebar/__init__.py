"""Configuration-manifold graphs and singularity-aware planning for five-bar linkages."""

from fivebar.model import (
    CanonicalDesign,
    Configuration,
    DegenerateDesignError,
    FiveBarDesign,
    FiveBarError,
    FrameTransform,
    SingularJacobianError,
    VelocityEllipse,
    canonicalize,
    forward_kinematics,
    input_sing_value,
    inverse_kinematics,
    output_sing_values,
    velocity_ellipse,
)

__version__ = "0.1.0"
