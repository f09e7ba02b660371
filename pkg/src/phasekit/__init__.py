"""Phase recovery toolkit: hologram simulation, learned reconstruction, evaluation."""

__version__ = "0.1.0"

from .optics import (  # noqa: F401
    ComplexField,
    Hologram,
    OpticalConfig,
    SampleObject,
    angular_spectrum_propagate,
    form_hologram,
    pad_and_crop,
)
