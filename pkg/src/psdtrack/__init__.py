"""Six-LED tool tracking with a stereo pair of position-sensitive detectors and two IMUs.

Subpackages and modules:

* :mod:`psdtrack.psd_optics` - PSD readout, distortion net, pinhole model, triangulation
* :mod:`psdtrack.multiplex` - time-division LED identification from raw ADC edges
* :mod:`psdtrack.power` - closed-loop LED intensity control and its look-up table
* :mod:`psdtrack.calibration` - stereo, distortion, object-IMU and pivot calibration
* :mod:`psdtrack.fusion` - per-frame pivot pose from LEDs and IMU orientations
* :mod:`psdtrack.sim` - simulator, noise model and accuracy experiments
"""

from .errors import PsdTrackError
from .fusion import RigConfig, TrackedPose, Tracker, fuse_frame
from .geometry import RigidTransform, Rotation
from .multiplex import FrameDecoder, PatternConfig
from .power import PowerLut
from .psd_optics import PsdIntrinsics, StereoRig

__version__ = "0.1.0"

__all__ = [
    "PsdTrackError",
    "RigConfig",
    "TrackedPose",
    "Tracker",
    "fuse_frame",
    "RigidTransform",
    "Rotation",
    "FrameDecoder",
    "PatternConfig",
    "PowerLut",
    "PsdIntrinsics",
    "StereoRig",
    "__version__",
]
