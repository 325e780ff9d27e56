"""Zero-day intrusion detection from flow tables: feature selection, feature
images, a masked convolutional autoencoder and novelty detection on its latents."""

from .errors import ConfigError, DataError, LeakageError, NumericalError, SafeError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "LeakageError", "NumericalError", "SafeError", "__version__"]
