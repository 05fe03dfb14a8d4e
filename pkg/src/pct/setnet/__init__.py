"""Deep-Set infectiousness predictor: encoding, model, training, inference."""

from .encoding import EncodedSamples, encode_count, encode_observables  # noqa: F401
from .model import DeepSetRisk, load_params, save_params  # noqa: F401
