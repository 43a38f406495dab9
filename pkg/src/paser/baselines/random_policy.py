import numpy as np

from ..models import ModelSuite
from ..pipeline import RoutedResult, flop_records, observe, route_patches
from ..tensorkit import RngStream


def random_policy_infer(
    suite: ModelSuite,
    images: np.ndarray,
    samples: int,
    rng: RngStream,
    patches: int,
    offset: int = 0,
) -> RoutedResult:
    """PaSeR's pipeline with each patch's model drawn uniformly from the suite."""
    obs = observe(suite, images, samples, rng.split("mc"))
    actions = rng.split("actions").integers(0, suite.num_models, (len(images), patches))
    labels = route_patches(suite, images, actions, obs.labels, patches)
    records = flop_records(suite, images, actions, samples, patches, 0, offset)
    return RoutedResult(labels, actions, records)
