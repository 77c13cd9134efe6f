"""bdistill: evolve tiny synthetic state-action datasets whose supervised
consumption trains expert policies for small control environments."""

__version__ = "0.1.0"

from . import config, dataset, engine, envs, es, harness, nn, supervised  # noqa: F401
from .dataset import ObservationNormalizer, SyntheticDataset  # noqa: F401
from .engine import DistillConfig, InnerConfig, RunArtifacts, run  # noqa: F401
from .envs import EnvSpec, get_spec, rollout  # noqa: F401
from .es import EsConfig, EsState  # noqa: F401
from .nn import PolicyParams  # noqa: F401
