"""Large-flow detection with EARDet, RLFD and their CLEF combination."""
__version__ = "0.1.0"

from .model import NS, Blacklist, ConfigError, FlowSpec, LinkConfig, Packet, th  # noqa: E402
from .eardet import Eardet, EardetConfig  # noqa: E402
from .rlfd import Rlfd, RlfdConfig, ShardedRlfd  # noqa: E402
from .baselines import Amf, AmfConfig, AmfFm, FlowMemory, FmConfig  # noqa: E402
from .hybrid import Clef, ClefConfig, TwinRlfd, TwinRlfdConfig  # noqa: E402

__all__ = ["NS", "Blacklist", "ConfigError", "FlowSpec", "LinkConfig", "Packet", "th",
           "Eardet", "EardetConfig", "Rlfd", "RlfdConfig", "ShardedRlfd", "Amf", "AmfConfig",
           "AmfFm", "FlowMemory", "FmConfig", "Clef", "ClefConfig", "TwinRlfd", "TwinRlfdConfig"]
